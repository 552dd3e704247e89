use condlaw::distributions::IntegerLaw;
use condlaw::seeding;
use condlaw::stats::chi_square_pvalue;

fn goodness_of_fit(law: IntegerLaw, seed: u64) -> f64 {
    let samples = 200_000u64;
    let sampler = law.sampler();
    let mut rng = seeding::stream(seed, 0, 0);
    let mut observed = vec![0u64; 11];
    for _ in 0..samples {
        let v = sampler.draw(&mut rng).value;
        observed[(v.max(1) as usize - 1).min(10)] += 1;
    }
    let mut expected: Vec<f64> = (1..=10).map(|n| law.pmf(n) * samples as f64).collect();
    expected.push(samples as f64 - expected.iter().sum::<f64>());
    chi_square_pvalue(&observed, &expected).unwrap()
}

#[test]
fn borel_sampler_chi_square() {
    for (lambda, seed) in [(0.2, 11), (0.3, 12), (0.35, 13)] {
        let p = goodness_of_fit(IntegerLaw::borel(lambda).unwrap(), seed);
        assert!(p > 1e-4, "lambda {lambda}: p = {p}");
    }
}

#[test]
fn borel_mean_matches_formula() {
    let law = IntegerLaw::borel_from_mu(0.5).unwrap();
    assert!((law.mean() - 2.0).abs() < 1e-9);
    let sampler = law.sampler();
    let mut rng = seeding::stream(5, 0, 0);
    let n = 400_000;
    let mean = (0..n).map(|_| sampler.draw(&mut rng).value as f64).sum::<f64>() / n as f64;
    let se = (law.variance() / n as f64).sqrt();
    assert!((mean - 2.0).abs() < 5.0 * se, "{mean}");
}
