use std::collections::BTreeMap;

use condlaw::conditional::{
    enumerate_configurations, exact_conditional_multiset_law, exact_conditional_pmf, mean_match_tilt,
    rejection_sample_parallel, ConditionedEnsemble, MarkRule, PairModel, RejectionConfig, SequentialSampler,
};
use condlaw::distributions::{tail_bracket, IntegerLaw};
use condlaw::hashing::block_statistics_law;
use condlaw::limits::conditional_ld_check;
use condlaw::stats::{dkw_halfwidth, total_variation};
use proptest::prelude::*;

fn marks() -> impl Strategy<Value = MarkRule> {
    prop_oneof![
        (0u64..3).prop_map(|at| MarkRule::Indicator { at }),
        Just(MarkRule::PositivePartMinusOne),
        Just(MarkRule::Identity),
        (0.1f64..0.9).prop_map(|p| MarkRule::IndependentBernoulli { p }),
        Just(MarkRule::HashDisplacement),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dp_matches_enumeration(lambda in 0.3f64..3.0, rule in marks(), n in 1usize..5, k in 1i64..7) {
        let law = match rule {
            MarkRule::HashDisplacement => IntegerLaw::borel(lambda.min(3.0) / 3.0 * 0.36).unwrap(),
            _ => IntegerLaw::poisson(lambda).unwrap(),
        };
        prop_assume!(k >= n as i64 * law.min_support() as i64);
        let ens = ConditionedEnsemble::new(PairModel::new(law, rule, "p"), n, k).unwrap();
        let dp = exact_conditional_pmf(&ens).unwrap();
        let mut brute: BTreeMap<i64, f64> = BTreeMap::new();
        let configs = enumerate_configurations(&ens, 10_000_000).unwrap();
        let z: f64 = configs.iter().map(|c| c.1).sum();
        for (cfg, w) in configs {
            *brute.entry(cfg.iter().map(|c| c.1).sum()).or_insert(0.0) += w / z;
        }
        let dp_map: BTreeMap<i64, f64> = dp.atoms.iter().copied().collect();
        prop_assert!(total_variation(&dp_map, &brute) < 1e-12);
    }
}

fn normalize<K: Ord + Clone>(counts: &BTreeMap<K, u64>) -> BTreeMap<K, f64> {
    let z: u64 = counts.values().sum();
    counts.iter().map(|(k, &c)| (k.clone(), c as f64 / z as f64)).collect()
}

#[test]
fn block_law_is_conditioned_pairs() {
    for m in 2..=6usize {
        for n in 1..m {
            let blocks = normalize(&block_statistics_law(m, n).unwrap());
            let model = PairModel::hashing(0.2).unwrap();
            let ens = ConditionedEnsemble::new(model, m - n, m as i64).unwrap();
            let pairs: BTreeMap<Vec<(u64, u64)>, f64> = exact_conditional_multiset_law(&ens)
                .unwrap()
                .into_iter()
                .map(|(k, p)| (k.into_iter().map(|(x, y)| (x, y as u64)).collect(), p))
                .collect();
            assert!(total_variation(&blocks, &pairs) < 1e-10, "m = {m}, n = {n}");
        }
    }
}

#[test]
fn rejection_close_to_exact_law() {
    let k = 7;
    let model = PairModel::occupancy(1.0).unwrap();
    let ens = mean_match_tilt(&model, 5, k).unwrap();
    let exact: BTreeMap<i64, f64> = exact_conditional_pmf(&ens).unwrap().atoms.into_iter().collect();
    let out = rejection_sample_parallel(&ens, 200_000, 31, 0, &RejectionConfig::default()).unwrap();
    let mut counts = BTreeMap::new();
    for &t in &out.samples.totals {
        *counts.entry(t).or_insert(0u64) += 1;
    }
    let tv = total_variation(&normalize(&counts), &exact);
    assert!(tv < 0.01, "tv = {tv}");
}

#[test]
fn conditional_tail_sampler_matches_exact() {
    let model = PairModel::hashing(0.3).unwrap();
    let ens = mean_match_tilt(&model, 3, 9).unwrap();
    let exact = exact_conditional_pmf(&ens).unwrap();
    let draws = SequentialSampler::new(&ens, 10_000_000).unwrap().sample_parallel(100_000, 17, 0, true).unwrap();
    let band = dkw_halfwidth(draws.totals.len(), 1e-3);
    for t in 0..=exact.atoms.last().unwrap().0 {
        let mc = draws.totals.iter().filter(|&&v| v >= t).count() as f64 / draws.totals.len() as f64;
        assert!((mc - exact.tail(t)).abs() <= band, "t = {t}: {mc} vs {}", exact.tail(t));
    }
    let IntegerLaw::Borel { lambda, .. } = ens.model.x_law else { unreachable!() };
    let report = conditional_ld_check(&ens, &tail_bracket(lambda).unwrap(), &[0.5, 1.0], &draws, 0.15).unwrap();
    let mean = draws.totals.iter().sum::<i64>() as f64 / draws.totals.len() as f64;
    for p in &report.points {
        let hits = draws.totals.iter().filter(|&&v| v as f64 - mean >= 3.0 * p.y).count() as u64;
        assert_eq!(p.hits, hits);
    }
}
