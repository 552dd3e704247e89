//! Small statistical helpers shared by the sweeps.

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `sup_x |F_n(x) − F(x)|` for the empirical CDF of `sorted` against a
/// continuous `cdf`. Exact, ties included.
pub fn kolmogorov_distance<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    d
}

/// Same distance for a discrete law given as increasing `(atom, mass)` pairs.
pub fn kolmogorov_distance_lattice<F: Fn(f64) -> f64>(atoms: &[(f64, f64)], cdf: F) -> f64 {
    let mut below = 0.0;
    let mut d: f64 = 0.0;
    for &(x, p) in atoms {
        let f = cdf(x);
        d = d.max((f - below).abs());
        below += p;
        d = d.max((below - f).abs());
    }
    d
}

/// Dvoretzky–Kiefer–Wolfowitz half-width at level `alpha`.
pub fn dkw_halfwidth(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Percentile bootstrap interval (`level` two-sided) for `stat`.
pub fn bootstrap_interval<R, S>(xs: &[f64], stat: S, resamples: usize, level: f64, rng: &mut R) -> (f64, f64)
where
    R: Rng + ?Sized,
    S: Fn(&[f64]) -> f64,
{
    let n = xs.len();
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.gen_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = ((1.0 - level) / 2.0 * resamples as f64).floor() as usize;
    let hi = (((1.0 + level) / 2.0 * resamples as f64).ceil() as usize).min(resamples) - 1;
    (stats[lo], stats[hi])
}

/// Pearson chi-square p-value of `observed` against `expected` counts.
pub fn chi_square_pvalue(observed: &[u64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::Domain("chi-square needs matching bins, at least two".into()));
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(1.0 - dist.cdf(stat))
}

pub fn total_variation<K: Ord + Clone>(
    a: &std::collections::BTreeMap<K, f64>,
    b: &std::collections::BTreeMap<K, f64>,
) -> f64 {
    let mut sum = 0.0;
    for (k, p) in a {
        sum += (p - b.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, q) in b {
        if !a.contains_key(k) {
            sum += q.abs();
        }
    }
    0.5 * sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let v = normal_cdf(1.959963984540054);
        assert!((v - 0.975).abs() < 1e-10, "{v:.17e}");
    }

    #[test]
    fn kolmogorov_of_uniform_grid() {
        // points i/n - 1/(2n) against U(0,1): D = 1/(2n)
        let n = 10;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = kolmogorov_distance(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.05).abs() < 1e-12);
        // ties: all mass at 0.5
        let d = kolmogorov_distance(&[0.5, 0.5, 0.5], |x| x);
        assert!((d - 0.5).abs() < 1e-12);
        let d = kolmogorov_distance_lattice(&[(0.5, 1.0)], |x| x);
        assert!((d - 0.5).abs() < 1e-12);
    }
}
