//! Integer conditioning laws (Borel, Poisson, geometric), the tree function,
//! and the Borel tail rate constants κ, α, β.
//!
//! Every law is supported on the nonnegative integers. Borel starts at 1.
//! Probabilities are evaluated in log-space; `n^{n-1}/n!` overflows long
//! before the Borel tail becomes negligible.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};

/// `1/e`, the critical Borel parameter.
pub const INV_E: f64 = 0.367_879_441_171_442_33;

/// Residual-tail bound used when a law is truncated for exact sums.
pub const TRUNCATION_TAIL: f64 = 1e-10;

/// Default cap on Galton–Watson progeny in the Borel sampler.
pub const DEFAULT_PROGENY_CEILING: u64 = 10_000_000;

const MAX_TRUNCATION_POINT: u64 = 10_000_000;

/// `T(λ)` together with its argument: the root `mu ∈ (0, 1]` of `mu·e^{-mu} = lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeFunctionValue {
    pub lambda: f64,
    pub mu: f64,
}

/// Solves `mu·e^{-mu} = lambda` on the branch `mu ≤ 1` by bisection.
pub fn tree_function(lambda: f64) -> Result<TreeFunctionValue> {
    if !(lambda > 0.0 && lambda <= INV_E * (1.0 + 4.0 * f64::EPSILON)) {
        return Err(domain(format!(
            "tree function needs 0 < lambda <= 1/e, got {lambda}"
        )));
    }
    // μe^{-μ} is flat at μ = 1, so bisection near the critical point cannot
    // resolve μ from λ in double precision. Pin the fixed point.
    if (lambda - INV_E).abs() <= 4.0 * f64::EPSILON * INV_E {
        return Ok(TreeFunctionValue { lambda, mu: 1.0 });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * (-mid).exp() < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    Ok(TreeFunctionValue {
        lambda,
        mu: 0.5 * (lo + hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum IntegerLaw {
    /// Total progeny of a Poisson(`mu`) Galton–Watson tree; `lambda = mu·e^{-mu}`.
    Borel { lambda: f64, mu: f64 },
    Poisson { lambda: f64 },
    /// `P(X = n) = p(1-p)^n` on `{0, 1, 2, …}`.
    Geometric { p: f64 },
}

/// Exact moments of an integer law, computed from the truncated pmf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawMoments {
    pub mean: f64,
    pub variance: f64,
    /// `E|X - EX|^3`
    pub third_abs: f64,
}

impl LawMoments {
    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// One draw from a sampler that may have hit its progeny ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub value: u64,
    pub truncated: bool,
}

impl IntegerLaw {
    pub fn borel(lambda: f64) -> Result<Self> {
        let t = tree_function(lambda)?;
        Ok(IntegerLaw::Borel {
            lambda: t.lambda,
            mu: t.mu,
        })
    }

    /// Borel law parameterized by the offspring mean `mu ∈ (0, 1]`.
    pub fn borel_from_mu(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(domain(format!("Borel offspring mean must lie in (0, 1], got {mu}")));
        }
        Ok(IntegerLaw::Borel {
            lambda: mu * (-mu).exp(),
            mu,
        })
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(domain(format!("Poisson rate must be positive, got {lambda}")));
        }
        Ok(IntegerLaw::Poisson { lambda })
    }

    pub fn geometric(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(domain(format!("geometric p must lie in (0, 1], got {p}")));
        }
        Ok(IntegerLaw::Geometric { p })
    }

    pub fn name(&self) -> &'static str {
        match self {
            IntegerLaw::Borel { .. } => "borel",
            IntegerLaw::Poisson { .. } => "poisson",
            IntegerLaw::Geometric { .. } => "geometric",
        }
    }

    pub fn min_support(&self) -> u64 {
        match self {
            IntegerLaw::Borel { .. } => 1,
            _ => 0,
        }
    }

    pub fn is_critical(&self) -> bool {
        matches!(self, IntegerLaw::Borel { mu, .. } if *mu >= 1.0)
    }

    pub fn ln_pmf(&self, n: u64) -> f64 {
        let nf = n as f64;
        match *self {
            IntegerLaw::Borel { lambda, mu } => {
                if n == 0 {
                    return f64::NEG_INFINITY;
                }
                nf * lambda.ln() + (nf - 1.0) * nf.ln() - ln_gamma(nf + 1.0) - mu.ln()
            }
            IntegerLaw::Poisson { lambda } => nf * lambda.ln() - lambda - ln_gamma(nf + 1.0),
            IntegerLaw::Geometric { p } => {
                if p >= 1.0 {
                    if n == 0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    p.ln() + nf * (1.0 - p).ln()
                }
            }
        }
    }

    pub fn pmf(&self, n: u64) -> f64 {
        self.ln_pmf(n).exp()
    }

    /// Closed-form mean. Infinite only for the critical Borel law.
    pub fn mean(&self) -> f64 {
        match *self {
            IntegerLaw::Borel { mu, .. } => {
                if mu >= 1.0 {
                    f64::INFINITY
                } else {
                    1.0 / (1.0 - mu)
                }
            }
            IntegerLaw::Poisson { lambda } => lambda,
            IntegerLaw::Geometric { p } => (1.0 - p) / p,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            IntegerLaw::Borel { mu, .. } => {
                if mu >= 1.0 {
                    f64::INFINITY
                } else {
                    mu / (1.0 - mu).powi(3)
                }
            }
            IntegerLaw::Poisson { lambda } => lambda,
            IntegerLaw::Geometric { p } => (1.0 - p) / (p * p),
        }
    }

    /// A rigorous upper bound on `P(X > n)`.
    pub fn tail_bound(&self, n: u64) -> f64 {
        let bound = match *self {
            IntegerLaw::Poisson { lambda } => {
                let next = (n + 2) as f64;
                if lambda >= next {
                    1.0
                } else {
                    self.pmf(n + 1) / (1.0 - lambda / next)
                }
            }
            IntegerLaw::Geometric { p } => (1.0 - p).powf((n + 1) as f64),
            IntegerLaw::Borel { lambda, mu } => {
                if n == 0 {
                    return 1.0;
                }
                // p(j+1)/p(j) = λ(1 + 1/j)^{j-1} < λe, and Stirling gives
                // p(j) <= (λe)^j j^{-3/2} / (√(2π) μ).
                let ratio = lambda * std::f64::consts::E;
                let geometric = if ratio < 1.0 {
                    self.pmf(n + 1) / (1.0 - ratio)
                } else {
                    f64::INFINITY
                };
                let stirling = 2.0 / ((2.0 * PI * n as f64).sqrt() * mu);
                geometric.min(stirling)
            }
        };
        bound.clamp(0.0, 1.0)
    }

    /// Smallest `n` with `P(X > n) <= tail_tol` according to [`tail_bound`](Self::tail_bound).
    pub fn truncation_point(&self, tail_tol: f64) -> Result<u64> {
        let mut n = self.min_support();
        // Start the scan near the bulk so heavy parameters stay cheap.
        let mean = self.mean();
        if mean.is_finite() && mean > 16.0 {
            n = n.max(mean as u64);
        }
        while self.tail_bound(n) > tail_tol {
            n += 1;
            if n > MAX_TRUNCATION_POINT {
                return Err(Error::Resource {
                    what: format!("truncation of {} law", self.name()),
                    needed: MAX_TRUNCATION_POINT as u128 + 1,
                    budget: MAX_TRUNCATION_POINT as u128,
                });
            }
        }
        Ok(n)
    }

    /// `pmf(0..=n_max)`.
    pub fn pmf_table(&self, n_max: u64) -> Vec<f64> {
        (0..=n_max).map(|n| self.pmf(n)).collect()
    }

    /// Exact moments from the pmf truncated where the residual tail is below `1e-15`.
    pub fn moments(&self) -> Result<LawMoments> {
        let top = self.truncation_point(1e-15)?;
        let table = self.pmf_table(top);
        let mass: f64 = neumaier_sum(table.iter().copied());
        let mean = neumaier_sum(table.iter().enumerate().map(|(n, p)| n as f64 * p)) / mass;
        let variance = neumaier_sum(
            table
                .iter()
                .enumerate()
                .map(|(n, p)| (n as f64 - mean).powi(2) * p),
        ) / mass;
        let third_abs = neumaier_sum(
            table
                .iter()
                .enumerate()
                .map(|(n, p)| (n as f64 - mean).abs().powi(3) * p),
        ) / mass;
        Ok(LawMoments {
            mean,
            variance,
            third_abs,
        })
    }

    /// `E[e^{isX}]`.
    pub fn char_fn(&self, s: f64) -> Complex64 {
        let eis = Complex64::from_polar(1.0, s);
        match *self {
            IntegerLaw::Poisson { lambda } => (lambda * (eis - 1.0)).exp(),
            IntegerLaw::Geometric { p } => Complex64::new(p, 0.0) / (1.0 - (1.0 - p) * eis),
            IntegerLaw::Borel { .. } => {
                let top = self.truncation_point(1e-15).unwrap_or(MAX_TRUNCATION_POINT);
                let mut acc = Complex64::new(0.0, 0.0);
                let mut z = eis;
                for n in 1..=top {
                    acc += self.pmf(n) * z;
                    z *= eis;
                }
                acc
            }
        }
    }

    /// Exact draw. Borel uses Galton–Watson total progeny and reports
    /// truncation at [`DEFAULT_PROGENY_CEILING`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        self.sample_with_ceiling(rng, DEFAULT_PROGENY_CEILING)
    }

    pub fn sample_with_ceiling<R: Rng + ?Sized>(&self, rng: &mut R, ceiling: u64) -> Draw {
        match *self {
            IntegerLaw::Borel { mu, .. } => galton_watson_progeny(mu, rng, ceiling),
            IntegerLaw::Poisson { lambda } => Draw {
                value: poisson_inversion(lambda, rng),
                truncated: false,
            },
            IntegerLaw::Geometric { p } => Draw {
                value: geometric_inversion(p, rng),
                truncated: false,
            },
        }
    }

    /// Sampler with precomputed inversion tables, for hot loops.
    pub fn sampler(&self) -> LawSampler {
        LawSampler::new(*self)
    }
}

/// Inversion sampler with a cached CDF (Poisson) or closed form (geometric),
/// and Galton–Watson progeny for Borel.
#[derive(Debug, Clone)]
pub struct LawSampler {
    law: IntegerLaw,
    cdf: Vec<f64>,
    ceiling: u64,
}

impl LawSampler {
    pub fn new(law: IntegerLaw) -> Self {
        let cdf = match law {
            IntegerLaw::Poisson { .. } => {
                let top = law.truncation_point(1e-17).unwrap_or(0);
                let mut acc = 0.0;
                law.pmf_table(top)
                    .into_iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        LawSampler {
            law,
            cdf,
            ceiling: DEFAULT_PROGENY_CEILING,
        }
    }

    pub fn with_ceiling(mut self, ceiling: u64) -> Self {
        self.ceiling = ceiling;
        self
    }

    pub fn law(&self) -> &IntegerLaw {
        &self.law
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        match self.law {
            IntegerLaw::Poisson { lambda } => {
                let u: f64 = rng.gen();
                let idx = self.cdf.partition_point(|&c| c < u);
                if idx < self.cdf.len() {
                    return Draw {
                        value: idx as u64,
                        truncated: false,
                    };
                }
                // Beyond the table: continue the pmf recurrence.
                let mut n = self.cdf.len() as u64;
                let mut cum = self.cdf.last().copied().unwrap_or(0.0);
                let mut p = self.law.pmf(n);
                loop {
                    cum += p;
                    if cum >= u || p == 0.0 {
                        return Draw {
                            value: n,
                            truncated: false,
                        };
                    }
                    n += 1;
                    p *= lambda / n as f64;
                }
            }
            _ => self.law.sample_with_ceiling(rng, self.ceiling),
        }
    }
}

fn galton_watson_progeny<R: Rng + ?Sized>(mu: f64, rng: &mut R, ceiling: u64) -> Draw {
    let mut total: u64 = 1;
    let mut pending: u64 = 1;
    while pending > 0 {
        pending -= 1;
        let children = poisson_inversion(mu, rng);
        pending += children;
        total += children;
        if total >= ceiling {
            return Draw {
                value: ceiling,
                truncated: true,
            };
        }
    }
    Draw {
        value: total,
        truncated: false,
    }
}

/// Sequential-search inversion; switches to search from the mode for large rates.
fn poisson_inversion<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.gen();
    if lambda < 30.0 {
        let mut n = 0u64;
        let mut p = (-lambda).exp();
        let mut cum = p;
        while cum < u {
            n += 1;
            p *= lambda / n as f64;
            cum += p;
            if p == 0.0 {
                break;
            }
        }
        return n;
    }
    // Start at the mode with F(mode) computed from the regularized gamma.
    let mode = lambda.floor() as u64;
    let p_mode = (mode as f64 * lambda.ln() - lambda - ln_gamma(mode as f64 + 1.0)).exp();
    let f_mode = statrs::function::gamma::gamma_ur(mode as f64 + 1.0, lambda);
    if u <= f_mode {
        let mut n = mode;
        let mut p = p_mode;
        let mut cum = f_mode;
        // walk down while F(n-1) >= u
        while n > 0 && cum - p >= u {
            cum -= p;
            p *= n as f64 / lambda;
            n -= 1;
        }
        n
    } else {
        let mut n = mode;
        let mut p = p_mode;
        let mut cum = f_mode;
        while cum < u {
            n += 1;
            p *= lambda / n as f64;
            cum += p;
            if p == 0.0 {
                break;
            }
        }
        n
    }
}

fn geometric_inversion<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    let u: f64 = rng.gen();
    // P(X >= n) = (1-p)^n
    ((1.0 - u).ln() / (1.0 - p).ln()).floor() as u64
}

/// Rate constants of the in-block displacement tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBracket {
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl TailBracket {
    /// Requires `0 < kappa <= ln 2`.
    pub fn from_kappa(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(domain(format!(
                "tail bracket needs kappa = -ln(lambda) - 1 > 0, got {kappa}"
            )));
        }
        if kappa > LN_2 * (1.0 + 1e-12) {
            return Err(domain(format!(
                "tail bracket needs kappa = -ln(lambda) - 1 <= ln 2, got {kappa}"
            )));
        }
        let alpha = kappa * std::f64::consts::SQRT_2;
        let beta = 2.0 * kappa * ((1.0 + 1.0 / kappa) * (1.0 + (1.0 + LN_2) / kappa)).sqrt();
        Ok(TailBracket { kappa, alpha, beta })
    }
}

pub fn tail_bracket(lambda: f64) -> Result<TailBracket> {
    if !(lambda > 0.0 && lambda <= INV_E) {
        return Err(domain(format!("Borel parameter must lie in (0, 1/e], got {lambda}")));
    }
    TailBracket::from_kappa(-lambda.ln() - 1.0)
}

/// `(n, -ln P(X >= n) / n)` for `n = 1..=n_max`, `X ~ Borel(lambda)`, from exact pmf tail sums.
pub fn x_tail_rate_check(lambda: f64, n_max: u64) -> Result<Vec<(u64, f64)>> {
    if n_max < 10 {
        return Err(domain(format!("n_max must be at least 10, got {n_max}")));
    }
    if !(lambda > 0.0 && lambda < INV_E) {
        return Err(domain(format!(
            "tail rate needs a subcritical Borel parameter in (0, 1/e), got {lambda}"
        )));
    }
    let law = IntegerLaw::borel(lambda)?;
    let ln_p: Vec<f64> = (0..=n_max).map(|n| law.ln_pmf(n)).collect();
    // Sum the tail beyond n_max until terms drop 60 nats below the first.
    let floor = ln_p[n_max as usize] - 60.0;
    let mut beyond = f64::NEG_INFINITY;
    let mut n = n_max + 1;
    loop {
        let lp = law.ln_pmf(n);
        beyond = log_add_exp(beyond, lp);
        if lp < floor {
            break;
        }
        n += 1;
    }
    let mut curve = vec![(0, 0.0); n_max as usize];
    let mut tail = beyond;
    for n in (1..=n_max).rev() {
        tail = log_add_exp(tail, ln_p[n as usize]);
        let value = if n <= law.min_support() { 0.0 } else { -tail / n as f64 };
        curve[(n - 1) as usize] = (n, value);
    }
    Ok(curve)
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_pcg::Pcg64;

    fn bisect_oracle(lambda: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > 1e-14 {
            let m = 0.5 * (lo + hi);
            if m * f64::exp(-m) - lambda < 0.0 {
                lo = m
            } else {
                hi = m
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn tree_function_fixed_point_and_limits() {
        let t = tree_function(INV_E).unwrap();
        assert_eq!(t.mu, 1.0);
        let tiny = tree_function(1e-12).unwrap();
        assert!(tiny.mu < 1e-11);
        let t = tree_function(0.3).unwrap();
        // frozen oracle: 0.48940222718021497
        assert!((t.mu - 0.489_402_227_180_214_97).abs() < 1e-12);
        assert!((t.mu - bisect_oracle(0.3)).abs() < 1e-12);
        assert!((t.mu * (-t.mu).exp() - 0.3).abs() <= 1e-12);
    }

    #[test]
    fn tree_function_rejects_out_of_range() {
        assert!(matches!(tree_function(0.0), Err(Error::Domain(_))));
        assert!(matches!(tree_function(0.5), Err(Error::Domain(_))));
        assert!(matches!(tree_function(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn tree_function_is_monotone_on_grid() {
        let mut prev = 0.0;
        for i in 1..=400 {
            let lambda = INV_E * i as f64 / 400.0;
            let mu = tree_function(lambda).unwrap().mu;
            assert!(mu > prev, "lambda {lambda}");
            prev = mu;
        }
    }

    #[test]
    fn borel_pmf_values() {
        let law = IntegerLaw::borel(INV_E).unwrap();
        assert!((law.pmf(1) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((law.pmf(2) - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(law.pmf(0), 0.0);
        // log-space keeps large arguments finite
        let sub = IntegerLaw::borel(0.3).unwrap();
        let p500 = sub.pmf(500);
        assert!(p500 > 0.0 && p500.is_finite());
    }

    #[test]
    fn poisson_and_geometric_pmf() {
        let p = IntegerLaw::poisson(2.0).unwrap();
        assert!((p.pmf(0) - (-2.0f64).exp()).abs() < 1e-16);
        let g = IntegerLaw::geometric(0.25).unwrap();
        assert!((g.pmf(2) - 0.25 * 0.75 * 0.75).abs() < 1e-16);
        let g1 = IntegerLaw::geometric(1.0).unwrap();
        assert_eq!(g1.pmf(0), 1.0);
        assert_eq!(g1.pmf(3), 0.0);
    }

    #[test]
    fn truncated_mass_is_one() {
        let laws = [
            IntegerLaw::borel(0.3).unwrap(),
            IntegerLaw::borel(0.36).unwrap(),
            IntegerLaw::poisson(2.0).unwrap(),
            IntegerLaw::poisson(45.0).unwrap(),
            IntegerLaw::geometric(0.1).unwrap(),
        ];
        for law in laws {
            let top = law.truncation_point(TRUNCATION_TAIL).unwrap();
            assert!(law.tail_bound(top) < 1e-10);
            let mass = neumaier_sum(law.pmf_table(top));
            assert!(mass >= 1.0 - 1e-9 && mass <= 1.0 + 1e-12, "{law:?}: {mass}");
        }
    }

    #[test]
    fn critical_borel_truncation_is_a_resource_error() {
        let law = IntegerLaw::borel(INV_E).unwrap();
        assert!(matches!(
            law.truncation_point(TRUNCATION_TAIL),
            Err(Error::Resource { .. })
        ));
    }

    #[test]
    fn closed_form_moments_match_series() {
        for law in [
            IntegerLaw::borel(0.3).unwrap(),
            IntegerLaw::poisson(2.0).unwrap(),
            IntegerLaw::geometric(0.4).unwrap(),
        ] {
            let m = law.moments().unwrap();
            assert!((m.mean - law.mean()).abs() < 1e-10, "{law:?}");
            assert!((m.variance - law.variance()).abs() < 1e-9, "{law:?}");
        }
        // Borel(0.3) mean 1/(1 - mu) = 1.958488762059189
        let b = IntegerLaw::borel(0.3).unwrap();
        assert!((b.mean() - 1.958_488_762_059_189).abs() < 1e-11);
    }

    #[test]
    fn integer_variance_inequality() {
        for law in [
            IntegerLaw::borel(0.2).unwrap(),
            IntegerLaw::borel(0.35).unwrap(),
            IntegerLaw::poisson(0.05).unwrap(),
            IntegerLaw::poisson(7.0).unwrap(),
            IntegerLaw::geometric(0.9).unwrap(),
        ] {
            let m = law.moments().unwrap();
            assert!(m.variance <= 4.0 * m.third_abs, "{law:?}");
        }
    }

    #[test]
    fn char_fn_closed_forms_match_series() {
        let law = IntegerLaw::poisson(2.0).unwrap();
        for s in [0.0, 0.3, -1.2, 3.0] {
            let series: Complex64 = (0..80)
                .map(|n| law.pmf(n) * Complex64::from_polar(1.0, s * n as f64))
                .sum();
            assert!((law.char_fn(s) - series).norm() < 1e-13);
        }
        let g = IntegerLaw::geometric(0.3).unwrap();
        let series: Complex64 = (0..400)
            .map(|n| g.pmf(n) * Complex64::from_polar(1.0, 0.7 * n as f64))
            .sum();
        assert!((g.char_fn(0.7) - series).norm() < 1e-13);
        let b = IntegerLaw::borel(0.3).unwrap();
        assert!((b.char_fn(0.0) - 1.0).norm() < 1e-13);
    }

    #[test]
    fn geometric_one_is_degenerate() {
        let mut rng = Pcg64::seed_from_u64(1);
        let g = IntegerLaw::geometric(1.0).unwrap();
        for _ in 0..100 {
            assert_eq!(g.sample(&mut rng).value, 0);
        }
    }

    #[test]
    fn borel_sampler_mean_and_atom() {
        let law = IntegerLaw::borel(0.3).unwrap();
        let mut rng = Pcg64::seed_from_u64(20240601);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut ones = 0u64;
        for _ in 0..n {
            let d = law.sample(&mut rng);
            assert!(!d.truncated);
            let x = d.value as f64;
            sum += x;
            sum2 += x * x;
            if d.value == 1 {
                ones += 1;
            }
        }
        // oracle: truncated-series mean Σ n·pmf(n)
        let top = law.truncation_point(1e-15).unwrap();
        let oracle = neumaier_sum((1..=top).map(|k| k as f64 * law.pmf(k)));
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - oracle).abs() < 3.0 * se, "{mean} vs {oracle}");
        let p1 = law.pmf(1);
        let phat = ones as f64 / n as f64;
        assert!((phat - p1).abs() < 3.0 * (p1 * (1.0 - p1) / n as f64).sqrt());
    }

    #[test]
    fn critical_sampler_reports_truncation() {
        let law = IntegerLaw::borel(INV_E).unwrap();
        let mut rng = Pcg64::seed_from_u64(5);
        let truncated = (0..2000)
            .map(|_| law.sample_with_ceiling(&mut rng, 50))
            .filter(|d| d.truncated)
            .count();
        assert!(truncated > 0);
    }

    #[test]
    fn poisson_samplers_agree_with_pmf() {
        let mut rng = Pcg64::seed_from_u64(77);
        for lambda in [2.0, 40.0] {
            let law = IntegerLaw::poisson(lambda).unwrap();
            let sampler = law.sampler();
            let n = 200_000;
            let (mut a, mut b) = (0.0, 0.0);
            for _ in 0..n {
                a += law.sample(&mut rng).value as f64;
                b += sampler.draw(&mut rng).value as f64;
            }
            let se = (lambda / n as f64).sqrt();
            assert!((a / n as f64 - lambda).abs() < 4.0 * se);
            assert!((b / n as f64 - lambda).abs() < 4.0 * se);
        }
    }

    #[test]
    fn tail_bracket_values() {
        let b = tail_bracket(0.3).unwrap();
        // high-precision oracle
        assert!((b.kappa - 0.203_972_804_325_935_99).abs() < 1e-14);
        assert!((b.alpha - 0.288_461_106_233_012_19).abs() < 1e-14);
        assert!((b.beta - 3.022_635_186_949_183_8).abs() < 1e-12);
        let edge = tail_bracket(INV_E / 2.0).unwrap();
        assert!((edge.kappa - LN_2).abs() < 1e-15);
        assert!(matches!(tail_bracket(INV_E), Err(Error::Domain(_))));
        assert!(matches!(tail_bracket(0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn alpha_below_beta_on_admissible_grid() {
        for i in 0..200 {
            let lambda = INV_E / 2.0 + (INV_E / 2.0) * i as f64 / 200.0;
            let b = tail_bracket(lambda).unwrap();
            assert!(b.alpha < b.beta);
        }
    }

    #[test]
    fn x_tail_rate_curve() {
        let kappa = tail_bracket(0.3).unwrap().kappa;
        let curve = x_tail_rate_check(0.3, 500).unwrap();
        assert_eq!(curve[0], (1, 0.0));
        // exact value at n = 50 (mpmath): 0.29393486552319617
        assert!((curve[49].1 - 0.293_934_865_523_196_17).abs() < 1e-9);
        let last = curve.last().unwrap().1;
        assert!((last / kappa - 1.0).abs() < 0.1, "{last}");
        // decreasing toward kappa once past the start
        for w in curve[20..].windows(2) {
            assert!(w[1].1 < w[0].1);
            assert!(w[1].1 > kappa);
        }
        assert!(x_tail_rate_check(0.3, 5).is_err());
    }
}
