//! Conditioned sums: the law of `T = ΣY_i` given `S = ΣX_i = k`.
//!
//! Exact laws come from dynamic programming over `(s, t)`; `P(S = k)` from
//! convolution powers or lattice Fourier inversion; samples from rejection
//! or from an exact sequential sampler driven by the backward table
//! `P(S_j = s)`.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::distributions::IntegerLaw;
use crate::error::{domain, Error, Result};
use crate::hashing::{displacement_from_counts, enumerate_all, DEFAULT_ENUMERATION_CAP};
use crate::quadrature::{integrate, Tolerance};
use crate::seeding;
use crate::stats::{bootstrap_interval, mean_variance};

pub const DEFAULT_CELL_BUDGET: u64 = 100_000_000;
pub const DEFAULT_ACCEPTANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_WARMUP: u64 = 100_000;
pub const MIN_REPORT_SAMPLES: usize = 10_000;

/// Finite law on the integers, atoms sorted by value.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    atoms: Vec<(i64, f64)>,
}

impl DiscreteLaw {
    pub fn new(atoms: Vec<(i64, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<i64, f64> = BTreeMap::new();
        for (v, p) in atoms {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(domain(format!("mass {p} at {v} is not a probability")));
            }
            *merged.entry(v).or_insert(0.0) += p;
        }
        let total: f64 = merged.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(domain(format!("masses sum to {total}, not 1")));
        }
        Ok(DiscreteLaw {
            atoms: merged.into_iter().filter(|&(_, p)| p > 0.0).collect(),
        })
    }

    pub fn point(v: i64) -> Self {
        DiscreteLaw { atoms: vec![(v, 1.0)] }
    }

    /// Law of the index under `counts`.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(domain("empty count vector"));
        }
        DiscreteLaw::new(
            counts
                .iter()
                .enumerate()
                .map(|(i, &c)| (i as i64, c as f64 / total as f64))
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[(i64, f64)] {
        &self.atoms
    }

    pub fn min(&self) -> i64 {
        self.atoms[0].0
    }

    pub fn max(&self) -> i64 {
        self.atoms[self.atoms.len() - 1].0
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(v, p)| v as f64 * p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let mut u: f64 = rng.gen();
        for &(v, p) in &self.atoms {
            if u < p {
                return v;
            }
            u -= p;
        }
        self.max()
    }
}

/// How a mark `Y` is attached to `X`.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkRule {
    /// `Y = 1{X = at}`; `at = 0` counts empty urns.
    Indicator { at: u64 },
    /// `Y = max(X − 1, 0)`.
    PositivePartMinusOne,
    /// `Y = X`.
    Identity,
    /// `Y = value`.
    Constant { value: i64 },
    /// `Y ~ Bernoulli(p)` independent of `X`.
    IndependentBernoulli { p: f64 },
    /// `Y | X = l ~ d_{l,l−1}`, the displacement inside a block of length `l`.
    HashDisplacement,
    /// `Y | X = x` given by the `x`-th entry.
    Table(Arc<Vec<DiscreteLaw>>),
}

fn hash_law(x: u64) -> Result<Arc<DiscreteLaw>> {
    static CACHE: OnceLock<Vec<OnceLock<Arc<DiscreteLaw>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| (0..=DEFAULT_ENUMERATION_CAP + 1).map(|_| OnceLock::new()).collect());
    if x <= 2 {
        return Ok(Arc::new(DiscreteLaw::point(0)));
    }
    let n = (x - 1) as usize;
    if n > DEFAULT_ENUMERATION_CAP {
        return Err(Error::Resource {
            what: format!("exact law of d_{{{x},{n}}}"),
            needed: (x as u128).pow(n as u32),
            budget: ((DEFAULT_ENUMERATION_CAP as u128) + 1).pow(DEFAULT_ENUMERATION_CAP as u32),
        });
    }
    if let Some(law) = cache[n].get() {
        return Ok(law.clone());
    }
    let law = Arc::new(DiscreteLaw::from_counts(&enumerate_all(n)?.counts)?);
    Ok(cache[n].get_or_init(|| law).clone())
}

impl MarkRule {
    /// Exact law of `Y` given `X = x`.
    pub fn law_given(&self, x: u64) -> Result<Arc<DiscreteLaw>> {
        Ok(Arc::new(match self {
            MarkRule::Indicator { at } => DiscreteLaw::point((x == *at) as i64),
            MarkRule::PositivePartMinusOne => DiscreteLaw::point(x.saturating_sub(1) as i64),
            MarkRule::Identity => DiscreteLaw::point(x as i64),
            MarkRule::Constant { value } => DiscreteLaw::point(*value),
            MarkRule::IndependentBernoulli { p } => DiscreteLaw::new(vec![(0, 1.0 - p), (1, *p)])?,
            MarkRule::HashDisplacement => return hash_law(x),
            MarkRule::Table(t) => t
                .get(x as usize)
                .cloned()
                .ok_or_else(|| domain(format!("mark table has no entry for x = {x}")))?,
        }))
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: u64, rng: &mut R, scratch: &mut Vec<u64>) -> i64 {
        match self {
            MarkRule::Indicator { at } => (x == *at) as i64,
            MarkRule::PositivePartMinusOne => x.saturating_sub(1) as i64,
            MarkRule::Identity => x as i64,
            MarkRule::Constant { value } => *value,
            MarkRule::IndependentBernoulli { p } => rng.gen_bool(*p) as i64,
            MarkRule::HashDisplacement => {
                if x <= 2 {
                    return 0;
                }
                let l = x as usize;
                scratch.clear();
                scratch.resize(l, 0);
                for _ in 0..l - 1 {
                    scratch[rng.gen_range(0..l)] += 1;
                }
                displacement_from_counts(scratch) as i64
            }
            MarkRule::Table(t) => t[x as usize].sample(rng),
        }
    }
}

/// A pair `(X, Y)`: integer law for `X` and a mark rule for `Y | X`.
/// Marks are integers; `y_unit` scales them to real values.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    pub x_law: IntegerLaw,
    pub marks: MarkRule,
    pub y_unit: f64,
    pub label: String,
}

impl PairModel {
    pub fn new(x_law: IntegerLaw, marks: MarkRule, label: impl Into<String>) -> Self {
        PairModel {
            x_law,
            marks,
            y_unit: 1.0,
            label: label.into(),
        }
    }

    /// Balls in urns: `X ~ Poisson(λ)`, `Y` counts empty urns.
    pub fn occupancy(lambda: f64) -> Result<Self> {
        Ok(PairModel::new(
            IntegerLaw::poisson(lambda)?,
            MarkRule::Indicator { at: 0 },
            "occupancy",
        ))
    }

    /// Linear probing blocks: `X ~ Borel(λ)`, `Y` the in-block displacement.
    pub fn hashing(lambda: f64) -> Result<Self> {
        Ok(PairModel::new(
            IntegerLaw::borel(lambda)?,
            MarkRule::HashDisplacement,
            "hashing",
        ))
    }

    pub fn with_x_law(&self, x_law: IntegerLaw) -> Self {
        PairModel {
            x_law,
            ..self.clone()
        }
    }

    pub fn with_y_unit(mut self, unit: f64) -> Self {
        self.y_unit = unit;
        self
    }

    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut Vec<u64>) -> (u64, i64) {
        let x = self.x_law.sample(rng).value;
        (x, self.marks.sample(x, rng, scratch))
    }

    /// `(x, y, P(X = x, Y = y))` for `x` up to the point where the `X` tail
    /// drops below `tail_tol`.
    pub fn joint_atoms(&self, tail_tol: f64) -> Result<Vec<(u64, i64, f64)>> {
        let top = self.x_law.truncation_point(tail_tol)?;
        let mut atoms = Vec::new();
        for x in self.x_law.min_support()..=top {
            let px = self.x_law.pmf(x);
            if px == 0.0 {
                continue;
            }
            for &(y, q) in self.marks.law_given(x)?.atoms() {
                atoms.push((x, y, px * q));
            }
        }
        Ok(atoms)
    }
}

/// Moments of `(X, Y)` and the derived quantities for `N` summands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentProfile {
    pub n_summands: usize,
    pub mean_x: f64,
    pub mean_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// `E|X − EX|³`
    pub rho_x: f64,
    pub rho_y: f64,
    pub r: f64,
    /// `σ_Y·sqrt(1 − r²)`
    pub tau: f64,
    pub l1: f64,
    pub l2: f64,
    /// `|r| = 1`: the residual of `Y` on `X` vanishes.
    pub perfect_correlation: bool,
}

impl MomentProfile {
    fn from_weighted<I: Iterator<Item = (f64, f64, f64)> + Clone>(atoms: I, n: usize) -> Result<Self> {
        let total: f64 = atoms.clone().map(|a| a.2).sum();
        let mean_x = atoms.clone().map(|(x, _, p)| x * p).sum::<f64>() / total;
        let mean_y = atoms.clone().map(|(_, y, p)| y * p).sum::<f64>() / total;
        let (mut vx, mut vy, mut cxy, mut rx, mut ry) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, y, p) in atoms {
            let (dx, dy) = (x - mean_x, y - mean_y);
            vx += p * dx * dx;
            vy += p * dy * dy;
            cxy += p * dx * dy;
            rx += p * dx.abs().powi(3);
            ry += p * dy.abs().powi(3);
        }
        let (vx, vy, cxy, rx, ry) = (vx / total, vy / total, cxy / total, rx / total, ry / total);
        let scale_x = 1e-12 * (1.0 + mean_x * mean_x);
        let scale_y = 1e-12 * (1.0 + mean_y * mean_y);
        if vx <= scale_x {
            return Err(Error::Degenerate(format!("Var(X) = {vx:e}")));
        }
        if vy <= scale_y {
            return Err(Error::Degenerate(format!("Var(Y) = {vy:e}")));
        }
        let (sigma_x, sigma_y) = (vx.sqrt(), vy.sqrt());
        let mut r = (cxy / (sigma_x * sigma_y)).clamp(-1.0, 1.0);
        let perfect_correlation = 1.0 - r.abs() < 1e-12;
        if perfect_correlation {
            r = r.signum();
        }
        let tau = sigma_y * (1.0 - r * r).max(0.0).sqrt();
        let sqrt_n = (n as f64).sqrt();
        Ok(MomentProfile {
            n_summands: n,
            mean_x,
            mean_y,
            sigma_x,
            sigma_y,
            rho_x: rx,
            rho_y: ry,
            r,
            tau,
            l1: rx / sigma_x.powi(3) / sqrt_n,
            l2: ry / sigma_y.powi(3) / sqrt_n,
            perfect_correlation,
        })
    }

    /// `N·E[Y] + r(σ_Y/σ_X)(k − N·E[X])`
    pub fn mean_prediction(&self, target: i64) -> f64 {
        let n = self.n_summands as f64;
        n * self.mean_y + self.r * self.sigma_y / self.sigma_x * (target as f64 - n * self.mean_x)
    }

    pub fn variance_prediction(&self) -> f64 {
        self.n_summands as f64 * self.tau * self.tau
    }
}

/// Exact moment profile; requires every conditional mark law to be available.
pub fn moment_profile(model: &PairModel, n_summands: usize) -> Result<MomentProfile> {
    let atoms = model.joint_atoms(1e-16)?;
    let u = model.y_unit;
    MomentProfile::from_weighted(atoms.iter().map(|&(x, y, p)| (x as f64, y as f64 * u, p)), n_summands)
}

/// Moment profile estimated from `samples` independent pairs.
pub fn moment_profile_monte_carlo<R: Rng + ?Sized>(
    model: &PairModel,
    n_summands: usize,
    samples: usize,
    rng: &mut R,
) -> Result<MomentProfile> {
    if samples < 2 {
        return Err(Error::StatisticalPower("need at least two pair samples".into()));
    }
    let mut scratch = Vec::new();
    let pairs: Vec<(f64, f64, f64)> = (0..samples)
        .map(|_| {
            let (x, y) = model.sample_pair(rng, &mut scratch);
            (x as f64, y as f64 * model.y_unit, 1.0)
        })
        .collect();
    MomentProfile::from_weighted(pairs.iter().copied(), n_summands)
}

/// `N` copies of a pair model conditioned on `S = target`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedEnsemble {
    pub model: PairModel,
    pub n_summands: usize,
    pub target: i64,
    /// Parameter of `x_law` when it was set by mean matching.
    pub tilt: Option<f64>,
}

impl ConditionedEnsemble {
    pub fn new(model: PairModel, n_summands: usize, target: i64) -> Result<Self> {
        if n_summands == 0 {
            return Err(domain("need at least one summand"));
        }
        if target < 0 {
            return Err(domain(format!("target {target} is negative")));
        }
        Ok(ConditionedEnsemble {
            model,
            n_summands,
            target,
            tilt: None,
        })
    }

    fn k(&self) -> usize {
        self.target as usize
    }
}

/// Re-parameterize `x_law` within its family so that `E[X] = target / N`.
pub fn mean_match_tilt(model: &PairModel, n_summands: usize, target: i64) -> Result<ConditionedEnsemble> {
    if n_summands == 0 {
        return Err(domain("need at least one summand"));
    }
    let (n, k) = (n_summands as f64, target as f64);
    let (law, tilt) = match model.x_law {
        IntegerLaw::Poisson { .. } => {
            let lambda = k / n;
            (IntegerLaw::poisson(lambda)?, lambda)
        }
        IntegerLaw::Borel { .. } => {
            if target <= n_summands as i64 {
                return Err(domain(format!(
                    "Borel mean is at least 1 (and 1 only when degenerate): target {target} < N = {n_summands} + 1"
                )));
            }
            let mu = 1.0 - n / k;
            let law = IntegerLaw::borel_from_mu(mu)?;
            let IntegerLaw::Borel { lambda, .. } = law else { unreachable!() };
            (law, lambda)
        }
        IntegerLaw::Geometric { .. } => {
            let p = n / (n + k);
            (IntegerLaw::geometric(p)?, p)
        }
    };
    let mut ens = ConditionedEnsemble::new(model.with_x_law(law), n_summands, target)?;
    ens.tilt = Some(tilt);
    Ok(ens)
}

/// Law of `T` given `S = k`, on the integer mark grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLaw {
    /// Atoms `(t, P(T = t | S = k))` in integer mark units, increasing `t`.
    pub atoms: Vec<(i64, f64)>,
    pub p_condition: f64,
    pub y_unit: f64,
}

impl ConditionalLaw {
    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(t, p)| t as f64 * p).sum::<f64>() * self.y_unit
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean() / self.y_unit;
        self.atoms.iter().map(|&(t, p)| (t as f64 - m).powi(2) * p).sum::<f64>() * self.y_unit * self.y_unit
    }

    pub fn prob(&self, t: i64) -> f64 {
        self.atoms
            .binary_search_by_key(&t, |a| a.0)
            .map(|i| self.atoms[i].1)
            .unwrap_or(0.0)
    }

    /// `P(T ≥ t | S = k)` on the integer grid.
    pub fn tail(&self, t: i64) -> f64 {
        self.atoms.iter().filter(|a| a.0 >= t).map(|a| a.1).sum()
    }
}

/// `(x, P(X = x), law of Y | X = x)` for `x = 0..=k`.
fn kernel(ens: &ConditionedEnsemble) -> Result<Vec<(u64, f64, Arc<DiscreteLaw>)>> {
    let law = &ens.model.x_law;
    let mut out = Vec::new();
    for x in law.min_support()..=ens.k() as u64 {
        let p = law.pmf(x);
        if p > 0.0 {
            out.push((x, p, ens.model.marks.law_given(x)?));
        }
    }
    Ok(out)
}

pub fn exact_conditional_pmf(ens: &ConditionedEnsemble) -> Result<ConditionalLaw> {
    exact_conditional_pmf_with_budget(ens, DEFAULT_CELL_BUDGET)
}

/// `N`-fold convolution of the joint `(X, Y)` pmf over `(s, t)`, restricted
/// to `s ≤ k` (exact because `X ≥ 0`).
pub fn exact_conditional_pmf_with_budget(ens: &ConditionedEnsemble, cell_budget: u64) -> Result<ConditionalLaw> {
    let k = ens.k();
    let n = ens.n_summands;
    let kern = kernel(ens)?;
    if kern.is_empty() {
        return Err(Error::Conditioning(format!("X has no mass in [0, {k}]")));
    }
    let ymin = kern.iter().map(|e| e.2.min()).min().unwrap();
    let ymax = kern.iter().map(|e| e.2.max()).max().unwrap();
    let width = (ymax - ymin) as u128 * n as u128 + 1;
    let cells = width * (k as u128 + 1) * n as u128;
    if cells > cell_budget as u128 {
        return Err(Error::Resource {
            what: "conditional DP table".into(),
            needed: cells,
            budget: cell_budget as u128,
        });
    }
    let width = width as usize;
    // t is stored shifted by j·ymin after j summands, so offsets stay in [0, j·(ymax−ymin)].
    let mut dp = vec![vec![0.0f64; width]; k + 1];
    dp[0][0] = 1.0;
    let span = (ymax - ymin) as usize;
    for j in 0..n {
        let mut next = vec![vec![0.0f64; width]; k + 1];
        let reach = j * span;
        for s in 0..=k {
            let row = &dp[s];
            if row[..=reach].iter().all(|&p| p == 0.0) {
                continue;
            }
            for (x, px, ylaw) in &kern {
                let s2 = s + *x as usize;
                if s2 > k {
                    break;
                }
                for &(y, q) in ylaw.atoms() {
                    let w = px * q;
                    let off = (y - ymin) as usize;
                    let dst = &mut next[s2];
                    for (t, &p) in row[..=reach].iter().enumerate() {
                        if p != 0.0 {
                            dst[t + off] += p * w;
                        }
                    }
                }
            }
        }
        dp = next;
    }
    let row = &dp[k];
    let p_condition: f64 = row.iter().sum();
    if p_condition <= 0.0 {
        return Err(Error::Conditioning(format!(
            "P(S = {k}) = 0 for N = {n} summands of {}",
            ens.model.x_law.name()
        )));
    }
    let base = ymin * n as i64;
    let atoms = row
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(t, &p)| (base + t as i64, p / p_condition))
        .collect();
    Ok(ConditionalLaw {
        atoms,
        p_condition,
        y_unit: ens.model.y_unit,
    })
}

/// Every ordered configuration `((x_1, y_1), …, (x_N, y_N))` with `Σx = k`,
/// with its conditional probability. Brute force; for oracles only.
pub fn enumerate_configurations(ens: &ConditionedEnsemble, budget: u64) -> Result<Vec<(Vec<(u64, i64)>, f64)>> {
    let kern = kernel(ens)?;
    let mut out = Vec::new();
    let mut stack = Vec::with_capacity(ens.n_summands);
    fn walk(
        kern: &[(u64, f64, Arc<DiscreteLaw>)],
        left: usize,
        remaining: u64,
        weight: f64,
        stack: &mut Vec<(u64, i64)>,
        out: &mut Vec<(Vec<(u64, i64)>, f64)>,
        budget: u64,
    ) -> Result<()> {
        if left == 0 {
            if remaining == 0 {
                if out.len() as u64 >= budget {
                    return Err(Error::Resource {
                        what: "configuration enumeration".into(),
                        needed: budget as u128 + 1,
                        budget: budget as u128,
                    });
                }
                out.push((stack.clone(), weight));
            }
            return Ok(());
        }
        for (x, px, ylaw) in kern {
            if *x > remaining {
                break;
            }
            for &(y, q) in ylaw.atoms() {
                stack.push((*x, y));
                walk(kern, left - 1, remaining - x, weight * px * q, stack, out, budget)?;
                stack.pop();
            }
        }
        Ok(())
    }
    walk(&kern, ens.n_summands, ens.k() as u64, 1.0, &mut stack, &mut out, budget)?;
    let total: f64 = out.iter().map(|c| c.1).sum();
    if total <= 0.0 {
        return Err(Error::Conditioning(format!("no configuration sums to {}", ens.target)));
    }
    for c in out.iter_mut() {
        c.1 /= total;
    }
    Ok(out)
}

/// Law of the sorted multiset `{(X_i, Y_i)}` given `S = k`, by a DP whose
/// states merge equal partial multisets.
pub fn exact_conditional_multiset_law(ens: &ConditionedEnsemble) -> Result<BTreeMap<Vec<(u64, i64)>, f64>> {
    let kern = kernel(ens)?;
    let k = ens.k() as u64;
    let mut states: HashMap<(u64, Vec<(u64, i64)>), f64> = HashMap::new();
    states.insert((0, Vec::new()), 1.0);
    for _ in 0..ens.n_summands {
        let mut next: HashMap<(u64, Vec<(u64, i64)>), f64> = HashMap::new();
        for ((s, set), w) in states {
            for (x, px, ylaw) in &kern {
                if s + x > k {
                    break;
                }
                for &(y, q) in ylaw.atoms() {
                    let mut bigger = set.clone();
                    let pos = bigger.partition_point(|&e| e <= (*x, y));
                    bigger.insert(pos, (*x, y));
                    *next.entry((s + x, bigger)).or_insert(0.0) += w * px * q;
                }
            }
        }
        if next.len() > 10_000_000 {
            return Err(Error::Resource {
                what: "multiset DP states".into(),
                needed: next.len() as u128,
                budget: 10_000_000,
            });
        }
        states = next;
    }
    let law: BTreeMap<Vec<(u64, i64)>, f64> = states
        .into_iter()
        .filter(|((s, _), _)| *s == k)
        .map(|((_, set), w)| (set, w))
        .collect();
    let total: f64 = law.values().sum();
    if total <= 0.0 {
        return Err(Error::Conditioning(format!("P(S = {k}) = 0")));
    }
    Ok(law.into_iter().map(|(s, w)| (s, w / total)).collect())
}

fn convolve_truncated(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().take(len - i).enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// `P(S_N = k)` by binary powering of the `X` pmf truncated at `k`.
pub fn prob_sum_equals_dp(law: &IntegerLaw, n: usize, k: usize) -> f64 {
    let len = k + 1;
    let base: Vec<f64> = (0..len as u64).map(|x| law.pmf(x)).collect();
    let mut result = vec![0.0; len];
    result[0] = 1.0;
    let mut power = base;
    let mut e = n;
    while e > 0 {
        if e & 1 == 1 {
            result = convolve_truncated(&result, &power, len);
        }
        e >>= 1;
        if e > 0 {
            power = convolve_truncated(&power, &power, len);
        }
    }
    result[k]
}

/// `P(S_N = k) = (1/π)∫_0^π Re[φ_X(s)^N e^{−isk}] ds`.
pub fn prob_sum_equals_fourier(law: &IntegerLaw, n: usize, k: i64) -> Result<f64> {
    let sigma = law.variance().sqrt();
    let w = 1.0 / (sigma * (n as f64).sqrt());
    let breaks: Vec<f64> = [0.5, 1.0, 2.0, 4.0, 6.0, 10.0, 20.0].iter().map(|c| c * w).collect();
    let nf = n as f64;
    let kf = k as f64;
    let f = |s: f64| {
        let phi = law.char_fn(s);
        let mag = phi.norm();
        if mag == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let log_mag = nf * mag.ln();
        if log_mag < -745.0 {
            return Complex64::new(0.0, 0.0);
        }
        let phase = nf * phi.arg() - s * kf;
        Complex64::new(log_mag.exp() * phase.cos(), 0.0)
    };
    let v = integrate(f, 0.0, PI, &breaks, Tolerance { abs: 1e-15, rel: 1e-11 })?;
    Ok(v.re / PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbabilityMode {
    Dp,
    Fourier,
    Both,
}

/// `P(S = k)` against its Gaussian local-limit prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalLimitReport {
    pub p_exact: f64,
    pub p_dp: Option<f64>,
    pub p_fourier: Option<f64>,
    /// `(k − N·EX)/(σ_X √N)`
    pub v: f64,
    pub sigma_x: f64,
    /// `exp(−v²/2)/(σ_X √(2πN))`
    pub gaussian_prediction: f64,
    pub ratio: f64,
    /// `√(2π)·e^{−v²/2}/2`, half the Gaussian prediction on the `2πσ√N` scale.
    pub lower_bound_constant: f64,
}

impl LocalLimitReport {
    /// `p·2π·σ_X·√N`
    pub fn scaled_probability(&self, n: usize) -> f64 {
        self.p_exact * 2.0 * PI * self.sigma_x * (n as f64).sqrt()
    }

    pub fn lower_bound_holds(&self, n: usize) -> bool {
        self.scaled_probability(n) >= self.lower_bound_constant
    }
}

pub fn prob_s_equals_k(ens: &ConditionedEnsemble, mode: ProbabilityMode) -> Result<LocalLimitReport> {
    let law = &ens.model.x_law;
    let (n, k) = (ens.n_summands, ens.target);
    let p_dp = matches!(mode, ProbabilityMode::Dp | ProbabilityMode::Both).then(|| prob_sum_equals_dp(law, n, k as usize));
    let p_fourier = match mode {
        ProbabilityMode::Fourier | ProbabilityMode::Both => Some(prob_sum_equals_fourier(law, n, k)?),
        ProbabilityMode::Dp => None,
    };
    if let (Some(a), Some(b)) = (p_dp, p_fourier) {
        if (a - b).abs() > 1e-6 * a.abs().max(b.abs()) {
            return Err(Error::Numeric(format!(
                "convolution gives P(S = k) = {a:.12e}, Fourier inversion gives {b:.12e}"
            )));
        }
    }
    let p_exact = p_dp.or(p_fourier).unwrap();
    if p_exact <= 0.0 {
        return Err(Error::Conditioning(format!("P(S = {k}) = 0")));
    }
    let sigma_x = law.variance().sqrt();
    let nf = n as f64;
    let v = (k as f64 - nf * law.mean()) / (sigma_x * nf.sqrt());
    let gaussian_prediction = (-v * v / 2.0).exp() / (sigma_x * (2.0 * PI * nf).sqrt());
    Ok(LocalLimitReport {
        p_exact,
        p_dp,
        p_fourier,
        v,
        sigma_x,
        gaussian_prediction,
        ratio: p_exact / gaussian_prediction,
        lower_bound_constant: (2.0 * PI).sqrt() * (-v * v / 2.0).exp() / 2.0,
    })
}

/// Conditional samples of `T` (integer mark units) and optionally the marks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConditionalSamples {
    pub totals: Vec<i64>,
    /// Per-sample mark vectors, kept only when requested.
    pub marks: Option<Vec<Vec<i64>>>,
}

impl ConditionalSamples {
    fn merge(&mut self, other: ConditionalSamples) {
        self.totals.extend(other.totals);
        if let (Some(a), Some(b)) = (self.marks.as_mut(), other.marks) {
            a.extend(b);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionConfig {
    pub acceptance_floor: f64,
    pub warmup: u64,
    pub keep_marks: bool,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig {
            acceptance_floor: DEFAULT_ACCEPTANCE_FLOOR,
            warmup: DEFAULT_WARMUP,
            keep_marks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionOutcome {
    pub samples: ConditionalSamples,
    pub proposals: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    /// `P(S = k)`, the rate the sampler should show.
    pub predicted_rate: Option<f64>,
}

fn rejection_run<R: Rng + ?Sized>(
    ens: &ConditionedEnsemble,
    count: usize,
    rng: &mut R,
    cfg: &RejectionConfig,
) -> Result<(ConditionalSamples, u64)> {
    let sampler = ens.model.x_law.sampler();
    let k = ens.target as u64;
    let n = ens.n_summands;
    let mut xs = vec![0u64; n];
    let mut scratch = Vec::new();
    let mut out = ConditionalSamples {
        totals: Vec::with_capacity(count),
        marks: cfg.keep_marks.then(Vec::new),
    };
    let mut proposals = 0u64;
    while out.totals.len() < count {
        proposals += 1;
        let mut s = 0u64;
        let mut ok = true;
        for slot in xs.iter_mut() {
            let d = sampler.draw(rng);
            s += d.value;
            if d.truncated || s > k {
                ok = false;
                break;
            }
            *slot = d.value;
        }
        if ok && s == k {
            let marks: Vec<i64> = xs.iter().map(|&x| ens.model.marks.sample(x, rng, &mut scratch)).collect();
            out.totals.push(marks.iter().sum());
            if let Some(m) = out.marks.as_mut() {
                m.push(marks);
            }
        }
        if proposals >= cfg.warmup && (out.totals.len() as f64) < cfg.acceptance_floor * proposals as f64 {
            return Err(Error::AcceptanceFloor {
                rate: out.totals.len() as f64 / proposals as f64,
                floor: cfg.acceptance_floor,
                proposals,
            });
        }
    }
    Ok((out, proposals))
}

fn predicted_rate(ens: &ConditionedEnsemble) -> Option<f64> {
    (ens.target <= 20_000).then(|| prob_sum_equals_dp(&ens.model.x_law, ens.n_summands, ens.k()))
}

/// Propose `N` independent pairs until `ΣX = k`; single stream.
pub fn rejection_sample_conditional<R: Rng + ?Sized>(
    ens: &ConditionedEnsemble,
    count: usize,
    rng: &mut R,
    cfg: &RejectionConfig,
) -> Result<RejectionOutcome> {
    if count == 0 {
        return Err(domain("count must be at least 1"));
    }
    let (samples, proposals) = rejection_run(ens, count, rng, cfg)?;
    Ok(RejectionOutcome {
        accepted: count as u64,
        acceptance_rate: count as f64 / proposals as f64,
        samples,
        proposals,
        predicted_rate: predicted_rate(ens),
    })
}

/// Rejection sampling split into fixed-size work units, each on its own
/// derived stream; identical output for any thread count.
pub fn rejection_sample_parallel(
    ens: &ConditionedEnsemble,
    count: usize,
    master_seed: u64,
    grid_index: u32,
    cfg: &RejectionConfig,
) -> Result<RejectionOutcome> {
    if count == 0 {
        return Err(domain("count must be at least 1"));
    }
    let parts: Vec<Result<(ConditionalSamples, u64)>> = seeding::work_units(count as u64)
        .into_par_iter()
        .map(|(unit, size)| {
            let mut rng = seeding::stream(master_seed, unit, grid_index);
            rejection_run(ens, size as usize, &mut rng, cfg)
        })
        .collect();
    let mut samples = ConditionalSamples {
        totals: Vec::with_capacity(count),
        marks: cfg.keep_marks.then(Vec::new),
    };
    let mut proposals = 0;
    for p in parts {
        let (s, q) = p?;
        samples.merge(s);
        proposals += q;
    }
    Ok(RejectionOutcome {
        accepted: count as u64,
        acceptance_rate: count as f64 / proposals as f64,
        samples,
        proposals,
        predicted_rate: predicted_rate(ens),
    })
}

/// Exact sampler for `(X_1, …, X_N) | S = k`: draws `X_i` from
/// `P(X = x)·P(S_{r−1} = s − x)` given `r` summands and remainder `s`.
#[derive(Debug, Clone)]
pub struct SequentialSampler {
    ens: ConditionedEnsemble,
    pmf: Vec<f64>,
    /// `ways[j][s] ∝ P(S_j = s)`, each row scaled to max 1.
    ways: Vec<Vec<f64>>,
}

impl SequentialSampler {
    pub fn new(ens: &ConditionedEnsemble, cell_budget: u64) -> Result<Self> {
        let (n, k) = (ens.n_summands, ens.k());
        let cells = n as u128 * (k as u128 + 1);
        if cells > cell_budget as u128 {
            return Err(Error::Resource {
                what: "sequential sampler table".into(),
                needed: cells,
                budget: cell_budget as u128,
            });
        }
        let law = &ens.model.x_law;
        let top = law.truncation_point(1e-18).map(|t| t as usize).unwrap_or(k).min(k);
        let pmf: Vec<f64> = (0..=top as u64).map(|x| law.pmf(x)).collect();
        let mut ways = Vec::with_capacity(n);
        let mut row = vec![0.0; k + 1];
        row[0] = 1.0;
        ways.push(row.clone());
        for _ in 1..n {
            let mut next = convolve_truncated(&row, &pmf, k + 1);
            let max = next.iter().cloned().fold(0.0, f64::max);
            if max == 0.0 {
                return Err(Error::Conditioning(format!("P(S = s) vanishes for all s ≤ {k}")));
            }
            next.iter_mut().for_each(|v| *v /= max);
            ways.push(next.clone());
            row = next;
        }
        let last = convolve_truncated(&row, &pmf, k + 1);
        if last[k] == 0.0 {
            return Err(Error::Conditioning(format!("P(S = {k}) = 0")));
        }
        Ok(SequentialSampler {
            ens: ens.clone(),
            pmf,
            ways,
        })
    }

    pub fn draw_xs<R: Rng + ?Sized>(&self, rng: &mut R, xs: &mut Vec<u64>) -> Result<()> {
        xs.clear();
        let mut s = self.ens.k();
        for r in (1..=self.ens.n_summands).rev() {
            let row = &self.ways[r - 1];
            let hi = s.min(self.pmf.len() - 1);
            let total: f64 = (0..=hi).map(|x| self.pmf[x] * row[s - x]).sum();
            if !(total > 0.0) {
                return Err(Error::Numeric(format!("no admissible value with {r} summands left and remainder {s}")));
            }
            let mut u = rng.gen::<f64>() * total;
            let mut pick = hi;
            for x in 0..=hi {
                let w = self.pmf[x] * row[s - x];
                if u < w {
                    pick = x;
                    break;
                }
                u -= w;
            }
            // rounding can leave u past the last positive weight
            while self.pmf[pick] * row[s - pick] == 0.0 {
                pick -= 1;
            }
            xs.push(pick as u64);
            s -= pick;
        }
        Ok(())
    }

    fn run<R: Rng + ?Sized>(&self, count: usize, rng: &mut R, keep_marks: bool) -> Result<ConditionalSamples> {
        let mut xs = Vec::with_capacity(self.ens.n_summands);
        let mut scratch = Vec::new();
        let mut out = ConditionalSamples {
            totals: Vec::with_capacity(count),
            marks: keep_marks.then(Vec::new),
        };
        for _ in 0..count {
            self.draw_xs(rng, &mut xs)?;
            let marks: Vec<i64> = xs.iter().map(|&x| self.ens.model.marks.sample(x, rng, &mut scratch)).collect();
            out.totals.push(marks.iter().sum());
            if let Some(m) = out.marks.as_mut() {
                m.push(marks);
            }
        }
        Ok(out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R, keep_marks: bool) -> Result<ConditionalSamples> {
        self.run(count, rng, keep_marks)
    }

    /// Fixed-size work units on derived streams.
    pub fn sample_parallel(&self, count: usize, master_seed: u64, grid_index: u32, keep_marks: bool) -> Result<ConditionalSamples> {
        let parts: Vec<Result<ConditionalSamples>> = seeding::work_units(count as u64)
            .into_par_iter()
            .map(|(unit, size)| {
                let mut rng = seeding::stream(master_seed, unit, grid_index);
                self.run(size as usize, &mut rng, keep_marks)
            })
            .collect();
        let mut out = ConditionalSamples {
            totals: Vec::with_capacity(count),
            marks: keep_marks.then(Vec::new),
        };
        for p in parts {
            out.merge(p?);
        }
        Ok(out)
    }
}

/// Bootstrap interval for one deviation statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    pub value: f64,
    pub ci: (f64, f64),
}

impl Deviation {
    pub fn ci_width(&self) -> f64 {
        self.ci.1 - self.ci.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentReport {
    pub n_summands: usize,
    pub target: i64,
    pub samples: usize,
    pub mean_hat: f64,
    pub var_hat: f64,
    pub mean_prediction: f64,
    pub var_prediction: f64,
    /// `|Ê[U] − prediction|`
    pub mean_deviation: Deviation,
    /// `|V̂ar(U) − Nτ²| / √N`
    pub var_deviation: Deviation,
}

const BOOTSTRAP_RESAMPLES: usize = 200;

/// Compare sample moments of `U` (in real units) to the conditional
/// mean and variance predictions.
pub fn conditional_moment_report<R: Rng + ?Sized>(
    ens: &ConditionedEnsemble,
    profile: &MomentProfile,
    samples: &[f64],
    rng: &mut R,
) -> Result<MomentReport> {
    if samples.len() < MIN_REPORT_SAMPLES {
        return Err(Error::StatisticalPower(format!(
            "moment report needs at least {MIN_REPORT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let (mean_hat, var_hat) = mean_variance(samples);
    let mean_prediction = profile.mean_prediction(ens.target);
    let var_prediction = profile.variance_prediction();
    let sqrt_n = (ens.n_summands as f64).sqrt();
    let mean_stat = |xs: &[f64]| (xs.iter().sum::<f64>() / xs.len() as f64 - mean_prediction).abs();
    let var_stat = |xs: &[f64]| (mean_variance(xs).1 - var_prediction).abs() / sqrt_n;
    let mean_ci = bootstrap_interval(samples, mean_stat, BOOTSTRAP_RESAMPLES, 0.95, rng);
    let var_ci = bootstrap_interval(samples, var_stat, BOOTSTRAP_RESAMPLES, 0.95, rng);
    Ok(MomentReport {
        n_summands: ens.n_summands,
        target: ens.target,
        samples: samples.len(),
        mean_hat,
        var_hat,
        mean_prediction,
        var_prediction,
        mean_deviation: Deviation {
            value: mean_stat(samples),
            ci: mean_ci,
        },
        var_deviation: Deviation {
            value: var_stat(samples),
            ci: var_ci,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_pcg::Pcg64;

    fn occupancy_ens(n: usize, k: i64) -> ConditionedEnsemble {
        mean_match_tilt(&PairModel::occupancy(1.0).unwrap(), n, k).unwrap()
    }

    #[test]
    fn occupancy_profile() {
        let p = moment_profile(&PairModel::occupancy(2.0).unwrap(), 10).unwrap();
        assert!((p.sigma_x - 2f64.sqrt()).abs() < 1e-12);
        assert!((p.mean_y - (-2f64).exp()).abs() < 1e-15);
        assert!((p.tau * p.tau - p.sigma_y * p.sigma_y * (1.0 - p.r * p.r)).abs() < 1e-9);
        assert!(p.sigma_x.powi(2) <= 4.0 * p.rho_x);
    }

    #[test]
    fn independent_and_identity_marks() {
        let law = IntegerLaw::poisson(1.5).unwrap();
        let ind = PairModel::new(law, MarkRule::IndependentBernoulli { p: 0.3 }, "ind");
        let p = moment_profile(&ind, 5).unwrap();
        assert!(p.r.abs() < 1e-12);
        assert!((p.tau - p.sigma_y).abs() < 1e-12);
        let id = PairModel::new(law, MarkRule::Identity, "id");
        let p = moment_profile(&id, 5).unwrap();
        assert!(p.perfect_correlation);
        assert_eq!(p.tau, 0.0);
        let c = PairModel::new(law, MarkRule::Constant { value: 2 }, "c");
        assert!(matches!(moment_profile(&c, 5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn two_urns_two_balls() {
        let ens = ConditionedEnsemble::new(PairModel::occupancy(0.7).unwrap(), 2, 2).unwrap();
        let law = exact_conditional_pmf(&ens).unwrap();
        assert!((law.prob(1) - 0.5).abs() < 1e-15);
        assert!((law.prob(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_summand_and_identity() {
        let model = PairModel::new(IntegerLaw::poisson(1.0).unwrap(), MarkRule::IndependentBernoulli { p: 0.25 }, "b");
        let law = exact_conditional_pmf(&ConditionedEnsemble::new(model, 1, 4).unwrap()).unwrap();
        assert_eq!(law.atoms.len(), 2);
        assert!((law.prob(0) - 0.75).abs() < 1e-15 && (law.prob(1) - 0.25).abs() < 1e-15);
        let id = PairModel::new(IntegerLaw::poisson(1.0).unwrap(), MarkRule::Identity, "id");
        let law = exact_conditional_pmf(&ConditionedEnsemble::new(id, 3, 3).unwrap()).unwrap();
        assert_eq!(law.atoms, vec![(3, 1.0)]);
    }

    #[test]
    fn dp_budget_and_conditioning_errors() {
        let ens = occupancy_ens(50, 100);
        assert!(matches!(
            exact_conditional_pmf_with_budget(&ens, 1000),
            Err(Error::Resource { .. })
        ));
        let borel = PairModel::hashing(0.3).unwrap();
        let ens = ConditionedEnsemble::new(borel, 4, 3).unwrap();
        assert!(matches!(exact_conditional_pmf(&ens), Err(Error::Conditioning(_))));
    }

    #[test]
    fn dp_matches_brute_force() {
        let marks = [
            MarkRule::Indicator { at: 0 },
            MarkRule::IndependentBernoulli { p: 0.4 },
            MarkRule::PositivePartMinusOne,
        ];
        for n in 1..=4 {
            for k in 0..=5i64 {
                for m in &marks {
                    let model = PairModel::new(IntegerLaw::poisson(1.3).unwrap(), m.clone(), "t");
                    let ens = ConditionedEnsemble::new(model, n, k).unwrap();
                    let dp = exact_conditional_pmf(&ens).unwrap();
                    let configs = enumerate_configurations(&ens, 1_000_000).unwrap();
                    let mut brute: BTreeMap<i64, f64> = BTreeMap::new();
                    for (c, p) in configs {
                        *brute.entry(c.iter().map(|e| e.1).sum()).or_insert(0.0) += p;
                    }
                    for (t, p) in &dp.atoms {
                        assert!((brute[t] - p).abs() < 1e-12, "n={n} k={k} t={t}");
                    }
                    assert_eq!(brute.len(), dp.atoms.len());
                }
            }
        }
    }

    #[test]
    fn tilts() {
        let e = mean_match_tilt(&PairModel::occupancy(1.0).unwrap(), 100, 200).unwrap();
        assert_eq!(e.tilt, Some(2.0));
        let e = mean_match_tilt(&PairModel::hashing(0.1).unwrap(), 10, 30).unwrap();
        let lambda = e.tilt.unwrap();
        assert!((lambda - 2.0 / 3.0 * (-2.0f64 / 3.0).exp()).abs() < 1e-12);
        assert!((e.model.x_law.mean() - 3.0).abs() < 1e-9);
        assert!(mean_match_tilt(&PairModel::hashing(0.1).unwrap(), 10, 9).is_err());
        let g = PairModel::new(IntegerLaw::geometric(0.5).unwrap(), MarkRule::Identity, "g");
        let e = mean_match_tilt(&g, 7, 12).unwrap();
        assert!((e.model.x_law.mean() - 12.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn probability_modes_agree() {
        for (n, k) in [(1usize, 3i64), (5, 10), (40, 80), (200, 380)] {
            let ens = ConditionedEnsemble::new(PairModel::occupancy(2.0).unwrap(), n, k).unwrap();
            let r = prob_s_equals_k(&ens, ProbabilityMode::Both).unwrap();
            let exact = (-(2.0 * n as f64) + k as f64 * (2.0 * n as f64).ln() - statrs::function::gamma::ln_gamma(k as f64 + 1.0)).exp();
            assert!((r.p_exact - exact).abs() < 1e-10 * exact, "{n} {k}");
        }
        let ens = mean_match_tilt(&PairModel::hashing(0.3).unwrap(), 30, 60).unwrap();
        prob_s_equals_k(&ens, ProbabilityMode::Both).unwrap();
        let g = PairModel::new(IntegerLaw::geometric(0.4).unwrap(), MarkRule::Identity, "g");
        prob_s_equals_k(&ConditionedEnsemble::new(g, 12, 20).unwrap(), ProbabilityMode::Both).unwrap();
    }

    #[test]
    fn rejection_two_urns() {
        let ens = ConditionedEnsemble::new(PairModel::occupancy(1.0).unwrap(), 2, 2).unwrap();
        let mut rng = Pcg64::seed_from_u64(11);
        let out = rejection_sample_conditional(&ens, 100_000, &mut rng, &RejectionConfig::default()).unwrap();
        let ones = out.samples.totals.iter().filter(|&&t| t == 1).count() as f64 / 1e5;
        assert!((ones - 0.5).abs() < 3.0 * (0.25f64 / 1e5).sqrt());
        let p = out.predicted_rate.unwrap();
        let se = (p * (1.0 - p) / out.proposals as f64).sqrt();
        assert!((out.acceptance_rate - p).abs() < 3.0 * se);
    }

    #[test]
    fn acceptance_floor_triggers() {
        let ens = ConditionedEnsemble::new(PairModel::occupancy(0.1).unwrap(), 50, 60).unwrap();
        let mut rng = Pcg64::seed_from_u64(1);
        let cfg = RejectionConfig {
            warmup: 1000,
            ..Default::default()
        };
        assert!(matches!(
            rejection_sample_conditional(&ens, 10, &mut rng, &cfg),
            Err(Error::AcceptanceFloor { .. })
        ));
    }

    #[test]
    fn sequential_matches_dp() {
        let ens = occupancy_ens(6, 11);
        let exact = exact_conditional_pmf(&ens).unwrap();
        let s = SequentialSampler::new(&ens, DEFAULT_CELL_BUDGET).unwrap();
        let mut rng = Pcg64::seed_from_u64(5);
        let out = s.sample(100_000, &mut rng, false).unwrap();
        let mut tv = 0.0;
        for &(t, p) in &exact.atoms {
            let f = out.totals.iter().filter(|&&x| x == t).count() as f64 / 1e5;
            tv += (f - p).abs() / 2.0;
        }
        assert!(tv < 0.01, "tv {tv}");
    }

    #[test]
    fn moment_report_needs_samples() {
        let ens = occupancy_ens(4, 8);
        let p = moment_profile(&ens.model, 4).unwrap();
        let mut rng = Pcg64::seed_from_u64(0);
        assert!(matches!(
            conditional_moment_report(&ens, &p, &[1.0; 10], &mut rng),
            Err(Error::StatisticalPower(_))
        ));
    }
}
