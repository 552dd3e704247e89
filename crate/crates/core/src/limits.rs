//! Numerical checks of the limit theory: characteristic functions, the
//! Bartlett inversion, Berry–Esseen sweeps, the constants ledger, tail
//! brackets, and big-jump diagnostics.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::conditional::{
    exact_conditional_pmf, mean_match_tilt, moment_profile, prob_s_equals_k, ConditionalLaw, ConditionalSamples,
    ConditionedEnsemble, MomentProfile, MomentReport, PairModel, ProbabilityMode, SequentialSampler,
};
use crate::distributions::{tail_bracket, IntegerLaw, TailBracket};
use crate::error::{domain, Error, Result};
use crate::hashing::{enumerate_all, permutation_count, PairSampler, DEFAULT_ENUMERATION_CAP};
use crate::quadrature::{integrate, Tolerance};
use crate::seeding;
use crate::stats::{dkw_halfwidth, kolmogorov_distance, kolmogorov_distance_lattice, normal_cdf};

pub const C0: f64 = 98.0;
pub const DEFAULT_BRACKET_TOLERANCE: f64 = 0.15;
pub const MIN_OBSERVABLE_HITS: u64 = 30;
pub const MIN_SWEEP_SAMPLES: usize = 10_000;
/// Level of the band used when comparing Monte Carlo and exact distances.
pub const DKW_LEVEL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    Fail(String),
    /// A hypothesis of the theorem being tested does not hold for the model.
    HypothesisFailure(String),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail(_) => "fail",
            Verdict::HypothesisFailure(_) => "hypothesis-failure",
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            Verdict::Pass => "",
            Verdict::Fail(s) | Verdict::HypothesisFailure(s) => s,
        }
    }
}

/// Centered joint law of `(X, Y)` with real marks.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    atoms: Vec<(i64, f64, f64)>,
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov: f64,
}

impl JointTable {
    pub fn from_atoms(atoms: Vec<(i64, f64, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.2).sum();
        if atoms.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(domain(format!("joint masses sum to {total}, not 1")));
        }
        let mean_x = atoms.iter().map(|&(x, _, p)| x as f64 * p).sum::<f64>();
        let mean_y = atoms.iter().map(|&(_, y, p)| y * p).sum::<f64>();
        let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
        for &(x, y, p) in &atoms {
            let (dx, dy) = (x as f64 - mean_x, y - mean_y);
            var_x += p * dx * dx;
            var_y += p * dy * dy;
            cov += p * dx * dy;
        }
        Ok(JointTable {
            atoms,
            mean_x,
            mean_y,
            var_x,
            var_y,
            cov,
        })
    }

    pub fn from_model(model: &PairModel) -> Result<Self> {
        let atoms = model
            .joint_atoms(1e-16)?
            .into_iter()
            .map(|(x, y, p)| (x as i64, y as f64 * model.y_unit, p))
            .collect::<Vec<_>>();
        let total: f64 = atoms.iter().map(|a| a.2).sum();
        JointTable::from_atoms(atoms.into_iter().map(|(x, y, p)| (x, y, p / total)).collect())
    }

    /// `E[exp{is(X − EX) + it(Y − EY)}]`
    pub fn phi(&self, s: f64, t: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(x, y, p) in &self.atoms {
            acc += Complex64::from_polar(p, s * (x as f64 - self.mean_x) + t * (y - self.mean_y));
        }
        acc
    }

    /// Same table with `Y` replaced by `Y − X·Cov(X, Y)/Var(X)`.
    pub fn projected(&self) -> Result<Self> {
        if self.var_x <= 0.0 {
            return Err(Error::Degenerate("Var(X) = 0".into()));
        }
        let b = self.cov / self.var_x;
        JointTable::from_atoms(self.atoms.iter().map(|&(x, y, p)| (x, y - b * x as f64, p)).collect())
    }

    /// Greatest common divisor of the differences of the `X` support.
    pub fn span(&self) -> u64 {
        let xs: Vec<i64> = self.atoms.iter().filter(|a| a.2 > 0.0).map(|a| a.0).collect();
        let base = xs.iter().copied().min().unwrap_or(0);
        xs.iter().fold(0u64, |g, &x| gcd(g, (x - base).unsigned_abs()))
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `φ(s, t)` for an exact-mode model.
pub fn char_fn(model: &PairModel, s: f64, t: f64) -> Result<Complex64> {
    Ok(JointTable::from_model(model)?.phi(s, t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfGrid {
    pub s_points: usize,
    pub t_points: usize,
    pub eta0: f64,
}

impl Default for CfGrid {
    fn default() -> Self {
        CfGrid {
            s_points: 201,
            t_points: 21,
            eta0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfAudit {
    /// Largest `c` with `|φ'(s,t)| ≤ 1 − c(σ_X²s² + σ_{Y'}²t²)` on the grid.
    pub c5: f64,
    /// The same bound restricted to `t = 0`.
    pub c_x_only: f64,
    pub worst_s: f64,
    pub worst_t: f64,
    pub span: u64,
    pub holds: bool,
}

/// Grid estimate of the characteristic-function constant, using the
/// residual `Y' = Y − X·Cov(X,Y)/σ_X²`.
pub fn cf_bound_audit(table: &JointTable, grid: &CfGrid) -> Result<CfAudit> {
    let proj = table.projected()?;
    let (vx, vy) = (proj.var_x, proj.var_y);
    let ns = grid.s_points.max(3);
    let nt = grid.t_points.max(1);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut x_only = f64::INFINITY;
    for i in 0..ns {
        let s = -PI + 2.0 * PI * i as f64 / (ns - 1) as f64;
        for j in 0..nt {
            let t = if nt == 1 { 0.0 } else { grid.eta0 * j as f64 / (nt - 1) as f64 };
            let q = vx * s * s + vy * t * t;
            let gap = 1.0 - proj.phi(s, t).norm();
            let ratio = if q > 1e-300 {
                gap / q
            } else if s == 0.0 && t == 0.0 {
                continue;
            } else {
                0.0
            };
            if ratio < best.0 {
                best = (ratio, s, t);
            }
            if t == 0.0 && s != 0.0 {
                x_only = x_only.min(ratio);
            }
        }
    }
    Ok(CfAudit {
        c5: best.0,
        c_x_only: x_only,
        worst_s: best.1,
        worst_t: best.2,
        span: table.span(),
        holds: best.0 > 1e-12,
    })
}

/// `ψ_N(t)` by the inversion integral over `s ∈ [−πσ_X√N, πσ_X√N]`.
pub fn bartlett_psi(ens: &ConditionedEnsemble, t: f64) -> Result<Complex64> {
    let table = JointTable::from_model(&ens.model)?;
    bartlett_psi_with_table(&table, ens.n_summands, ens.target, t)
}

pub fn bartlett_psi_with_table(table: &JointTable, n: usize, k: i64, t: f64) -> Result<Complex64> {
    let nf = n as f64;
    let sn = table.var_x.sqrt() * nf.sqrt();
    let v = (k as f64 - nf * table.mean_x) / sn;
    let f = |s: f64| {
        let phi = table.phi(s / sn, t);
        let mag = phi.norm();
        if mag == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let log_mag = nf * mag.ln();
        if log_mag < -745.0 {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar(log_mag.exp(), nf * phi.arg() - s * v)
    };
    let mut breaks = vec![0.0];
    for c in [0.5, 1.0, 2.0, 4.0, 6.0, 10.0, 20.0] {
        breaks.push(c);
        breaks.push(-c);
    }
    let lim = PI * sn;
    let value = integrate(f, -lim, lim, &breaks, Tolerance { abs: 1e-14, rel: 1e-12 })?;
    Ok(value / sn)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerryEsseenRow {
    pub n: usize,
    pub k: i64,
    pub samples: usize,
    pub d: f64,
    pub d_sqrt_n: f64,
    /// DKW half-width at level 0.05.
    pub ci_halfwidth: f64,
    /// Exact distance from the DP law where that is feasible.
    pub exact_d: Option<f64>,
    pub tau: f64,
    pub moments: MomentReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerryEsseenReport {
    pub rows: Vec<BerryEsseenRow>,
    /// `max(D√N)/min(D√N)` over the grid.
    pub flatness: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub samples: usize,
    pub master_seed: u64,
    /// Largest `N` at which the exact distance is also computed.
    pub exact_n_max: usize,
    pub max_flatness: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            samples: 100_000,
            master_seed: 0,
            exact_n_max: 8,
            max_flatness: 2.0,
        }
    }
}

/// `(t − prediction)/(√N τ)`
fn standardizer(profile: &MomentProfile, k: i64) -> impl Fn(f64) -> f64 {
    let centre = profile.mean_prediction(k);
    let scale = (profile.n_summands as f64).sqrt() * profile.tau;
    move |t| (t - centre) / scale
}

/// Kolmogorov distance between the standardized exact conditional law and Φ.
pub fn exact_kolmogorov_distance(law: &ConditionalLaw, profile: &MomentProfile, k: i64) -> f64 {
    let z = standardizer(profile, k);
    let atoms: Vec<(f64, f64)> = law.atoms.iter().map(|&(t, p)| (z(t as f64 * law.y_unit), p)).collect();
    kolmogorov_distance_lattice(&atoms, normal_cdf)
}

/// Mean-matched ensemble for `N` summands of `model`: `k = round(N·E[X])`.
pub fn matched_ensemble(model: &PairModel, n: usize) -> Result<ConditionedEnsemble> {
    let k = (n as f64 * model.x_law.mean()).round() as i64;
    mean_match_tilt(model, n, k)
}

/// Kolmogorov distance of the standardized conditional sum on an `N` grid,
/// plus the conditional moment comparison on the same samples.
pub fn berry_esseen_sweep(model: &PairModel, n_grid: &[usize], cfg: &SweepConfig) -> Result<BerryEsseenReport> {
    if cfg.samples < MIN_SWEEP_SAMPLES {
        return Err(Error::StatisticalPower(format!(
            "a sweep needs at least {MIN_SWEEP_SAMPLES} samples per N, got {}",
            cfg.samples
        )));
    }
    let mut rows = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let ens = matched_ensemble(model, n)?;
        let profile = match moment_profile(&ens.model, n) {
            Ok(p) if p.tau > 0.0 => p,
            Ok(_) => {
                return Ok(hypothesis_failure(rows, "τ = 0: Y is an affine function of X"));
            }
            Err(Error::Degenerate(msg)) => return Ok(hypothesis_failure(rows, &msg)),
            Err(e) => return Err(e),
        };
        let sampler = SequentialSampler::new(&ens, 500_000_000)?;
        let draws = sampler.sample_parallel(cfg.samples, cfg.master_seed, gi as u32, false)?;
        let unit = ens.model.y_unit;
        let z = standardizer(&profile, ens.target);
        let mut zs: Vec<f64> = draws.totals.iter().map(|&t| z(t as f64 * unit)).collect();
        zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = kolmogorov_distance(&zs, normal_cdf);
        let exact_d = if n <= cfg.exact_n_max {
            Some(exact_kolmogorov_distance(&exact_conditional_pmf(&ens)?, &profile, ens.target))
        } else {
            None
        };
        let totals: Vec<f64> = draws.totals.iter().map(|&t| t as f64 * unit).collect();
        let mut boot = seeding::stream(cfg.master_seed, u32::MAX, gi as u32);
        let moments = crate::conditional::conditional_moment_report(&ens, &profile, &totals, &mut boot)?;
        rows.push(BerryEsseenRow {
            n,
            k: ens.target,
            samples: cfg.samples,
            d,
            d_sqrt_n: d * (n as f64).sqrt(),
            ci_halfwidth: dkw_halfwidth(cfg.samples, 0.05),
            exact_d,
            tau: profile.tau,
            moments,
        });
    }
    let flatness = flatness(&rows);
    let mut problems = Vec::new();
    if rows.len() >= 2 && flatness > cfg.max_flatness {
        problems.push(format!("D√N varies by a factor {flatness:.3} > {}", cfg.max_flatness));
    }
    for r in &rows {
        if let Some(e) = r.exact_d {
            let band = dkw_halfwidth(r.samples, DKW_LEVEL);
            if (r.d - e).abs() > band {
                problems.push(format!("N = {}: Monte Carlo D = {:.4} vs exact {:.4} outside ±{band:.4}", r.n, r.d, e));
            }
        }
    }
    let verdict = if problems.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail(problems.join("; "))
    };
    Ok(BerryEsseenReport { rows, flatness, verdict })
}

fn flatness(rows: &[BerryEsseenRow]) -> f64 {
    if rows.is_empty() {
        return 1.0;
    }
    let max = rows.iter().map(|r| r.d_sqrt_n).fold(f64::MIN, f64::max);
    let min = rows.iter().map(|r| r.d_sqrt_n).fold(f64::MAX, f64::min);
    max / min
}

fn hypothesis_failure(rows: Vec<BerryEsseenRow>, msg: &str) -> BerryEsseenReport {
    BerryEsseenReport {
        flatness: flatness(&rows),
        rows,
        verdict: Verdict::HypothesisFailure(msg.to_string()),
    }
}

/// Hypothesis constants measured over a model family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerInputs {
    pub c1_tilde: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3_tilde: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c5_tilde: f64,
    pub c6: f64,
    pub eta0: f64,
}

impl LedgerInputs {
    /// Sup/inf of the moment quantities over the mean-matched family on
    /// `n_grid`, `c5` from the characteristic-function grid, and `c̃5` as
    /// the smallest `2π·σ_X·√N·P(S = k)`.
    pub fn measure(model: &PairModel, n_grid: &[usize], grid: &CfGrid) -> Result<(Self, Vec<FamilyPoint>)> {
        if n_grid.is_empty() {
            return Err(domain("empty N grid"));
        }
        let mut m = LedgerInputs {
            c1_tilde: f64::INFINITY,
            c1: 0.0,
            c2: 0.0,
            c3_tilde: f64::INFINITY,
            c3: 0.0,
            c4: 0.0,
            c5: f64::INFINITY,
            c5_tilde: f64::INFINITY,
            c6: 0.0,
            eta0: grid.eta0,
        };
        let mut points = Vec::new();
        for &n in n_grid {
            let ens = matched_ensemble(model, n)?;
            let p = moment_profile(&ens.model, n)?;
            let table = JointTable::from_model(&ens.model)?;
            let cf = cf_bound_audit(&table, grid)?;
            let ll = prob_s_equals_k(&ens, ProbabilityMode::Dp)?;
            m.c1_tilde = m.c1_tilde.min(p.sigma_x);
            m.c1 = m.c1.max(p.sigma_x);
            m.c2 = m.c2.max((p.rho_x / p.sigma_x.powi(3)).cbrt());
            m.c3_tilde = m.c3_tilde.min(p.sigma_y);
            m.c3 = m.c3.max(p.sigma_y);
            m.c4 = m.c4.max((p.rho_y / p.sigma_y.powi(3)).cbrt());
            m.c5 = m.c5.min(cf.c5);
            m.c5_tilde = m.c5_tilde.min(ll.scaled_probability(n));
            m.c6 = m.c6.max(p.r.abs());
            points.push(FamilyPoint {
                n,
                k: ens.target,
                profile: p,
                cf,
                v: ll.v,
                scaled_probability: ll.scaled_probability(n),
                lower_bound_constant: ll.lower_bound_constant,
            });
        }
        Ok((m, points))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyPoint {
    pub n: usize,
    pub k: i64,
    pub profile: MomentProfile,
    pub cf: CfAudit,
    pub v: f64,
    pub scaled_probability: f64,
    pub lower_bound_constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsLedger {
    pub inputs: LedgerInputs,
    pub epsilon: f64,
    pub eta: f64,
    pub c0: f64,
    pub big_c1: f64,
    pub big_c2: f64,
    pub big_c3: f64,
    /// `C1 + C2·C3^{−1/2}·(1/2)^{1/2}·e^{−1/2}`
    pub big_c: f64,
    pub c7: f64,
    pub c8_second: f64,
    pub c8_third: f64,
    pub c8: f64,
    pub n0: f64,
    pub n0_tilde: f64,
    /// Lower bound on `σ_X` implied by `σ_X² ≤ 4ρ_X ≤ 4c2³σ_X³`.
    pub sigma_x_floor: f64,
}

/// `∫_R |s|^j e^{−s²/24} ds`
fn abs_moment_24(j: u32) -> f64 {
    let a = (j as f64 + 1.0) / 2.0;
    24f64.powf(a) * gamma(a)
}

/// `∬ (|s| + |u| + 1)³ e^{−(s²+u²)/24} ds du`, expanded into products of
/// one-dimensional absolute moments.
pub fn c1_double_integral() -> f64 {
    let mut total = 0.0;
    for i in 0..=3u32 {
        for j in 0..=(3 - i) {
            let l = 3 - i - j;
            let multinomial = 6.0 / (fact(i) * fact(j) * fact(l));
            total += multinomial * abs_moment_24(i) * abs_moment_24(j);
        }
    }
    total
}

fn fact(n: u32) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

impl ConstantsLedger {
    pub fn evaluate(inputs: LedgerInputs) -> Self {
        let LedgerInputs {
            c1_tilde,
            c1,
            c2,
            c3_tilde,
            c3,
            c4,
            c5,
            c5_tilde,
            eta0,
            ..
        } = inputs;
        let epsilon = (2.0 / 9.0 * c1 * c2.powi(3)).min(PI);
        let eta = (2.0 / 9.0 * c3 * c4.powi(3)).min(eta0);
        let big_c1 = C0 * (c2.powi(3) + c4.powi(3)) * c1_double_integral() / c5_tilde;
        let m = c5.min(1.0);
        let big_c2 = 2.0 / (c5_tilde * c5) * ((2.0 * PI).sqrt() / m.sqrt() + 2.0 / (m * epsilon * c1_tilde));
        let big_c3 = c5 * epsilon * epsilon * c1_tilde * c1_tilde / 2.0;
        let big_c = big_c1 + big_c2 / big_c3.sqrt() * 0.5f64.sqrt() * (-0.5f64).exp();
        // ∫ s² e^{−c s²/2} = √(2π) c^{−3/2}
        let c7 = c2 * c2 * c3 * c4 / (2.0 * c5_tilde) * (2.0 * PI).sqrt() * c5.powf(-1.5);
        // ∫ s⁴ e^{−c s²/3} = (3/4)√π (c/3)^{−5/2}
        let c8_second =
            c2.powi(4) * c3 * c3 * c4 * c4 / (4.0 * c5_tilde) * 0.75 * PI.sqrt() * (c5 / 3.0).powf(-2.5);
        // ∫ |s| e^{−c s²/2} = 2/c
        let c8_third = c3 / c5_tilde * (1.0 + c2 * c4 * c4) * 2.0 / c5;
        let c8 = c7 + c8_second + c8_third;
        let n0 = 3f64.max(c2.powi(6)).max(c4.powi(6));
        ConstantsLedger {
            inputs,
            epsilon,
            eta,
            c0: C0,
            big_c1,
            big_c2,
            big_c3,
            big_c,
            c7,
            c8_second,
            c8_third,
            c8,
            n0,
            n0_tilde: n0.max(4.0 * c8 * c8 / (c3_tilde * c3_tilde)),
            sigma_x_floor: 1.0 / (4.0 * c2.powi(3)),
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let i = &self.inputs;
        vec![
            ("c1_tilde", i.c1_tilde),
            ("c1", i.c1),
            ("c2", i.c2),
            ("c3_tilde", i.c3_tilde),
            ("c3", i.c3),
            ("c4", i.c4),
            ("c5", i.c5),
            ("c5_tilde", i.c5_tilde),
            ("c6", i.c6),
            ("eta0", i.eta0),
            ("epsilon", self.epsilon),
            ("eta", self.eta),
            ("C0", self.c0),
            ("C1", self.big_c1),
            ("C2", self.big_c2),
            ("C3", self.big_c3),
            ("C", self.big_c),
            ("c7", self.c7),
            ("c8_second", self.c8_second),
            ("c8_third", self.c8_third),
            ("c8", self.c8),
            ("N0", self.n0),
            ("N0_tilde", self.n0_tilde),
            ("sigma_x_floor", self.sigma_x_floor),
        ]
    }

    pub fn verdict(&self) -> Verdict {
        let bad: Vec<&str> = self
            .entries()
            .into_iter()
            .filter(|(name, v)| !(v.is_finite() && (*v > 0.0 || *name == "c6")))
            .map(|(name, _)| name)
            .collect();
        if bad.is_empty() && self.inputs.c6 < 1.0 {
            Verdict::Pass
        } else if self.inputs.c6 >= 1.0 {
            Verdict::HypothesisFailure("|r| reaches 1".into())
        } else {
            Verdict::Fail(format!("non-finite or non-positive: {}", bad.join(", ")))
        }
    }
}

pub fn constants_ledger(model: &PairModel, n_grid: &[usize], grid: &CfGrid) -> Result<ConstantsLedger> {
    Ok(ConstantsLedger::evaluate(LedgerInputs::measure(model, n_grid, grid)?.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisAudit {
    pub points: Vec<FamilyPoint>,
    pub ledger: ConstantsLedger,
    pub checks: Vec<HypothesisCheck>,
    pub verdict: Verdict,
}

/// Check every hypothesis of the conditional Berry–Esseen theorem on a
/// mean-matched family and evaluate the constants ledger.
pub fn audit_hypotheses(model: &PairModel, n_grid: &[usize], grid: &CfGrid) -> Result<HypothesisAudit> {
    let (inputs, points) = match LedgerInputs::measure(model, n_grid, grid) {
        Ok(v) => v,
        Err(Error::Degenerate(msg)) => {
            let ledger = ConstantsLedger::evaluate(LedgerInputs {
                c1_tilde: f64::NAN,
                c1: f64::NAN,
                c2: f64::NAN,
                c3_tilde: f64::NAN,
                c3: f64::NAN,
                c4: f64::NAN,
                c5: f64::NAN,
                c5_tilde: f64::NAN,
                c6: f64::NAN,
                eta0: grid.eta0,
            });
            return Ok(HypothesisAudit {
                points: Vec::new(),
                ledger,
                checks: vec![HypothesisCheck {
                    name: "variances",
                    passed: false,
                    detail: msg.clone(),
                }],
                verdict: Verdict::HypothesisFailure(msg),
            });
        }
        Err(e) => return Err(e),
    };
    let ledger = ConstantsLedger::evaluate(inputs);
    let mut checks = Vec::new();
    let mut check = |name: &'static str, passed: bool, detail: String| checks.push(HypothesisCheck { name, passed, detail });
    let i = &inputs;
    check(
        "variance of X bounded",
        i.c1_tilde > 0.0 && i.c1.is_finite(),
        format!("σ_X in [{:.6}, {:.6}]", i.c1_tilde, i.c1),
    );
    check("third moment of X", i.c2.is_finite(), format!("c2 = {:.6}", i.c2));
    check(
        "characteristic function bound",
        i.c5 > 1e-12,
        format!("c5 = {:.6e}", i.c5),
    );
    let max_v = points.iter().map(|p| p.v.abs()).fold(0.0, f64::max);
    check("conditioning shift", max_v <= 1.0, format!("max |v| = {max_v:.3e}"));
    check(
        "variance of Y bounded",
        i.c3_tilde > 0.0 && i.c3.is_finite(),
        format!("σ_Y in [{:.6}, {:.6}]", i.c3_tilde, i.c3),
    );
    check("third moment of Y", i.c4.is_finite(), format!("c4 = {:.6}", i.c4));
    check("correlation below 1", i.c6 < 1.0 - 1e-12, format!("max |r| = {:.6}", i.c6));
    let spans: Vec<u64> = points.iter().map(|p| p.cf.span).collect();
    check("span 1", spans.iter().all(|&s| s == 1), format!("spans {spans:?}"));
    let integer_variance = points.iter().all(|p| p.profile.sigma_x.powi(2) <= 4.0 * p.profile.rho_x);
    check("σ_X² ≤ 4ρ_X", integer_variance, String::new());
    let lower = points.iter().all(|p| p.scaled_probability >= p.lower_bound_constant);
    check("local lower bound", lower, format!("c̃5 = {:.6}", i.c5_tilde));
    let finite = ledger.verdict();
    check("ledger finite", finite.passed(), finite.detail().to_string());
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let verdict = if failed.is_empty() {
        Verdict::Pass
    } else {
        Verdict::HypothesisFailure(failed.join(", "))
    };
    Ok(HypothesisAudit {
        points,
        ledger,
        checks,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointStatus {
    Inside,
    Outside,
    Unobservable,
}

impl PointStatus {
    pub fn label(&self) -> &'static str {
        match self {
            PointStatus::Inside => "inside",
            PointStatus::Outside => "outside",
            PointStatus::Unobservable => "unobservable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdPoint {
    pub y: f64,
    pub hits: u64,
    pub p_hat: f64,
    pub normalized: f64,
    pub ci: (f64, f64),
    pub lower: f64,
    pub upper: f64,
    pub status: PointStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdReport {
    pub bracket: TailBracket,
    pub tolerance: f64,
    pub samples: u64,
    pub points: Vec<LdPoint>,
    pub big_jump_fraction: Option<f64>,
    pub verdict: Verdict,
}

fn ld_point(y: f64, hits: u64, samples: u64, min_prob: f64, scale: f64, lower: f64, upper: f64) -> LdPoint {
    let p = hits as f64 / samples as f64;
    let se = (p * (1.0 - p) / samples as f64).sqrt();
    let observable = hits >= MIN_OBSERVABLE_HITS && p >= min_prob;
    let norm = |q: f64| if q > 0.0 { q.ln() / scale } else { f64::NEG_INFINITY };
    let normalized = norm(p);
    let status = if !observable {
        PointStatus::Unobservable
    } else if normalized >= lower && normalized <= upper {
        PointStatus::Inside
    } else {
        PointStatus::Outside
    };
    LdPoint {
        y,
        hits,
        p_hat: p,
        normalized,
        ci: (norm(p - 1.96 * se), norm((p + 1.96 * se).min(1.0))),
        lower,
        upper,
        status,
    }
}

fn ld_verdict(points: &[LdPoint]) -> Verdict {
    let outside: Vec<String> = points
        .iter()
        .filter(|p| p.status == PointStatus::Outside)
        .map(|p| format!("y = {}: {:.4} not in [{:.4}, {:.4}]", p.y, p.normalized, p.lower, p.upper))
        .collect();
    if !points.iter().any(|p| p.status != PointStatus::Unobservable) && !points.is_empty() {
        return Verdict::Fail("no observable grid point".into());
    }
    if outside.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail(outside.join("; "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailConfig {
    pub samples: u64,
    pub master_seed: u64,
    pub tolerance: f64,
    /// Grid points with estimated probability below this are unobservable.
    pub min_probability: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        TailConfig {
            samples: 10_000_000,
            master_seed: 0,
            tolerance: DEFAULT_BRACKET_TOLERANCE,
            min_probability: 3e-5,
        }
    }
}

/// Histogram of in-block displacements `Y` for hashing at load `λ`.
pub fn sample_displacement_histogram(lambda: f64, samples: u64, master_seed: u64, grid_index: u32) -> Result<(BTreeMap<u64, u64>, u64)> {
    PairSampler::new(lambda)?;
    let parts: Vec<Result<(BTreeMap<u64, u64>, u64)>> = seeding::work_units(samples)
        .into_par_iter()
        .map(|(unit, size)| {
            let mut rng = seeding::stream(master_seed, unit, grid_index);
            let mut sampler = PairSampler::new(lambda)?;
            let mut hist = BTreeMap::new();
            let mut truncated = 0;
            for _ in 0..size {
                let d = sampler.draw(&mut rng);
                if d.truncated {
                    truncated += 1;
                } else {
                    *hist.entry(d.y).or_insert(0u64) += 1;
                }
            }
            Ok((hist, truncated))
        })
        .collect();
    let mut hist = BTreeMap::new();
    let mut truncated = 0;
    for p in parts {
        let (h, t) = p?;
        for (y, c) in h {
            *hist.entry(y).or_insert(0) += c;
        }
        truncated += t;
    }
    Ok((hist, truncated))
}

/// `(1/√y)·ln P̂(Y ≥ y)` for hashing at load `λ`, against `[−β, −α]`.
pub fn tail_log_bracket(lambda: f64, y_grid: &[f64], cfg: &TailConfig) -> Result<LdReport> {
    let bracket = tail_bracket(lambda)?;
    if let Some(y) = y_grid.iter().find(|&&y| !(y > 0.0 && y.is_finite())) {
        return Err(domain(format!("tail grid point {y} must be positive")));
    }
    let (hist, _) = sample_displacement_histogram(lambda, cfg.samples, cfg.master_seed, 0)?;
    let points = y_grid
        .iter()
        .map(|&y| {
            let hits: u64 = hist.range(y.ceil() as u64..).map(|(_, c)| c).sum();
            ld_point(
                y,
                hits,
                cfg.samples,
                cfg.min_probability,
                y.sqrt(),
                -bracket.beta - cfg.tolerance,
                -bracket.alpha + cfg.tolerance,
            )
        })
        .collect::<Vec<_>>();
    Ok(LdReport {
        bracket,
        tolerance: cfg.tolerance,
        samples: cfg.samples,
        verdict: ld_verdict(&points),
        points,
        big_jump_fraction: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialRow {
    pub m: usize,
    pub k: usize,
    /// `k(m − k)`
    pub y: u64,
    pub permutations: String,
    pub sequences_at_least: u64,
    /// `ln[P(X = m+1)·(m!/2^k)/(m+1)^m]`
    pub ln_lower_mass: f64,
    /// `ln Σ_{l ≤ 9} P(X = l)·P(d_{l,l−1} ≥ y)`, itself at most `ln P(Y ≥ y)`.
    pub ln_enumerated_tail: f64,
    pub holds: bool,
}

/// The adversarial-sequence lower bound on `P(Y ≥ k(m − k))` against the
/// enumerated tail, for `2 ≤ m ≤ m_max ≤ 8`, all `1 ≤ k ≤ m/2`.
pub fn adversarial_mass_check(lambda: f64, m_max: usize) -> Result<Vec<AdversarialRow>> {
    if m_max > DEFAULT_ENUMERATION_CAP {
        return Err(domain(format!("m_max = {m_max} exceeds the enumeration cap {DEFAULT_ENUMERATION_CAP}")));
    }
    let law = IntegerLaw::borel(lambda)?;
    let laws: Vec<_> = (0..=DEFAULT_ENUMERATION_CAP).map(enumerate_all).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for m in 2..=m_max {
        for k in 1..=m / 2 {
            let y = (k * (m - k)) as u64;
            let perms = permutation_count(m, k)?;
            let ln_fact = ln_gamma(m as f64 + 1.0);
            let ln_lower = law.ln_pmf(m as u64 + 1) + ln_fact - k as f64 * std::f64::consts::LN_2
                - m as f64 * ((m + 1) as f64).ln();
            let terms: Vec<f64> = (1..=DEFAULT_ENUMERATION_CAP)
                .filter(|&n| laws[n].count_at_least(y) > 0)
                .map(|n| law.ln_pmf(n as u64 + 1) + (laws[n].tail(y)).ln())
                .collect();
            let ln_tail = log_sum_exp(&terms);
            let count = laws[m].count_at_least(y);
            let exact_ok = num_bigint::BigUint::from(count) >= perms;
            rows.push(AdversarialRow {
                m,
                k,
                y,
                permutations: perms.to_string(),
                sequences_at_least: count,
                ln_lower_mass: ln_lower,
                ln_enumerated_tail: ln_tail,
                holds: exact_ok && ln_lower <= ln_tail + 1e-12,
            });
        }
    }
    Ok(rows)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigJumpRow {
    pub z: f64,
    pub exceedances: u64,
    pub share_none: f64,
    pub share_single: f64,
    pub share_multiple: f64,
    /// `P̂(T − N·EY ≥ z)`
    pub p_exceed: f64,
    /// `P̂(Y ≥ z/2)` over all summands
    pub p_half: f64,
    /// `(N·P̂(Y ≥ z/2))² / P̂(T − N·EY ≥ z)`
    pub two_jump_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BigJumpReport {
    pub n: usize,
    pub replicates: u64,
    pub rows: Vec<BigJumpRow>,
    pub verdict: Verdict,
}

/// Streaming counts for the single-big-jump diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct BigJumpAccumulator {
    z_grid: Vec<f64>,
    n: usize,
    mean_y: f64,
    replicates: u64,
    exceed: Vec<[u64; 3]>,
    half_hits: Vec<u64>,
}

impl BigJumpAccumulator {
    pub fn new(z_grid: &[f64], n: usize, mean_y: f64) -> Self {
        BigJumpAccumulator {
            z_grid: z_grid.to_vec(),
            n,
            mean_y,
            replicates: 0,
            exceed: vec![[0; 3]; z_grid.len()],
            half_hits: vec![0; z_grid.len()],
        }
    }

    pub fn push(&mut self, marks: &[f64]) {
        self.replicates += 1;
        let excess = marks.iter().sum::<f64>() - self.n as f64 * self.mean_y;
        for (i, &z) in self.z_grid.iter().enumerate() {
            let big = marks.iter().filter(|&&y| y >= z / 2.0).count();
            self.half_hits[i] += big as u64;
            if excess >= z {
                self.exceed[i][big.min(2)] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &BigJumpAccumulator) {
        self.replicates += other.replicates;
        for i in 0..self.z_grid.len() {
            self.half_hits[i] += other.half_hits[i];
            for j in 0..3 {
                self.exceed[i][j] += other.exceed[i][j];
            }
        }
    }

    /// Single-jump share must exceed 1/2 and be nondecreasing in `z`.
    pub fn report(&self, min_exceedances: u64) -> Result<BigJumpReport> {
        let mut rows = Vec::new();
        for (i, &z) in self.z_grid.iter().enumerate() {
            let c = self.exceed[i];
            let total = c.iter().sum::<u64>();
            if total < min_exceedances {
                return Err(Error::StatisticalPower(format!(
                    "z = {z}: {total} exceedances, need {min_exceedances}"
                )));
            }
            let reps = self.replicates as f64;
            let p_exceed = total as f64 / reps;
            let p_half = self.half_hits[i] as f64 / (reps * self.n as f64);
            rows.push(BigJumpRow {
                z,
                exceedances: total,
                share_none: c[0] as f64 / total as f64,
                share_single: c[1] as f64 / total as f64,
                share_multiple: c[2] as f64 / total as f64,
                p_exceed,
                p_half,
                two_jump_bound: (self.n as f64 * p_half).powi(2) / p_exceed,
            });
        }
        let mut problems = Vec::new();
        for w in rows.windows(2) {
            if w[1].share_single < w[0].share_single {
                problems.push(format!("single-jump share drops from z = {} to z = {}", w[0].z, w[1].z));
            }
        }
        for r in &rows {
            if r.share_single <= 0.5 {
                problems.push(format!("z = {}: single-jump share {:.3} ≤ 1/2", r.z, r.share_single));
            }
        }
        Ok(BigJumpReport {
            n: self.n,
            replicates: self.replicates,
            rows,
            verdict: if problems.is_empty() {
                Verdict::Pass
            } else {
                Verdict::Fail(problems.join("; "))
            },
        })
    }
}

/// Unconditioned big-jump diagnostic: `replicates` sums of `N` i.i.d. marks.
pub fn big_jump_diagnostic(
    model: &PairModel,
    n: usize,
    mean_y: f64,
    z_grid: &[f64],
    replicates: u64,
    master_seed: u64,
    min_exceedances: u64,
) -> Result<BigJumpReport> {
    let parts: Vec<BigJumpAccumulator> = seeding::work_units(replicates)
        .into_par_iter()
        .map(|(unit, size)| {
            let mut rng = seeding::stream(master_seed, unit, 0);
            let mut acc = BigJumpAccumulator::new(z_grid, n, mean_y);
            let mut scratch = Vec::new();
            let mut marks = vec![0.0; n];
            for _ in 0..size {
                for m in marks.iter_mut() {
                    *m = model.sample_pair(&mut rng, &mut scratch).1 as f64 * model.y_unit;
                }
                acc.push(&marks);
            }
            acc
        })
        .collect();
    let mut acc = BigJumpAccumulator::new(z_grid, n, mean_y);
    for p in &parts {
        acc.merge(p);
    }
    acc.report(min_exceedances)
}

/// Mean of `Y` for hashing at load `λ` from a separate stream of pairs.
pub fn estimate_mean_displacement(lambda: f64, samples: u64, master_seed: u64) -> Result<f64> {
    let (hist, _) = sample_displacement_histogram(lambda, samples, master_seed, u32::MAX)?;
    let total: u64 = hist.values().sum();
    Ok(hist.iter().map(|(&y, &c)| y as f64 * c as f64).sum::<f64>() / total as f64)
}

/// `(1/√N)·ln P̂(T − T̄ ≥ N·y | S = k)` against `[−β√y, −α√y]` from
/// conditional samples; `T̄` is the sample mean.
pub fn conditional_ld_check(
    ens: &ConditionedEnsemble,
    bracket: &TailBracket,
    y_grid: &[f64],
    samples: &ConditionalSamples,
    tolerance: f64,
) -> Result<LdReport> {
    let count = samples.totals.len() as u64;
    if count < MIN_OBSERVABLE_HITS {
        return Err(Error::StatisticalPower(format!("{count} conditional samples")));
    }
    let unit = ens.model.y_unit;
    let totals: Vec<f64> = samples.totals.iter().map(|&t| t as f64 * unit).collect();
    let mean = totals.iter().sum::<f64>() / count as f64;
    let n = ens.n_summands as f64;
    let points: Vec<LdPoint> = y_grid
        .iter()
        .map(|&y| {
            let hits = totals.iter().filter(|&&t| t - mean >= n * y).count() as u64;
            ld_point(
                y,
                hits,
                count,
                0.0,
                n.sqrt(),
                -bracket.beta * y.sqrt() - tolerance,
                -bracket.alpha * y.sqrt() + tolerance,
            )
        })
        .collect();
    let mut acc_single = 0u64;
    let mut acc_total = 0u64;
    if let Some(marks) = &samples.marks {
        for (t, row) in totals.iter().zip(marks) {
            if let Some(&y) = y_grid.last() {
                let z = n * y;
                if t - mean >= z {
                    acc_total += 1;
                    if row.iter().filter(|&&m| m as f64 * unit >= z / 2.0).count() == 1 {
                        acc_single += 1;
                    }
                }
            }
        }
    }
    Ok(LdReport {
        bracket: *bracket,
        tolerance,
        samples: count,
        verdict: ld_verdict(&points),
        points,
        big_jump_fraction: (acc_total > 0).then(|| acc_single as f64 / acc_total as f64),
    })
}
