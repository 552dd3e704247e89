//! Experiment runner: config parsing, dispatch, and report writing.
//!
//! Configs are flat `key = value` text or a flat JSON object. Lists are
//! comma separated (`n_grid = 100, 400, 1600`) or JSON arrays.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde_json::{json, Map, Number, Value};
use sha2::{Digest, Sha256};

use crate::conditional::{
    exact_conditional_pmf_with_budget, mean_match_tilt, ConditionedEnsemble, MarkRule, PairModel, SequentialSampler,
    DEFAULT_CELL_BUDGET,
};
use crate::distributions::{tail_bracket, IntegerLaw};
use crate::error::{Error, Result};
use crate::hashing::{
    block_decompose, displacement_via_profile, enumerate_all, insert_all, HashSequence, SequenceOdometer,
};
use crate::limits::{
    adversarial_mass_check, audit_hypotheses, berry_esseen_sweep, big_jump_diagnostic, conditional_ld_check,
    estimate_mean_displacement, matched_ensemble, tail_log_bracket, CfGrid, LdReport, SweepConfig, TailConfig,
    Verdict, DEFAULT_BRACKET_TOLERANCE,
};
use crate::seeding;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    HashingSim,
    Enumerate,
    BerryEsseen,
    Tails,
    LdConditional,
    ExactConditional,
    AuditHypotheses,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::HashingSim,
        Experiment::Enumerate,
        Experiment::BerryEsseen,
        Experiment::Tails,
        Experiment::LdConditional,
        Experiment::ExactConditional,
        Experiment::AuditHypotheses,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::HashingSim => "hashing-sim",
            Experiment::Enumerate => "enumerate",
            Experiment::BerryEsseen => "berry-esseen",
            Experiment::Tails => "tails",
            Experiment::LdConditional => "ld-conditional",
            Experiment::ExactConditional => "exact-conditional",
            Experiment::AuditHypotheses => "audit-hypotheses",
        }
    }

    pub fn header(&self) -> &'static [&'static str] {
        match self {
            Experiment::HashingSim => &[
                "trial",
                "m",
                "n",
                "total",
                "profile_total",
                "blocks",
                "block_lengths",
                "displacements",
            ],
            Experiment::Enumerate => &["n", "sequences", "max_displacement", "mean_displacement", "profile_checked"],
            Experiment::BerryEsseen => &["N", "samples", "D", "DsqrtN", "ci"],
            Experiment::Tails | Experiment::LdConditional => &[
                "y",
                "hits",
                "p_hat",
                "normalized",
                "ci_low",
                "ci_high",
                "lower",
                "upper",
                "status",
            ],
            Experiment::ExactConditional => &["t", "probability"],
            Experiment::AuditHypotheses => &[
                "N",
                "k",
                "sigma_x",
                "sigma_y",
                "r",
                "tau",
                "l1",
                "l2",
                "c5",
                "span",
                "scaled_probability",
                "lower_bound_constant",
            ],
        }
    }

    fn keys(&self) -> &'static [&'static str] {
        match self {
            Experiment::HashingSim => &["m", "n", "sequence", "trials"],
            Experiment::Enumerate => &["n"],
            Experiment::BerryEsseen => &[
                "family",
                "lambda",
                "p",
                "marks",
                "y_unit",
                "n_grid",
                "samples",
                "exact_n_max",
                "max_flatness",
            ],
            Experiment::Tails => &[
                "lambda",
                "y_grid",
                "samples",
                "tolerance",
                "min_probability",
                "adversarial_m_max",
                "z_grid",
                "n",
                "replicates",
                "min_exceedances",
                "mean_samples",
            ],
            Experiment::LdConditional => &[
                "family",
                "lambda",
                "p",
                "marks",
                "y_unit",
                "n",
                "k",
                "samples",
                "y_grid",
                "tolerance",
            ],
            Experiment::ExactConditional => &["family", "lambda", "p", "marks", "y_unit", "n", "k", "cell_budget"],
            Experiment::AuditHypotheses => &[
                "family",
                "lambda",
                "p",
                "marks",
                "y_unit",
                "n_grid",
                "eta0",
                "s_points",
                "t_points",
            ],
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

const COMMON_KEYS: [&str; 5] = ["experiment", "master_seed", "output", "format", "workers"];

/// Raw configuration: every value kept as text so the echo is exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::from_json(text)
        } else {
            Self::from_ini(text)
        }
    }

    pub fn from_ini(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut errors = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`, got `{line}`", i + 1));
                continue;
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                errors.push(format!("line {}: empty key", i + 1));
            } else if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                errors.push(format!("line {}: duplicate field `{key}`", i + 1));
            }
        }
        if errors.is_empty() {
            Ok(ExperimentConfig { entries })
        } else {
            Err(Error::Config(format!("config errors:\n  {}", errors.join("\n  "))))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        Self::from_json_value(&value)
    }

    pub fn from_json_value(value: &Value) -> Result<Self> {
        let Value::Object(obj) = value else {
            return Err(Error::Config("JSON config must be an object".into()));
        };
        let mut entries = BTreeMap::new();
        let mut errors = Vec::new();
        for (k, v) in obj {
            let scalar = |v: &Value| match v {
                Value::String(s) => Some(s.clone()),
                Value::Number(n) => Some(n.to_string()),
                Value::Bool(b) => Some(b.to_string()),
                _ => None,
            };
            let text = match v {
                Value::Array(items) => items.iter().map(scalar).collect::<Option<Vec<_>>>().map(|v| v.join(",")),
                other => scalar(other),
            };
            match text {
                Some(t) => {
                    entries.insert(k.clone(), t);
                }
                None => errors.push(format!("field `{k}`: nested values are not supported")),
            }
        }
        if errors.is_empty() {
            Ok(ExperimentConfig { entries })
        } else {
            Err(Error::Config(format!("config errors:\n  {}", errors.join("\n  "))))
        }
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        ExperimentConfig {
            entries: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn to_json_value(&self) -> Value {
        Value::Object(self.entries.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect())
    }

    /// Compact JSON with sorted keys; hashed and echoed in reports.
    pub fn canonical(&self) -> String {
        self.to_json_value().to_string()
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Typed field access that records every problem instead of stopping at the first.
struct Fields<'a> {
    cfg: &'a ExperimentConfig,
    errors: Vec<String>,
}

impl<'a> Fields<'a> {
    fn opt<T: FromStr>(&mut self, key: &str) -> Option<T> {
        let raw = self.cfg.get(key)?;
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.errors.push(format!("field `{key}`: cannot parse `{raw}`"));
                None
            }
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> T {
        if self.cfg.get(key).is_none() {
            return default;
        }
        self.opt(key).unwrap_or(default)
    }

    fn req<T: FromStr + Default>(&mut self, key: &str) -> T {
        if self.cfg.get(key).is_none() {
            self.errors.push(format!("field `{key}`: required"));
            return T::default();
        }
        self.opt(key).unwrap_or_default()
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Option<Vec<T>> {
        let raw = self.cfg.get(key)?;
        let mut out = Vec::new();
        for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse::<T>() {
                Ok(v) => out.push(v),
                Err(_) => {
                    self.errors.push(format!("field `{key}`: cannot parse list item `{item}`"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn req_list<T: FromStr>(&mut self, key: &str) -> Vec<T> {
        if self.cfg.get(key).is_none() {
            self.errors.push(format!("field `{key}`: required"));
            return Vec::new();
        }
        self.list(key).unwrap_or_default()
    }

    fn model(&mut self) -> Option<ModelSpec> {
        let family: String = self.or("family", "poisson".to_string());
        let lambda: Option<f64> = self.opt("lambda");
        let p: Option<f64> = self.opt("p");
        let y_unit: f64 = self.or("y_unit", 1.0);
        let default_marks = match family.as_str() {
            "borel" => "hash-displacement",
            "geometric" => "identity",
            _ => "empty-urns",
        };
        let marks_text: String = self.or("marks", default_marks.to_string());
        let marks = match parse_marks(&marks_text) {
            Ok(m) => Some(m),
            Err(e) => {
                self.errors.push(format!("field `marks`: {e}"));
                None
            }
        };
        let law = match family.as_str() {
            "poisson" | "borel" => {
                if lambda.is_none() && self.cfg.get("lambda").is_none() {
                    self.errors.push(format!("field `lambda`: required for family `{family}`"));
                }
                lambda.map(|l| (family.clone(), l))
            }
            "geometric" => {
                if p.is_none() && self.cfg.get("p").is_none() {
                    self.errors.push("field `p`: required for family `geometric`".into());
                }
                p.map(|p| (family.clone(), p))
            }
            other => {
                self.errors
                    .push(format!("field `family`: unknown family `{other}` (poisson, borel, geometric)"));
                None
            }
        };
        let (family, parameter) = law?;
        Some(ModelSpec {
            family,
            parameter,
            marks: marks?,
            y_unit,
        })
    }
}

fn parse_marks(text: &str) -> std::result::Result<MarkRule, String> {
    let (name, arg) = match text.split_once(':') {
        Some((a, b)) => (a.trim(), Some(b.trim())),
        None => (text.trim(), None),
    };
    let num = |a: Option<&str>| a.ok_or_else(|| format!("`{name}` needs an argument")).map(|s| s.to_string());
    Ok(match name {
        "empty-urns" => MarkRule::Indicator { at: 0 },
        "indicator" => MarkRule::Indicator {
            at: num(arg)?.parse().map_err(|_| format!("bad indicator value in `{text}`"))?,
        },
        "positive-part" => MarkRule::PositivePartMinusOne,
        "identity" => MarkRule::Identity,
        "constant" => MarkRule::Constant {
            value: num(arg)?.parse().map_err(|_| format!("bad constant in `{text}`"))?,
        },
        "bernoulli" => {
            let p: f64 = num(arg)?.parse().map_err(|_| format!("bad probability in `{text}`"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("bernoulli probability {p} outside [0, 1]"));
            }
            MarkRule::IndependentBernoulli { p }
        }
        "hash-displacement" => MarkRule::HashDisplacement,
        other => {
            return Err(format!(
                "unknown mark rule `{other}` (empty-urns, indicator:K, positive-part, identity, constant:V, bernoulli:P, hash-displacement)"
            ))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
struct ModelSpec {
    family: String,
    parameter: f64,
    marks: MarkRule,
    y_unit: f64,
}

impl ModelSpec {
    fn build(&self) -> Result<PairModel> {
        let law = match self.family.as_str() {
            "poisson" => IntegerLaw::poisson(self.parameter)?,
            "borel" => IntegerLaw::borel(self.parameter)?,
            _ => IntegerLaw::geometric(self.parameter)?,
        };
        Ok(PairModel::new(law, self.marks.clone(), self.family.clone()).with_y_unit(self.y_unit))
    }
}

enum Settings {
    HashingSim {
        m: usize,
        sequence: Option<Vec<usize>>,
        n: usize,
        trials: u32,
    },
    Enumerate {
        n: Vec<usize>,
    },
    BerryEsseen {
        model: ModelSpec,
        n_grid: Vec<usize>,
        sweep: SweepConfig,
    },
    Tails {
        lambda: f64,
        y_grid: Vec<f64>,
        tail: TailConfig,
        adversarial_m_max: usize,
        z_grid: Vec<f64>,
        n: usize,
        replicates: u64,
        min_exceedances: u64,
        mean_samples: u64,
    },
    LdConditional {
        model: ModelSpec,
        n: usize,
        k: Option<i64>,
        samples: usize,
        y_grid: Vec<f64>,
        tolerance: f64,
    },
    ExactConditional {
        model: ModelSpec,
        n: usize,
        k: i64,
        cell_budget: u64,
    },
    Audit {
        model: ModelSpec,
        n_grid: Vec<usize>,
        grid: CfGrid,
    },
}

/// Validate the whole config, listing every offending field.
fn settings(cfg: &ExperimentConfig, experiment: Experiment, seed: u64) -> Result<Settings> {
    let mut f = Fields { cfg, errors: Vec::new() };
    let allowed: BTreeSet<&str> = COMMON_KEYS.iter().chain(experiment.keys()).copied().collect();
    for key in cfg.entries().keys() {
        if !allowed.contains(key.as_str()) {
            f.errors
                .push(format!("field `{key}`: not used by experiment `{}`", experiment.name()));
        }
    }
    if let Some(fmt) = cfg.get("format") {
        if fmt != "csv" && fmt != "json" {
            f.errors.push(format!("field `format`: expected csv or json, got `{fmt}`"));
        }
    }
    let _: Option<usize> = f.opt("workers");
    let s = match experiment {
        Experiment::HashingSim => Settings::HashingSim {
            m: f.req("m"),
            sequence: f.list("sequence"),
            n: f.or("n", 0),
            trials: f.or("trials", 1),
        },
        Experiment::Enumerate => Settings::Enumerate { n: f.req_list("n") },
        Experiment::BerryEsseen => {
            let model = f.model();
            let sweep = SweepConfig {
                samples: f.or("samples", 100_000),
                master_seed: seed,
                exact_n_max: f.or("exact_n_max", 8),
                max_flatness: f.or("max_flatness", 2.0),
            };
            let n_grid = f.req_list("n_grid");
            match model {
                Some(model) => Settings::BerryEsseen { model, n_grid, sweep },
                None => return Err(config_errors(f.errors)),
            }
        }
        Experiment::Tails => Settings::Tails {
            lambda: f.req("lambda"),
            y_grid: f.req_list("y_grid"),
            tail: TailConfig {
                samples: f.or("samples", 10_000_000),
                master_seed: seed,
                tolerance: f.or("tolerance", DEFAULT_BRACKET_TOLERANCE),
                min_probability: f.or("min_probability", 3e-5),
            },
            adversarial_m_max: f.or("adversarial_m_max", 8),
            z_grid: f.list("z_grid").unwrap_or_default(),
            n: f.or("n", 10),
            replicates: f.or("replicates", 200_000),
            min_exceedances: f.or("min_exceedances", 100),
            mean_samples: f.or("mean_samples", 2_000_000),
        },
        Experiment::LdConditional => {
            let model = f.model();
            let n = f.req("n");
            let k = f.opt("k");
            let samples = f.or("samples", 100_000);
            let y_grid = f.req_list("y_grid");
            let tolerance = f.or("tolerance", DEFAULT_BRACKET_TOLERANCE);
            match model {
                Some(model) => Settings::LdConditional {
                    model,
                    n,
                    k,
                    samples,
                    y_grid,
                    tolerance,
                },
                None => return Err(config_errors(f.errors)),
            }
        }
        Experiment::ExactConditional => {
            let model = f.model();
            let n = f.req("n");
            let k = f.req("k");
            let cell_budget = f.or("cell_budget", DEFAULT_CELL_BUDGET);
            match model {
                Some(model) => Settings::ExactConditional {
                    model,
                    n,
                    k,
                    cell_budget,
                },
                None => return Err(config_errors(f.errors)),
            }
        }
        Experiment::AuditHypotheses => {
            let model = f.model();
            let n_grid = f.req_list("n_grid");
            let grid = CfGrid {
                eta0: f.or("eta0", 1.0),
                s_points: f.or("s_points", 201),
                t_points: f.or("t_points", 21),
            };
            match model {
                Some(model) => Settings::Audit { model, n_grid, grid },
                None => return Err(config_errors(f.errors)),
            }
        }
    };
    if f.errors.is_empty() {
        Ok(s)
    } else {
        Err(config_errors(f.errors))
    }
}

fn config_errors(errors: Vec<String>) -> Error {
    Error::Config(format!("config errors:\n  {}", errors.join("\n  ")))
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// 17 significant digits.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn float_value(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(Number::from_str(&format_float(x)).expect("formatted float parses"))
    } else {
        Value::String(format_float(x))
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Float(v) => float_value(*v),
            Cell::Text(s) => Value::String(s.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictEntry {
    pub name: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub experiment: Experiment,
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub master_seed: u64,
    pub wall_clock_seconds: f64,
    pub rows: Vec<Vec<Cell>>,
    /// Experiment-specific detail beyond the table.
    pub details: Value,
    pub verdicts: Vec<VerdictEntry>,
}

impl RunReport {
    pub fn header(&self) -> &'static [&'static str] {
        self.experiment.header()
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.verdict.passed())
    }

    /// 0 when every verdict passes, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            2
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let table: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                Value::Object(
                    self.header()
                        .iter()
                        .zip(row)
                        .map(|(h, c)| (h.to_string(), c.json()))
                        .collect::<Map<_, _>>(),
                )
            })
            .collect();
        let verdicts: Vec<Value> = self
            .verdicts
            .iter()
            .map(|v| json!({"name": v.name, "status": v.verdict.label(), "detail": v.verdict.detail()}))
            .collect();
        let report = json!({
            "experiment": self.experiment.name(),
            "version": self.version,
            "config_hash": self.config_hash,
            "master_seed": self.master_seed.to_string(),
            "wall_clock_seconds": float_value(self.wall_clock_seconds),
            "config": self.config.to_json_value(),
            "results": {"table": table, "details": self.details},
            "verdicts": verdicts,
        });
        let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

fn verdict(name: &str, v: Verdict) -> VerdictEntry {
    VerdictEntry {
        name: name.to_string(),
        verdict: v,
    }
}

fn check(name: &str, ok: bool, detail: impl FnOnce() -> String) -> VerdictEntry {
    verdict(name, if ok { Verdict::Pass } else { Verdict::Fail(detail()) })
}

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

type Outcome = (Vec<Vec<Cell>>, Value, Vec<VerdictEntry>);

fn hashing_row(trial: u32, seq: &HashSequence) -> Result<(Vec<Cell>, Vec<VerdictEntry>)> {
    let out = insert_all(seq);
    let blocks = block_decompose(&out)?;
    let block_sum: u64 = blocks.blocks.iter().map(|b| b.displacement).sum();
    let mut verdicts = vec![check(&format!("trial {trial}: block sum"), block_sum == out.total, || {
        format!("blocks sum to {block_sum}, total is {}", out.total)
    })];
    let profile = if seq.m() == seq.n() + 1 {
        let p = displacement_via_profile(seq)?.total;
        verdicts.push(check(&format!("trial {trial}: profile formula"), p == out.total, || {
            format!("profile gives {p}, simulator {}", out.total)
        }));
        Cell::Int(p as i64)
    } else {
        Cell::Text("NA".into())
    };
    let row = vec![
        Cell::from(trial as u64),
        seq.m().into(),
        seq.n().into(),
        out.total.into(),
        profile,
        blocks.blocks.len().into(),
        join(blocks.blocks.iter().map(|b| b.length)).into(),
        join(&out.displacements).into(),
    ];
    Ok((row, verdicts))
}

fn run_hashing_sim(m: usize, sequence: Option<Vec<usize>>, n: usize, trials: u32, seed: u64) -> Result<Outcome> {
    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    match sequence {
        Some(addresses) => {
            let (row, v) = hashing_row(0, &HashSequence::new(m, addresses)?)?;
            rows.push(row);
            verdicts.extend(v);
        }
        None => {
            for trial in 0..trials {
                let mut rng = seeding::stream(seed, trial, 0);
                let (row, v) = hashing_row(trial, &HashSequence::random(m, n, &mut rng)?)?;
                rows.push(row);
                verdicts.extend(v);
            }
        }
    }
    Ok((rows, Value::Null, verdicts))
}

fn run_enumerate(ns: &[usize]) -> Result<Outcome> {
    let mut rows = Vec::new();
    let mut details = Map::new();
    let mut verdicts = Vec::new();
    for &n in ns {
        let law = enumerate_all(n)?;
        let expected = ((n + 1) as u64).pow(n as u32);
        let max_d = (n * n.saturating_sub(1) / 2) as u64;
        verdicts.push(check(&format!("n = {n}: sequence count"), law.sequences == expected, || {
            format!("visited {}, expected {expected}", law.sequences)
        }));
        verdicts.push(check(&format!("n = {n}: maximum displacement"), law.max_displacement() == max_d, || {
            format!("maximum {}, expected {max_d}", law.max_displacement())
        }));
        let profile_checked = n <= 6;
        if profile_checked {
            let mut mismatches = 0u64;
            let mut odo = SequenceOdometer::new(n + 1, n);
            while let Some(a) = odo.advance() {
                let seq = HashSequence::new(n + 1, a.to_vec())?;
                if displacement_via_profile(&seq)?.total != insert_all(&seq).total {
                    mismatches += 1;
                }
            }
            verdicts.push(check(&format!("n = {n}: profile formula"), mismatches == 0, || {
                format!("{mismatches} sequences disagree")
            }));
        }
        details.insert(n.to_string(), json!({"counts": law.counts}));
        rows.push(vec![
            n.into(),
            law.sequences.into(),
            law.max_displacement().into(),
            law.mean().into(),
            Cell::Text(profile_checked.to_string()),
        ]);
    }
    Ok((rows, Value::Object(details), verdicts))
}

fn run_berry_esseen(model: &ModelSpec, n_grid: &[usize], sweep: &SweepConfig) -> Result<Outcome> {
    let model = model.build()?;
    let report = berry_esseen_sweep(&model, n_grid, sweep)?;
    let rows = report
        .rows
        .iter()
        .map(|r| vec![r.n.into(), r.samples.into(), r.d.into(), r.d_sqrt_n.into(), r.ci_halfwidth.into()])
        .collect();
    let details: Vec<Value> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "N": r.n,
                "k": r.k,
                "tau": float_value(r.tau),
                "exact_D": r.exact_d.map(float_value),
                "mean_hat": float_value(r.moments.mean_hat),
                "mean_prediction": float_value(r.moments.mean_prediction),
                "mean_deviation": float_value(r.moments.mean_deviation.value),
                "mean_deviation_ci": [float_value(r.moments.mean_deviation.ci.0), float_value(r.moments.mean_deviation.ci.1)],
                "var_hat": float_value(r.moments.var_hat),
                "var_prediction": float_value(r.moments.var_prediction),
                "var_deviation": float_value(r.moments.var_deviation.value),
                "var_deviation_ci": [float_value(r.moments.var_deviation.ci.0), float_value(r.moments.var_deviation.ci.1)],
            })
        })
        .collect();
    let mut verdicts = vec![verdict("Berry-Esseen flatness", report.verdict.clone())];
    if let (Some(first), Some(last)) = (report.rows.first(), report.rows.last()) {
        if report.rows.len() >= 2 {
            let grows = |a: &crate::conditional::Deviation, b: &crate::conditional::Deviation| {
                b.value <= 2.0 * a.value + 3.0 * a.ci_width().max(b.ci_width())
            };
            verdicts.push(check(
                "conditional mean bounded",
                grows(&first.moments.mean_deviation, &last.moments.mean_deviation),
                || format!("{} at N = {} vs {} at N = {}", last.moments.mean_deviation.value, last.n, first.moments.mean_deviation.value, first.n),
            ));
            verdicts.push(check(
                "conditional variance bounded",
                grows(&first.moments.var_deviation, &last.moments.var_deviation),
                || format!("{} at N = {} vs {} at N = {}", last.moments.var_deviation.value, last.n, first.moments.var_deviation.value, first.n),
            ));
        }
    }
    Ok((rows, json!({"flatness": float_value(report.flatness), "rows": details}), verdicts))
}

fn ld_rows(report: &LdReport) -> Vec<Vec<Cell>> {
    report
        .points
        .iter()
        .map(|p| {
            vec![
                p.y.into(),
                p.hits.into(),
                p.p_hat.into(),
                p.normalized.into(),
                p.ci.0.into(),
                p.ci.1.into(),
                p.lower.into(),
                p.upper.into(),
                p.status.label().into(),
            ]
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_tails(
    lambda: f64,
    y_grid: &[f64],
    tail: &TailConfig,
    adversarial_m_max: usize,
    z_grid: &[f64],
    n: usize,
    replicates: u64,
    min_exceedances: u64,
    mean_samples: u64,
) -> Result<Outcome> {
    let bracket = tail_bracket(lambda)?;
    let report = tail_log_bracket(lambda, y_grid, tail)?;
    let mut verdicts = Vec::new();
    if !y_grid.is_empty() {
        verdicts.push(verdict("tail bracket", report.verdict.clone()));
    }
    let mut details = Map::new();
    details.insert(
        "bracket".into(),
        json!({"kappa": float_value(bracket.kappa), "alpha": float_value(bracket.alpha), "beta": float_value(bracket.beta)}),
    );
    if adversarial_m_max >= 2 {
        let rows = adversarial_mass_check(lambda, adversarial_m_max)?;
        let bad: Vec<String> = rows.iter().filter(|r| !r.holds).map(|r| format!("m = {}, k = {}", r.m, r.k)).collect();
        verdicts.push(check("adversarial lower bound", bad.is_empty(), || bad.join("; ")));
        details.insert(
            "adversarial".into(),
            Value::Array(
                rows.iter()
                    .map(|r| {
                        json!({
                            "m": r.m, "k": r.k, "y": r.y,
                            "permutations": r.permutations,
                            "sequences_at_least": r.sequences_at_least,
                            "ln_lower_mass": float_value(r.ln_lower_mass),
                            "ln_enumerated_tail": float_value(r.ln_enumerated_tail),
                        })
                    })
                    .collect(),
            ),
        );
    }
    if !z_grid.is_empty() {
        let mean_y = estimate_mean_displacement(lambda, mean_samples, tail.master_seed)?;
        let model = PairModel::hashing(lambda)?;
        let bj = big_jump_diagnostic(&model, n, mean_y, z_grid, replicates, tail.master_seed ^ 0x5a5a, min_exceedances)?;
        verdicts.push(verdict("single big jump", bj.verdict.clone()));
        details.insert("mean_y".into(), float_value(mean_y));
        details.insert(
            "big_jump".into(),
            Value::Array(
                bj.rows
                    .iter()
                    .map(|r| {
                        json!({
                            "z": float_value(r.z),
                            "exceedances": r.exceedances,
                            "share_none": float_value(r.share_none),
                            "share_single": float_value(r.share_single),
                            "share_multiple": float_value(r.share_multiple),
                            "two_jump_bound": float_value(r.two_jump_bound),
                        })
                    })
                    .collect(),
            ),
        );
    }
    Ok((ld_rows(&report), Value::Object(details), verdicts))
}

fn ensemble(model: &PairModel, n: usize, k: Option<i64>) -> Result<ConditionedEnsemble> {
    match k {
        Some(k) => mean_match_tilt(model, n, k),
        None => matched_ensemble(model, n),
    }
}

fn run_ld_conditional(
    model: &ModelSpec,
    n: usize,
    k: Option<i64>,
    samples: usize,
    y_grid: &[f64],
    tolerance: f64,
    seed: u64,
) -> Result<Outcome> {
    let model = model.build()?;
    let ens = ensemble(&model, n, k)?;
    let IntegerLaw::Borel { lambda, .. } = ens.model.x_law else {
        return Err(Error::Domain("ld-conditional needs the borel family".into()));
    };
    let bracket = tail_bracket(lambda)?;
    let draws = SequentialSampler::new(&ens, 500_000_000)?.sample_parallel(samples, seed, 0, true)?;
    let report = conditional_ld_check(&ens, &bracket, y_grid, &draws, tolerance)?;
    let verdicts = if y_grid.is_empty() {
        Vec::new()
    } else {
        vec![verdict("conditional tail bracket", report.verdict.clone())]
    };
    let details = json!({
        "N": n, "k": ens.target, "lambda": float_value(lambda),
        "alpha": float_value(bracket.alpha), "beta": float_value(bracket.beta),
        "big_jump_fraction": report.big_jump_fraction.map(float_value),
    });
    Ok((ld_rows(&report), details, verdicts))
}

fn run_exact_conditional(model: &ModelSpec, n: usize, k: i64, budget: u64) -> Result<Outcome> {
    let ens = ConditionedEnsemble::new(model.build()?, n, k)?;
    let law = exact_conditional_pmf_with_budget(&ens, budget)?;
    let total: f64 = law.atoms.iter().map(|a| a.1).sum();
    let rows = law
        .atoms
        .iter()
        .map(|&(t, p)| vec![Cell::Float(t as f64 * law.y_unit), p.into()])
        .collect();
    let details = json!({
        "p_condition": float_value(law.p_condition),
        "mean": float_value(law.mean()),
        "variance": float_value(law.variance()),
    });
    Ok((rows, details, vec![check("masses sum to 1", (total - 1.0).abs() <= 1e-9, || format!("sum {total}"))]))
}

fn run_audit(model: &ModelSpec, n_grid: &[usize], grid: &CfGrid) -> Result<Outcome> {
    if n_grid.is_empty() {
        return Ok((Vec::new(), Value::Null, Vec::new()));
    }
    let audit = audit_hypotheses(&model.build()?, n_grid, grid)?;
    let rows = audit
        .points
        .iter()
        .map(|p| {
            vec![
                p.n.into(),
                p.k.into(),
                p.profile.sigma_x.into(),
                p.profile.sigma_y.into(),
                p.profile.r.into(),
                p.profile.tau.into(),
                p.profile.l1.into(),
                p.profile.l2.into(),
                p.cf.c5.into(),
                p.cf.span.into(),
                p.scaled_probability.into(),
                p.lower_bound_constant.into(),
            ]
        })
        .collect();
    let ledger: Map<String, Value> = audit.ledger.entries().into_iter().map(|(k, v)| (k.to_string(), float_value(v))).collect();
    let verdicts = audit
        .checks
        .iter()
        .map(|c| check(c.name, c.passed, || c.detail.clone()))
        .collect();
    Ok((rows, json!({"ledger": ledger}), verdicts))
}

/// Resolve the experiment named in the config.
pub fn experiment_of(cfg: &ExperimentConfig) -> Result<Experiment> {
    match cfg.get("experiment") {
        Some(name) => name.parse().map_err(Error::Config),
        None => Err(Error::Config("config errors:\n  field `experiment`: required".into())),
    }
}

/// Check a config without running it.
pub fn validate(cfg: &ExperimentConfig) -> Result<Experiment> {
    let experiment = experiment_of(cfg)?;
    let seed = cfg.get("master_seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    settings(cfg, experiment, seed)?;
    Ok(experiment)
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let started = Instant::now();
    let experiment = experiment_of(cfg)?;
    let seed = match cfg.get("master_seed") {
        Some(s) => s
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("config errors:\n  field `master_seed`: cannot parse `{s}`")))?,
        None => 0,
    };
    let (rows, details, verdicts) = match settings(cfg, experiment, seed)? {
        Settings::HashingSim { m, sequence, n, trials } => run_hashing_sim(m, sequence, n, trials, seed)?,
        Settings::Enumerate { n } => run_enumerate(&n)?,
        Settings::BerryEsseen { model, n_grid, sweep } => run_berry_esseen(&model, &n_grid, &sweep)?,
        Settings::Tails {
            lambda,
            y_grid,
            tail,
            adversarial_m_max,
            z_grid,
            n,
            replicates,
            min_exceedances,
            mean_samples,
        } => run_tails(
            lambda,
            &y_grid,
            &tail,
            adversarial_m_max,
            &z_grid,
            n,
            replicates,
            min_exceedances,
            mean_samples,
        )?,
        Settings::LdConditional {
            model,
            n,
            k,
            samples,
            y_grid,
            tolerance,
        } => run_ld_conditional(&model, n, k, samples, &y_grid, tolerance, seed)?,
        Settings::ExactConditional {
            model,
            n,
            k,
            cell_budget,
        } => run_exact_conditional(&model, n, k, cell_budget)?,
        Settings::Audit { model, n_grid, grid } => run_audit(&model, &n_grid, &grid)?,
    };
    Ok(RunReport {
        experiment,
        version: VERSION,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        master_seed: seed,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        rows,
        details,
        verdicts,
    })
}

#[derive(Debug, Parser)]
#[command(name = "condlaw", version, about = "Conditioned-sum experiments")]
pub struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    pub experiment: Experiment,
    /// Config file (key = value lines or a flat JSON object).
    #[arg(long)]
    pub config: String,
    /// Master seed; overrides `master_seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path; standard output when absent.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
}

fn io_error(path: &str, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_string(),
        message: e.to_string(),
    }
}

/// Load, override, run, write. Returns the process exit code.
pub fn execute(args: &Args) -> Result<i32> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| io_error(&args.config, e))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    match cfg.get("experiment") {
        Some(name) if name != args.experiment.name() => {
            return Err(Error::Config(format!(
                "config names experiment `{name}` but `{}` was requested",
                args.experiment.name()
            )))
        }
        Some(_) => {}
        None => cfg.set("experiment", args.experiment.name()),
    }
    if let Some(seed) = args.seed {
        cfg.set("master_seed", seed.to_string());
    }
    if let Some(out) = &args.out {
        cfg.set("output", out.clone());
    }
    if let Some(format) = args.format {
        cfg.set("format", if format == Format::Csv { "csv" } else { "json" });
    }
    if let Some(w) = args.workers {
        cfg.set("workers", w.to_string());
    }
    if let Some(w) = cfg.get("workers").and_then(|w| w.parse::<usize>().ok()) {
        // Ignore a pool that already exists (repeated calls in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    let format = match cfg.get("format") {
        Some("json") => Format::Json,
        _ => Format::Csv,
    };
    let report = run(&cfg)?;
    let body = report.render(format);
    match cfg.get("output") {
        Some(path) => std::fs::write(path, body).map_err(|e| io_error(path, e))?,
        None => print!("{body}"),
    }
    for v in &report.verdicts {
        if !v.verdict.passed() {
            eprintln!("{}: {} {}", v.name, v.verdict.label(), v.verdict.detail());
        }
    }
    eprintln!(
        "condlaw {} {}: {} rows, {} verdicts, config {}",
        VERSION,
        report.experiment.name(),
        report.rows.len(),
        report.verdicts.len(),
        &report.config_hash[..12]
    );
    Ok(report.exit_code())
}
