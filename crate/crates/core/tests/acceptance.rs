//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use condlaw::cli::{run, ExperimentConfig};
use condlaw::conditional::{
    exact_conditional_multiset_law, mean_match_tilt, prob_s_equals_k, ConditionedEnsemble, PairModel, ProbabilityMode,
};
use condlaw::distributions::tail_bracket;
use condlaw::hashing::{
    block_decompose, block_statistics_law, displacement_via_profile, enumerate_all, insert_all, HashSequence,
    SequenceOdometer,
};
use condlaw::limits::{
    adversarial_mass_check, berry_esseen_sweep, big_jump_diagnostic, estimate_mean_displacement, tail_log_bracket,
    PointStatus, SweepConfig, TailConfig,
};
use condlaw::stats::total_variation;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn worked_example() -> Check {
    let seq = HashSequence::new(10, vec![6, 9, 1, 9, 9, 6, 2, 5]).map_err(|e| e.to_string())?;
    let out = insert_all(&seq);
    let mut lengths: Vec<usize> = block_decompose(&out).map_err(|e| e.to_string())?.blocks.iter().map(|b| b.length).collect();
    lengths.sort_unstable();
    ensure(
        out.total == 6 && out.displacements == [0, 0, 0, 1, 3, 1, 1, 0] && lengths == [4, 6],
        format!("total {}, per-ball {:?}, block lengths {:?}", out.total, out.displacements, lengths),
    )
}

fn enumeration_identities() -> Check {
    let mut mismatches = 0u64;
    for n in 1..=6usize {
        let law = enumerate_all(n).map_err(|e| e.to_string())?;
        if law.sequences != ((n + 1) as u64).pow(n as u32) {
            return Err(format!("n = {n}: {} sequences", law.sequences));
        }
        if law.max_displacement() != (n * (n - 1) / 2) as u64 {
            return Err(format!("n = {n}: max displacement {}", law.max_displacement()));
        }
        let mut odo = SequenceOdometer::new(n + 1, n);
        while let Some(a) = odo.advance() {
            let seq = HashSequence::new(n + 1, a.to_vec()).unwrap();
            if displacement_via_profile(&seq).unwrap().total != insert_all(&seq).total {
                mismatches += 1;
            }
        }
    }
    ensure(mismatches == 0, format!("n = 1..6 counts and maxima exact, {mismatches} profile mismatches"))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn permutation_invariance() -> Check {
    let mut checked = 0u64;
    let mut violations = 0u64;
    for n in 1..=5usize {
        let perms = permutations(n);
        let mut odo = SequenceOdometer::new(n + 1, n);
        while let Some(a) = odo.advance() {
            let seq = HashSequence::new(n + 1, a.to_vec()).unwrap();
            let total = insert_all(&seq).total;
            for p in &perms {
                checked += 1;
                if insert_all(&seq.permuted(p)).total != total {
                    violations += 1;
                }
            }
        }
    }
    ensure(violations == 0, format!("{checked} reorderings, {violations} violations"))
}

fn janson_correspondence() -> Check {
    let mut worst = 0.0f64;
    for m in 2..=7usize {
        for n in 1..m {
            let counts = block_statistics_law(m, n).map_err(|e| e.to_string())?;
            let z: u64 = counts.values().sum();
            let blocks: BTreeMap<Vec<(u64, u64)>, f64> = counts.into_iter().map(|(k, c)| (k, c as f64 / z as f64)).collect();
            let ens = ConditionedEnsemble::new(PairModel::hashing(0.3).unwrap(), m - n, m as i64).map_err(|e| e.to_string())?;
            let pairs: BTreeMap<Vec<(u64, u64)>, f64> = exact_conditional_multiset_law(&ens)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|(k, p)| (k.into_iter().map(|(x, y)| (x, y as u64)).collect(), p))
                .collect();
            worst = worst.max(total_variation(&blocks, &pairs));
        }
    }
    ensure(worst < 1e-10, format!("max total variation over m <= 7: {worst:.3e}"))
}

fn local_limit() -> Check {
    let model = PairModel::occupancy(2.0).unwrap();
    let mut failures = Vec::new();
    let mut ratio = f64::NAN;
    for n in [50usize, 100, 200, 500, 1000, 2000] {
        let ens = mean_match_tilt(&model, n, 2 * n as i64).map_err(|e| e.to_string())?;
        let r = prob_s_equals_k(&ens, ProbabilityMode::Both).map_err(|e| e.to_string())?;
        if !r.lower_bound_holds(n) {
            failures.push(n);
        }
        if n == 2000 {
            ratio = r.scaled_probability(n) / (2.0 * std::f64::consts::PI).sqrt();
        }
    }
    ensure(
        (0.95..=1.05).contains(&ratio) && failures.is_empty(),
        format!("N = 2000 scaled probability {ratio:.5}, surrogate failures at {failures:?}"),
    )
}

fn sweep() -> Result<condlaw::limits::BerryEsseenReport, String> {
    let cfg = SweepConfig {
        samples: 100_000,
        master_seed: 2024,
        ..SweepConfig::default()
    };
    berry_esseen_sweep(&PairModel::occupancy(2.0).unwrap(), &[100, 400, 1600], &cfg).map_err(|e| e.to_string())
}

fn berry_esseen(report: &condlaw::limits::BerryEsseenReport, took: Duration) -> Check {
    let scaled: Vec<String> = report.rows.iter().map(|r| format!("{:.3}", r.d_sqrt_n)).collect();
    ensure(
        report.flatness <= 2.0,
        format!("D*sqrt(N) = [{}], flatness {:.3}, sweep {took:.2?}", scaled.join(", "), report.flatness),
    )
}

fn moments(report: &condlaw::limits::BerryEsseenReport) -> Check {
    let first = &report.rows[0].moments;
    let last = &report.rows[report.rows.len() - 1].moments;
    let bounded = |a: &condlaw::conditional::Deviation, b: &condlaw::conditional::Deviation| {
        b.value <= 2.0 * a.value + 3.0 * a.ci_width().max(b.ci_width())
    };
    let mean_ok = bounded(&first.mean_deviation, &last.mean_deviation);
    let var_ok = bounded(&first.var_deviation, &last.var_deviation);
    ensure(
        mean_ok && var_ok,
        format!(
            "mean deviation {:.4} -> {:.4}, variance deviation {:.4} -> {:.4}",
            first.mean_deviation.value, last.mean_deviation.value, first.var_deviation.value, last.var_deviation.value
        ),
    )
}

fn tail_bracket_check() -> Check {
    let b = tail_bracket(0.3).map_err(|e| e.to_string())?;
    if (b.alpha - 0.2885).abs() > 5e-4 || (b.beta - 3.023).abs() > 5e-4 {
        return Err(format!("bracket ({:.4}, {:.4})", b.alpha, b.beta));
    }
    let cfg = TailConfig {
        samples: 10_000_000,
        master_seed: 7,
        tolerance: 0.15,
        min_probability: 3e-5,
    };
    let grid = [1.0, 2.0, 4.0, 8.0, 16.0, 25.0, 36.0, 49.0, 64.0, 81.0, 100.0];
    let report = tail_log_bracket(0.3, &grid, &cfg).map_err(|e| e.to_string())?;
    let observed: Vec<_> = report.points.iter().filter(|p| p.status != PointStatus::Unobservable).collect();
    let inside = observed.iter().filter(|p| p.status == PointStatus::Inside).count();
    ensure(
        inside == observed.len() && !observed.is_empty(),
        format!("{inside}/{} observable points inside [-{:.3}, -{:.4}] +/- 0.15", observed.len(), b.beta, b.alpha),
    )
}

fn lower_bound_mass() -> Check {
    let rows = adversarial_mass_check(0.3, 8).map_err(|e| e.to_string())?;
    let bad = rows.iter().filter(|r| !r.holds).count();
    ensure(bad == 0, format!("{} (m, k) pairs, {bad} violations", rows.len()))
}

fn big_jump() -> Check {
    let model = PairModel::hashing(0.3).unwrap();
    let mean_y = estimate_mean_displacement(0.3, 2_000_000, 2024).map_err(|e| e.to_string())?;
    let report = big_jump_diagnostic(&model, 10, mean_y, &[10.0, 15.0, 20.0, 30.0], 200_000, 2024, 100)
        .map_err(|e| e.to_string())?;
    let shares: Vec<String> = report.rows.iter().map(|r| format!("{:.3}", r.share_single)).collect();
    let mut msg = format!("single-jump shares [{}]", shares.join(", "));
    if !report.verdict.passed() {
        msg = format!("{msg}; {}", report.verdict.detail());
    }
    ensure(report.verdict.passed(), msg)
}

fn determinism() -> Check {
    let cfg = ExperimentConfig::from_pairs([
        ("experiment", "tails"),
        ("lambda", "0.3"),
        ("y_grid", "1,4,9,16"),
        ("samples", "1000000"),
        ("adversarial_m_max", "5"),
        ("master_seed", "11"),
    ]);
    let a = run(&cfg).map_err(|e| e.to_string())?.to_csv();
    let b = run(&cfg).map_err(|e| e.to_string())?.to_csv();
    let path = std::env::temp_dir().join(format!("condlaw-acceptance-{}.ini", std::process::id()));
    std::fs::write(&path, "lambda = 0.3\ny_grid = 1, 4\nsamples = 200000\nadversarial_m_max = 4\n").unwrap();
    let bin = |workers: &str| {
        Command::new(env!("CARGO_BIN_EXE_condlaw"))
            .args(["tails", "--config", path.to_str().unwrap(), "--seed", "3", "--workers", workers])
            .output()
            .map(|o| o.stdout)
            .map_err(|e| e.to_string())
    };
    let (c, d) = (bin("1")?, bin("2")?);
    ensure(a == b && c == d && !c.is_empty(), format!("library runs identical: {}, binary runs identical: {}", a == b, c == d))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, budget: Duration, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let mut outcome = f();
        let took = start.elapsed();
        if took > budget {
            outcome = Err(format!("{} (took {took:.2?}, budget {budget:?})", outcome.unwrap_or_else(|e| e)));
        }
        let (status, msg) = match &outcome {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!("criterion {id:>2} {status} {name}: {msg} [{took:.2?}]");
    };
    let min = |m: u64| Duration::from_secs(60 * m);
    report(1, "worked example", Duration::from_millis(1), &mut worked_example);
    report(2, "enumeration identities", min(1), &mut enumeration_identities);
    report(3, "permutation invariance", min(5), &mut permutation_invariance);
    report(4, "block law correspondence", min(5), &mut janson_correspondence);
    report(5, "local limit", min(1), &mut local_limit);
    let start = Instant::now();
    let sweep_result = sweep();
    let sweep_time = start.elapsed();
    match &sweep_result {
        Ok(r) => {
            report(6, "normal approximation flatness", min(20).saturating_sub(sweep_time), &mut || berry_esseen(r, sweep_time));
            report(7, "conditional moments", min(20), &mut || moments(r));
        }
        Err(e) => {
            report(6, "normal approximation flatness", min(20), &mut || Err(e.clone()));
            report(7, "conditional moments", min(20), &mut || Err(e.clone()));
        }
    }
    report(8, "tail bracket", min(30), &mut tail_bracket_check);
    report(9, "lower-bound mass", min(5), &mut lower_bound_mass);
    report(10, "single big jump", min(30), &mut big_jump);
    report(11, "determinism", min(10), &mut determinism);
    println!("acceptance: {} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
