//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparse_dflm::bench::{profile, profile_from_records, run_suite, CountMode, PerformanceProfile, SolverSpec};
use sparse_dflm::recovery::{bp_solve, RecoveryOptions, RecoveryProblem};
use sparse_dflm::sensing::{generate, rip_constant_bruteforce, DEFAULT_ENUMERATION_CAP};
use sparse_dflm::validate::{broyden_model_errors, check_history};
use sparse_dflm::{cli, problems, Distribution, Matrix, Problem, RunRecord, SensingMatrix, SolverConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

const SEEDS: std::ops::RangeInclusive<u64> = 1..=50;
const FEVAL_SEEDS: std::ops::RangeInclusive<u64> = 1..=20;

/// Broyden tridiagonal, n = 100, Bernoulli, p = ⌈n/3⌉, 50 seeds.
fn convergence(runs: &mut Vec<RunRecord>) -> Outcome {
    let n = 100;
    let prob = Arc::new(problems::broyden_tridiagonal(n).unwrap());
    let seeds: Vec<u64> = SEEDS.collect();
    let records = run_suite(
        &[prob],
        &[SolverSpec::DflmFixed(n.div_ceil(3))],
        &seeds,
        |p: &Problem| SolverConfig::for_dimension(p.n).with_distribution(Distribution::Bernoulli),
        0,
    )
    .unwrap();
    let mean = records.iter().map(|r| r.final_f).sum::<f64>() / records.len() as f64;
    let budget = 1000 * (n + 1);
    let converged = records
        .iter()
        .filter(|r| r.stop_reason.is_converged() && r.fevals <= budget)
        .count();
    let worst = records.iter().map(|r| r.final_f).fold(0.0, f64::max);
    let passed = mean <= 1e-8 && converged * 10 >= records.len() * 9;
    let detail = format!(
        "mean final f = {mean:.3e} (worst {worst:.3e}), {converged}/{} converged within {budget} evaluations",
        records.len()
    );
    runs.extend(records);
    outcome(passed, detail)
}

/// Examples 1-4 at n ≈ 100, DFLM p = ⌈n/4⌉ against FD-LM at τ = 1e-4.
fn feval_advantage(runs: &mut Vec<RunRecord>) -> (Outcome, Vec<PerformanceProfile>) {
    let problems: Vec<Arc<Problem>> = problems::builtin_families()
        .map(|f| {
            let n = problems::nearest_valid_dimension(f, 100).unwrap();
            sparse_dflm::Registry::new().resolve(f, Some(n)).unwrap()
        })
        .collect();
    let seeds: Vec<u64> = FEVAL_SEEDS.collect();
    let records = run_suite(
        &problems,
        &[SolverSpec::DflmFraction(4), SolverSpec::FdLm],
        &seeds,
        |p: &Problem| SolverConfig::for_dimension(p.n),
        0,
    )
    .unwrap();
    let averaged = profile_from_records(&records, 1e-4, CountMode::AveragedTrace, 0.125).unwrap();
    let per_run = profile_from_records(&records, 1e-4, CountMode::PerRunMean, 0.125).unwrap();
    let dflm = averaged.solvers.iter().position(|s| s == "dflm-n4").unwrap();
    let fd = averaged.solvers.iter().position(|s| s == "fd-lm").unwrap();
    let mut wins = 0;
    let mut parts = Vec::new();
    for (p, name) in averaged.problems.iter().enumerate() {
        let (a, b) = (averaged.n[dflm][p], averaged.n[fd][p]);
        let win = match (a, b) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        };
        wins += win as usize;
        let show = |v: Option<f64>| v.map_or("inf".to_string(), |v| format!("{v:.0}"));
        parts.push(format!("{name} {} vs {}", show(a), show(b)));
    }
    runs.extend(records);
    (
        outcome(
            wins >= 3,
            format!("DFLM fewer evaluations on {wins}/4: {}", parts.join(", ")),
        ),
        vec![averaged, per_run],
    )
}

/// Bernoulli n = 64, p = 24, three random ±1 spikes, 100 seeds.
fn recovery_rate() -> Outcome {
    let (n, p, s) = (64, 24, 3);
    let opts = RecoveryOptions::default();
    let mut exact = 0;
    for seed in 0..100u64 {
        let a = generate(p, n, Distribution::Bernoulli, 10_000 + seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = sparse_dflm::Vector::zeros(n);
        for j in rand::seq::index::sample(&mut rng, n, s) {
            g[j] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let b = a.entries() * &g;
        let prob = RecoveryProblem::new(a.entries().clone(), b, 0.0).unwrap();
        if let Ok(r) = bp_solve(&prob, &opts) {
            if (r.g - &g).amax() <= 1e-6 {
                exact += 1;
            }
        }
    }
    outcome(exact >= 95, format!("{exact}/100 exact recoveries"))
}

/// Broyden n = 30, p = 12, seed 5: model error at σ = 1e-3, 1e-5, 1e-7.
fn jacobian_accuracy() -> Outcome {
    let opts = RecoveryOptions::default();
    let e = broyden_model_errors(5, &[1e-3, 1e-5, 1e-7], &opts).unwrap();
    let passed = e[1] <= e[0] && e[2] <= e[1] && e[2] <= 1e-3;
    // Same measurement over other sensing draws, for context only.
    let others = (0..20u64)
        .filter(|&s| {
            broyden_model_errors(s, &[1e-3, 1e-5, 1e-7], &opts)
                .map(|e| e[1] <= e[0] && e[2] <= e[1] && e[2] <= 1e-3)
                .unwrap_or(false)
        })
        .count();
    outcome(
        passed,
        format!(
            "errors {:.3e}, {:.3e}, {:.3e} (seeds 0..19 meeting the same bound: {others}/20)",
            e[0], e[1], e[2]
        ),
    )
}

fn history_invariants(runs: &[RunRecord]) -> Outcome {
    let mut total = 0;
    let mut iterations = 0;
    let mut first = None;
    for r in runs {
        iterations += r.history.len();
        let v = check_history(r);
        if first.is_none() {
            first = v
                .first()
                .map(|v| format!("{} {} seed {}: {v}", r.solver_id, r.problem_id, r.seed));
        }
        total += v.len();
    }
    let mut detail = format!("{total} violations over {} runs, {iterations} iterations", runs.len());
    if let Some(f) = first {
        detail.push_str(&format!("; first: {f}"));
    }
    outcome(total == 0, detail)
}

/// Max over all `s`-column subsets of `max |‖A_S x‖² − 1|` for unit `x`,
/// computed straight from the 2×2 Gram blocks.
fn rip2_by_hand(a: &Matrix) -> f64 {
    let n = a.ncols();
    let mut delta: f64 = 0.0;
    for (i, j) in (0..n).tuple_combinations() {
        let (ci, cj) = (a.column(i), a.column(j));
        let (p, q, r) = (ci.dot(&ci), cj.dot(&cj), ci.dot(&cj));
        let mid = 0.5 * (p + q);
        let rad = (0.25 * (p - q) * (p - q) + r * r).sqrt();
        delta = delta.max((mid + rad - 1.0).abs()).max((1.0 - (mid - rad)).abs());
    }
    delta
}

fn rip_oracle() -> Outcome {
    let mut worst_identity: f64 = 0.0;
    for n in [4usize, 8, 12] {
        let id = SensingMatrix::from_matrix(Matrix::identity(n, n), Distribution::Bernoulli, 0);
        for s in 1..=n.min(6) {
            worst_identity = worst_identity.max(rip_constant_bruteforce(&id, s, DEFAULT_ENUMERATION_CAP).unwrap());
        }
    }
    let mut worst_gap: f64 = 0.0;
    for seed in 0..10 {
        let a = generate(20, 40, Distribution::Bernoulli, 500 + seed).unwrap();
        let delta = rip_constant_bruteforce(&a, 2, DEFAULT_ENUMERATION_CAP).unwrap();
        worst_gap = worst_gap.max((delta - rip2_by_hand(a.entries())).abs());
    }
    outcome(
        worst_identity == 0.0 && worst_gap <= 1e-12,
        format!("identity delta max {worst_identity:e}; 20x40 s=2 largest disagreement {worst_gap:e}"),
    )
}

fn profile_is_sane(p: &PerformanceProfile) -> bool {
    p.pi.iter()
        .all(|c| c.iter().all(|v| (0.0..=1.0).contains(v)) && c.windows(2).all(|w| w[0] <= w[1]))
}

fn profile_math(computed: &[PerformanceProfile]) -> Outcome {
    let alphas: Vec<f64> = (0..=16).map(|i| (i as f64 * 0.125).exp2()).collect();
    let single = profile(
        1e-4,
        vec!["a".into()],
        vec!["p1".into(), "p2".into(), "p3".into()],
        vec![vec![Some(12.0), Some(40.0), Some(7.0)]],
        alphas.clone(),
    )
    .unwrap();
    let single_ok = single.pi[0].iter().all(|&v| v == 1.0);

    // One problem, N = [10, 20]: the first solver is best at every α, the
    // second joins exactly from α = 2 on.
    let two = profile(
        1e-4,
        vec!["a".into(), "b".into()],
        vec!["p".into()],
        vec![vec![Some(10.0)], vec![Some(20.0)]],
        alphas.clone(),
    )
    .unwrap();
    let expected_b: Vec<f64> = alphas.iter().map(|&a| if a >= 2.0 { 1.0 } else { 0.0 }).collect();
    let two_ok = two.pi[0].iter().all(|&v| v == 1.0) && two.pi[1] == expected_b;

    let sane = computed.iter().chain([&single, &two]).all(profile_is_sane);
    outcome(
        single_ok && two_ok && sane,
        format!(
            "single solver identically 1: {single_ok}; N = [10, 20] example exact: {two_ok}; {} profiles monotone in [0, 1]: {sane}",
            computed.len() + 2
        ),
    )
}

fn bench_into(dir: &Path) -> (i32, String) {
    let mut out = Vec::new();
    let code = cli::run(
        [
            "sparse-dflm",
            "bench",
            "--n",
            "10",
            "--seeds",
            "1..3",
            "--output-dir",
            dir.to_str().unwrap(),
        ],
        &mut out,
    );
    (code, String::from_utf8_lossy(&out).into_owned())
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let run = fs::read_dir(dir).unwrap().next().unwrap().unwrap().path();
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&run)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("first"), tmp.path().join("second"));
    let (ca, oa) = bench_into(&a);
    let (cb, ob) = bench_into(&b);
    if ca != 0 || cb != 0 {
        return outcome(false, format!("bench failed: {oa} {ob}"));
    }
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    let identical = fa == fb && !fa.is_empty();
    // Every floating field carries 17 significant digits.
    let summary = &fa.iter().find(|(n, _)| n == "summary.csv").unwrap().1;
    let fixed = String::from_utf8_lossy(summary)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().to_string())
        .filter(|v| v != "nan" && v != "inf")
        .all(|v| {
            v.split('e')
                .next()
                .unwrap()
                .trim_start_matches('-')
                .replace('.', "")
                .len()
                == 17
        });
    outcome(
        identical && fixed,
        format!(
            "{} CSV files byte-identical across two runs: {identical}; 17-digit fields: {fixed}",
            fa.len()
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut runs = Vec::new();
    let mut results: Vec<(&str, Outcome)> = Vec::new();

    results.push(("1 solver convergence", convergence(&mut runs)));
    let (adv, profiles) = feval_advantage(&mut runs);
    results.push(("2 evaluation advantage", adv));
    results.push(("3 sparse recovery rate", recovery_rate()));
    results.push(("4 Jacobian accuracy decay", jacobian_accuracy()));
    results.push(("5 algorithm invariants", history_invariants(&runs)));
    results.push(("6 RIP oracle", rip_oracle()));
    results.push(("7 profile math", profile_math(&profiles)));
    results.push(("8 determinism", determinism()));

    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "criterion {name}: {} ({})",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += !o.passed as usize;
    }
    println!(
        "acceptance: {}/{} passed in {:.0} s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
