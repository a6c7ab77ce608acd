//! Multi-run experiments, performance profiles and their reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PPolicy, SolverConfig};
use crate::lm::{solve, solve_fd_baseline, FD_SOLVER_ID};
use crate::problems::Problem;
use crate::record::{fmt_f64, RunRecord, StopReason, TracePoint};
use crate::sensing::derive_seed;
use crate::{Error, Result};

/// Accuracy levels of the default profile set.
pub const DEFAULT_TAUS: [f64; 4] = [1e-2, 1e-4, 1e-6, 1e-8];

/// A solver variant taking part in a suite. Identifiers do not depend on
/// the problem dimension so that profiles can pool problems of different size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverSpec {
    /// `p = ⌈n/d⌉` probes per model.
    DflmFraction(usize),
    DflmFixed(usize),
    /// Adaptive probe counts with the dimension-scaled defaults.
    DflmAdaptive,
    FdLm,
}

impl SolverSpec {
    pub fn id(&self) -> String {
        match self {
            SolverSpec::DflmFraction(d) => format!("dflm-n{d}"),
            SolverSpec::DflmFixed(p) => format!("dflm-p{p}"),
            SolverSpec::DflmAdaptive => "dflm-adaptive".into(),
            SolverSpec::FdLm => FD_SOLVER_ID.into(),
        }
    }

    /// DFLM with `p ∈ {⌈n/2⌉, ⌈n/3⌉, ⌈n/4⌉}`, adaptive DFLM and FD-LM.
    pub fn default_matrix() -> Vec<SolverSpec> {
        vec![
            SolverSpec::DflmFraction(2),
            SolverSpec::DflmFraction(3),
            SolverSpec::DflmFraction(4),
            SolverSpec::DflmAdaptive,
            SolverSpec::FdLm,
        ]
    }

    /// Sets the probe policy of `cfg` for dimension `n`.
    pub fn configure(&self, mut cfg: SolverConfig, n: usize) -> SolverConfig {
        match *self {
            SolverSpec::DflmFraction(d) => cfg.p_policy = PPolicy::Fixed(n.div_ceil(d.max(1))),
            SolverSpec::DflmFixed(p) => cfg.p_policy = PPolicy::Fixed(p),
            SolverSpec::DflmAdaptive => cfg.p_policy = PPolicy::adaptive_default(n),
            SolverSpec::FdLm => {}
        }
        cfg
    }
}

impl std::str::FromStr for SolverSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown solver `{s}`"));
        match s {
            "dflm-adaptive" => Ok(SolverSpec::DflmAdaptive),
            "fd-lm" => Ok(SolverSpec::FdLm),
            _ => {
                if let Some(d) = s.strip_prefix("dflm-n") {
                    d.parse()
                        .ok()
                        .filter(|d| *d > 0)
                        .map(SolverSpec::DflmFraction)
                        .ok_or_else(bad)
                } else if let Some(p) = s.strip_prefix("dflm-p") {
                    p.parse()
                        .ok()
                        .filter(|p| *p > 0)
                        .map(SolverSpec::DflmFixed)
                        .ok_or_else(bad)
                } else {
                    Err(bad())
                }
            }
        }
    }
}

/// Seed of the random stream owned by one `(solver, problem, seed)` run.
pub fn run_stream_seed(solver_id: &str, problem_id: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(solver_id.as_bytes());
    h.update([0u8]);
    h.update(problem_id.as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    derive_seed(seed, u64::from_le_bytes(word))
}

/// Executes every `(problem, solver, seed)` triple on up to `workers`
/// threads (0: rayon default). `make_cfg` supplies the base configuration
/// for a problem; the solver spec sets the probe policy and the run gets
/// its own derived seed. Failures of individual runs are recorded, never
/// propagated. Records come back in `problem, solver, seed` order.
pub fn run_suite<C>(
    problems: &[Arc<Problem>],
    solvers: &[SolverSpec],
    seeds: &[u64],
    make_cfg: C,
    workers: usize,
) -> Result<Vec<RunRecord>>
where
    C: Fn(&Problem) -> SolverConfig + Sync,
{
    if problems.is_empty() || solvers.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "suite needs at least one problem, solver and seed".into(),
        ));
    }
    let mut jobs = Vec::new();
    for prob in problems {
        for spec in solvers {
            for &seed in seeds {
                jobs.push((Arc::clone(prob), *spec, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let records = pool.install(|| {
        jobs.par_iter()
            .map(|(prob, spec, seed)| run_one(prob, *spec, *seed, &make_cfg))
            .collect()
    });
    Ok(records)
}

fn run_one<C>(prob: &Problem, spec: SolverSpec, seed: u64, make_cfg: &C) -> RunRecord
where
    C: Fn(&Problem) -> SolverConfig,
{
    let id = spec.id();
    let mut cfg = spec.configure(make_cfg(prob), prob.n);
    cfg.seed = run_stream_seed(&id, &prob.name, seed);
    let outcome = catch_unwind(AssertUnwindSafe(|| match spec {
        SolverSpec::FdLm => solve_fd_baseline(prob, &cfg),
        _ => solve(prob, &cfg),
    }));
    let mut rec = match outcome {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => failed_record(prob, &cfg, e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            failed_record(prob, &cfg, format!("panicked: {msg}"))
        }
    };
    rec.solver_id = id;
    rec.seed = seed;
    rec
}

fn failed_record(prob: &Problem, cfg: &SolverConfig, error: String) -> RunRecord {
    RunRecord {
        solver_id: String::new(),
        problem_id: prob.name.clone(),
        n: prob.n,
        m: prob.m,
        seed: cfg.seed,
        config: cfg.clone(),
        f0: f64::NAN,
        final_f: f64::NAN,
        final_grad_model_norm: None,
        fevals: 0,
        iterations: 0,
        stop_reason: StopReason::Error,
        error: Some(error),
        wall_time_ms: 0.0,
        x_final: Vec::new(),
        trace: Vec::new(),
        history: Vec::new(),
    }
}

/// Pointwise mean of `best_f` over runs on the union of their evaluation
/// counts, each trace carried forward from its last value. A run contributes
/// only from its first trace point on, so every average is over the runs
/// that have started by then.
pub fn average_trace(records: &[&RunRecord]) -> Vec<TracePoint> {
    let grid: BTreeSet<usize> = records.iter().flat_map(|r| r.trace.iter().map(|t| t.fevals)).collect();
    let mut cursors = vec![0usize; records.len()];
    let mut out = Vec::with_capacity(grid.len());
    for &fe in &grid {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (r, c) in records.iter().zip(cursors.iter_mut()) {
            while *c < r.trace.len() && r.trace[*c].fevals <= fe {
                *c += 1;
            }
            if *c > 0 {
                sum += r.trace[*c - 1].best_f;
                count += 1;
            }
        }
        if count == records.len() {
            out.push(TracePoint {
                fevals: fe,
                best_f: sum / count as f64,
            });
        }
    }
    out
}

/// First evaluation count of `trace` at which `best_f ≤ τ·f0 + (1−τ)·f_star`
/// and within `budget`; `None` stands for `∞`.
pub fn first_crossing(trace: &[TracePoint], tau: f64, f0: f64, f_star: f64, budget: usize) -> Option<usize> {
    let threshold = tau * f0 + (1.0 - tau) * f_star;
    trace
        .iter()
        .take_while(|t| t.fevals <= budget)
        .find(|t| t.best_f <= threshold)
        .map(|t| t.fevals)
}

/// How `N_{s,p}` is obtained from the runs of one (solver, problem) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Threshold the seed-averaged trace.
    #[default]
    AveragedTrace,
    /// Threshold each run, then average the counts (`∞` if any run fails).
    PerRunMean,
}

/// `N_{s,p}` for the runs of one (solver, problem) cell.
pub fn least_fevals(
    records: &[&RunRecord],
    tau: f64,
    f0: f64,
    f_star: f64,
    budget: usize,
    mode: CountMode,
) -> Option<f64> {
    let runs: Vec<&RunRecord> = records.iter().copied().filter(|r| !r.trace.is_empty()).collect();
    if runs.is_empty() {
        return None;
    }
    match mode {
        CountMode::AveragedTrace => first_crossing(&average_trace(&runs), tau, f0, f_star, budget).map(|n| n as f64),
        CountMode::PerRunMean => {
            if runs.len() < records.len() {
                return None;
            }
            let mut total = 0.0;
            for r in &runs {
                total += first_crossing(&r.trace, tau, f0, f_star, budget)? as f64;
            }
            Some(total / runs.len() as f64)
        }
    }
}

/// `π_s(α)` curves for one accuracy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceProfile {
    pub tau: f64,
    pub solvers: Vec<String>,
    pub problems: Vec<String>,
    /// `n[s][p]`; `None` is `∞`.
    pub n: Vec<Vec<Option<f64>>>,
    pub alphas: Vec<f64>,
    /// `pi[s][a]`.
    pub pi: Vec<Vec<f64>>,
}

/// Grid `α = 2^t`, `t = 0, step, 2·step, …` up to the largest finite ratio.
pub fn alpha_grid(n: &[Vec<Option<f64>>], step: f64) -> Vec<f64> {
    let problems = n.first().map_or(0, |r| r.len());
    let mut worst: f64 = 1.0;
    for p in 0..problems {
        let best = n.iter().filter_map(|row| row[p]).fold(f64::INFINITY, f64::min);
        for row in n {
            if let Some(v) = row[p] {
                worst = worst.max(v / best);
            }
        }
    }
    let top = worst.log2().max(step);
    let count = (top / step - 1e-9).ceil() as usize;
    (0..=count).map(|i| (i as f64 * step).exp2()).collect()
}

/// `π_s(α) = #{p : N_{s,p} ≤ α·min_s N_{s,p}} / |P|`. Problems on which
/// every solver fails stay in `|P|` and count for nobody.
pub fn profile(
    tau: f64,
    solvers: Vec<String>,
    problems: Vec<String>,
    n: Vec<Vec<Option<f64>>>,
    alphas: Vec<f64>,
) -> Result<PerformanceProfile> {
    if solvers.is_empty() || problems.is_empty() {
        return Err(Error::InvalidArgument("profile needs a solver and a problem".into()));
    }
    if n.len() != solvers.len() || n.iter().any(|row| row.len() != problems.len()) {
        return Err(Error::InvalidArgument("count matrix shape mismatch".into()));
    }
    let np = problems.len();
    let best: Vec<Option<f64>> = (0..np)
        .map(|p| n.iter().filter_map(|row| row[p]).reduce(f64::min))
        .collect();
    let pi = n
        .iter()
        .map(|row| {
            alphas
                .iter()
                .map(|&alpha| {
                    let hits = (0..np)
                        .filter(|&p| match (row[p], best[p]) {
                            (Some(v), Some(b)) => v <= alpha * b,
                            _ => false,
                        })
                        .count();
                    hits as f64 / np as f64
                })
                .collect()
        })
        .collect();
    Ok(PerformanceProfile {
        tau,
        solvers,
        problems,
        n,
        alphas,
        pi,
    })
}

/// Builds the profile at `tau` from suite records. Solvers and problems are
/// taken in order of first appearance.
pub fn profile_from_records(
    records: &[RunRecord],
    tau: f64,
    mode: CountMode,
    alpha_step: f64,
) -> Result<PerformanceProfile> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
    }
    let mut solvers: Vec<String> = Vec::new();
    let mut problems: Vec<String> = Vec::new();
    for r in records {
        if !solvers.contains(&r.solver_id) {
            solvers.push(r.solver_id.clone());
        }
        if !problems.contains(&r.problem_id) {
            problems.push(r.problem_id.clone());
        }
    }
    let mut n = vec![vec![None; problems.len()]; solvers.len()];
    for (pi, prob) in problems.iter().enumerate() {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| &r.problem_id == prob).collect();
        let f_star = runs
            .iter()
            .filter_map(|r| r.trace.last().map(|t| t.best_f))
            .fold(f64::INFINITY, f64::min);
        let Some(f0) = runs.iter().find_map(|r| r.trace.first().map(|t| t.best_f)) else {
            continue;
        };
        let budget = runs[0].config.max_fevals;
        for (si, solver) in solvers.iter().enumerate() {
            let cell: Vec<&RunRecord> = runs.iter().copied().filter(|r| &r.solver_id == solver).collect();
            if cell.is_empty() {
                continue;
            }
            n[si][pi] = least_fevals(&cell, tau, f0, f_star, budget, mode);
        }
    }
    let alphas = alpha_grid(&n, alpha_step);
    profile(tau, solvers, problems, n, alphas)
}

pub const SUMMARY_HEADER: &str = "solver,problem,seed,final_f,fevals,stop_reason,wall_time_ms";

/// Summary CSV. Wall times vary between runs; they are left empty unless
/// `with_wall_time` is set so that repeated suites give identical files.
pub fn summary_csv(records: &[RunRecord], with_wall_time: bool) -> String {
    let mut out = String::new();
    writeln!(out, "{SUMMARY_HEADER}").unwrap();
    for r in records {
        let wall = if with_wall_time {
            fmt_f64(r.wall_time_ms)
        } else {
            String::new()
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.solver_id,
            r.problem_id,
            r.seed,
            fmt_f64(r.final_f),
            r.fevals,
            r.stop_reason,
            wall
        )
        .unwrap();
    }
    out
}

pub fn profile_csv(p: &PerformanceProfile) -> String {
    let mut out = String::from("alpha");
    for s in &p.solvers {
        out.push(',');
        out.push_str(s);
    }
    out.push('\n');
    for (a, alpha) in p.alphas.iter().enumerate() {
        out.push_str(&fmt_f64(*alpha));
        for row in &p.pi {
            out.push(',');
            out.push_str(&fmt_f64(row[a]));
        }
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Step plot of `π_s` against `log₂ α`.
pub fn profile_svg(p: &PerformanceProfile) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 30.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let tmax = p.alphas.last().map_or(1.0, |a| a.log2()).max(1e-12);
    let sx = |t: f64| left + pw * t / tmax;
    let sy = |v: f64| top + ph * (1.0 - v);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.2}" y="18" font-family="sans-serif" font-size="13" text-anchor="middle">tau = {}</text>"#,
        left + pw / 2.0,
        xml_escape(&format!("{:e}", p.tau))
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.2}</text>"#,
            left - 6.0,
            sy(v) + 4.0
        )
        .unwrap();
    }
    let ticks = tmax.ceil().max(1.0) as usize;
    let every = ticks.div_ceil(10).max(1);
    for t in (0..=ticks).step_by(every) {
        let x = sx(t as f64);
        if x > left + pw + 0.5 {
            break;
        }
        writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{t}</text>"#,
            top + ph + 16.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">log2(alpha)</text>"#,
        left + pw / 2.0,
        h - 12.0
    )
    .unwrap();
    for (k, (name, row)) in p.solvers.iter().zip(&p.pi).enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (a, alpha) in p.alphas.iter().enumerate() {
            let x = sx(alpha.log2());
            if a > 0 {
                write!(pts, " {x:.2},{:.2}", sy(row[a - 1])).unwrap();
            }
            write!(pts, " {x:.2},{:.2}", sy(row[a])).unwrap();
        }
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            pts.trim_start()
        )
        .unwrap();
        let ly = top + 14.0 + 18.0 * k as f64;
        writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/>"#,
            left + pw + 12.0,
            left + pw + 32.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{}</text>"#,
            left + pw + 38.0,
            ly + 4.0,
            xml_escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// File stem used for the outputs of accuracy level `tau`.
pub fn tau_stem(tau: f64) -> String {
    format!("profile_tau_{tau:e}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes the profile CSV and SVG for every profile plus `summary.csv`.
/// Returns the written paths.
pub fn emit_reports(
    dir: &Path,
    profiles: &[PerformanceProfile],
    records: &[RunRecord],
    with_wall_time: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for p in profiles {
        let stem = tau_stem(p.tau);
        let csv = dir.join(format!("{stem}.csv"));
        write_file(&csv, &profile_csv(p))?;
        let svg = dir.join(format!("{stem}.svg"));
        write_file(&svg, &profile_svg(p))?;
        written.push(csv);
        written.push(svg);
    }
    let summary = dir.join("summary.csv");
    write_file(&summary, &summary_csv(records, with_wall_time))?;
    written.push(summary);
    Ok(written)
}

/// Directory holding one JSON document per run below a bench output dir.
pub const RECORDS_DIR: &str = "records";

fn record_file_name(r: &RunRecord) -> String {
    let safe = |s: &str| s.replace(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_'), "_");
    format!("{}__{}__seed{}.json", safe(&r.solver_id), safe(&r.problem_id), r.seed)
}

/// Persists each record as `records/<solver>__<problem>__seed<k>.json`.
pub fn save_records(dir: &Path, records: &[RunRecord]) -> Result<()> {
    let rdir = dir.join(RECORDS_DIR);
    fs::create_dir_all(&rdir).map_err(|e| Error::io(&rdir, e))?;
    for r in records {
        let path = rdir.join(record_file_name(r));
        let text = serde_json::to_string_pretty(r).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        write_file(&path, &text)?;
    }
    Ok(())
}

/// Loads every record saved by [`save_records`], sorted by
/// `(problem, solver, seed)` as they appear in file names.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let rdir = dir.join(RECORDS_DIR);
    let entries = fs::read_dir(&rdir).map_err(|e| Error::io(&rdir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let rec: RunRecord = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Format {
            path: rdir,
            message: "no run records found".into(),
        });
    }
    let mut keyed: BTreeMap<(String, String, u64), RunRecord> = BTreeMap::new();
    for r in out {
        keyed.insert((r.problem_id.clone(), r.solver_id.clone(), r.seed), r);
    }
    Ok(keyed.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::broyden_tridiagonal;

    fn rec(solver: &str, problem: &str, trace: &[(usize, f64)]) -> RunRecord {
        let mut r = failed_record(
            &broyden_tridiagonal(4).unwrap(),
            &SolverConfig::for_dimension(4),
            String::new(),
        );
        r.solver_id = solver.into();
        r.problem_id = problem.into();
        r.error = None;
        r.stop_reason = StopReason::Stationary;
        r.trace = trace
            .iter()
            .map(|&(fevals, best_f)| TracePoint { fevals, best_f })
            .collect();
        r.final_f = trace.last().unwrap().1;
        r
    }

    #[test]
    fn two_solver_example() {
        let p = profile(
            1e-4,
            vec!["a".into(), "b".into()],
            vec!["x".into()],
            vec![vec![Some(10.0)], vec![Some(20.0)]],
            vec![1.0, 2.0, 4.0],
        )
        .unwrap();
        assert_eq!(p.pi[0], vec![1.0, 1.0, 1.0]);
        assert_eq!(p.pi[1], vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn single_solver_is_one() {
        let n = vec![vec![Some(5.0), Some(70.0), Some(3.0)]];
        let alphas = alpha_grid(&n, 0.5);
        let p = profile(
            1e-2,
            vec!["a".into()],
            vec!["x".into(), "y".into(), "z".into()],
            n,
            alphas,
        )
        .unwrap();
        assert!(p.pi[0].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn failing_solver_is_zero_and_all_fail_counts_in_denominator() {
        let n = vec![vec![Some(4.0), None], vec![None, None]];
        let p = profile(
            1e-2,
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            n,
            vec![1.0, 2.0],
        )
        .unwrap();
        assert_eq!(p.pi[0], vec![0.5, 0.5]);
        assert_eq!(p.pi[1], vec![0.0, 0.0]);
    }

    #[test]
    fn averaged_trace_carries_forward() {
        let a = rec("s", "p", &[(1, 10.0), (5, 4.0), (9, 1.0)]);
        let b = rec("s", "p", &[(1, 10.0), (7, 2.0)]);
        let avg = average_trace(&[&a, &b]);
        let got: Vec<(usize, f64)> = avg.iter().map(|t| (t.fevals, t.best_f)).collect();
        assert_eq!(got, vec![(1, 10.0), (5, 7.0), (7, 3.0), (9, 1.5)]);
    }

    #[test]
    fn least_fevals_cases() {
        let a = rec("s", "p", &[(1, 10.0), (40, 0.5), (60, 0.1)]);
        // Threshold f_star reached at 60; a looser τ crosses earlier.
        assert_eq!(
            least_fevals(&[&a], 1e-9, 10.0, 0.1, 1000, CountMode::AveragedTrace),
            Some(60.0)
        );
        assert_eq!(
            least_fevals(&[&a], 0.1, 10.0, 0.1, 1000, CountMode::AveragedTrace),
            Some(40.0)
        );
        assert_eq!(
            least_fevals(&[&a], 1e-4, 10.0, 0.01, 1000, CountMode::AveragedTrace),
            None
        );
        assert_eq!(
            least_fevals(&[&a], 1e-4, 10.0, 10.0, 1000, CountMode::AveragedTrace),
            Some(1.0)
        );
        assert_eq!(least_fevals(&[&a], 1e-9, 10.0, 0.1, 50, CountMode::AveragedTrace), None);
    }

    #[test]
    fn per_run_mode_averages_counts() {
        let a = rec("s", "p", &[(1, 10.0), (40, 0.0)]);
        let b = rec("s", "p", &[(1, 10.0), (60, 0.0)]);
        assert_eq!(
            least_fevals(&[&a, &b], 1e-4, 10.0, 0.0, 1000, CountMode::PerRunMean),
            Some(50.0)
        );
        assert_eq!(
            least_fevals(&[&a, &b], 1e-4, 10.0, 0.0, 1000, CountMode::AveragedTrace),
            Some(60.0)
        );
    }

    #[test]
    fn spec_ids_round_trip() {
        for s in SolverSpec::default_matrix()
            .into_iter()
            .chain([SolverSpec::DflmFixed(7)])
        {
            assert_eq!(s.id().parse::<SolverSpec>().unwrap(), s);
        }
        assert!("dflm-n0".parse::<SolverSpec>().is_err());
        assert!("newton".parse::<SolverSpec>().is_err());
    }

    #[test]
    fn profile_csv_shape() {
        let n = vec![vec![Some(10.0), Some(30.0)], vec![Some(20.0), Some(15.0)]];
        let alphas: Vec<f64> = (0..10).map(|i| (i as f64 * 0.25).exp2()).collect();
        let p = profile(
            1e-4,
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            n,
            alphas,
        )
        .unwrap();
        let csv = profile_csv(&p);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "alpha,a,b");
        assert_eq!(lines.len(), 11);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 3));
    }

    #[test]
    fn empty_lists_rejected() {
        let prob = Arc::new(broyden_tridiagonal(4).unwrap());
        let r = run_suite(&[prob], &[SolverSpec::FdLm], &[], SolverConfig::for_dimension_of, 1);
        assert!(r.is_err());
    }
}
