//! Command-line front end: `solve`, `bench`, `profile` and `validate`.
//!
//! Exit codes: `0` success, `1` validation failure or a run that ended in an
//! evaluation error, `2` usage or configuration error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bench::{self, CountMode, SolverSpec, DEFAULT_TAUS};
use crate::config::{set_path, PPolicy, SolverConfig};
use crate::problems::{builtin_families, nearest_valid_dimension, Problem, Registry};
use crate::record::{write_history_csv, StopReason};
use crate::sensing::Distribution;
use crate::validate::{run_validation, ValidateOptions};
use crate::{lm, Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SPARSE_DFLM_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "sparse-dflm",
    version,
    about = "Derivative-free Levenberg-Marquardt with sparse Jacobian recovery"
)]
pub struct Cli {
    /// Log solver progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one solve and write its history and summary.
    Solve(SolveArgs),
    /// Run a suite of problems, solvers and seeds.
    Bench(BenchArgs),
    /// Compute performance profiles from saved bench records.
    Profile(ProfileArgs),
    /// Run the built-in invariant checks.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DistArg {
    Gaussian,
    Bernoulli,
    BernoulliLike,
}

impl From<DistArg> for Distribution {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Gaussian => Distribution::Gaussian,
            DistArg::Bernoulli => Distribution::Bernoulli,
            DistArg::BernoulliLike => Distribution::BernoulliLike,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON file with (a subset of) the solver configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set eta0=1e-2` or
    /// `--set recovery.optimality_tol=1e-9`. Values are parsed as JSON.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_enum)]
    pub distribution: Option<DistArg>,
    #[arg(long)]
    pub max_fevals: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub problem: String,
    #[arg(long)]
    pub n: Option<usize>,
    /// Fixed number of probes per model.
    #[arg(long, conflicts_with = "p_adaptive")]
    pub p: Option<usize>,
    /// Adaptive probe counts with the dimension-scaled defaults.
    #[arg(long)]
    pub p_adaptive: bool,
    /// Use the forward-difference baseline instead of sparse models.
    #[arg(long)]
    pub fd: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Comma-separated problem names (default: all built-in families).
    #[arg(long, value_delimiter = ',')]
    pub problems: Vec<String>,
    /// Target dimension, rounded up to the nearest valid one per family.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Seeds as `a..b` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "1..50")]
    pub seeds: String,
    /// Comma-separated solver ids (`dflm-n2`, `dflm-p30`, `dflm-adaptive`, `fd-lm`).
    #[arg(long, value_delimiter = ',')]
    pub solvers: Vec<String>,
    /// Worker threads (default: the thread cap or all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Fill the wall-time column of the summary (makes it non-reproducible).
    #[arg(long)]
    pub wall_time: bool,
    #[arg(long, default_value = "runs")]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CountArg {
    Averaged,
    PerRun,
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    /// Bench output directory holding a `records/` folder.
    #[arg(long)]
    pub dir: PathBuf,
    /// Accuracy levels (default 1e-2, 1e-4, 1e-6, 1e-8).
    #[arg(long, value_delimiter = ',')]
    pub tau: Vec<f64>,
    #[arg(long, value_enum, default_value = "averaged")]
    pub count: CountArg,
    /// Spacing of the log2(alpha) grid.
    #[arg(long, default_value_t = 0.125)]
    pub alpha_step: f64,
    /// Where to create the profile run directory (default: `--dir`).
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Override the recovery feasibility and optimality tolerances.
    #[arg(long)]
    pub recovery_tol: Option<f64>,
    /// Override the recovery iteration limit.
    #[arg(long)]
    pub recovery_max_iter: Option<usize>,
}

/// Parses `args` (including the program name) and runs the command, writing
/// human-readable output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = write!(out, "{e}");
            return code;
        }
    };
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
        Command::Profile(a) => cmd_profile(&a, out),
        Command::Validate(a) => cmd_validate(&a, verbose > 0, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            EXIT_USAGE
        }
    }
}

/// Worker cap from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

/// Defaults for `n`, then the config file, then explicit overrides.
pub fn resolve_config(n: usize, args: &ConfigArgs, extra: &[(String, Value)]) -> Result<SolverConfig> {
    let mut doc = serde_json::to_value(SolverConfig::for_dimension(n)).expect("config serializes");
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if !file.is_object() {
            return Err(Error::Format {
                path: path.clone(),
                message: "expected a JSON object".into(),
            });
        }
        merge(&mut doc, file);
    }
    let mut pairs: Vec<(String, Value)> = Vec::new();
    for item in &args.overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("override `{item}` is not KEY=VALUE")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        pairs.push((key.trim().to_string(), value));
    }
    if let Some(d) = args.distribution {
        pairs.push((
            "distribution".into(),
            serde_json::to_value(Distribution::from(d)).expect("serializes"),
        ));
    }
    if let Some(m) = args.max_fevals {
        pairs.push(("max_fevals".into(), Value::from(m)));
    }
    pairs.extend(extra.iter().cloned());
    for (key, value) in pairs {
        set_path(&mut doc, &key, value)?;
    }
    let cfg: SolverConfig =
        serde_json::from_value(doc).map_err(|e| Error::InvalidArgument(format!("configuration: {e}")))?;
    cfg.validate(n)?;
    Ok(cfg)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Creates `<parent>/<timestamp>-<hash>` without touching existing
/// directories; a numeric suffix is added on collision.
pub fn create_run_dir(parent: &Path, tag: &str) -> Result<PathBuf> {
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let digest = Sha256::digest(tag.as_bytes());
    let hash: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    let base = format!("{stamp}-{hash}");
    for k in 0.. {
        let name = if k == 0 { base.clone() } else { format!("{base}-{k}") };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("run directory suffixes exhausted")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn install_thread_cap() {
    if let Some(n) = thread_cap() {
        // Fails only if a global pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn resolve_problem(registry: &Registry, name: &str, n: Option<usize>) -> Result<Arc<Problem>> {
    let problem = registry.resolve(name, n)?;
    problem.validate()?;
    Ok(problem)
}

fn cmd_solve(args: &SolveArgs, out: &mut dyn Write) -> Result<i32> {
    install_thread_cap();
    let registry = Registry::new();
    let problem = resolve_problem(&registry, &args.problem, args.n)?;
    let n = problem.n;
    let mut extra = Vec::new();
    if let Some(p) = args.p {
        extra.push((
            "p_policy".to_string(),
            serde_json::to_value(PPolicy::Fixed(p)).expect("serializes"),
        ));
    } else if args.p_adaptive {
        extra.push((
            "p_policy".to_string(),
            serde_json::to_value(PPolicy::adaptive_default(n)).expect("serializes"),
        ));
    }
    if let Some(s) = args.seed {
        extra.push(("seed".to_string(), Value::from(s)));
    }
    let cfg = resolve_config(n, &args.config, &extra)?;
    let record = if args.fd {
        lm::solve_fd_baseline(&problem, &cfg)?
    } else {
        lm::solve(&problem, &cfg)?
    };
    let dir = create_run_dir(
        &args.output_dir,
        &format!("solve/{}/{}/{}", problem.name, record.solver_id, cfg.seed),
    )?;
    let hist_path = dir.join("history.csv");
    let mut buf = Vec::new();
    write_history_csv(&mut buf, &record.history).map_err(|e| Error::io(&hist_path, e))?;
    fs::write(&hist_path, buf).map_err(|e| Error::io(&hist_path, e))?;
    let summary_path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&record).expect("record serializes");
    write_text(&summary_path, &json)?;
    let _ = writeln!(
        out,
        "{} on {}: {} after {} iterations, {} evaluations, f = {:.6e}",
        record.solver_id, record.problem_id, record.stop_reason, record.iterations, record.fevals, record.final_f
    );
    if let Some(e) = &record.error {
        let _ = writeln!(out, "error: {e}");
    }
    let _ = writeln!(out, "wrote {}", dir.display());
    Ok(if record.stop_reason == StopReason::Error {
        EXIT_FAILURE
    } else {
        EXIT_OK
    })
}

/// Parses `a..b` (inclusive) or `a,b,c`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidArgument(format!("cannot parse seeds `{s}`"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    let seeds: Vec<u64> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("empty seed list".into()));
    }
    Ok(seeds)
}

fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let registry = Registry::new();
    let names: Vec<String> = if args.problems.is_empty() {
        builtin_families().map(str::to_string).collect()
    } else {
        args.problems.clone()
    };
    let mut problems = Vec::new();
    for name in &names {
        let n = nearest_valid_dimension(name, args.n).unwrap_or(args.n);
        problems.push(resolve_problem(&registry, name, Some(n))?);
    }
    let solvers: Vec<SolverSpec> = if args.solvers.is_empty() {
        SolverSpec::default_matrix()
    } else {
        args.solvers.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    let seeds = parse_seeds(&args.seeds)?;
    let mut cfgs = Vec::new();
    for p in &problems {
        cfgs.push((p.name.clone(), resolve_config(p.n, &args.config, &[])?));
    }
    let workers = args.threads.or_else(thread_cap).unwrap_or(0);
    let records = bench::run_suite(
        &problems,
        &solvers,
        &seeds,
        |p: &Problem| {
            cfgs.iter()
                .find(|(name, _)| *name == p.name)
                .map(|(_, c)| c.clone())
                .expect("config resolved for every problem")
        },
        workers,
    )?;
    let tag = format!("bench/{names:?}/{solvers:?}/{seeds:?}");
    let dir = create_run_dir(&args.output_dir, &tag)?;
    bench::save_records(&dir, &records)?;
    let profiles = DEFAULT_TAUS
        .iter()
        .map(|&t| bench::profile_from_records(&records, t, CountMode::AveragedTrace, 0.125))
        .collect::<Result<Vec<_>>>()?;
    bench::emit_reports(&dir, &profiles, &records, args.wall_time)?;
    let failed = records.iter().filter(|r| r.stop_reason == StopReason::Error).count();
    let _ = writeln!(
        out,
        "{} runs ({} problems x {} solvers x {} seeds), {failed} failed",
        records.len(),
        problems.len(),
        solvers.len(),
        seeds.len()
    );
    let _ = writeln!(out, "wrote {}", dir.display());
    Ok(EXIT_OK)
}

fn cmd_profile(args: &ProfileArgs, out: &mut dyn Write) -> Result<i32> {
    let records = bench::load_records(&args.dir)?;
    let mode = match args.count {
        CountArg::Averaged => CountMode::AveragedTrace,
        CountArg::PerRun => CountMode::PerRunMean,
    };
    if !(args.alpha_step > 0.0) {
        return Err(Error::InvalidArgument("alpha step must be positive".into()));
    }
    let taus: Vec<f64> = if args.tau.is_empty() {
        DEFAULT_TAUS.to_vec()
    } else {
        args.tau.clone()
    };
    let profiles = taus
        .iter()
        .map(|&t| bench::profile_from_records(&records, t, mode, args.alpha_step))
        .collect::<Result<Vec<_>>>()?;
    let parent = args.output_dir.clone().unwrap_or_else(|| args.dir.clone());
    let dir = create_run_dir(&parent, &format!("profile/{taus:?}/{}", args.dir.display()))?;
    let mut written = Vec::new();
    for p in &profiles {
        let stem = bench::tau_stem(p.tau);
        let csv = dir.join(format!("{stem}.csv"));
        write_text(&csv, &bench::profile_csv(p))?;
        let svg = dir.join(format!("{stem}.svg"));
        write_text(&svg, &bench::profile_svg(p))?;
        written.push(csv);
        written.push(svg);
    }
    for p in &profiles {
        let _ = writeln!(out, "tau = {:e}", p.tau);
        for (s, row) in p.solvers.iter().zip(&p.pi) {
            let _ = writeln!(out, "  {s:<16} pi(1) = {:.3}", row.first().copied().unwrap_or(0.0));
        }
    }
    let _ = writeln!(out, "wrote {} files to {}", written.len(), dir.display());
    Ok(EXIT_OK)
}

fn cmd_validate(args: &ValidateArgs, verbose: bool, out: &mut dyn Write) -> Result<i32> {
    install_thread_cap();
    let mut opts = ValidateOptions::default();
    if let Some(t) = args.recovery_tol {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "recovery tolerance must be positive, got {t}"
            )));
        }
        opts.recovery.feasibility_tol = t;
        opts.recovery.optimality_tol = t;
    }
    if let Some(m) = args.recovery_max_iter {
        opts.recovery.max_iterations = m;
    }
    let results = run_validation(&opts);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        let mark = if r.passed { "pass" } else { "FAIL" };
        if verbose || !r.passed {
            let _ = writeln!(out, "{:<width$}  {mark}  {}", r.name, r.detail);
        } else {
            let _ = writeln!(out, "{:<width$}  {mark}", r.name);
        }
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(out, "{} checks, {failed} failed", results.len());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_seeds("3,9, 4").unwrap(), vec![3, 9, 4]);
        assert!(parse_seeds("5..1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn overrides_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(
            &path,
            r#"{"eta0": 0.01, "gamma2": 3.0, "recovery": {"optimality_tol": 1e-9}}"#,
        )
        .unwrap();
        let args = ConfigArgs {
            config: Some(path),
            overrides: vec!["eta0=0.02".into()],
            distribution: Some(DistArg::Gaussian),
            max_fevals: None,
        };
        let cfg = resolve_config(10, &args, &[]).unwrap();
        assert_eq!(cfg.eta0, 0.02);
        assert_eq!(cfg.gamma2, 3.0);
        assert_eq!(cfg.recovery.optimality_tol, 1e-9);
        assert_eq!(cfg.recovery.feasibility_tol, 1e-8);
        assert_eq!(cfg.distribution, Distribution::Gaussian);
        assert_eq!(cfg.max_fevals, 11_000);
    }

    #[test]
    fn unknown_override_is_rejected() {
        let args = ConfigArgs {
            config: None,
            overrides: vec!["etta0=1".into()],
            distribution: None,
            max_fevals: None,
        };
        assert!(resolve_config(10, &args, &[]).is_err());
    }

    #[test]
    fn run_dirs_never_collide() {
        let dir = tempfile::tempdir().unwrap();
        let a = create_run_dir(dir.path(), "x").unwrap();
        let b = create_run_dir(dir.path(), "x").unwrap();
        assert_ne!(a, b);
    }
}
