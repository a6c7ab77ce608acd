//! Invariant checks on solver histories and a small self-validation suite
//! over the sensing, recovery, model and solver layers.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{PPolicy, SolverConfig};
use crate::lm::{solve, solve_fd_baseline, update_p, update_sigma, update_theta, FD_SOLVER_ID};
use crate::model::{assemble_jacobian, build_interpolation_set, ModelMode};
use crate::problems::{broyden_tridiagonal, Problem};
use crate::record::{RunRecord, StopReason};
use crate::recovery::{bp_solve, bpdn_solve, brute_force_oracle, RecoveryOptions, RecoveryProblem};
use crate::sensing::{generate, rip_constant_bruteforce, Distribution};
use crate::{Matrix, Vector};

/// Absolute slack on the step bound `‖d_k‖ ≤ 1/θ_k`.
pub const STEP_BOUND_SLACK: f64 = 1e-12;
/// Relative slack (times `‖F_k‖²`) on the Cauchy decrease inequality.
pub const CAUCHY_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Iteration index, `None` for whole-run properties.
    pub k: Option<usize>,
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.k {
            Some(k) => write!(f, "[k={k}] {}: {}", self.rule, self.detail),
            None => write!(f, "{}: {}", self.rule, self.detail),
        }
    }
}

/// Checks every recorded iteration of `rec` against the update rules of its
/// own configuration, plus the trace and evaluation-count bookkeeping.
pub fn check_history(rec: &RunRecord) -> Vec<Violation> {
    let cfg = &rec.config;
    let fd = rec.solver_id == FD_SOLVER_ID;
    let mut out = Vec::new();
    let mut bad = |k: Option<usize>, rule: &'static str, detail: String| out.push(Violation { k, rule, detail });
    let h = &rec.history;

    for (i, it) in h.iter().enumerate() {
        let k = Some(it.k);
        if it.k != i {
            bad(k, "iteration index", format!("record {i} has k = {}", it.k));
        }
        if it.accepted != (it.rho > cfg.eta0) {
            bad(
                k,
                "acceptance rule",
                format!("rho = {:e}, accepted = {}", it.rho, it.accepted),
            );
        }
        if !it.accepted && it.f_next != it.f {
            bad(
                k,
                "acceptance rule",
                format!("rejected step changed f from {:e} to {:e}", it.f, it.f_next),
            );
        }
        let expect = update_theta(it.theta, it.rho, it.grad_model_norm, cfg);
        if it.theta_next != expect {
            bad(
                k,
                "theta update",
                format!("theta_next = {:e}, table gives {expect:e}", it.theta_next),
            );
        }
        if !it.accepted && it.theta_next != cfg.gamma2 * it.theta {
            bad(
                k,
                "theta update",
                "rejected step did not multiply theta by gamma2".into(),
            );
        }
        if !(it.theta >= cfg.theta_min) {
            bad(
                k,
                "theta floor",
                format!("theta = {:e} < {:e}", it.theta, cfg.theta_min),
            );
        }
        if !(it.lambda >= it.theta * it.grad_model_norm * (1.0 - 1e-15)) {
            bad(
                k,
                "lambda",
                format!(
                    "lambda = {:e}, theta*|g| = {:e}",
                    it.lambda,
                    it.theta * it.grad_model_norm
                ),
            );
        }
        if !(it.step_norm <= 1.0 / it.theta + STEP_BOUND_SLACK) {
            bad(
                k,
                "step bound",
                format!("|d| = {:e} > 1/theta = {:e}", it.step_norm, 1.0 / it.theta),
            );
        }
        let g = it.grad_model_norm;
        let cauchy = if it.model_hessian_norm > 0.0 {
            g * it.step_norm.min(g / it.model_hessian_norm)
        } else {
            g * it.step_norm
        };
        let f_sq = 2.0 * it.f;
        if !(it.pred >= cauchy - CAUCHY_SLACK * f_sq) {
            bad(k, "cauchy decrease", format!("pred = {:e} < {cauchy:e}", it.pred));
        }
        if let Some(next) = h.get(i + 1) {
            if next.f != it.f_next {
                bad(
                    k,
                    "acceptance rule",
                    format!("next f = {:e}, expected {:e}", next.f, it.f_next),
                );
            }
            if next.theta != it.theta_next {
                bad(k, "theta update", "next theta differs from theta_next".into());
            }
            let sigma = update_sigma(it.step_norm, cfg);
            if next.sigma != sigma {
                bad(
                    k,
                    "sigma update",
                    format!("next sigma = {:e}, expected {sigma:e}", next.sigma),
                );
            }
            let p = if fd {
                rec.n
            } else {
                update_p(it.p, it.accepted, &cfg.p_policy)
            };
            if next.p != p {
                bad(k, "p update", format!("next p = {}, expected {p}", next.p));
            }
        }
    }

    // Evaluation ledger: one for F(x0), then p per model and one per trial.
    let first_p = if fd { rec.n } else { cfg.p_policy.initial() };
    let mut expected = 1usize;
    let mut p_next = first_p;
    for it in h {
        if it.p != p_next {
            bad(
                Some(it.k),
                "feval ledger",
                format!("model used p = {}, expected {p_next}", it.p),
            );
        }
        expected += it.p + 1;
        if it.fevals != expected {
            bad(
                Some(it.k),
                "feval ledger",
                format!("fevals = {}, expected {expected}", it.fevals),
            );
        }
        p_next = if fd {
            rec.n
        } else {
            update_p(it.p, it.accepted, &cfg.p_policy)
        };
    }
    if rec.stop_reason == StopReason::Stationary {
        expected += p_next;
    }
    if rec.stop_reason != StopReason::Error && rec.fevals != expected {
        bad(
            None,
            "feval ledger",
            format!("run reports {} evaluations, expected {expected}", rec.fevals),
        );
    }
    let p_max = if fd { rec.n } else { cfg.p_policy.max() };
    if rec.fevals > cfg.max_fevals + p_max + 1 {
        bad(
            None,
            "feval budget",
            format!("{} > {} + {p_max} + 1", rec.fevals, cfg.max_fevals),
        );
    }

    for w in rec.trace.windows(2) {
        if w[1].fevals <= w[0].fevals {
            bad(
                None,
                "trace",
                format!("fevals not increasing: {} then {}", w[0].fevals, w[1].fevals),
            );
        }
        if w[1].best_f > w[0].best_f {
            bad(
                None,
                "monotone best_f",
                format!("{:e} then {:e}", w[0].best_f, w[1].best_f),
            );
        }
    }
    if let Some(last) = rec.trace.last() {
        if last.fevals != rec.fevals {
            bad(
                None,
                "trace",
                format!("trace ends at {} of {} evaluations", last.fevals, rec.fevals),
            );
        }
    }
    out
}

/// Outcome of one self-validation check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidateOptions {
    /// Options handed to every recovery solve of the suite.
    pub recovery: RecoveryOptions,
}

/// Runs the self-validation checks in a fixed order.
pub fn run_validation(opts: &ValidateOptions) -> Vec<CheckResult> {
    type Check = fn(&ValidateOptions) -> (bool, String);
    let checks: [(&'static str, Check); 9] = [
        ("sensing.bernoulli_entries", check_bernoulli_entries),
        ("sensing.determinism", check_sensing_determinism),
        ("sensing.rip_identity", check_rip_identity),
        ("recovery.exact_sparse", check_exact_sparse),
        ("recovery.oracle_agreement", check_oracle_agreement),
        ("recovery.bpdn_feasible", check_bpdn_feasible),
        ("model.sigma_invariance", check_sigma_invariance),
        ("model.broyden_accuracy", check_broyden_accuracy),
        ("lm.history_invariants", check_lm_invariants),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = f(opts);
            CheckResult { name, passed, detail }
        })
        .collect()
}

fn check_bernoulli_entries(_: &ValidateOptions) -> (bool, String) {
    let Ok(a) = generate(20, 40, Distribution::Bernoulli, 11) else {
        return (false, "generation failed".into());
    };
    let mag = 1.0 / 20f64.sqrt();
    let worst = a.entries().iter().map(|v| (v.abs() - mag).abs()).fold(0.0, f64::max);
    (worst == 0.0, format!("max | |a_ij| - 1/sqrt(p) | = {worst:e}"))
}

fn check_sensing_determinism(_: &ValidateOptions) -> (bool, String) {
    let pairs = [
        Distribution::Bernoulli,
        Distribution::Gaussian,
        Distribution::BernoulliLike,
    ]
    .into_iter()
    .map(|d| (generate(9, 17, d, 42).ok(), generate(9, 17, d, 42).ok()));
    let same = pairs.clone().all(|(a, b)| a.is_some() && a == b);
    (same, format!("identical draws for repeated seeds: {same}"))
}

fn check_rip_identity(_: &ValidateOptions) -> (bool, String) {
    let id = crate::SensingMatrix::from_matrix(Matrix::identity(8, 8), Distribution::Bernoulli, 0);
    let deltas: Vec<f64> = (1..=3)
        .map(|s| rip_constant_bruteforce(&id, s, 1 << 20).unwrap_or(f64::NAN))
        .collect();
    (
        deltas.iter().all(|d| *d == 0.0),
        format!("delta_s for s = 1..3: {deltas:?}"),
    )
}

fn planted(n: usize, s: usize, rng: &mut ChaCha8Rng) -> Vector {
    let mut g = Vector::zeros(n);
    let mut placed = 0;
    while placed < s {
        let j = rng.random_range(0..n);
        if g[j] == 0.0 {
            g[j] = if rng.random::<bool>() { 1.0 } else { -1.0 } * rng.random_range(0.5..2.0);
            placed += 1;
        }
    }
    g
}

fn check_exact_sparse(opts: &ValidateOptions) -> (bool, String) {
    let trials = 20;
    let mut ok = 0;
    for seed in 0..trials {
        let Ok(a) = generate(24, 64, Distribution::Bernoulli, 1000 + seed) else {
            continue;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = planted(64, 3, &mut rng);
        let b = a.entries() * &g;
        let Ok(prob) = RecoveryProblem::new(a.entries().clone(), b, 0.0) else {
            continue;
        };
        if let Ok(r) = bp_solve(&prob, &opts.recovery) {
            if (r.g - &g).amax() <= 1e-6 {
                ok += 1;
            }
        }
    }
    (ok >= 18, format!("{ok}/{trials} exact recoveries (need 18)"))
}

fn check_oracle_agreement(opts: &ValidateOptions) -> (bool, String) {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let Ok(a) = generate(5, 10, Distribution::Gaussian, 70 + seed) else {
            return (false, "generation failed".into());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Vector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let prob = RecoveryProblem::new(a.entries().clone(), b, 0.0).expect("shapes match");
        let (Ok(bp), Ok(oracle)) = (
            bp_solve(&prob, &opts.recovery),
            brute_force_oracle(&prob, 5, 1 << 20, &RecoveryOptions::default()),
        ) else {
            return (false, format!("solve failed for seed {seed}"));
        };
        worst = worst.max((bp.l1_norm - oracle.l1_norm).abs() / (1.0 + oracle.l1_norm));
    }
    (
        worst <= 1e-6,
        format!("max relative l1 gap to the enumeration oracle = {worst:e}"),
    )
}

fn check_bpdn_feasible(opts: &ValidateOptions) -> (bool, String) {
    let Ok(a) = generate(12, 30, Distribution::Gaussian, 5) else {
        return (false, "generation failed".into());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = planted(30, 2, &mut rng);
    let b = a.entries() * &g + Vector::from_fn(12, |_, _| rng.random_range(-1e-3..1e-3));
    let xi = 1e-2;
    let prob = RecoveryProblem::new(a.entries().clone(), b, xi).expect("shapes match");
    match bpdn_solve(&prob, &opts.recovery) {
        Ok(r) => {
            let ok = r.residual_norm <= xi * (1.0 + opts.recovery.feasibility_tol) && r.l1_norm <= g.lp_norm(1);
            (
                ok,
                format!(
                    "residual {:e} (radius {xi:e}), l1 {:e} vs planted {:e}",
                    r.residual_norm,
                    r.l1_norm,
                    g.lp_norm(1)
                ),
            )
        }
        Err(e) => (false, e.to_string()),
    }
}

fn check_sigma_invariance(opts: &ValidateOptions) -> (bool, String) {
    let mut m = Matrix::zeros(5, 8);
    for i in 0..5 {
        m[(i, i)] = 2.0 + i as f64;
        m[(i, (i + 3) % 8)] = -1.5;
    }
    let prob = Problem::new("linear", 5, Vector::zeros(8), move |x: &Vector| &m * x);
    let x = prob.initial_point.clone();
    let f = prob.eval(&x);
    let Ok(a) = generate(6, 8, Distribution::Gaussian, 3) else {
        return (false, "generation failed".into());
    };
    let mut models = Vec::new();
    for s in [1e-9, 1e-7, 1e-1] {
        match build_interpolation_set(&prob, &x, &f, s, a.clone())
            .and_then(|set| assemble_jacobian(&set, ModelMode::Noiseless, &opts.recovery))
        {
            Ok(model) => models.push(model.j),
            Err(e) => return (false, e.to_string()),
        }
    }
    let d = (&models[0] - &models[2]).amax().max((&models[1] - &models[2]).amax());
    (d <= 1e-8, format!("max entry change across sigma = {d:e}"))
}

/// Frobenius error of the Broyden (n = 30, p = 12) model against the
/// analytic Jacobian at the initial point, for each probe scale.
pub fn broyden_model_errors(seed: u64, sigmas: &[f64], opts: &RecoveryOptions) -> crate::Result<Vec<f64>> {
    let prob = broyden_tridiagonal(30)?;
    let x = prob.initial_point.clone();
    let f = prob.eval(&x);
    let exact = prob.jacobian(&x).expect("built-in Jacobian");
    let a = generate(12, 30, Distribution::Bernoulli, seed)?;
    sigmas
        .iter()
        .map(|&s| {
            let set = build_interpolation_set(&prob, &x, &f, s, a.clone())?;
            let model = assemble_jacobian(&set, ModelMode::Noiseless, opts)?;
            Ok((model.j - &exact).norm())
        })
        .collect()
}

fn check_broyden_accuracy(opts: &ValidateOptions) -> (bool, String) {
    match broyden_model_errors(5, &[1e-3, 1e-5, 1e-7], &opts.recovery) {
        Ok(e) => {
            let ok = e[1] <= e[0] && e[2] <= e[1] && e[2] <= 1e-3;
            (
                ok,
                format!(
                    "errors at sigma 1e-3, 1e-5, 1e-7: {:.3e}, {:.3e}, {:.3e}",
                    e[0], e[1], e[2]
                ),
            )
        }
        Err(e) => (false, e.to_string()),
    }
}

fn check_lm_invariants(opts: &ValidateOptions) -> (bool, String) {
    let Ok(prob) = broyden_tridiagonal(20) else {
        return (false, "problem construction failed".into());
    };
    let mut cfg = SolverConfig::for_dimension(20).with_seed(1);
    cfg.recovery = opts.recovery;
    let runs = [
        solve(&prob, &cfg.clone().with_p(PPolicy::adaptive_default(20))),
        solve(&prob, &cfg.clone().with_p(PPolicy::Fixed(7))),
        solve_fd_baseline(&prob, &cfg),
    ];
    let mut violations = Vec::new();
    let mut iterations = 0;
    for r in runs {
        match r {
            Ok(rec) => {
                iterations += rec.history.len();
                if let Some(e) = &rec.error {
                    violations.push(format!("run error: {e}"));
                }
                violations.extend(check_history(&rec).iter().map(|v| v.to_string()));
            }
            Err(e) => violations.push(e.to_string()),
        }
    }
    let detail = match violations.first() {
        None => format!("{iterations} iterations checked, no violations"),
        Some(first) => format!("{} violations, first: {first}", violations.len()),
    };
    (violations.is_empty(), detail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_history_has_no_violations() {
        let prob = broyden_tridiagonal(12).unwrap();
        let cfg = SolverConfig::for_dimension(12).with_seed(4);
        let rec = solve(&prob, &cfg).unwrap();
        assert!(!rec.history.is_empty());
        assert_eq!(check_history(&rec), vec![]);
    }

    #[test]
    fn tampered_history_is_caught() {
        let prob = broyden_tridiagonal(12).unwrap();
        let cfg = SolverConfig::for_dimension(12).with_seed(4);
        let rec = solve(&prob, &cfg).unwrap();

        let mut r = rec.clone();
        r.history[0].accepted = !r.history[0].accepted;
        assert!(check_history(&r).iter().any(|v| v.rule == "acceptance rule"));

        let mut r = rec.clone();
        r.history[0].theta_next *= 2.0;
        assert!(check_history(&r).iter().any(|v| v.rule == "theta update"));

        let mut r = rec.clone();
        r.fevals += 1;
        assert!(check_history(&r).iter().any(|v| v.rule == "feval ledger"));

        let mut r = rec;
        r.history[0].pred = -1.0;
        assert!(check_history(&r).iter().any(|v| v.rule == "cauchy decrease"));
    }

    #[test]
    fn suite_passes_with_defaults() {
        let results = run_validation(&ValidateOptions::default());
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn starved_recovery_fails_suite() {
        let mut opts = ValidateOptions::default();
        opts.recovery.max_iterations = 1;
        assert!(run_validation(&opts).iter().any(|r| !r.passed));
    }
}
