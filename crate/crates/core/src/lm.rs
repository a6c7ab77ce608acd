//! The Levenberg-Marquardt loop driven by ℓ1-recovered Jacobian models, its
//! parameter updates, and a forward-difference baseline on the same loop.

use std::time::Instant;

use log::{debug, warn};

use crate::config::{PPolicy, RecoveryMode, SolverConfig};
use crate::model::{assemble_jacobian, build_interpolation_set, lipschitz_noise_radius, ModelMode};
use crate::problems::{forward_difference_jacobian, Problem};
use crate::record::{IterationRecord, RunRecord, StopReason, TracePoint};
use crate::sensing::{derive_seed, generate, Distribution, SensingMatrix};
use crate::{Error, Matrix, Result, Vector};

/// Relative residual accepted from the regularized normal-equation solve.
const STEP_SOLVE_TOL: f64 = 1e-10;

/// Solves `(JᵀJ + λI)d = −JᵀF` with `λ = θ‖JᵀF‖`. Returns `(d, λ)`.
pub fn lm_step(j: &Matrix, f: &Vector, theta: f64) -> Result<(Vector, f64)> {
    if j.nrows() != f.len() {
        return Err(Error::InvalidArgument(format!(
            "model has {} rows, residual has {}",
            j.nrows(),
            f.len()
        )));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidArgument(format!("theta must be positive, got {theta}")));
    }
    let g = j.transpose() * f;
    let gnorm = g.norm();
    if !(gnorm > 0.0) || !gnorm.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "model gradient norm must be positive and finite, got {gnorm}"
        )));
    }
    let lambda = theta * gnorm;
    let jtj = j.transpose() * j;
    let rhs = -&g;
    match regularized_solve(&jtj, lambda, &rhs) {
        Some(d) => Ok((d, lambda)),
        None => {
            warn!("normal equations ill-conditioned at lambda = {lambda:e}, retrying with 10x");
            regularized_solve(&jtj, 10.0 * lambda, &rhs)
                .map(|d| (d, 10.0 * lambda))
                .ok_or_else(|| {
                    Error::Factorization(format!("J^T J + lambda I not factorizable for lambda = {lambda:e}"))
                })
        }
    }
}

fn regularized_solve(jtj: &Matrix, lambda: f64, rhs: &Vector) -> Option<Vector> {
    let mut h = jtj.clone();
    for i in 0..h.nrows() {
        h[(i, i)] += lambda;
    }
    let chol = h.clone().cholesky()?;
    let mut d = chol.solve(rhs);
    let r = rhs - &h * &d;
    d += chol.solve(&r);
    let res = (rhs - &h * &d).norm();
    let ok = d.iter().all(|v| v.is_finite()) && res <= STEP_SOLVE_TOL * rhs.norm().max(f64::MIN_POSITIVE);
    if !ok {
        debug!("step solve residual {res:e} for rhs norm {:e}", rhs.norm());
    }
    ok.then_some(d)
}

/// `‖F‖² − ‖F + Jd‖²`, written without subtracting the two squares.
pub fn predicted_reduction(f: &Vector, j: &Matrix, d: &Vector) -> f64 {
    let jd = j * d;
    -2.0 * f.dot(&jd) - jd.norm_squared()
}

/// `‖F‖² − ‖F_trial‖²` as `(F − F_trial)ᵀ(F + F_trial)`.
pub fn actual_reduction(f: &Vector, f_trial: &Vector) -> f64 {
    (f - f_trial).dot(&(f + f_trial))
}

/// `Ared / Pred`, or `−∞` when the predicted reduction is not positive.
pub fn ratio(f: &Vector, f_trial: &Vector, j: &Matrix, d: &Vector) -> f64 {
    let pred = predicted_reduction(f, j, d);
    if pred > 0.0 {
        actual_reduction(f, f_trial) / pred
    } else {
        f64::NEG_INFINITY
    }
}

/// Regularization weight for the next iteration.
pub fn update_theta(theta: f64, rho: f64, grad_model_norm: f64, cfg: &SolverConfig) -> f64 {
    if !(rho > cfg.eta0) {
        return cfg.gamma2 * theta;
    }
    if grad_model_norm < cfg.eta1 / theta {
        cfg.gamma2 * theta
    } else if grad_model_norm <= cfg.eta2 / theta {
        theta
    } else {
        (cfg.gamma1 * theta).max(cfg.theta_min)
    }
}

/// Probe scale from the previous step length.
pub fn update_sigma(d_prev_norm: f64, cfg: &SolverConfig) -> f64 {
    if cfg.sigma_unclamped {
        return d_prev_norm;
    }
    let [lo, hi] = cfg.sigma_bounds;
    d_prev_norm.min(hi).max(lo)
}

pub fn update_p(p: usize, accepted: bool, policy: &PPolicy) -> usize {
    match *policy {
        PPolicy::Fixed(_) => p,
        PPolicy::Adaptive {
            p_min, p_max, p_diff, ..
        } => {
            let next = if accepted { p + p_diff } else { p.saturating_sub(p_diff) };
            next.clamp(p_min, p_max)
        }
    }
}

/// Identifier used in records for a probe-count policy.
pub fn solver_id(policy: &PPolicy) -> String {
    match policy {
        PPolicy::Fixed(p) => format!("dflm-p{p}"),
        PPolicy::Adaptive { .. } => "dflm-adaptive".to_string(),
    }
}

pub const FD_SOLVER_ID: &str = "fd-lm";

/// Model produced for one iteration.
struct Model {
    j: Matrix,
    p: usize,
    fevals: usize,
}

enum Builder {
    Sparse,
    ForwardDifference,
}

/// Runs the derivative-free solver on `problem`.
///
/// Runtime failures (non-finite residuals, infeasible row problems, failed
/// linear solves) end the run with [`StopReason::Error`] and the message in
/// [`RunRecord::error`]; only invalid inputs return `Err`.
pub fn solve(problem: &Problem, cfg: &SolverConfig) -> Result<RunRecord> {
    run(problem, cfg, Builder::Sparse)
}

/// Same loop with a forward-difference Jacobian (`n` evaluations per model).
pub fn solve_fd_baseline(problem: &Problem, cfg: &SolverConfig) -> Result<RunRecord> {
    run(problem, cfg, Builder::ForwardDifference)
}

struct Loop<'a> {
    problem: &'a Problem,
    cfg: &'a SolverConfig,
    fevals: usize,
    history: Vec<IterationRecord>,
    trace: Vec<TracePoint>,
    best_f: f64,
}

impl Loop<'_> {
    fn eval(&mut self, x: &Vector) -> Result<Vector> {
        self.fevals += 1;
        let f = self.problem.eval(x);
        if f.len() != self.problem.m {
            return Err(Error::NonFiniteResidual(format!(
                "evaluation {} returned {} components, expected {}",
                self.fevals,
                f.len(),
                self.problem.m
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResidual(format!("evaluation {}", self.fevals)));
        }
        Ok(f)
    }

    fn note(&mut self, f: f64) {
        self.best_f = self.best_f.min(f);
        match self.trace.last_mut() {
            Some(last) if last.fevals == self.fevals => last.best_f = self.best_f,
            _ => self.trace.push(TracePoint {
                fevals: self.fevals,
                best_f: self.best_f,
            }),
        }
    }

    fn build(&mut self, how: &Builder, x: &Vector, f: &Vector, sigma: f64, p: usize, k: usize) -> Result<Model> {
        let cfg = self.cfg;
        match how {
            Builder::Sparse => {
                let a = draw_sensing(p, self.problem.n, cfg.distribution, derive_seed(cfg.seed, k as u64))?;
                let kappa = a.max_row_norm();
                let built = build_interpolation_set(self.problem, x, f, sigma, a);
                let set = match built {
                    Ok(s) => s,
                    Err(e) => {
                        // Evaluations up to and including the failing one were spent.
                        if let Error::NonFiniteInterpolation { index } = e {
                            self.fevals += if self.problem.eval_thread_safe { p } else { index + 1 };
                        }
                        return Err(e);
                    }
                };
                self.fevals += set.fevals_used;
                let mode = match cfg.mode {
                    RecoveryMode::Noiseless => ModelMode::Noiseless,
                    RecoveryMode::Denoising { xi: Some(xi) } => ModelMode::Denoising(xi),
                    RecoveryMode::Denoising { xi: None } => {
                        let l = cfg.lipschitz_estimate.unwrap_or(0.0);
                        ModelMode::Denoising(lipschitz_noise_radius(p, l, kappa, sigma))
                    }
                };
                let model = assemble_jacobian(&set, mode, &cfg.recovery)?;
                Ok(Model {
                    j: model.j,
                    p,
                    fevals: set.fevals_used,
                })
            }
            Builder::ForwardDifference => {
                let n = self.problem.n;
                let j = forward_difference_jacobian(self.problem, x, f, cfg.fd_step);
                self.fevals += n;
                if j.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteResidual(format!(
                        "forward-difference Jacobian at iteration {k}"
                    )));
                }
                Ok(Model { j, p: n, fevals: n })
            }
        }
    }
}

const SENSING_REDRAWS: u64 = 16;

/// Draws a sensing matrix of full rank, redrawing from derived seeds when
/// the first draw is numerically rank-deficient.
fn draw_sensing(p: usize, n: usize, dist: Distribution, seed: u64) -> Result<SensingMatrix> {
    let mut a = generate(p, n, dist, seed)?;
    for attempt in 1..=SENSING_REDRAWS {
        if has_full_rank(a.entries()) {
            break;
        }
        a = generate(p, n, dist, derive_seed(seed, attempt))?;
    }
    Ok(a)
}

fn has_full_rank(m: &Matrix) -> bool {
    let sv = m.singular_values();
    let max = sv.max();
    max > 0.0 && sv.min() > 1e-10 * max
}

fn run(problem: &Problem, cfg: &SolverConfig, how: Builder) -> Result<RunRecord> {
    let n = problem.n;
    cfg.validate(n)?;
    if problem.initial_point.len() != n {
        return Err(Error::InvalidArgument(format!(
            "initial point has length {}, problem dimension is {n}",
            problem.initial_point.len()
        )));
    }
    if problem.initial_point.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial point is not finite".into()));
    }
    let start = Instant::now();
    let mut lp = Loop {
        problem,
        cfg,
        fevals: 0,
        history: Vec::new(),
        trace: Vec::new(),
        best_f: f64::INFINITY,
    };
    let mut x = problem.initial_point.clone();
    let mut f = lp
        .eval(&x)
        .map_err(|e| Error::InvalidArgument(format!("initial residual: {e}")))?;
    let f0 = 0.5 * f.norm_squared();
    lp.note(f0);

    let mut theta = cfg.theta0;
    let mut sigma = cfg.sigma0;
    let mut p = cfg.p_policy.initial();
    let mut grad_norm = None;
    let mut k = 0usize;
    let mut error = None;

    let stop = loop {
        if lp.fevals >= cfg.max_fevals {
            break StopReason::MaxFevals;
        }
        let fk = 0.5 * f.norm_squared();
        let model = match lp.build(&how, &x, &f, sigma, p, k) {
            Ok(m) => m,
            Err(e) => {
                error = Some(e.to_string());
                break StopReason::Error;
            }
        };
        lp.note(fk);
        let g = model.j.transpose() * &f;
        let gnorm = g.norm();
        grad_norm = Some(gnorm);
        if gnorm <= cfg.epsilon0 {
            break StopReason::Stationary;
        }
        let (d, lambda) = match lm_step(&model.j, &f, theta) {
            Ok(s) => s,
            Err(e) => {
                error = Some(e.to_string());
                break StopReason::Error;
            }
        };
        let x_trial = &x + &d;
        let f_trial = match lp.eval(&x_trial) {
            Ok(v) => v,
            Err(e) => {
                error = Some(e.to_string());
                break StopReason::Error;
            }
        };
        let pred = predicted_reduction(&f, &model.j, &d);
        let ared = actual_reduction(&f, &f_trial);
        let rho = if pred > 0.0 { ared / pred } else { f64::NEG_INFINITY };
        let accepted = rho > cfg.eta0;
        let theta_next = update_theta(theta, rho, gnorm, cfg);
        let step_norm = d.norm();
        let f_trial_val = 0.5 * f_trial.norm_squared();
        let f_next = if accepted { f_trial_val } else { fk };
        lp.history.push(IterationRecord {
            k,
            fevals: lp.fevals,
            f: fk,
            grad_model_norm: gnorm,
            theta,
            lambda,
            rho,
            step_norm,
            accepted,
            p: model.p,
            sigma,
            pred,
            ared,
            model_hessian_norm: spectral_norm_sq(&model.j),
            theta_next,
            f_next,
        });
        debug!(
            "k={k} fevals={} f={fk:.6e} |g|={gnorm:.3e} theta={theta:.3e} rho={rho:.3e} |d|={step_norm:.3e} p={} ({} model evals)",
            lp.fevals, model.p, model.fevals
        );
        lp.note(f_trial_val);
        let sq = f.norm_squared();
        if accepted {
            x = x_trial;
            f = f_trial;
        }
        theta = theta_next;
        sigma = update_sigma(step_norm, cfg);
        p = update_p(p, accepted, &cfg.p_policy);
        k += 1;
        if step_norm <= cfg.step_tol {
            break StopReason::SmallStep;
        }
        if ared.abs() / (sq + 1e-8) <= cfg.rel_decrease_tol {
            break StopReason::SmallDecrease;
        }
    };

    let id = match how {
        Builder::Sparse => solver_id(&cfg.p_policy),
        Builder::ForwardDifference => FD_SOLVER_ID.to_string(),
    };
    Ok(RunRecord {
        solver_id: id,
        problem_id: problem.name.clone(),
        n,
        m: problem.m,
        seed: cfg.seed,
        config: cfg.clone(),
        f0,
        final_f: 0.5 * f.norm_squared(),
        final_grad_model_norm: grad_norm,
        fevals: lp.fevals,
        iterations: k,
        stop_reason: stop,
        error,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        x_final: x.iter().copied().collect(),
        trace: lp.trace,
        history: lp.history,
    })
}

/// `‖JᵀJ‖₂ = σ_max(J)²`.
fn spectral_norm_sq(j: &Matrix) -> f64 {
    if j.is_empty() {
        return 0.0;
    }
    let s = j.singular_values();
    let top = s.iter().copied().fold(0.0, f64::max);
    top * top
}
