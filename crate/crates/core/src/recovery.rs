//! ℓ1 recovery of sparse gradient rows.
//!
//! Basis pursuit (`min ‖g‖₁ s.t. Ag = b`) is solved as the split linear
//! program `min 1ᵀ(u+v) s.t. A(u−v) = b, u, v ≥ 0` with a Mehrotra
//! predictor-corrector interior-point method. Its normal equations collapse to
//! the `p × p` system `A (D_u + D_v) Aᵀ`, so the cost per iteration is
//! `O(p²n)`.
//!
//! Basis pursuit denoising (`min ‖g‖₁ s.t. ‖Ag − b‖ ≤ ξ`) uses a primal
//! log-barrier interior-point method on `(g, t)` with `|g| ≤ t`.
//!
//! Both finish with a support polish: the interior iterate identifies the
//! support and signs, the restricted system is solved exactly and a dual
//! certificate is built. The polished point is kept only when the certificate
//! proves it optimal within tolerance.

use itertools::Itertools;
use nalgebra::{Cholesky, SVD};
use serde::{Deserialize, Serialize};

use crate::sensing::binomial;
use crate::{Error, Matrix, Result, Vector};

/// Solver tolerances shared by the recovery routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryOptions {
    /// Relative feasibility tolerance: `‖Ag − b‖ ≤ tol·(1 + ‖b‖)`.
    pub feasibility_tol: f64,
    /// Relative optimality tolerance on the duality gap: `gap ≤ tol·(1 + ‖g‖₁)`.
    pub optimality_tol: f64,
    /// Interior-point iteration budget per problem.
    pub max_iterations: usize,
    /// Relative residual `‖A_S g_S − b‖ / ‖b‖` under which a sparse support
    /// counts as explaining the data when choosing among tied optima.
    pub tie_break_tol: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-8,
            max_iterations: 10_000,
            tie_break_tol: 1e-3,
        }
    }
}

/// `min ‖g‖₁` subject to `‖Ag − b‖ ≤ xi` (`xi = 0`: equality constraints).
#[derive(Debug, Clone)]
pub struct RecoveryProblem {
    pub a: Matrix,
    pub b: Vector,
    pub xi: f64,
}

impl RecoveryProblem {
    pub fn new(a: Matrix, b: Vector, xi: f64) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::InvalidArgument(format!(
                "recovery problem: A has {} rows but b has length {}",
                a.nrows(),
                b.len()
            )));
        }
        if !(xi >= 0.0 && xi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise radius must be finite and >= 0, got {xi}"
            )));
        }
        if a.ncols() == 0 || a.nrows() == 0 {
            return Err(Error::InvalidArgument("recovery problem with empty A".into()));
        }
        Ok(Self { a, b, xi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub g: Vector,
    pub l1_norm: f64,
    /// `‖Ag − b‖`.
    pub residual_norm: f64,
    pub status: RecoveryStatus,
    pub iterations: usize,
    /// Certified upper bound on `‖g‖₁ − OPT` (infinite when no certificate).
    pub duality_gap: f64,
}

impl RecoveryResult {
    fn new(a: &Matrix, b: &Vector, g: Vector, status: RecoveryStatus, iterations: usize, gap: f64) -> Self {
        let residual_norm = (a * &g - b).norm();
        Self {
            l1_norm: g.lp_norm(1),
            g,
            residual_norm,
            status,
            iterations,
            duality_gap: gap,
        }
    }
}

/// Solves basis pursuit for one right-hand side.
pub fn bp_solve(prob: &RecoveryProblem, opts: &RecoveryOptions) -> Result<RecoveryResult> {
    if prob.xi != 0.0 {
        return Err(Error::InvalidArgument("bp_solve requires xi = 0".into()));
    }
    Ok(BasisPursuit::new(&prob.a, opts)?.solve(&prob.b))
}

/// Solves basis pursuit denoising for one right-hand side.
pub fn bpdn_solve(prob: &RecoveryProblem, opts: &RecoveryOptions) -> Result<RecoveryResult> {
    if prob.xi <= 0.0 {
        return Err(Error::InvalidArgument("bpdn_solve requires xi > 0".into()));
    }
    Ok(BasisPursuit::new(&prob.a, opts)?.solve_denoising(&prob.b, prob.xi))
}

/// Basis pursuit solver bound to one sensing matrix, reusable across the
/// right-hand sides of a Jacobian model build.
#[derive(Debug, Clone)]
pub struct BasisPursuit {
    a: Matrix,
    /// Full-row-rank system `reduced · g = U_rᵀ b` equivalent to `A g = b`.
    reduced: Matrix,
    /// `U_r` when `A` is row-rank-deficient.
    range_basis: Option<Matrix>,
    /// Unique solution operator when the reduced system is square.
    inverse: Option<Matrix>,
    opts: RecoveryOptions,
}

impl BasisPursuit {
    pub fn new(a: &Matrix, opts: &RecoveryOptions) -> Result<Self> {
        let (p, n) = a.shape();
        if a.is_empty() {
            return Err(Error::InvalidArgument(format!("sensing matrix is empty ({p} x {n})")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sensing matrix has non-finite entries".into()));
        }
        let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Factorization("SVD of the sensing matrix did not converge".into()))?;
        let smax = svd.singular_values.max();
        let cutoff = smax * f64::EPSILON * (p.max(n) as f64) * 16.0;
        let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
        let (reduced, range_basis) = if rank == p {
            (a.clone(), None)
        } else {
            // Sort singular triplets by value to pick the leading `rank` of them.
            let order: Vec<usize> = (0..svd.singular_values.len())
                .sorted_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]))
                .take(rank)
                .collect();
            let u = svd.u.as_ref().expect("u requested");
            let vt = svd.v_t.as_ref().expect("v_t requested");
            let mut reduced = Matrix::zeros(rank, n);
            let mut basis = Matrix::zeros(p, rank);
            for (k, &i) in order.iter().enumerate() {
                let s = svd.singular_values[i];
                reduced.row_mut(k).copy_from(&(vt.row(i) * s));
                basis.column_mut(k).copy_from(&u.column(i));
            }
            (reduced, Some(basis))
        };
        let inverse = if rank == n && rank > 0 {
            reduced.clone().try_inverse()
        } else {
            None
        };
        Ok(Self {
            a: a.clone(),
            reduced,
            range_basis,
            inverse,
            opts: *opts,
        })
    }

    pub fn rank(&self) -> usize {
        self.reduced.nrows()
    }

    /// Projects `b` onto the reduced system; `None` when `b ∉ range(A)`.
    fn reduce_rhs(&self, b: &Vector, slack: f64) -> Option<Vector> {
        match &self.range_basis {
            None => Some(b.clone()),
            Some(u) => {
                let rb = u.transpose() * b;
                let outside = (b - u * &rb).norm();
                (outside <= slack).then_some(rb)
            }
        }
    }

    fn feasibility_slack(&self, b: &Vector) -> f64 {
        self.opts.feasibility_tol * (1.0 + b.norm())
    }

    pub fn solve(&self, b: &Vector) -> RecoveryResult {
        let n = self.a.ncols();
        if b.iter().all(|&v| v == 0.0) {
            return RecoveryResult::new(&self.a, b, Vector::zeros(n), RecoveryStatus::Optimal, 0, 0.0);
        }
        let Some(rb) = self.reduce_rhs(b, self.feasibility_slack(b)) else {
            let g = least_squares(&self.a, b);
            return RecoveryResult::new(&self.a, b, g, RecoveryStatus::Infeasible, 0, f64::INFINITY);
        };
        if let Some(inv) = &self.inverse {
            let g = inv * rb;
            return RecoveryResult::new(&self.a, b, g, RecoveryStatus::Optimal, 0, 0.0);
        }
        // BP is positively homogeneous in b; solve at unit scale.
        let scale = rb.amax();
        let unit = &rb / scale;
        let mut out = mehrotra_bp(&self.reduced, &unit, &self.opts);
        let slack = self.feasibility_slack(b) / scale;
        if let Some((g, gap)) = crossover(&self.reduced, &unit, &out, slack, &self.opts) {
            out.g = g;
            out.gap = gap;
            out.status = status_from_gap(gap, &out.g, &self.opts);
        }
        let g = out.g * scale;
        let mut res = RecoveryResult::new(&self.a, b, g, out.status, out.iterations, out.gap * scale);
        let feasible = res.residual_norm <= self.feasibility_slack(b);
        if res.status == RecoveryStatus::Optimal && !feasible {
            res.status = RecoveryStatus::MaxIterations;
        }
        res
    }

    pub fn solve_denoising(&self, b: &Vector, xi: f64) -> RecoveryResult {
        let n = self.a.ncols();
        let bnorm = b.norm();
        if bnorm <= xi {
            return RecoveryResult::new(&self.a, b, Vector::zeros(n), RecoveryStatus::Optimal, 0, 0.0);
        }
        let g_ls = least_squares(&self.a, b);
        let r_ls = (&self.a * &g_ls - b).norm();
        if r_ls >= xi {
            // The constraint set is at most the least-squares affine set.
            let status = if r_ls <= xi * (1.0 + self.opts.feasibility_tol) {
                RecoveryStatus::Optimal
            } else {
                RecoveryStatus::Infeasible
            };
            let gap = if status == RecoveryStatus::Optimal {
                0.0
            } else {
                f64::INFINITY
            };
            return RecoveryResult::new(&self.a, b, g_ls, status, 0, gap);
        }
        let scale = b.amax();
        let out = barrier_bpdn(&self.a, &(b / scale), xi / scale, &(&g_ls / scale), &self.opts);
        let g = out.g * scale;
        let mut res = RecoveryResult::new(&self.a, b, g, out.status, out.iterations, out.gap * scale);
        if res.residual_norm > xi * (1.0 + self.opts.feasibility_tol) {
            res.status = RecoveryStatus::MaxIterations;
        }
        res
    }
}

/// Minimum-norm least-squares solution of `A g ≈ b`.
pub(crate) fn least_squares(a: &Matrix, b: &Vector) -> Vector {
    if a.is_empty() || a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Vector::zeros(a.ncols());
    }
    let Some(svd) = SVD::try_new(a.clone(), true, true, f64::EPSILON, 10_000) else {
        return Vector::zeros(a.ncols());
    };
    let eps = svd.singular_values.max() * f64::EPSILON * (a.nrows().max(a.ncols()) as f64) * 16.0;
    svd.solve(b, eps).unwrap_or_else(|_| Vector::zeros(a.ncols()))
}

struct InteriorOutcome {
    g: Vector,
    /// Dual-feasible certificate, when one was produced.
    y: Option<Vector>,
    status: RecoveryStatus,
    iterations: usize,
    gap: f64,
}

struct Polished {
    g: Vector,
    gap: f64,
    y: Vector,
}

fn max_step(x: &Vector, dx: &Vector) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&xi, &d)| -xi / d)
        .fold(1.0, f64::min)
}

/// Factor of the normal matrix `A D Aᵀ`, taken as the triangular factor of a
/// QR decomposition of `(A D^½)ᵀ` so the condition number is not squared.
struct NormalFactor {
    b: Matrix,
    r: Matrix,
}

impl NormalFactor {
    fn new(a: &Matrix, d: &Vector) -> Option<Self> {
        let mut b = a.clone();
        for (j, mut col) in b.column_iter_mut().enumerate() {
            col *= d[j].sqrt();
        }
        let mut r = b.transpose().qr().r();
        let p = r.nrows();
        let scale = r.diagonal().amax();
        if !(scale > 0.0 && scale.is_finite()) {
            return None;
        }
        // Guard against exact rank loss by lifting negligible pivots.
        for i in 0..p {
            if r[(i, i)].abs() < 1e-14 * scale {
                r[(i, i)] = 1e-14 * scale;
            }
        }
        Some(Self { b, r })
    }

    fn apply_inverse(&self, rhs: &Vector) -> Vector {
        let z = self
            .r
            .tr_solve_upper_triangular(rhs)
            .unwrap_or_else(|| Vector::zeros(rhs.len()));
        self.r.solve_upper_triangular(&z).unwrap_or(z)
    }

    /// Solves `B Bᵀ x = rhs` with one round of iterative refinement.
    fn solve(&self, rhs: &Vector) -> Vector {
        let mut x = self.apply_inverse(rhs);
        let resid = rhs - &self.b * (self.b.transpose() * &x);
        x += self.apply_inverse(&resid);
        x
    }
}

/// Mehrotra predictor-corrector on the split LP of basis pursuit.
/// `a` must have full row rank.
fn mehrotra_bp(a: &Matrix, b: &Vector, opts: &RecoveryOptions) -> InteriorOutcome {
    let (p, n) = a.shape();
    let at = a.transpose();
    let ones = Vector::from_element(n, 1.0);
    let ipm_tol = 1e-2 * opts.feasibility_tol.min(opts.optimality_tol);

    // Mehrotra starting point: least-norm primal, y = 0, s = 1, then shifted.
    let g0 = least_squares(a, b);
    let mut u = g0.map(|v| 0.5 * v);
    let mut v = g0.map(|v| -0.5 * v);
    let mut y = Vector::zeros(p);
    let mut su = ones.clone();
    let mut sv = ones.clone();
    let shift_x = (-1.5 * u.min().min(v.min())).max(0.0);
    u.add_scalar_mut(shift_x);
    v.add_scalar_mut(shift_x);
    let xs = u.dot(&su) + v.dot(&sv);
    let dx = 0.5 * xs / (su.sum() + sv.sum());
    let ds = 0.5 * xs / (u.sum() + v.sum());
    u.add_scalar_mut(dx);
    v.add_scalar_mut(dx);
    su.add_scalar_mut(ds);
    sv.add_scalar_mut(ds);

    let bnorm = b.norm();
    let mut best: Option<Polished> = None;
    // Interior iterate with the smallest worst-case residual seen so far.
    let mut best_iterate = (f64::INFINITY, u.clone(), v.clone(), y.clone(), su.clone(), sv.clone());
    let mut since_best = 0;
    let mut iterations = 0;
    let eta = 0.995;

    while iterations < opts.max_iterations {
        let g = &u - &v;
        let aty = &at * &y;
        let rp = b - a * &g;
        let rdu = ones.clone() - &aty - &su;
        let rdv = ones.clone() + &aty - &sv;
        let primal = u.sum() + v.sum();
        let dual = b.dot(&y);
        let mu = (u.dot(&su) + v.dot(&sv)) / (2 * n) as f64;
        let rel_gap = (primal - dual).abs() / (1.0 + primal.abs());
        let rel_p = rp.norm() / (1.0 + bnorm);
        let rel_d = (rdu.norm() + rdv.norm()) / (1.0 + (2.0 * n as f64).sqrt());
        let merit = rel_gap.max(rel_p).max(rel_d);
        if merit < best_iterate.0 {
            best_iterate = (merit, u.clone(), v.clone(), y.clone(), su.clone(), sv.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }

        if rel_gap < 1e-3 && rel_p < 1e-6 {
            if let Some(pol) = polish_bp(a, b, &u, &v, &su, &sv, &y, opts) {
                let certified = pol.gap <= opts.optimality_tol * (1.0 + pol.g.lp_norm(1));
                let improves = best.as_ref().is_none_or(|b0| pol.gap < b0.gap);
                if improves {
                    best = Some(pol);
                }
                if certified {
                    let pol = best.take().expect("just stored");
                    return InteriorOutcome {
                        status: RecoveryStatus::Optimal,
                        iterations,
                        gap: pol.gap,
                        g: pol.g,
                        y: Some(pol.y),
                    };
                }
            }
        }
        if merit <= ipm_tol {
            break;
        }
        // Rounding dominates once the complementarity is this small, and the
        // iterates drift if pushed further.
        if mu <= 1e-3 * ipm_tol * (1.0 + primal) || since_best >= 8 {
            break;
        }
        iterations += 1;

        let d = u.component_div(&su) + v.component_div(&sv);
        let Some(chol) = NormalFactor::new(a, &d) else {
            break;
        };
        let du_scale = u.component_div(&su);
        let dv_scale = v.component_div(&sv);
        let solve = |rcu: &Vector, rcv: &Vector| {
            let w = rcu.component_div(&su) - du_scale.component_mul(&rdu) - rcv.component_div(&sv)
                + dv_scale.component_mul(&rdv);
            let dy = chol.solve(&(&rp - a * &w));
            let atdy = &at * &dy;
            let dsu = &rdu - &atdy;
            let dsv = &rdv + &atdy;
            let du = (rcu - u.component_mul(&dsu)).component_div(&su);
            let dv = (rcv - v.component_mul(&dsv)).component_div(&sv);
            (du, dv, dy, dsu, dsv)
        };

        // Predictor.
        let rcu = -u.component_mul(&su);
        let rcv = -v.component_mul(&sv);
        let (du, dv, _, dsu, dsv) = solve(&rcu, &rcv);
        let ap = max_step(&u, &du).min(max_step(&v, &dv));
        let ad = max_step(&su, &dsu).min(max_step(&sv, &dsv));
        let mu_aff =
            ((&u + &du * ap).dot(&(&su + &dsu * ad)) + (&v + &dv * ap).dot(&(&sv + &dsv * ad))) / (2 * n) as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // Corrector.
        let rcu = rcu.add_scalar(sigma * mu) - du.component_mul(&dsu);
        let rcv = rcv.add_scalar(sigma * mu) - dv.component_mul(&dsv);
        let (du, dv, dy, dsu, dsv) = solve(&rcu, &rcv);
        let ap = (eta * max_step(&u, &du).min(max_step(&v, &dv))).min(1.0);
        let ad = (eta * max_step(&su, &dsu).min(max_step(&sv, &dsv))).min(1.0);
        if ap < 1e-14 && ad < 1e-14 {
            break;
        }
        u += du * ap;
        v += dv * ap;
        y += dy * ad;
        su += dsu * ad;
        sv += dsv * ad;
    }

    let (_, u, v, y, su, sv) = best_iterate;
    if let Some(pol) = polish_bp(a, b, &u, &v, &su, &sv, &y, opts) {
        if best.as_ref().is_none_or(|b0| pol.gap < b0.gap) {
            best = Some(pol);
        }
    }
    let g = &u - &v;
    let interior_gap = interior_bp_gap(a, b, &g, &y);
    match best {
        Some(pol) if pol.gap <= interior_gap => InteriorOutcome {
            status: status_from_gap(pol.gap, &pol.g, opts),
            gap: pol.gap,
            g: pol.g,
            y: Some(pol.y),
            iterations,
        },
        _ => InteriorOutcome {
            status: status_from_gap(interior_gap, &g, opts),
            gap: interior_gap,
            g,
            y: Some(dual_feasible(a, &y)),
            iterations,
        },
    }
}

/// Budget of restricted least-squares fits spent on exhaustive tie-breaking
/// before falling back to greedy selection.
const TIE_BREAK_FITS: u128 = 20_000;

/// Crossover from the approximate interior solution to an exact optimum,
/// which also breaks ties among optimal points.
///
/// The interior method converges to the centre of the optimal face. Unless
/// that centre is already a vertex, candidates supported on the dual-active
/// columns with the signs the dual prescribes are tried in turn: the sparsest
/// support explaining `b` up to `opts.tie_break_tol`, completed to exact
/// feasibility, then a nonnegative least-squares fit over all active columns.
/// A candidate is kept if it is feasible and certified at least as tightly as
/// the interior solution. Returns it with its gap.
fn crossover(
    a: &Matrix,
    b: &Vector,
    out: &InteriorOutcome,
    slack: f64,
    opts: &RecoveryOptions,
) -> Option<(Vector, f64)> {
    let y = out.y.as_ref()?;
    let g = &out.g;
    let n = a.ncols();
    let gmax = g.amax();
    if gmax == 0.0 {
        return None;
    }
    let support: Vec<usize> = (0..n).filter(|&j| g[j].abs() > 1e-9 * gmax).collect();
    let is_vertex =
        support.len() <= a.nrows() && a.select_columns(&support).rank(1e-10 * gmax.max(1.0)) == support.len();
    let feasible = (a * g - b).norm() <= slack;
    if is_vertex && feasible && out.status == RecoveryStatus::Optimal {
        return None;
    }
    let aty = a.transpose() * y;
    let dual_value = b.dot(y);
    let accept = |cand: &Vector, pinned: &[usize], sign: &Vector| -> Option<f64> {
        let l1 = cand.lp_norm(1);
        let mut gap = (l1 - dual_value).max(0.0);
        let cand_support: Vec<usize> = (0..n).filter(|&j| cand[j] != 0.0).collect();
        if !cand_support.is_empty() && cand_support.len() <= a.nrows() {
            let z = Vector::from_iterator(cand_support.len(), cand_support.iter().map(|&j| cand[j].signum()));
            let y_s = corrected_dual(&a.select_columns(&cand_support), &z, y);
            gap = gap.min(interior_bp_gap(a, b, cand, &y_s));
        }
        // Tied columns sit exactly on the dual bound; pin all of them.
        let z = Vector::from_iterator(pinned.len(), pinned.iter().map(|&j| sign[j]));
        let y_t = corrected_dual(&a.select_columns(pinned), &z, y);
        gap = gap.min(interior_bp_gap(a, b, cand, &y_t));
        let certified = gap <= (opts.optimality_tol * (1.0 + l1)).max(out.gap);
        ((a * cand - b).norm() <= slack && certified).then_some(gap)
    };

    // Without ties the optimum is the basic solution on the columns the dual
    // points at; try that before any search.
    let rank = a.nrows();
    let pinned: Vec<usize> = (0..n).filter(|&j| aty[j].abs() >= 1.0 - 1e-6).collect();
    let near = (0..n).filter(|&j| aty[j].abs() >= 1.0 - 1e-3).count();
    if pinned.len() <= rank && near == pinned.len() {
        let sign = Vector::from_fn(n, |j, _| {
            if aty[j].abs() >= 1.0 - 1e-6 {
                aty[j].signum()
            } else {
                g[j].signum()
            }
        });
        let mut by_size: Vec<usize> = (0..n).collect();
        by_size.sort_by(|&i, &j| g[j].abs().total_cmp(&g[i].abs()).then(i.cmp(&j)));
        let mut top: Vec<usize> = by_size[..rank.min(n)].to_vec();
        top.sort_unstable();
        for cols in [pinned.clone(), top] {
            if cols.is_empty() {
                continue;
            }
            let g_s = least_squares(&a.select_columns(&cols), b);
            let mut cand = Vector::zeros(n);
            for (&j, &v) in cols.iter().zip(g_s.iter()) {
                cand[j] = v;
            }
            if let Some(gap) = accept(&cand, &pinned, &sign) {
                return Some((cand, gap));
            }
        }
    }

    let mut tried: Option<Vec<usize>> = None;
    for tol in [1e-6, 1e-4] {
        let dual_active = |j: usize| aty[j].abs() >= 1.0 - tol;
        let active: Vec<usize> = (0..n).filter(|&j| dual_active(j) || support.contains(&j)).collect();
        if tried.as_ref() == Some(&active) {
            continue;
        }
        tried = Some(active.clone());
        let pinned: Vec<usize> = (0..n).filter(|&j| dual_active(j)).collect();
        let sign = Vector::from_fn(n, |j, _| if dual_active(j) { aty[j].signum() } else { g[j].signum() });

        let threshold = slack.max(opts.tie_break_tol * b.norm());
        let max_size = support.len().min(a.nrows());
        if let Some((cols, g_s)) = sparse_fit(a, b, &active, &sign, threshold, max_size) {
            let cand = complete(a, b, g, &cols, &g_s, &active, &sign, slack);
            if let Some(gap) = accept(&cand, &pinned, &sign) {
                return Some((cand, gap));
            }
        }
        let signed = Matrix::from_fn(a.nrows(), active.len(), |i, k| a[(i, active[k])] * sign[active[k]]);
        let z = nnls(&signed, b);
        let mut cand = Vector::zeros(n);
        for (k, &j) in active.iter().enumerate() {
            cand[j] = z[k] * sign[j];
        }
        if let Some(gap) = accept(&cand, &pinned, &sign) {
            return Some((cand, gap));
        }
    }
    None
}

/// Extends the sparse fit `g_s` on `cols` to an exactly feasible point: a
/// minimum-norm correction over the active columns (over all columns if those
/// cannot absorb the residual), pulled back toward the interior solution `g`
/// if it breaks a prescribed sign.
#[allow(clippy::too_many_arguments)]
fn complete(
    a: &Matrix,
    b: &Vector,
    g: &Vector,
    cols: &[usize],
    g_s: &Vector,
    active: &[usize],
    sign: &Vector,
    slack: f64,
) -> Vector {
    let n = a.ncols();
    let mut cand = Vector::zeros(n);
    for (&j, &v) in cols.iter().zip(g_s.iter()) {
        cand[j] = v;
    }
    let a_t = a.select_columns(active);
    let corr = least_squares(&a_t, &(b - a * &cand));
    for (k, &j) in active.iter().enumerate() {
        cand[j] += corr[k];
    }
    let r = b - a * &cand;
    if r.norm() > 0.5 * slack {
        cand += least_squares(a, &r);
    }
    if active.iter().all(|&j| cand[j] * sign[j] >= 0.0) {
        return cand;
    }
    let mut centre = Vector::zeros(n);
    for &j in active {
        if g[j] * sign[j] > 0.0 {
            centre[j] = g[j];
        }
    }
    let dir = &cand - &centre;
    let mut t: f64 = 1.0;
    for &j in active {
        let (c, d) = (centre[j] * sign[j], dir[j] * sign[j]);
        if d < 0.0 {
            t = t.min(c / -d);
        }
    }
    let mut out = &centre + dir * t;
    for &j in active {
        if out[j] * sign[j] < 0.0 {
            out[j] = 0.0;
        }
    }
    out
}

/// `y + A_S (A_SᵀA_S)⁻¹ (z − A_Sᵀ y)`: the closest `y` with `A_Sᵀ y = z`.
fn corrected_dual(a_s: &Matrix, z: &Vector, y: &Vector) -> Vector {
    let ats_y = a_s.transpose() * y;
    y + least_squares(&a_s.transpose(), &(z - ats_y))
}

/// Lawson-Hanson nonnegative least squares: `min ‖M z − b‖` over `z ≥ 0`.
fn nnls(m: &Matrix, b: &Vector) -> Vector {
    let k = m.ncols();
    let mut z = Vector::zeros(k);
    let mut passive = vec![false; k];
    let tol = 1e-12 * m.amax().max(1.0) * b.norm().max(1.0);
    for _ in 0..3 * k.max(1) {
        let w = m.transpose() * (b - m * &z);
        let Some(j) = (0..k)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]))
        else {
            break;
        };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
            let s = least_squares(&m.select_columns(&idx), b);
            if s.iter().all(|&v| v > 0.0) {
                for (t, &j) in idx.iter().enumerate() {
                    z[j] = s[t];
                }
                break;
            }
            // Step toward `s` until the first passive coordinate hits zero.
            let mut alpha: f64 = 1.0;
            for (t, &j) in idx.iter().enumerate() {
                if s[t] <= 0.0 {
                    alpha = alpha.min(z[j] / (z[j] - s[t]));
                }
            }
            for (t, &j) in idx.iter().enumerate() {
                z[j] += alpha * (s[t] - z[j]);
                if z[j] <= 1e-15 {
                    z[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    z
}

/// Smallest sign-consistent support among `active` (size `< max_size`) whose
/// least-squares fit has residual `≤ threshold`. Exhaustive while the fit
/// budget allows, then greedy forward selection.
fn sparse_fit(
    a: &Matrix,
    b: &Vector,
    active: &[usize],
    sign: &Vector,
    threshold: f64,
    max_size: usize,
) -> Option<(Vec<usize>, Vector)> {
    // Fits go through the Gram matrix of the active columns; the residual
    // follows from `‖b‖² − cᵀg` at the solution of `G g = c`.
    let a_act = a.select_columns(active);
    let gram = a_act.transpose() * &a_act;
    let atb = a_act.transpose() * b;
    let bb = b.norm_squared();
    let mut work = vec![0.0; max_size * max_size];
    let mut sol = vec![0.0; max_size];
    let mut fit = |idx: &[usize]| -> Option<f64> {
        let k = idx.len();
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                work[r * k + c] = gram[(i, j)];
            }
            sol[r] = atb[i];
        }
        if !cholesky_solve_in_place(&mut work[..k * k], &mut sol[..k], k) {
            return None;
        }
        if idx.iter().zip(&sol[..k]).any(|(&i, &v)| v * sign[active[i]] <= 0.0) {
            return None;
        }
        let explained: f64 = idx.iter().zip(&sol[..k]).map(|(&i, &v)| v * atb[i]).sum();
        Some((bb - explained).max(0.0).sqrt())
    };
    let exact = |idx: &[usize]| -> Option<(Vec<usize>, Vector)> {
        let cols: Vec<usize> = idx.iter().map(|&i| active[i]).collect();
        let a_s = a.select_columns(&cols);
        let g_s = Cholesky::new(a_s.transpose() * &a_s)?.solve(&(a_s.transpose() * b));
        Some((cols, g_s))
    };

    let mut budget = TIE_BREAK_FITS;
    let mut k = 1;
    while k < max_size {
        let count = binomial(active.len(), k);
        if count > budget {
            break;
        }
        budget -= count;
        let mut best: Option<(f64, Vec<usize>)> = None;
        for idx in (0..active.len()).combinations(k) {
            if let Some(r) = fit(&idx) {
                if r <= threshold && best.as_ref().is_none_or(|(r0, _)| r < *r0) {
                    best = Some((r, idx));
                }
            }
        }
        if let Some((_, idx)) = best {
            return exact(&idx);
        }
        k += 1;
    }

    // Greedy: add the column best aligned (with its sign) to the residual.
    let mut idx: Vec<usize> = Vec::new();
    let mut resid = b.clone();
    while idx.len() + 1 < max_size {
        let corr = a_act.transpose() * &resid;
        let next = (0..active.len())
            .filter(|i| !idx.contains(i))
            .max_by(|&i, &j| (corr[i] * sign[active[i]]).total_cmp(&(corr[j] * sign[active[j]])))?;
        if corr[next] * sign[active[next]] <= 0.0 {
            return None;
        }
        idx.push(next);
        idx.sort_unstable();
        fit(&idx)?;
        let (cols, g_s) = exact(&idx)?;
        if cols.iter().zip(g_s.iter()).any(|(&j, &v)| v * sign[j] <= 0.0) {
            return None;
        }
        resid = b - a.select_columns(&cols) * &g_s;
        if resid.norm() <= threshold {
            return Some((cols, g_s));
        }
    }
    None
}

/// Solves `M x = r` for symmetric positive definite `M` (row-major `k × k`),
/// overwriting `m` with its Cholesky factor and `r` with `x`.
fn cholesky_solve_in_place(m: &mut [f64], r: &mut [f64], k: usize) -> bool {
    for j in 0..k {
        let mut d = m[j * k + j];
        for t in 0..j {
            d -= m[j * k + t] * m[j * k + t];
        }
        if !(d > 1e-14 * m[j * k + j].abs().max(f64::MIN_POSITIVE)) {
            return false;
        }
        let d = d.sqrt();
        m[j * k + j] = d;
        for i in j + 1..k {
            let mut v = m[i * k + j];
            for t in 0..j {
                v -= m[i * k + t] * m[j * k + t];
            }
            m[i * k + j] = v / d;
        }
    }
    for i in 0..k {
        let mut v = r[i];
        for t in 0..i {
            v -= m[i * k + t] * r[t];
        }
        r[i] = v / m[i * k + i];
    }
    for i in (0..k).rev() {
        let mut v = r[i];
        for t in i + 1..k {
            v -= m[t * k + i] * r[t];
        }
        r[i] = v / m[i * k + i];
    }
    true
}

fn status_from_gap(gap: f64, g: &Vector, opts: &RecoveryOptions) -> RecoveryStatus {
    if gap <= opts.optimality_tol * (1.0 + g.lp_norm(1)) {
        RecoveryStatus::Optimal
    } else {
        RecoveryStatus::MaxIterations
    }
}

/// `y` scaled into the dual feasible set `‖Aᵀy‖∞ ≤ 1`.
fn dual_feasible(a: &Matrix, y: &Vector) -> Vector {
    let inf = (a.transpose() * y).amax();
    if inf > 1.0 {
        y / inf
    } else {
        y.clone()
    }
}

/// Weak-duality gap of `g` against the scaled `y`.
fn interior_bp_gap(a: &Matrix, b: &Vector, g: &Vector, y: &Vector) -> f64 {
    (g.lp_norm(1) - b.dot(&dual_feasible(a, y))).max(0.0)
}

/// Restricts to the support suggested by the interior iterate and solves the
/// restricted equations exactly, then certifies with a corrected dual vector.
#[allow(clippy::too_many_arguments)]
fn polish_bp(
    a: &Matrix,
    b: &Vector,
    u: &Vector,
    v: &Vector,
    su: &Vector,
    sv: &Vector,
    y: &Vector,
    opts: &RecoveryOptions,
) -> Option<Polished> {
    let support: Vec<usize> = (0..a.ncols()).filter(|&j| u[j] > su[j] || v[j] > sv[j]).collect();
    if support.len() > a.nrows() {
        return None;
    }
    let signs = Vector::from_iterator(support.len(), support.iter().map(|&j| (u[j] - v[j]).signum()));
    let a_s = a.select_columns(&support);
    let g_s = if support.is_empty() {
        Vector::zeros(0)
    } else {
        let ls = least_squares(&a_s, b);
        // Sign pattern must match the interior iterate.
        if ls.iter().zip(signs.iter()).any(|(&gv, &s)| gv * s <= 0.0) {
            return None;
        }
        ls
    };
    let mut g = Vector::zeros(a.ncols());
    for (k, &j) in support.iter().enumerate() {
        g[j] = g_s[k];
    }
    let resid = (a * &g - b).norm();
    if resid > 1e-2 * opts.feasibility_tol * (1.0 + b.norm()) {
        return None;
    }
    let y_fix = if support.is_empty() {
        y.clone()
    } else {
        corrected_dual(&a_s, &signs, y)
    };
    let gap = interior_bp_gap(a, b, &g, &y_fix);
    Some(Polished {
        g,
        gap,
        y: dual_feasible(a, &y_fix),
    })
}

/// Log-barrier interior-point method for basis pursuit denoising on `(g, t)`.
fn barrier_bpdn(a: &Matrix, b: &Vector, xi: f64, g0: &Vector, opts: &RecoveryOptions) -> InteriorOutcome {
    let n = a.ncols();
    let ata = a.transpose() * a;
    let mut g = g0.clone();
    let mut t = g.map(|v| 0.95 * v.abs()).add_scalar(0.10 * g.amax().max(1e-3));
    let mut tau = ((2 * n + 1) as f64 / g.lp_norm(1).max(1e-3)).max(1.0);
    let mu_growth = 10.0;
    let mut iterations = 0;
    let mut best: Option<Polished> = None;

    let barrier_value = |g: &Vector, t: &Vector, tau: f64| -> f64 {
        let r = a * g - b;
        let fe = 0.5 * (r.norm_squared() - xi * xi);
        let mut val = tau * t.sum() - (-fe).ln();
        for j in 0..n {
            val -= (t[j] - g[j]).ln() + (t[j] + g[j]).ln();
        }
        val
    };

    'outer: loop {
        for _newton in 0..60 {
            if iterations >= opts.max_iterations {
                break 'outer;
            }
            iterations += 1;
            let r = a * &g - b;
            let fe = 0.5 * (r.norm_squared() - xi * xi);
            let atr = a.transpose() * &r;
            let q1 = (&t - &g).map(|v| 1.0 / v);
            let q2 = (&t + &g).map(|v| 1.0 / v);
            let grad_g = &q1 - &q2 + &atr / (-fe);
            let grad_t = (&q1 + &q2).map(|v| tau - v);
            let sig1 = q1.component_mul(&q1) + q2.component_mul(&q2);
            let sig2 = q2.component_mul(&q2) - q1.component_mul(&q1);
            // H_gg − H_gt H_tt⁻¹ H_tg, with H_tt = diag(sig1), H_gt = diag(sig2).
            let mut h = &ata / (-fe) + (&atr * atr.transpose()) / (fe * fe);
            for j in 0..n {
                h[(j, j)] += sig1[j] - sig2[j] * sig2[j] / sig1[j];
            }
            let rhs = -&grad_g + sig2.component_mul(&grad_t).component_div(&sig1);
            let Some(chol) = Cholesky::new(h) else {
                break 'outer;
            };
            let dg = chol.solve(&rhs);
            let dt = (-&grad_t - sig2.component_mul(&dg)).component_div(&sig1);
            let decrement = -(grad_g.dot(&dg) + grad_t.dot(&dt));
            if decrement / 2.0 < 1e-12 {
                break;
            }
            // Largest step keeping |g| < t and ‖Ag − b‖ < xi.
            let mut step: f64 = 1.0;
            for j in 0..n {
                let d1 = dt[j] - dg[j];
                if d1 < 0.0 {
                    step = step.min(-(t[j] - g[j]) / d1);
                }
                let d2 = dt[j] + dg[j];
                if d2 < 0.0 {
                    step = step.min(-(t[j] + g[j]) / d2);
                }
            }
            let adg = a * &dg;
            let (qa, qb, qc) = (adg.norm_squared(), 2.0 * r.dot(&adg), r.norm_squared() - xi * xi);
            if qa > 0.0 {
                let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
                let root = (-qb + disc.sqrt()) / (2.0 * qa);
                step = step.min(root);
            }
            step *= 0.99;
            let f0 = barrier_value(&g, &t, tau);
            let slope = grad_g.dot(&dg) + grad_t.dot(&dt);
            let mut accepted = false;
            for _ in 0..60 {
                let gn = &g + &dg * step;
                let tn = &t + &dt * step;
                let fnew = barrier_value(&gn, &tn, tau);
                if fnew.is_finite() && fnew <= f0 + 0.01 * step * slope {
                    g = gn;
                    t = tn;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if let Some(pol) = polish_bpdn(a, b, xi, &g, opts) {
            let certified = pol.gap <= opts.optimality_tol * (1.0 + pol.g.lp_norm(1));
            if best.as_ref().is_none_or(|b0| pol.gap < b0.gap) {
                best = Some(pol);
            }
            if certified {
                break;
            }
        }
        let barrier_gap = (2 * n + 1) as f64 / tau;
        if barrier_gap <= 1e-2 * opts.optimality_tol * (1.0 + g.lp_norm(1)) {
            break;
        }
        tau *= mu_growth;
    }

    let barrier_gap = (2 * n + 1) as f64 / tau;
    match best {
        Some(pol) if pol.gap <= barrier_gap => InteriorOutcome {
            status: status_from_gap(pol.gap, &pol.g, opts),
            gap: pol.gap,
            g: pol.g,
            y: Some(pol.y),
            iterations,
        },
        _ => InteriorOutcome {
            status: status_from_gap(barrier_gap, &g, opts),
            gap: barrier_gap,
            g,
            y: None,
            iterations,
        },
    }
}

/// Closed-form optimum of `min zᵀg_S s.t. ‖A_S g_S − b‖ ≤ xi` for the support
/// and signs read off the barrier iterate, with its exact dual certificate.
fn polish_bpdn(a: &Matrix, b: &Vector, xi: f64, g_int: &Vector, opts: &RecoveryOptions) -> Option<Polished> {
    let scale = g_int.amax();
    if scale == 0.0 {
        return None;
    }
    for rel in [1e-3, 1e-5, 1e-7, 1e-9] {
        let support: Vec<usize> = (0..a.ncols()).filter(|&j| g_int[j].abs() > rel * scale).collect();
        if support.is_empty() || support.len() > a.nrows() {
            continue;
        }
        let z = Vector::from_iterator(support.len(), support.iter().map(|&j| g_int[j].signum()));
        let a_s = a.select_columns(&support);
        let gram = a_s.transpose() * &a_s;
        let Some(chol) = Cholesky::new(gram) else {
            continue;
        };
        let g_ls = chol.solve(&(a_s.transpose() * b));
        let r_ls2 = (&a_s * &g_ls - b).norm_squared();
        let ginv_z = chol.solve(&z);
        let denom = z.dot(&ginv_z);
        if r_ls2 >= xi * xi || denom <= 0.0 {
            continue;
        }
        let step = ((xi * xi - r_ls2) / denom).sqrt();
        let g_s = &g_ls - &ginv_z * step;
        if g_s.iter().zip(z.iter()).any(|(&gv, &s)| gv * s <= 0.0) {
            continue;
        }
        let mut g = Vector::zeros(a.ncols());
        for (k, &j) in support.iter().enumerate() {
            g[j] = g_s[k];
        }
        let r = b - a * &g;
        if r.norm() > xi * (1.0 + 1e-2 * opts.feasibility_tol) {
            continue;
        }
        let y = &r / step;
        let inf = (a.transpose() * &y).amax();
        let yf = if inf > 1.0 { &y / inf } else { y };
        let dual = b.dot(&yf) - xi * yf.norm();
        let gap = (g.lp_norm(1) - dual).max(0.0);
        return Some(Polished { g, gap, y: yf });
    }
    None
}

/// Enumerates every support of size `≤ s_max`, fits least squares on it and
/// returns the feasible fit of least ℓ1 norm. Test oracle.
pub fn brute_force_oracle(
    prob: &RecoveryProblem,
    s_max: usize,
    cap: u128,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    let n = prob.a.ncols();
    let s_max = s_max.min(n);
    let subsets: u128 = (0..=s_max).map(|k| binomial(n, k)).sum();
    if subsets > cap {
        return Err(Error::EnumerationCap { subsets, cap });
    }
    let limit = if prob.xi == 0.0 {
        opts.feasibility_tol * (1.0 + prob.b.norm())
    } else {
        prob.xi * (1.0 + opts.feasibility_tol)
    };
    let mut best: Option<(f64, Vector, f64)> = None;
    let mut fits = 0usize;
    for k in 0..=s_max {
        for support in (0..n).combinations(k) {
            fits += 1;
            let mut g = Vector::zeros(n);
            if k > 0 {
                let a_s = prob.a.select_columns(&support);
                let g_s = least_squares(&a_s, &prob.b);
                for (i, &j) in support.iter().enumerate() {
                    g[j] = g_s[i];
                }
            }
            let resid = (&prob.a * &g - &prob.b).norm();
            if resid <= limit {
                let l1 = g.lp_norm(1);
                if best.as_ref().is_none_or(|(b1, _, _)| l1 < *b1) {
                    best = Some((l1, g, resid));
                }
            }
        }
    }
    Ok(match best {
        Some((_, g, _)) => RecoveryResult::new(&prob.a, &prob.b, g, RecoveryStatus::Optimal, fits, f64::NAN),
        None => RecoveryResult::new(
            &prob.a,
            &prob.b,
            Vector::zeros(n),
            RecoveryStatus::Infeasible,
            fits,
            f64::INFINITY,
        ),
    })
}
