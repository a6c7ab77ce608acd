//! Interpolation data and ℓ1-recovered Jacobian models.
//!
//! For probe directions `v^1..v^p` (rows of the sensing matrix `A`) and scale
//! `σ`, row `i` of the model solves
//! `A g = σ⁻¹ (F_i(x + σ v^j) − F_i(x))_j` in the basis-pursuit sense.

use rayon::prelude::*;

use crate::problems::Problem;
use crate::recovery::{BasisPursuit, RecoveryOptions, RecoveryStatus};
use crate::sensing::SensingMatrix;
use crate::{Error, Matrix, Result, Vector};

/// Residuals at the probe points `x_k + σ_k v^j`.
#[derive(Debug, Clone)]
pub struct InterpolationSet {
    pub x_k: Vector,
    pub sigma_k: f64,
    pub sensing: SensingMatrix,
    /// `F(x_k)`, supplied by the caller and not re-evaluated.
    pub f_base: Vector,
    /// Row `j` is `F(x_k + σ_k v^j)ᵀ` (`p × m`).
    pub f_shifted: Matrix,
    pub fevals_used: usize,
}

impl InterpolationSet {
    /// `σ⁻¹ y^{(i)}`: scaled differences for residual component `i`.
    pub fn scaled_differences(&self, i: usize) -> Vector {
        let base = self.f_base[i];
        self.f_shifted.column(i).map(|v| (v - base) / self.sigma_k)
    }
}

/// Evaluates the residual at the `p` probe points, once each.
pub fn build_interpolation_set(
    problem: &Problem,
    x_k: &Vector,
    f_base: &Vector,
    sigma_k: f64,
    sensing: SensingMatrix,
) -> Result<InterpolationSet> {
    if !(sigma_k > 0.0 && sigma_k.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "probe scale must be positive, got {sigma_k}"
        )));
    }
    if sensing.n() != x_k.len() {
        return Err(Error::InvalidArgument(format!(
            "sensing matrix has {} columns, point has dimension {}",
            sensing.n(),
            x_k.len()
        )));
    }
    let p = sensing.p();
    let m = f_base.len();
    let point = |j: usize| x_k + sensing.entries().row(j).transpose() * sigma_k;
    let evaluate = |j: usize| -> Result<Vector> {
        let f = problem.eval(&point(j));
        if f.len() != m || f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInterpolation { index: j });
        }
        Ok(f)
    };
    let rows: Vec<Vector> = if problem.eval_thread_safe {
        (0..p).into_par_iter().map(evaluate).collect::<Result<_>>()?
    } else {
        (0..p).map(evaluate).collect::<Result<_>>()?
    };
    let mut f_shifted = Matrix::zeros(p, m);
    for (j, f) in rows.iter().enumerate() {
        f_shifted.set_row(j, &f.transpose());
    }
    Ok(InterpolationSet {
        x_k: x_k.clone(),
        sigma_k,
        sensing,
        f_base: f_base.clone(),
        f_shifted,
        fevals_used: p,
    })
}

/// Row recovery problem used for every residual component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelMode {
    Noiseless,
    Denoising(f64),
}

/// The `m × n` model Jacobian plus per-row diagnostics.
#[derive(Debug, Clone)]
pub struct JacobianModel {
    pub j: Matrix,
    pub row_status: Vec<RecoveryStatus>,
    pub sigma_k: f64,
    /// Noise radius of the row problems (0 for basis pursuit).
    pub xi_k: f64,
    pub recovery_iterations: usize,
}

/// Recovers every Jacobian row from the interpolation data.
pub fn assemble_jacobian(set: &InterpolationSet, mode: ModelMode, opts: &RecoveryOptions) -> Result<JacobianModel> {
    let m = set.f_base.len();
    let n = set.sensing.n();
    let xi = match mode {
        ModelMode::Noiseless => 0.0,
        ModelMode::Denoising(xi) if xi > 0.0 => xi,
        ModelMode::Denoising(xi) => {
            return Err(Error::InvalidArgument(format!(
                "denoising radius must be positive, got {xi}"
            )))
        }
    };
    let solver = BasisPursuit::new(set.sensing.entries(), opts)?;
    let rows: Vec<_> = (0..m)
        .into_par_iter()
        .map(|i| {
            let b = set.scaled_differences(i);
            if xi == 0.0 {
                solver.solve(&b)
            } else {
                solver.solve_denoising(&b, xi)
            }
        })
        .collect();
    let mut j = Matrix::zeros(m, n);
    let mut row_status = Vec::with_capacity(m);
    let mut iterations = 0;
    for (i, res) in rows.into_iter().enumerate() {
        if res.status == RecoveryStatus::Infeasible {
            return Err(Error::Infeasible { row: i });
        }
        j.set_row(i, &res.g.transpose());
        row_status.push(res.status);
        iterations += res.iterations;
    }
    Ok(JacobianModel {
        j,
        row_status,
        sigma_k: set.sigma_k,
        xi_k: xi,
        recovery_iterations: iterations,
    })
}

/// Noise radius `√p·L·κ²·σ/2` that bounds the interpolation error of a
/// residual with `L`-Lipschitz gradient when every probe has norm `≤ κ`.
pub fn lipschitz_noise_radius(p: usize, lipschitz: f64, max_probe_norm: f64, sigma: f64) -> f64 {
    (p as f64).sqrt() * lipschitz * max_probe_norm * max_probe_norm * sigma / 2.0
}
