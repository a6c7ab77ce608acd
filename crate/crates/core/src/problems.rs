//! Test problems and the problem registry.
//!
//! Four built-in families with sparse Jacobians, each parametrised by the
//! dimension `n`: the Broyden tridiagonal function, the tridimensional valley
//! function, the extended Freudenstein-Roth function and a block
//! trigonometric system.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use crate::{Error, Matrix, Result, Vector};

pub type ResidualFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

/// Forward-difference step used by the registration check.
pub const FD_CHECK_STEP: f64 = 1.5e-8;
/// Tolerance of the registration check, relative to `max(1, |J_ij|)`.
pub const FD_CHECK_TOL: f64 = 1e-5;

/// Black-box residual map `F: Rⁿ → Rᵐ` with its metadata.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub n: usize,
    pub m: usize,
    residual: ResidualFn,
    pub initial_point: Vector,
    jacobian: Option<JacobianFn>,
    /// Upper bound on the nonzeros of any Jacobian row.
    pub row_sparsity: Option<usize>,
    /// Residual evaluations may run concurrently.
    pub eval_thread_safe: bool,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("row_sparsity", &self.row_sparsity)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl Problem {
    pub fn new<F>(name: impl Into<String>, m: usize, initial_point: Vector, residual: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            n: initial_point.len(),
            m,
            residual: Arc::new(residual),
            initial_point,
            jacobian: None,
            row_sparsity: None,
            eval_thread_safe: true,
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn with_row_sparsity(mut self, s: usize) -> Self {
        self.row_sparsity = Some(s);
        self
    }

    pub fn with_thread_safety(mut self, safe: bool) -> Self {
        self.eval_thread_safe = safe;
        self
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        (self.residual)(x)
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn jacobian(&self, x: &Vector) -> Option<Matrix> {
        self.jacobian.as_ref().map(|j| j(x))
    }

    /// `½‖F(x)‖²`.
    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * self.eval(x).norm_squared()
    }

    /// Checks the invariants enforced at registration: finite residual at the
    /// initial point, analytic Jacobian agreeing with forward differences and
    /// row supports within the declared sparsity.
    pub fn validate(&self) -> Result<()> {
        let reject = |reason: String| {
            Err(Error::InvalidProblem {
                name: self.name.clone(),
                reason,
            })
        };
        if self.n == 0 || self.m == 0 {
            return reject("dimensions must be positive".into());
        }
        if self.initial_point.iter().any(|v| !v.is_finite()) {
            return reject("initial point is not finite".into());
        }
        let f0 = self.eval(&self.initial_point);
        if f0.len() != self.m {
            return reject(format!("residual has length {} but m = {}", f0.len(), self.m));
        }
        if f0.iter().any(|v| !v.is_finite()) {
            return reject("residual at the initial point is not finite".into());
        }
        if let Some(j) = self.jacobian(&self.initial_point) {
            if j.shape() != (self.m, self.n) {
                return reject(format!("analytic Jacobian has shape {:?}", j.shape()));
            }
            let fd = forward_difference_jacobian(self, &self.initial_point, &f0, FD_CHECK_STEP);
            let worst = fd
                .iter()
                .zip(j.iter())
                .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                .fold(0.0, f64::max);
            if !(worst <= FD_CHECK_TOL) {
                return reject(format!(
                    "analytic Jacobian disagrees with forward differences (scaled error {worst:.3e})"
                ));
            }
            if let Some(s) = self.row_sparsity {
                for (i, row) in j.row_iter().enumerate() {
                    let nnz = row.iter().filter(|v| **v != 0.0).count();
                    if nnz > s {
                        return reject(format!("row {i} has {nnz} nonzeros, declared at most {s}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Forward-difference Jacobian with per-coordinate step `h·max(1, |x_j|)`.
/// Costs `n` residual evaluations.
pub fn forward_difference_jacobian(problem: &Problem, x: &Vector, fx: &Vector, h: f64) -> Matrix {
    let mut jac = Matrix::zeros(fx.len(), x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let step = h * x[j].abs().max(1.0);
        probe[j] = x[j] + step;
        let actual = probe[j] - x[j];
        let fj = problem.eval(&probe);
        jac.set_column(j, &((fj - fx) / actual));
        probe[j] = x[j];
    }
    jac
}

/// Broyden tridiagonal function: `F_i = (3 − 2x_i)x_i − x_{i−1} − 2x_{i+1} + 1`
/// with `x_0 = x_{n+1} = 0`, started from `(−1, …, −1)`.
pub fn broyden_tridiagonal(n: usize) -> Result<Problem> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "broyden tridiagonal needs n >= 2, got {n}"
        )));
    }
    let residual = move |x: &Vector| {
        Vector::from_fn(n, |i, _| {
            let prev = if i > 0 { x[i - 1] } else { 0.0 };
            let next = if i + 1 < n { x[i + 1] } else { 0.0 };
            (3.0 - 2.0 * x[i]) * x[i] - prev - 2.0 * next + 1.0
        })
    };
    let jacobian = move |x: &Vector| {
        let mut j = Matrix::zeros(n, n);
        for i in 0..n {
            j[(i, i)] = 3.0 - 4.0 * x[i];
            if i > 0 {
                j[(i, i - 1)] = -1.0;
            }
            if i + 1 < n {
                j[(i, i + 1)] = -2.0;
            }
        }
        j
    };
    Ok(
        Problem::new(format!("broyden-{n}"), n, Vector::from_element(n, -1.0), residual)
            .with_jacobian(jacobian)
            .with_row_sparsity(3),
    )
}

const VALLEY_C1: f64 = 1.003344481605351;
const VALLEY_C2: f64 = -3.344481605351171e-3;

/// Tridimensional valley function in blocks of three, started from
/// `(−4, 1, 2, −4, 1, 2, …)`.
pub fn tridimensional_valley(n: usize) -> Result<Problem> {
    if n == 0 || !n.is_multiple_of(3) {
        return Err(Error::InvalidArgument(format!(
            "tridimensional valley needs n to be a positive multiple of 3, got {n}"
        )));
    }
    let residual = move |x: &Vector| {
        let mut f = Vector::zeros(n);
        for b in (0..n).step_by(3) {
            let t = x[b];
            f[b] = (VALLEY_C2 * t.powi(3) + VALLEY_C1 * t) * (-t * t / 100.0).exp() - 1.0;
            f[b + 1] = 10.0 * (t.sin() - x[b + 1]);
            f[b + 2] = 10.0 * (t.cos() - x[b + 2]);
        }
        f
    };
    let jacobian = move |x: &Vector| {
        let mut j = Matrix::zeros(n, n);
        for b in (0..n).step_by(3) {
            let t = x[b];
            let e = (-t * t / 100.0).exp();
            let poly = VALLEY_C2 * t.powi(3) + VALLEY_C1 * t;
            j[(b, b)] = (3.0 * VALLEY_C2 * t * t + VALLEY_C1) * e - poly * e * t / 50.0;
            j[(b + 1, b)] = 10.0 * t.cos();
            j[(b + 1, b + 1)] = -10.0;
            j[(b + 2, b)] = -10.0 * t.sin();
            j[(b + 2, b + 2)] = -10.0;
        }
        j
    };
    let x0 = Vector::from_fn(n, |i, _| [-4.0, 1.0, 2.0][i % 3]);
    Ok(Problem::new(format!("valley-{n}"), n, x0, residual)
        .with_jacobian(jacobian)
        .with_row_sparsity(2))
}

/// Extended Freudenstein-Roth function on coordinate pairs, started from
/// `(90, 60, 90, 60, …)`.
pub fn extended_freudenstein_roth(n: usize) -> Result<Problem> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "extended Freudenstein-Roth needs an even n >= 2, got {n}"
        )));
    }
    let residual = move |x: &Vector| {
        let mut f = Vector::zeros(n);
        for i in (0..n).step_by(2) {
            let (a, b) = (x[i], x[i + 1]);
            f[i] = a + ((5.0 - b) * b - 2.0) * b - 13.0;
            f[i + 1] = a + ((b + 1.0) * b - 14.0) * b - 29.0;
        }
        f
    };
    let jacobian = move |x: &Vector| {
        let mut j = Matrix::zeros(n, n);
        for i in (0..n).step_by(2) {
            let b = x[i + 1];
            j[(i, i)] = 1.0;
            j[(i, i + 1)] = 10.0 * b - 3.0 * b * b - 2.0;
            j[(i + 1, i)] = 1.0;
            j[(i + 1, i + 1)] = 3.0 * b * b + 2.0 * b - 14.0;
        }
        j
    };
    let x0 = Vector::from_fn(n, |i, _| if i % 2 == 0 { 90.0 } else { 60.0 });
    Ok(Problem::new(format!("freudenstein-{n}"), n, x0, residual)
        .with_jacobian(jacobian)
        .with_row_sparsity(2))
}

/// Trigonometric system in blocks of five:
/// `F_i = 5 − (l+1)(1 − cos x_i) − sin x_i − Σ_{j ∈ block l} cos x_j`,
/// `l = ⌊(i−1)/5⌋`, started from `(1/n, 2/n, …, 1)`.
///
/// Column `i` lies inside block `l`, so each row touches exactly the five
/// block columns.
pub fn trigonometric_system(n: usize) -> Result<Problem> {
    if n == 0 || !n.is_multiple_of(5) {
        return Err(Error::InvalidArgument(format!(
            "trigonometric system needs n to be a positive multiple of 5, got {n}"
        )));
    }
    let residual = move |x: &Vector| {
        Vector::from_fn(n, |i, _| {
            let l = i / 5;
            let block: f64 = (5 * l..5 * l + 5).map(|j| x[j].cos()).sum();
            5.0 - (l as f64 + 1.0) * (1.0 - x[i].cos()) - x[i].sin() - block
        })
    };
    let jacobian = move |x: &Vector| {
        let mut j = Matrix::zeros(n, n);
        for i in 0..n {
            let l = i / 5;
            for c in 5 * l..5 * l + 5 {
                j[(i, c)] = x[c].sin();
            }
            j[(i, i)] += -(l as f64 + 1.0) * x[i].sin() - x[i].cos();
        }
        j
    };
    let x0 = Vector::from_fn(n, |i, _| (i + 1) as f64 / n as f64);
    Ok(Problem::new(format!("trig-{n}"), n, x0, residual)
        .with_jacobian(jacobian)
        .with_row_sparsity(5))
}

type Family = fn(usize) -> Result<Problem>;

const FAMILIES: &[(&str, &[&str], Family)] = &[
    (
        "broyden",
        &["broyden_tridiagonal", "broyden-tridiagonal"],
        broyden_tridiagonal,
    ),
    (
        "valley",
        &["tridimensional_valley", "tridimensional-valley"],
        tridimensional_valley,
    ),
    (
        "freudenstein",
        &["extended_freudenstein_roth", "freudenstein-roth", "freudenstein_roth"],
        extended_freudenstein_roth,
    ),
    (
        "trig",
        &["trigonometric", "trigonometric_system", "trigonometric-system"],
        trigonometric_system,
    ),
];

/// Names of the built-in problem families.
pub fn builtin_families() -> impl Iterator<Item = &'static str> {
    FAMILIES.iter().map(|(name, _, _)| *name)
}

/// Dimension of a family closest to `n` that the family accepts (rounding up).
pub fn nearest_valid_dimension(family: &str, n: usize) -> Option<usize> {
    let key = canonical_family(family)?;
    let step = match key {
        "valley" => 3,
        "freudenstein" => 2,
        "trig" => 5,
        _ => 1,
    };
    Some(n.max(2).div_ceil(step) * step)
}

fn canonical_family(name: &str) -> Option<&'static str> {
    let lower = name.to_ascii_lowercase();
    FAMILIES
        .iter()
        .find(|(key, aliases, _)| *key == lower || aliases.contains(&lower.as_str()))
        .map(|(key, _, _)| *key)
}

/// Problems addressable by name from the CLI and the benchmark driver.
///
/// Built-in families are resolved on demand for any valid dimension;
/// concrete problems registered by the user take precedence.
#[derive(Default)]
pub struct Registry {
    problems: RwLock<BTreeMap<String, Arc<Problem>>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates and stores a problem under its name.
    pub fn register(&self, problem: Problem) -> Result<Arc<Problem>> {
        if canonical_family(&problem.name).is_some() {
            return Err(Error::DuplicateProblem(problem.name));
        }
        problem.validate()?;
        let mut map = self.problems.write().expect("registry lock poisoned");
        if map.contains_key(&problem.name) {
            return Err(Error::DuplicateProblem(problem.name));
        }
        let handle = Arc::new(problem);
        map.insert(handle.name.clone(), Arc::clone(&handle));
        Ok(handle)
    }

    pub fn lookup(&self, name: &str) -> Option<Arc<Problem>> {
        self.problems.read().expect("registry lock poisoned").get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = builtin_families().map(str::to_string).collect();
        names.extend(self.problems.read().expect("registry lock poisoned").keys().cloned());
        names
    }

    /// Resolves a registered problem by name, or instantiates a built-in
    /// family at dimension `n`.
    pub fn resolve(&self, name: &str, n: Option<usize>) -> Result<Arc<Problem>> {
        if let Some(p) = self.lookup(name) {
            if let Some(n) = n {
                if n != p.n {
                    return Err(Error::InvalidArgument(format!(
                        "problem `{name}` has fixed dimension {}, requested {n}",
                        p.n
                    )));
                }
            }
            return Ok(p);
        }
        let key = canonical_family(name).ok_or_else(|| Error::UnknownProblem(name.to_string()))?;
        let ctor = FAMILIES
            .iter()
            .find(|(k, _, _)| *k == key)
            .map(|(_, _, f)| *f)
            .expect("canonical family exists");
        let n = n.unwrap_or(100);
        Ok(Arc::new(ctor(n)?))
    }
}
