use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::recovery::RecoveryOptions;
use crate::sensing::Distribution;
use crate::{Error, Result};

/// How many probe points each model build uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PPolicy {
    Fixed(usize),
    /// Grow by `p_diff` after an accepted step, shrink after a rejected one,
    /// always within `[p_min, p_max]`.
    Adaptive {
        p_init: usize,
        p_min: usize,
        p_max: usize,
        p_diff: usize,
    },
}

impl PPolicy {
    /// `p_init = ⌈n/3⌉, p_min = ⌈n/4⌉, p_max = ⌈n/2⌉, p_diff = ⌈n/10⌉`.
    pub fn adaptive_default(n: usize) -> Self {
        PPolicy::Adaptive {
            p_init: n.div_ceil(3),
            p_min: n.div_ceil(4),
            p_max: n.div_ceil(2),
            p_diff: n.div_ceil(10),
        }
    }

    pub fn initial(&self) -> usize {
        match *self {
            PPolicy::Fixed(p) => p,
            PPolicy::Adaptive { p_init, .. } => p_init,
        }
    }

    pub fn max(&self) -> usize {
        match *self {
            PPolicy::Fixed(p) => p,
            PPolicy::Adaptive { p_max, .. } => p_max,
        }
    }
}

/// Recovery problem solved for each Jacobian row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    /// Equality-constrained basis pursuit.
    Noiseless,
    /// Basis pursuit denoising with a fixed noise radius. When `xi` is absent
    /// the radius follows `√p·L·κ²·σ/2` from `SolverConfig::lipschitz_estimate`
    /// (`L`) and the largest probe-direction norm (`κ`).
    Denoising { xi: Option<f64> },
}

/// Every knob of the solver loop. Build with [`SolverConfig::for_dimension`];
/// several defaults scale with the problem dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eta0: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub theta0: f64,
    pub theta_min: f64,
    /// Stop when `‖J_mᵀF‖ ≤ epsilon0`.
    pub epsilon0: f64,
    /// Probe scale of the first model build.
    pub sigma0: f64,
    /// Clamp applied to `‖d_{k−1}‖` to get later probe scales.
    pub sigma_bounds: [f64; 2],
    /// Use `σ_k = ‖d_{k−1}‖` without clamping.
    pub sigma_unclamped: bool,
    pub max_fevals: usize,
    pub distribution: Distribution,
    pub p_policy: PPolicy,
    pub mode: RecoveryMode,
    /// Lipschitz constant of the residual gradients, for the denoising radius.
    pub lipschitz_estimate: Option<f64>,
    pub step_tol: f64,
    pub rel_decrease_tol: f64,
    /// Forward-difference step of the baseline, scaled by `max(1, |x_j|)`.
    pub fd_step: f64,
    pub seed: u64,
    pub recovery: RecoveryOptions,
}

impl SolverConfig {
    pub fn for_dimension(n: usize) -> Self {
        Self {
            eta0: 1e-3,
            eta1: 1e-4,
            eta2: 1e3,
            gamma1: 0.25,
            gamma2: 4.0,
            theta0: 1e-8,
            theta_min: 1e-8,
            epsilon0: 1e-6,
            sigma0: 1.0,
            sigma_bounds: [1e-9, 1e-7],
            sigma_unclamped: false,
            max_fevals: 1000 * (n + 1),
            distribution: Distribution::Bernoulli,
            p_policy: PPolicy::adaptive_default(n),
            mode: RecoveryMode::Noiseless,
            lipschitz_estimate: None,
            step_tol: 1e-6,
            rel_decrease_tol: 1e-6,
            fd_step: 1.5e-8,
            seed: 0,
            recovery: RecoveryOptions::default(),
        }
    }

    /// Defaults for the dimension of `problem`.
    pub fn for_dimension_of(problem: &crate::Problem) -> Self {
        Self::for_dimension(problem.n)
    }

    /// Sets one field by its dotted path (`eta0`, `recovery.optimality_tol`).
    /// `raw` is parsed as JSON; anything that does not parse is taken as a
    /// bare string. The result is not checked against a dimension.
    pub fn set_field(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        set_path(&mut doc, key, value)?;
        *self = serde_json::from_value(doc).map_err(|e| Error::InvalidArgument(format!("`{key}`: {e}")))?;
        Ok(())
    }

    pub fn with_p(mut self, p: PPolicy) -> Self {
        self.p_policy = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_distribution(mut self, dist: Distribution) -> Self {
        self.distribution = dist;
        self
    }

    /// Checks the parameter relations the update rules rely on, plus the
    /// probe counts against the dimension `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.eta0 > 0.0 && self.eta0 < 1.0) {
            return bad(format!("eta0 must lie in (0, 1), got {}", self.eta0));
        }
        if !(self.eta1 > 0.0 && self.eta1 < self.eta2) {
            return bad(format!("need 0 < eta1 < eta2, got {} / {}", self.eta1, self.eta2));
        }
        if !(self.gamma1 > 0.0 && self.gamma1 < 1.0 && self.gamma2 > 1.0) {
            return bad(format!(
                "need 0 < gamma1 < 1 < gamma2, got {} / {}",
                self.gamma1, self.gamma2
            ));
        }
        if !(self.theta_min > 0.0 && self.theta0 >= self.theta_min) {
            return bad(format!(
                "need theta0 >= theta_min > 0, got {} / {}",
                self.theta0, self.theta_min
            ));
        }
        let [lo, hi] = self.sigma_bounds;
        if !(self.sigma0 > 0.0 && lo > 0.0 && lo <= hi) {
            return bad(format!(
                "need sigma0 > 0 and 0 < sigma_lo <= sigma_hi, got {} / [{lo}, {hi}]",
                self.sigma0
            ));
        }
        if !(self.epsilon0 >= 0.0 && self.step_tol >= 0.0 && self.rel_decrease_tol >= 0.0) {
            return bad("stopping tolerances must be >= 0".into());
        }
        if !(self.fd_step > 0.0) {
            return bad(format!("fd_step must be positive, got {}", self.fd_step));
        }
        if self.max_fevals == 0 {
            return bad("max_fevals must be positive".into());
        }
        match self.p_policy {
            PPolicy::Fixed(0) => return bad("p must be >= 1".into()),
            PPolicy::Adaptive {
                p_init, p_min, p_max, ..
            } if !(1 <= p_min && p_min <= p_init && p_init <= p_max) => {
                return bad(format!(
                    "adaptive p needs 1 <= p_min <= p_init <= p_max, got {p_min} / {p_init} / {p_max}"
                ));
            }
            _ => {}
        }
        if self.p_policy.max() > n.max(1) * 4 {
            return bad(format!(
                "p = {} is far beyond the dimension n = {n}",
                self.p_policy.max()
            ));
        }
        if let RecoveryMode::Denoising { xi } = self.mode {
            match (xi, self.lipschitz_estimate) {
                (Some(x), _) if x > 0.0 => {}
                (Some(x), _) => return bad(format!("denoising radius must be positive, got {x}")),
                (None, Some(l)) if l > 0.0 => {}
                (None, _) => {
                    return bad("denoising mode needs either a radius xi or a positive lipschitz_estimate".into())
                }
            }
        }
        Ok(())
    }
}

/// Replaces the value at a dotted path; unknown keys are rejected.
pub(crate) fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::InvalidArgument(format!("`{key}`: `{part}` is not inside an object")))?;
        if !obj.contains_key(*part) {
            return Err(Error::InvalidArgument(format!("unknown configuration field `{key}`")));
        }
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*part).expect("checked");
    }
    Ok(())
}
