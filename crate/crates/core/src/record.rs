//! Run records and their file formats.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `‖J_mᵀF_k‖ ≤ ε₀`.
    Stationary,
    /// `‖d_k‖` below the step tolerance.
    SmallStep,
    /// Relative change of `‖F‖²` below tolerance.
    SmallDecrease,
    /// Residual evaluation budget exhausted.
    MaxFevals,
    /// Evaluation failure or other runtime error; see `RunRecord::error`.
    Error,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Stationary => "stationary",
            StopReason::SmallStep => "small_step",
            StopReason::SmallDecrease => "small_decrease",
            StopReason::MaxFevals => "max_fevals",
            StopReason::Error => "error",
        }
    }

    /// One of the convergence tests fired (as opposed to budget or error).
    pub fn is_converged(self) -> bool {
        matches!(
            self,
            StopReason::Stationary | StopReason::SmallStep | StopReason::SmallDecrease
        )
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One iteration of the solver loop that produced a trial step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Residual evaluations spent so far, including this iteration.
    pub fevals: usize,
    /// `½‖F_k‖²` at the start of the iteration.
    pub f: f64,
    pub grad_model_norm: f64,
    pub theta: f64,
    pub lambda: f64,
    #[serde(with = "extended_f64")]
    pub rho: f64,
    pub step_norm: f64,
    pub accepted: bool,
    /// Probe count of this iteration's model (`n` for the difference baseline).
    pub p: usize,
    pub sigma: f64,
    /// `‖F_k‖² − ‖F_k + J_m d_k‖²`.
    pub pred: f64,
    /// `‖F_k‖² − ‖F(x_k + d_k)‖²`.
    pub ared: f64,
    /// `‖J_mᵀJ_m‖` (spectral norm).
    pub model_hessian_norm: f64,
    pub theta_next: f64,
    /// `½‖F_{k+1}‖²`.
    pub f_next: f64,
}

/// Point of the best-objective-versus-evaluations trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub fevals: usize,
    pub best_f: f64,
}

/// Full outcome of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub solver_id: String,
    pub problem_id: String,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub config: SolverConfig,
    pub f0: f64,
    pub final_f: f64,
    pub final_grad_model_norm: Option<f64>,
    pub fevals: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub error: Option<String>,
    pub wall_time_ms: f64,
    pub x_final: Vec<f64>,
    pub trace: Vec<TracePoint>,
    pub history: Vec<IterationRecord>,
}

/// Fixed 17-significant-digit rendering used by every CSV writer.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub const HISTORY_HEADER: &str = "k,fevals,f,grad_model_norm,theta,lambda,rho,step_norm,accepted,p";

/// Writes the iteration history as CSV.
pub fn write_history_csv<W: Write>(mut w: W, history: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for it in history {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            it.k,
            it.fevals,
            fmt_f64(it.f),
            fmt_f64(it.grad_model_norm),
            fmt_f64(it.theta),
            fmt_f64(it.lambda),
            fmt_f64(it.rho),
            fmt_f64(it.step_norm),
            it.accepted,
            it.p
        )?;
    }
    Ok(())
}

/// JSON has no infinities; non-finite values travel as strings.
pub(crate) mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::fmt_f64(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float `{other}`"))),
            },
        }
    }
}
