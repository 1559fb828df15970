//! Capacity computation: Chebyshev bounds, constraint maps, the QP and its
//! Monte-Carlo validation.

mod bmatrix;
mod nonlinear;
mod qp;
mod validate;

use serde::{Deserialize, Serialize};

use crate::error::{FlexError, Result};
use crate::loads::QoSChannel;

pub use bmatrix::{
    estimate_b_dd, estimate_b_theta, model_b, ConstraintMap, Provenance, ProbeSettings,
    ThetaEstimate,
};
pub use nonlinear::{solve_nonlinear, NonlinearOptions, NonlinearOutcome};
pub use qp::{
    assemble_objective, solve_qp, solve_qp_with, CapacityResult, Objective, QPProblem,
    SolverOptions, KKT_TOLERANCE,
};
pub use validate::{validate, ChannelValidation, ValidationReport};

/// Relative slack below which a constraint counts as active.
pub const ACTIVE_RTOL: f64 = 1e-6;

/// A probabilistic QoS requirement `P(|Z| >= c) <= epsilon`, enforced
/// through the variance bound `b = c^2 epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoSSpec {
    pub channel: QoSChannel,
    pub c: f64,
    pub epsilon: f64,
    pub b: f64,
}

impl QoSSpec {
    pub fn new(channel: QoSChannel, c: f64, epsilon: f64) -> Result<Self> {
        channel.validate()?;
        Ok(Self {
            channel,
            c,
            epsilon,
            b: chebyshev_bound(c, epsilon)?,
        })
    }
}

/// `c^2 * epsilon`: a variance at or below this keeps `P(|Z| >= c) <= epsilon`.
pub fn chebyshev_bound(c: f64, epsilon: f64) -> Result<f64> {
    if !(c.is_finite() && c > 0.0) {
        return Err(FlexError::input(format!("bound c must be positive, got {c}")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(FlexError::input(format!(
            "tolerance epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    Ok(c * c * epsilon)
}

/// Bounds for the aggregate deviation of `n` identical loads that each track
/// `1/n` of it: `c -> n c`, hence `b -> n^2 b`.
pub fn scale_ensemble(specs: &[QoSSpec], n: usize) -> Result<Vec<QoSSpec>> {
    if n == 0 {
        return Err(FlexError::input("ensemble size must be at least 1"));
    }
    if n == 1 {
        return Ok(specs.to_vec());
    }
    let nf = n as f64;
    specs
        .iter()
        .map(|s| QoSSpec::new(s.channel, s.c * nf, s.epsilon))
        .collect()
}

pub(crate) fn bounds(specs: &[QoSSpec]) -> Vec<f64> {
    specs.iter().map(|s| s.b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn chebyshev_examples() {
        assert_eq!(chebyshev_bound(40.0, 0.05).unwrap(), 80.0);
        assert_eq!(chebyshev_bound(1.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(chebyshev_bound(8.0, 0.05).unwrap(), 3.2, max_relative = 1e-15);
        assert!(chebyshev_bound(0.0, 0.05).is_err());
        assert!(chebyshev_bound(1.0, 0.0).is_err());
        assert!(chebyshev_bound(1.0, 1.5).is_err());
    }

    #[test]
    fn ensemble_scaling() {
        let s = QoSSpec::new(QoSChannel::Power, 40.0, 0.05).unwrap();
        assert_eq!(scale_ensemble(&[s], 1).unwrap(), vec![s]);
        let agg = scale_ensemble(&[s], 2000).unwrap();
        assert_relative_eq!(agg[0].b, 3.2e8, max_relative = 1e-12);
        assert_eq!(agg[0].channel, s.channel);
        assert!(scale_ensemble(&[s], 0).is_err());
    }
}
