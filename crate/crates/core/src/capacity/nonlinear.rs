use serde::{Deserialize, Serialize};

use super::bmatrix::{estimate_b_dd, estimate_b_theta, ConstraintMap, ProbeSettings};
use super::qp::{assemble_objective, solve_qp, CapacityResult, QPProblem};
use super::{bounds, QoSSpec};
use crate::error::{FlexError, Result};
use crate::loads::LoadSimulator;
use crate::spectra::{BasisSet, SpectralDensity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearOptions {
    /// Basis probing for the surrogate `B_hat`.
    pub probe: ProbeSettings,
    /// Rounds of feasibility refinement after the first solve (0 disables it).
    #[serde(default)]
    pub max_rounds: usize,
    /// Seed of the refinement evaluations of `B_hat(theta)`.
    #[serde(default)]
    pub refine_seed: u64,
}

#[derive(Debug, Clone)]
pub struct NonlinearOutcome {
    pub result: CapacityResult,
    /// Surrogate constraint map after any refinement.
    pub b_hat: ConstraintMap,
    pub rounds: usize,
    /// `B_hat(theta*)` from the last refinement evaluation, if any.
    pub evaluated: Option<Vec<f64>>,
}

/// Surrogate-linear solve for simulators that need not be linear.
///
/// A fixed `B_hat` is estimated by basis probing and the QP is solved on it.
/// With `max_rounds > 0`, `B_hat(theta*)` is then evaluated on the mixture
/// input and every violated row is rescaled by the ratio of evaluated to
/// predicted variance before re-solving.
pub fn solve_nonlinear<S: LoadSimulator + ?Sized>(
    sim: &S,
    basis: &BasisSet,
    sba: &SpectralDensity,
    specs: &[QoSSpec],
    opts: NonlinearOptions,
) -> Result<NonlinearOutcome> {
    if specs.len() != sim.channels().len() {
        return Err(FlexError::input(format!(
            "{} QoS specs for {} simulator channels",
            specs.len(),
            sim.channels().len()
        )));
    }
    let objective = assemble_objective(basis, sba)?;
    let b = bounds(specs);
    let mut b_hat = estimate_b_dd(sim, basis, opts.probe)?;
    let mut problem = QPProblem::new(basis.clone(), objective, b_hat.clone(), b.clone())?;
    let mut result = solve_qp(&problem)?;
    let mut evaluated = None;
    let mut rounds = 0;
    if opts.max_rounds == 0 {
        return Ok(NonlinearOutcome {
            result,
            b_hat,
            rounds,
            evaluated,
        });
    }
    let refine = ProbeSettings {
        seed: opts.refine_seed,
        ..opts.probe
    };
    loop {
        let est = estimate_b_theta(sim, basis, &result.theta_star, refine)?;
        let predicted = b_hat.apply(&result.theta_star);
        let violated: Vec<usize> = (0..b.len())
            .filter(|&l| est.value[l] > b[l] * (1.0 + 1e-9))
            .collect();
        evaluated = Some(est.value.clone());
        if violated.is_empty() {
            break;
        }
        if rounds == opts.max_rounds {
            return Err(FlexError::Refinement {
                rounds,
                slack: b.iter().zip(&est.value).map(|(b, v)| b - v).collect(),
            });
        }
        for &l in &violated {
            let ratio = est.value[l] / predicted[l];
            b_hat.b[l].iter_mut().for_each(|v| *v *= ratio);
        }
        problem.constraints = b_hat.clone();
        result = solve_qp(&problem)?;
        rounds += 1;
    }
    Ok(NonlinearOutcome {
        result,
        b_hat,
        rounds,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::model_b;
    use crate::loads::{Ensemble, QoSChannel, StorageModel, ThermalLoad, ThermalParams};
    use crate::spectra::FrequencyGrid;

    #[test]
    fn zero_alpha_matches_lti_model() {
        let dt = 600.0;
        let g = FrequencyGrid::new(512, dt).unwrap();
        let basis = BasisSet::uniform(&g, 8, 0.05, 1.0).unwrap();
        let sba = SpectralDensity::from_fn(g, |w| if w < 1.0 { 5.0 } else { 0.0 }).unwrap();
        let p = ThermalParams::table1();
        let specs = vec![QoSSpec::new(QoSChannel::Storage { model: StorageModel::Bilinear }, 1.0, 0.05).unwrap()];
        let nl = ThermalLoad::new(p, dt, vec![specs[0].channel]).unwrap();
        let opts = NonlinearOptions {
            probe: ProbeSettings::new(2, 512, 4),
            max_rounds: 3,
            refine_seed: 8,
        };
        let out = solve_nonlinear(&Ensemble::new(nl, 1).unwrap(), &basis, &sba, &specs, opts).unwrap();

        let lti_chan = [QoSChannel::Storage { model: StorageModel::Lti }];
        let lin = ThermalLoad::new(p, dt, lti_chan.to_vec()).unwrap();
        let bm = model_b(&lti_chan, lin.discretization(), &basis).unwrap();
        let prob = QPProblem::new(basis.clone(), assemble_objective(&basis, &sba).unwrap(), bm, vec![specs[0].b])
            .unwrap();
        let reference = solve_qp(&prob).unwrap();
        let rel = out.result.capacity_sd.relative_l2(&reference.capacity_sd).unwrap();
        assert!(rel < 0.05, "relative difference {rel}");
        let ev = out.evaluated.unwrap();
        assert!(ev[0] <= specs[0].b * (1.0 + 1e-9));
    }
}
