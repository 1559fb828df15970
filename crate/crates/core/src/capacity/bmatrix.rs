use serde::{Deserialize, Serialize};

use crate::error::{FlexError, Result};
use crate::loads::{lti_gain2, Discretization, LoadSimulator, QoSChannel};
use crate::rng::sub_seed;
use crate::signalgen::{cyclic_extend, synthesize, synthesize_mixture, Method, NoiseRecipe};
use crate::spectra::{check_theta, BasisSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Model,
    Data,
}

/// `B` with entry `(l, i)` the variance of channel `l` under unit-weight basis `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMap {
    pub b: Vec<Vec<f64>>,
    pub provenance: Vec<Provenance>,
    pub stderr: Option<Vec<Vec<f64>>>,
}

impl ConstraintMap {
    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn cols(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }

    /// `B theta`.
    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        self.b
            .iter()
            .map(|row| row.iter().zip(theta).map(|(b, t)| b * t).sum())
            .collect()
    }

    /// Standard error of `B theta` with independent column errors.
    pub fn apply_stderr(&self, theta: &[f64]) -> Option<Vec<f64>> {
        self.stderr.as_ref().map(|se| {
            se.iter()
                .map(|row| {
                    row.iter()
                        .zip(theta)
                        .map(|(s, t)| (s * t).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
    }

    pub(crate) fn check(&self, d: usize) -> Result<()> {
        if self.provenance.len() != self.rows() {
            return Err(FlexError::input("one provenance tag per row is required"));
        }
        for (l, row) in self.b.iter().enumerate() {
            if row.len() != d {
                return Err(FlexError::input(format!(
                    "constraint row {l} has {} entries, expected {d}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(FlexError::input(format!(
                    "constraint row {l} has an invalid entry {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Grid quadrature of `(1/2pi) integral |G_l|^2 psi_i`, i.e. the mean of
/// `|G_l|^2` over the grid restricted to the band of `psi_i`.
pub fn model_b(
    channels: &[QoSChannel],
    d: &Discretization,
    basis: &BasisSet,
) -> Result<ConstraintMap> {
    let n = basis.grid().n_freq() as f64;
    let b = channels
        .iter()
        .map(|ch| {
            let g2 = lti_gain2(ch, d, basis.grid())?;
            Ok((0..basis.len())
                .map(|i| basis.members(i).iter().map(|&j| g2[j]).sum::<f64>() / n)
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(ConstraintMap {
        b,
        provenance: vec![Provenance::Model; channels.len()],
        stderr: None,
    })
}

/// Monte-Carlo settings shared by the probing estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub n_real: usize,
    /// Samples per realization kept after warm-up.
    pub n_samples: usize,
    pub seed: u64,
    /// Synthesis used for the probing inputs of [`estimate_b_dd`].
    #[serde(default)]
    pub method: Method,
}

impl ProbeSettings {
    pub fn new(n_real: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            n_real,
            n_samples,
            seed,
            method: Method::RandomPhase,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    fn check(&self, basis: &BasisSet) -> Result<()> {
        if self.n_real == 0 {
            return Err(FlexError::input("at least one realization is required"));
        }
        if self.n_samples < basis.grid().n_freq() {
            return Err(FlexError::input(format!(
                "{} samples per realization is fewer than the grid size {}",
                self.n_samples,
                basis.grid().n_freq()
            )));
        }
        Ok(())
    }
}

/// Probes the simulator with an `N`-periodic input preceded by a cyclic
/// prefix as long as the simulator's warm-up, so the kept window is in
/// periodic steady state. Returns the mean square of every channel over
/// the window, which equals the integral of its periodogram.
fn probe<S: LoadSimulator + ?Sized>(sim: &S, x: &[f64]) -> Result<Vec<f64>> {
    let warm = sim.warmup_steps();
    let input = cyclic_extend(x, warm);
    let outputs = sim.simulate(&input)?;
    Ok(outputs
        .iter()
        .map(|z| {
            let tail = &z[warm..];
            tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64
        })
        .collect())
}

struct Moments {
    mean: Vec<f64>,
    stderr: Vec<f64>,
}

fn moments(samples: &[Vec<f64>], m: usize) -> Moments {
    let k = samples.len() as f64;
    let mean: Vec<f64> = (0..m)
        .map(|l| samples.iter().map(|s| s[l]).sum::<f64>() / k)
        .collect();
    let stderr = (0..m)
        .map(|l| {
            if samples.len() < 2 {
                return 0.0;
            }
            let var = samples
                .iter()
                .map(|s| (s[l] - mean[l]).powi(2))
                .sum::<f64>()
                / (k - 1.0);
            (var / k).sqrt()
        })
        .collect();
    Moments { mean, stderr }
}

fn context(channels: &[QoSChannel], basis: usize, realization: usize, e: FlexError) -> FlexError {
    let channel = match e {
        FlexError::Simulation { .. } if channels.len() == 1 => channels[0].name().to_string(),
        _ => channels
            .iter()
            .map(QoSChannel::name)
            .collect::<Vec<_>>()
            .join("+"),
    };
    FlexError::Estimation {
        channel,
        basis,
        realization,
        source: Box::new(e),
    }
}

/// Data-driven `B`: column `i` is the averaged output variance under inputs
/// with density `psi_i`. Only the simulator's input/output behaviour is used.
///
/// Realization `r` of column `i` uses seed `sub_seed(sub_seed(seed, i), r)`.
pub fn estimate_b_dd<S: LoadSimulator + ?Sized>(
    sim: &S,
    basis: &BasisSet,
    settings: ProbeSettings,
) -> Result<ConstraintMap> {
    settings.check(basis)?;
    let channels = sim.channels();
    let m = channels.len();
    let d = basis.len();
    let mut b = vec![vec![0.0; d]; m];
    let mut se = vec![vec![0.0; d]; m];
    for i in 0..d {
        if basis.members(i).is_empty() {
            continue;
        }
        let psi = basis.psi(i);
        let column_seed = sub_seed(settings.seed, i as u64);
        let samples = (0..settings.n_real)
            .map(|r| {
                let recipe =
                    NoiseRecipe::new(psi.clone(), settings.n_samples, sub_seed(column_seed, r as u64))
                        .with_method(settings.method);
                synthesize(&recipe)
                    .and_then(|x| probe(sim, &x))
                    .map_err(|e| context(channels, i, r, e))
            })
            .collect::<Result<Vec<_>>>()?;
        let mo = moments(&samples, m);
        for l in 0..m {
            b[l][i] = mo.mean[l];
            se[l][i] = mo.stderr[l];
        }
    }
    Ok(ConstraintMap {
        b,
        provenance: vec![Provenance::Data; m],
        stderr: Some(se),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// `B_hat(theta)`: output variances under the mixture input with density
/// `Psi^T theta`. Valid for nonlinear simulators. Realization `r` uses
/// `sub_seed(seed, r)` as the mixture seed.
pub fn estimate_b_theta<S: LoadSimulator + ?Sized>(
    sim: &S,
    basis: &BasisSet,
    theta: &[f64],
    settings: ProbeSettings,
) -> Result<ThetaEstimate> {
    settings.check(basis)?;
    check_theta(basis, theta)?;
    let channels = sim.channels();
    let m = channels.len();
    if theta.iter().all(|&t| t == 0.0) {
        return Ok(ThetaEstimate {
            value: vec![0.0; m],
            stderr: vec![0.0; m],
        });
    }
    let samples = (0..settings.n_real)
        .map(|r| {
            synthesize_mixture(basis, theta, settings.n_samples, sub_seed(settings.seed, r as u64))
                .and_then(|x| probe(sim, &x))
                .map_err(|e| context(channels, usize::MAX, r, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let mo = moments(&samples, m);
    Ok(ThetaEstimate {
        value: mo.mean,
        stderr: mo.stderr,
    })
}
