use serde::{Deserialize, Serialize};

use super::QoSSpec;
use crate::error::{FlexError, Result};
use crate::loads::LoadSimulator;
use crate::rng::sub_seed;
use crate::signalgen::{cyclic_extend, synthesize, NoiseRecipe};
use crate::spectra::SpectralDensity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelValidation {
    pub channel: String,
    pub c: f64,
    pub epsilon: f64,
    /// Fraction of post-warm-up samples with `|Z| >= c`.
    pub violation_probability: f64,
    /// 95% half-width across realizations.
    pub halfwidth: f64,
    /// Empirical mean square of the channel signal.
    pub variance: f64,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_real: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub channels: Vec<ChannelValidation>,
    /// Channel signals of the first realization (post warm-up).
    #[serde(skip)]
    pub first_trace: Vec<Vec<f64>>,
}

impl ValidationReport {
    pub fn all_within_tolerance(&self) -> bool {
        self.channels.iter().all(|c| c.within_tolerance)
    }
}

/// Monte-Carlo check of `P(|Z_l| >= c_l) <= epsilon_l` under inputs with
/// density `sd`. Realization `r` uses `sub_seed(seed, r)`; each input is
/// `n_samples`-periodic with a cyclic warm-up prefix that is discarded.
pub fn validate<S: LoadSimulator + ?Sized>(
    sd: &SpectralDensity,
    sim: &S,
    specs: &[QoSSpec],
    n_real: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if specs.len() != sim.channels().len() {
        return Err(FlexError::input(format!(
            "{} QoS specs for {} simulator channels",
            specs.len(),
            sim.channels().len()
        )));
    }
    if n_real == 0 {
        return Err(FlexError::input("at least one realization is required"));
    }
    let m = specs.len();
    let warm = sim.warmup_steps();
    let mut fractions = vec![Vec::with_capacity(n_real); m];
    let mut mean_square = vec![0.0; m];
    let mut first_trace = Vec::new();
    for r in 0..n_real {
        let x = synthesize(&NoiseRecipe::new(sd.clone(), n_samples, sub_seed(seed, r as u64)))?;
        let out = sim.simulate(&cyclic_extend(&x, warm))?;
        for (l, z) in out.iter().enumerate() {
            let tail = &z[warm..];
            let hits = tail.iter().filter(|v| v.abs() >= specs[l].c).count();
            fractions[l].push(hits as f64 / tail.len() as f64);
            mean_square[l] += tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64;
        }
        if r == 0 {
            first_trace = out.into_iter().map(|z| z[warm..].to_vec()).collect();
        }
    }
    let k = n_real as f64;
    let channels = specs
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let f = &fractions[l];
            let p = f.iter().sum::<f64>() / k;
            let halfwidth = if n_real > 1 {
                let var = f.iter().map(|v| (v - p).powi(2)).sum::<f64>() / (k - 1.0);
                1.96 * (var / k).sqrt()
            } else {
                1.96 * (p * (1.0 - p) / n_samples as f64).sqrt()
            };
            ChannelValidation {
                channel: spec.channel.name().to_string(),
                c: spec.c,
                epsilon: spec.epsilon,
                violation_probability: p,
                halfwidth,
                variance: mean_square[l] / k,
                within_tolerance: p <= spec.epsilon,
            }
        })
        .collect();
    Ok(ValidationReport {
        n_real,
        n_samples,
        seed,
        channels,
        first_trace,
    })
}
