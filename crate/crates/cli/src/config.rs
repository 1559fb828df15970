//! Run configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};

use flexcap::capacity::QoSSpec;
use flexcap::loads::{QoSChannel, StorageModel, ThermalParams};
use flexcap::refsd::{Passband, RationalSD, DEFAULT_NATIVE_DELTA_T};
use flexcap::rng::sub_seed;
use flexcap::spectra::{BasisSet, FrequencyGrid};
use flexcap::FlexError;
use serde::{Deserialize, Serialize};

/// Named random streams derived from the top-level seed.
pub mod stream {
    pub const REFERENCE: u64 = 1;
    pub const ESTIMATION: u64 = 2;
    pub const REFINEMENT: u64 = 3;
    pub const VALIDATION: u64 = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub building: ThermalParams,
    pub delta_t_s: f64,
    pub ensemble_size: usize,
    pub qos: QosConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    pub reference: ReferenceConfig,
    pub estimation: SamplingConfig,
    #[serde(default)]
    pub refinement: RefinementConfig,
    pub validation: SamplingConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosConfig {
    pub power_kw: f64,
    pub ramp_kw: f64,
    pub ramp_interval_s: f64,
    pub energy_kwh: f64,
    pub energy_window_h: f64,
    pub temperature_c: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_freq: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(default = "default_basis_count")]
    pub count: usize,
    /// Band covered by the basis; defaults to the reference passband.
    #[serde(default)]
    pub span: Option<Passband>,
}

fn default_basis_count() -> usize {
    40
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            count: default_basis_count(),
            span: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassbandPreset {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PassbandConfig {
    Preset(PassbandPreset),
    Explicit(Passband),
}

impl PassbandConfig {
    pub fn resolve(&self) -> flexcap::Result<Passband> {
        match *self {
            PassbandConfig::Preset(PassbandPreset::Low) => Ok(Passband::low()),
            PassbandConfig::Preset(PassbandPreset::High) => Ok(Passband::high()),
            PassbandConfig::Explicit(p) => Passband::new(p.f_low_hz, p.f_high_hz),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NetDemandSource {
    /// ARMA(2,1) net demand in MW at the native sampling interval.
    Synthetic {
        ar: [f64; 2],
        ma: f64,
        gain_mw2: f64,
        length: usize,
    },
    /// `timestamp,net_demand_mw` or a single MW column; relative paths are
    /// taken from the config file's directory.
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub net_demand: NetDemandSource,
    #[serde(default = "default_native_dt")]
    pub native_delta_t_s: f64,
    #[serde(default = "default_native_n_freq")]
    pub native_n_freq: usize,
    pub passband: PassbandConfig,
}

fn default_native_dt() -> f64 {
    DEFAULT_NATIVE_DELTA_T
}

fn default_native_n_freq() -> usize {
    1024
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_real: usize,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementConfig {
    /// Feasibility refinement rounds in `nonlinear-data` mode; 0 disables it.
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
}

fn default_rounds() -> usize {
    3
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            max_rounds: default_rounds(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Drop the QoS bounds and solve the bare projection.
    #[serde(default)]
    pub unconstrained: bool,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
}

fn default_iterations() -> usize {
    1000
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            unconstrained: false,
            max_iterations: default_iterations(),
        }
    }
}

fn whole_steps(what: &str, seconds: f64, delta_t_s: f64) -> flexcap::Result<usize> {
    let steps = seconds / delta_t_s;
    let rounded = steps.round();
    if rounded < 1.0 || (steps - rounded).abs() > 1e-9 * steps.max(1.0) {
        return Err(FlexError::Input(format!(
            "{what} of {seconds} s is not a positive multiple of the sampling interval {delta_t_s} s"
        )));
    }
    Ok(rounded as usize)
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FlexError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| FlexError::Input(format!("invalid config {}: {e}", path.display())))?;
        if let NetDemandSource::Csv { path: csv } = &mut cfg.reference.net_demand {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> flexcap::Result<()> {
        self.building.validate()?;
        self.target_grid()?;
        self.channels(StorageModel::Lti)?;
        self.reference.passband.resolve()?;
        if self.ensemble_size == 0 {
            return Err(FlexError::Input("ensemble_size must be at least 1".into()));
        }
        for (what, s) in [("estimation", self.estimation), ("validation", self.validation)] {
            if s.n_real == 0 || s.n_samples < self.grid.n_freq {
                return Err(FlexError::Input(format!(
                    "{what} needs n_real >= 1 and n_samples >= n_freq ({})",
                    self.grid.n_freq
                )));
            }
        }
        Ok(())
    }

    pub fn target_grid(&self) -> flexcap::Result<FrequencyGrid> {
        FrequencyGrid::new(self.grid.n_freq, self.delta_t_s)
    }

    pub fn native_grid(&self) -> flexcap::Result<FrequencyGrid> {
        FrequencyGrid::new(self.reference.native_n_freq, self.reference.native_delta_t_s)
    }

    /// Power, ramp, energy and storage, in that order.
    pub fn channels(&self, storage: StorageModel) -> flexcap::Result<Vec<QoSChannel>> {
        Ok(vec![
            QoSChannel::Power,
            QoSChannel::Ramp {
                delta_steps: whole_steps("ramp interval", self.qos.ramp_interval_s, self.delta_t_s)?,
            },
            QoSChannel::Energy {
                window_steps: whole_steps(
                    "energy window",
                    self.qos.energy_window_h * 3600.0,
                    self.delta_t_s,
                )?,
            },
            QoSChannel::Storage { model: storage },
        ])
    }

    /// Per-load QoS requirements in channel order.
    pub fn specs(&self, storage: StorageModel) -> flexcap::Result<Vec<QoSSpec>> {
        let q = &self.qos;
        let bounds = [q.power_kw, q.ramp_kw, q.energy_kwh, q.temperature_c];
        self.channels(storage)?
            .into_iter()
            .zip(bounds)
            .map(|(ch, c)| QoSSpec::new(ch, c, q.epsilon))
            .collect()
    }

    pub fn basis(&self) -> flexcap::Result<BasisSet> {
        let grid = self.target_grid()?;
        let span = match self.basis.span {
            Some(p) => Passband::new(p.f_low_hz, p.f_high_hz)?,
            None => self.reference.passband.resolve()?,
        };
        let (lo, hi) = span.omega_range(&grid);
        BasisSet::uniform(&grid, self.basis.count, lo, hi.min(std::f64::consts::PI))
    }

    pub fn synthetic_model(&self) -> Option<flexcap::Result<RationalSD>> {
        match &self.reference.net_demand {
            NetDemandSource::Synthetic { ar, ma, gain_mw2, .. } => Some(RationalSD::new(
                *ar,
                *ma,
                *gain_mw2,
                self.reference.native_delta_t_s,
            )),
            NetDemandSource::Csv { .. } => None,
        }
    }

    pub fn stream_seed(&self, stream: u64) -> u64 {
        sub_seed(self.seed, stream)
    }
}
