//! The four pipeline stages and their on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use flexcap::capacity::{
    assemble_objective, estimate_b_dd, model_b, scale_ensemble, solve_nonlinear, solve_qp_with,
    validate, CapacityResult, ConstraintMap, NonlinearOptions, ProbeSettings, QPProblem, QoSSpec,
    SolverOptions, ValidationReport,
};
use flexcap::loads::{Ensemble, LoadSimulator, StorageModel, ThermalLoad};
use flexcap::refsd::{
    bandpass_reference, empirical_nd_sd, extrapolate, fit_arma21, read_net_demand_csv,
    synth_net_demand, ArmaFit,
};
use flexcap::spectra::{eval_basis, FrequencyGrid, SdJson, SpectralDensity};
use flexcap::FlexError;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::config::{stream, NetDemandSource, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Model-based constraint map from the LTI frequency responses.
    LtiModel,
    /// Constraint map probed from the LTI simulator.
    LtiData,
    /// Constraint map probed from the bilinear simulator, with refinement.
    NonlinearData,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::LtiModel => "lti-model",
            Mode::LtiData => "lti-data",
            Mode::NonlinearData => "nonlinear-data",
        }
    }

    pub fn storage(&self) -> StorageModel {
        match self {
            Mode::NonlinearData => StorageModel::Bilinear,
            _ => StorageModel::Lti,
        }
    }

    pub const ALL: [Mode; 3] = [Mode::LtiModel, Mode::LtiData, Mode::NonlinearData];
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("reference data not found: {}", .0.display())]
    MissingReference(PathBuf),
    #[error("incomplete pipeline: {0}")]
    Incomplete(String),
}

/// 0 success, 1 solver or estimation failure, 2 input error, 3 incomplete pipeline.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return match p {
                PipelineError::MissingReference(_) => 2,
                PipelineError::Incomplete(_) => 3,
            };
        }
        if let Some(f) = cause.downcast_ref::<FlexError>() {
            return if f.is_input_error() { 2 } else { 1 };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
        {
            return 2;
        }
    }
    1
}

const HOURS_PER_SECOND: f64 = 1.0 / 3600.0;

/// `(frequency in cycles/hour, value)` over `omega >= 0`, in increasing frequency.
pub fn one_sided(sd: &SpectralDensity) -> Vec<(f64, f64)> {
    let g = sd.grid();
    let mut idx = g.nonnegative_indices();
    idx.sort_by(|a, b| g.abs_omega(*a).total_cmp(&g.abs_omega(*b)));
    idx.into_iter()
        .map(|j| (g.to_hz(g.abs_omega(j)) / HOURS_PER_SECOND, sd.values()[j]))
        .collect()
}

fn write_sd_csv(path: &Path, sd: &SpectralDensity) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["freq_cycles_per_hour", "omega_rad_per_sample", "value"])?;
    let g = sd.grid();
    for (f, v) in one_sided(sd) {
        let omega = g.from_hz(f * HOURS_PER_SECOND);
        w.write_record([f.to_string(), omega.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &str) -> anyhow::Result<T> {
    if !path.exists() {
        return Err(PipelineError::Incomplete(format!(
            "{} is missing; run `{stage}` first",
            path.display()
        ))
        .into());
    }
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

#[derive(Debug, Clone)]
pub struct Reference {
    pub phi_nd: SpectralDensity,
    pub fit: ArmaFit,
    pub snd: SpectralDensity,
    pub sba: SpectralDensity,
}

#[derive(Serialize, Deserialize)]
struct ReferenceFile {
    phi_nd: SdJson,
    snd: SdJson,
    sba: SdJson,
    arma: ArmaFit,
}

/// Net demand (kW) -> empirical density -> ARMA(2,1) fit -> extrapolation -> passband.
pub fn fit_reference(cfg: &RunConfig) -> anyhow::Result<Reference> {
    let native = cfg.native_grid()?;
    let series_kw = match &cfg.reference.net_demand {
        NetDemandSource::Synthetic { length, .. } => {
            let model = cfg.synthetic_model().expect("synthetic source")?;
            synth_net_demand(&model, *length, cfg.stream_seed(stream::REFERENCE))?
                .into_iter()
                .map(|mw| mw * 1000.0)
                .collect::<Vec<_>>()
        }
        NetDemandSource::Csv { path } => {
            let file = fs::File::open(path)
                .map_err(|_| PipelineError::MissingReference(path.clone()))?;
            let nd = read_net_demand_csv(file, Some(cfg.reference.native_delta_t_s))?;
            nd.values_kw
        }
    };
    let phi_nd = empirical_nd_sd(&series_kw, &native)?;
    let fit = fit_arma21(&phi_nd)?;
    let snd = extrapolate(&fit.model, &cfg.target_grid()?)?;
    let sba = bandpass_reference(&snd, &cfg.reference.passband.resolve()?)?;
    Ok(Reference {
        phi_nd,
        fit,
        snd,
        sba,
    })
}

fn manifest(cfg: &RunConfig, stage: &str, extra: serde_json::Value) -> serde_json::Value {
    json!({
        "stage": stage,
        "config": cfg,
        "seeds": {
            "seed": cfg.seed,
            "reference": cfg.stream_seed(stream::REFERENCE),
            "estimation": cfg.stream_seed(stream::ESTIMATION),
            "refinement": cfg.stream_seed(stream::REFINEMENT),
            "validation": cfg.stream_seed(stream::VALIDATION),
        },
        "details": extra,
    })
}

pub fn write_reference(out: &Path, cfg: &RunConfig, r: &Reference) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    write_sd_csv(&out.join("phi_nd.csv"), &r.phi_nd)?;
    write_sd_csv(&out.join("snd.csv"), &r.snd)?;
    write_sd_csv(&out.join("sba.csv"), &r.sba)?;
    write_json(&out.join("sba.json"), &r.sba.to_json())?;
    write_json(&out.join("arma.json"), &r.fit)?;
    write_json(
        &out.join("reference.json"),
        &ReferenceFile {
            phi_nd: r.phi_nd.to_json(),
            snd: r.snd.to_json(),
            sba: r.sba.to_json(),
            arma: r.fit,
        },
    )?;
    let extra = json!({
        "native_grid": { "n_freq": cfg.reference.native_n_freq, "delta_t_s": cfg.reference.native_delta_t_s },
        "target_grid": { "n_freq": cfg.grid.n_freq, "delta_t_s": cfg.delta_t_s },
        "passband_hz": cfg.reference.passband.resolve()?,
        "units": "kW^2 per rad/sample",
    });
    write_json(&out.join("manifest.json"), &manifest(cfg, "fit-reference", extra))
}

/// The balancing authority's reference written by `fit-reference`.
pub fn load_sba(out: &Path, cfg: &RunConfig) -> anyhow::Result<SpectralDensity> {
    let j: SdJson = read_json(&out.join("sba.json"), "fit-reference")?;
    let sd = SpectralDensity::from_json(j)?;
    let grid = cfg.target_grid()?;
    if sd.grid().n_freq() != grid.n_freq() || sd.grid().delta_t() != grid.delta_t() {
        return Err(FlexError::Input(format!(
            "stored reference grid ({}, {} s) does not match the config ({}, {} s)",
            sd.grid().n_freq(),
            sd.grid().delta_t(),
            grid.n_freq(),
            grid.delta_t()
        ))
        .into());
    }
    Ok(sd)
}

/// Aggregate simulator of the configured ensemble.
pub fn simulator(cfg: &RunConfig, mode: Mode) -> flexcap::Result<Ensemble<ThermalLoad>> {
    let load = ThermalLoad::new(cfg.building, cfg.delta_t_s, cfg.channels(mode.storage())?)?;
    Ensemble::new(load, cfg.ensemble_size)
}

#[derive(Debug, Clone)]
pub struct CapacityRun {
    pub mode: Mode,
    pub result: CapacityResult,
    pub constraints: ConstraintMap,
    /// Aggregate QoS requirements in channel order.
    pub specs: Vec<QoSSpec>,
    pub refinement_rounds: usize,
    pub refinement_estimate: Option<Vec<f64>>,
}

pub fn compute_capacity(
    cfg: &RunConfig,
    sba: &SpectralDensity,
    mode: Mode,
) -> anyhow::Result<CapacityRun> {
    let basis = cfg.basis()?;
    let specs = scale_ensemble(&cfg.specs(mode.storage())?, cfg.ensemble_size)?;
    let bounds: Vec<f64> = specs.iter().map(|s| s.b).collect();
    let sim = simulator(cfg, mode)?;
    let probe = ProbeSettings::new(
        cfg.estimation.n_real,
        cfg.estimation.n_samples,
        cfg.stream_seed(stream::ESTIMATION),
    );
    let solver = SolverOptions {
        max_iterations: cfg.solver.max_iterations,
    };
    let objective = assemble_objective(&basis, sba)?;
    let solve = |constraints: ConstraintMap| -> anyhow::Result<CapacityResult> {
        let mut problem = QPProblem::new(basis.clone(), objective.clone(), constraints, bounds.clone())?;
        if cfg.solver.unconstrained {
            problem = problem.unconstrained();
        }
        Ok(solve_qp_with(&problem, solver)?)
    };
    let run = match mode {
        Mode::LtiModel => {
            let constraints = model_b(sim.channels(), sim.inner().discretization(), &basis)?;
            CapacityRun {
                mode,
                result: solve(constraints.clone())?,
                constraints,
                specs,
                refinement_rounds: 0,
                refinement_estimate: None,
            }
        }
        Mode::LtiData => {
            let constraints = estimate_b_dd(&sim, &basis, probe)?;
            CapacityRun {
                mode,
                result: solve(constraints.clone())?,
                constraints,
                specs,
                refinement_rounds: 0,
                refinement_estimate: None,
            }
        }
        Mode::NonlinearData if cfg.solver.unconstrained || cfg.refinement.max_rounds == 0 => {
            let constraints = estimate_b_dd(&sim, &basis, probe)?;
            CapacityRun {
                mode,
                result: solve(constraints.clone())?,
                constraints,
                specs,
                refinement_rounds: 0,
                refinement_estimate: None,
            }
        }
        Mode::NonlinearData => {
            let opts = NonlinearOptions {
                probe,
                max_rounds: cfg.refinement.max_rounds,
                refine_seed: cfg.stream_seed(stream::REFINEMENT),
            };
            let outcome = solve_nonlinear(&sim, &basis, sba, &specs, opts)?;
            CapacityRun {
                mode,
                result: outcome.result,
                constraints: outcome.b_hat,
                specs,
                refinement_rounds: outcome.rounds,
                refinement_estimate: outcome.evaluated,
            }
        }
    };
    Ok(run)
}

pub fn mode_dir(out: &Path, mode: Mode) -> PathBuf {
    out.join(mode.as_str())
}

pub fn write_capacity(out: &Path, cfg: &RunConfig, run: &CapacityRun) -> anyhow::Result<()> {
    let dir = mode_dir(out, run.mode);
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("theta.json"), &run.result)?;
    write_sd_csv(&dir.join("capacity_sd.csv"), &run.result.capacity_sd)?;
    let extra = json!({
        "mode": run.mode,
        "basis_edges_rad_per_sample": cfg.basis()?.edges(),
        "estimation": { "n_real": cfg.estimation.n_real, "n_samples": cfg.estimation.n_samples },
        "specs": run.specs,
        "constraint_map": run.constraints,
        "refinement_rounds": run.refinement_rounds,
        "refinement_estimate": run.refinement_estimate,
    });
    write_json(&dir.join("manifest.json"), &manifest(cfg, "capacity", extra))
}

/// `theta*` written by `capacity` for `mode`.
pub fn load_theta(out: &Path, mode: Mode) -> anyhow::Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct ThetaOnly {
        theta_star: Vec<f64>,
    }
    let t: ThetaOnly = read_json(&mode_dir(out, mode).join("theta.json"), "capacity")?;
    Ok(t.theta_star)
}

/// Monte-Carlo check of the capacity `Psi^T theta` on the mode's simulator.
pub fn run_validation(cfg: &RunConfig, mode: Mode, theta: &[f64]) -> anyhow::Result<ValidationReport> {
    let basis = cfg.basis()?;
    let sd = eval_basis(&basis, theta)?;
    let specs = scale_ensemble(&cfg.specs(mode.storage())?, cfg.ensemble_size)?;
    let sim = simulator(cfg, mode)?;
    Ok(validate(
        &sd,
        &sim,
        &specs,
        cfg.validation.n_real,
        cfg.validation.n_samples,
        cfg.stream_seed(stream::VALIDATION),
    )?)
}

pub fn write_validation(
    out: &Path,
    cfg: &RunConfig,
    mode: Mode,
    report: &ValidationReport,
) -> anyhow::Result<()> {
    let dir = mode_dir(out, mode);
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("validation.json"), report)?;
    let mut w = csv::Writer::from_path(dir.join("validation.csv"))?;
    w.write_record([
        "channel",
        "c_aggregate",
        "epsilon",
        "violation_probability",
        "halfwidth",
        "variance",
        "within_tolerance",
    ])?;
    for c in &report.channels {
        w.write_record([
            c.channel.clone(),
            c.c.to_string(),
            c.epsilon.to_string(),
            c.violation_probability.to_string(),
            c.halfwidth.to_string(),
            c.variance.to_string(),
            c.within_tolerance.to_string(),
        ])?;
    }
    w.flush()?;

    let storage = report
        .first_trace
        .last()
        .ok_or_else(|| FlexError::Input("validation produced no trace".into()))?;
    let n = cfg.ensemble_size as f64;
    let mut w = csv::Writer::from_path(dir.join("temperature_trace.csv"))?;
    w.write_record(["k", "T_dev_C"])?;
    for (k, t) in storage.iter().enumerate() {
        w.write_record([k.to_string(), (t / n).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn capacity_sd_from(out: &Path, mode: Mode, grid: &FrequencyGrid) -> anyhow::Result<Option<SpectralDensity>> {
    #[derive(Deserialize)]
    struct SdOnly {
        capacity_sd: SdJson,
    }
    let path = mode_dir(out, mode).join("theta.json");
    if !path.exists() {
        return Ok(None);
    }
    let t: SdOnly = read_json(&path, "capacity")?;
    let sd = SpectralDensity::from_json(t.capacity_sd)?;
    if sd.grid().n_freq() != grid.n_freq() {
        return Err(FlexError::Input(format!("{} is on a different grid", path.display())).into());
    }
    Ok(Some(sd))
}

/// Plot-ready tables under `out/figures`. Frequencies are cycles/hour.
pub fn write_figures(out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let ref_path = out.join("reference.json");
    if !ref_path.exists() {
        return Err(PipelineError::Incomplete(format!(
            "no reference in {}; run `fit-reference` first",
            out.display()
        ))
        .into());
    }
    let r: ReferenceFile = read_json(&ref_path, "fit-reference")?;
    let phi = SpectralDensity::from_json(r.phi_nd)?;
    let snd = SpectralDensity::from_json(r.snd)?;
    let sba = SpectralDensity::from_json(r.sba)?;
    let grid = *sba.grid();
    let model = capacity_sd_from(out, Mode::LtiModel, &grid)?;
    let data = match capacity_sd_from(out, Mode::LtiData, &grid)? {
        Some(sd) => Some(sd),
        None => capacity_sd_from(out, Mode::NonlinearData, &grid)?,
    };
    if model.is_none() && data.is_none() {
        return Err(PipelineError::Incomplete(format!(
            "no capacity results in {}; run `capacity` first",
            out.display()
        ))
        .into());
    }
    let dir = out.join("figures");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();

    let path = dir.join("net_demand_sd.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["freq", "phi_nd", "arma_fit"])?;
    let fit = r.arma.model.to_sd(phi.grid())?;
    for ((f, p), (_, a)) in one_sided(&phi).into_iter().zip(one_sided(&fit)) {
        w.write_record([f.to_string(), p.to_string(), a.to_string()])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("reference_sd.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["freq", "s_nd", "s_ba"])?;
    for ((f, s), (_, b)) in one_sided(&snd).into_iter().zip(one_sided(&sba)) {
        w.write_record([f.to_string(), s.to_string(), b.to_string()])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("capacity_overlay.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["freq", "s_ba", "s_capacity_model", "s_capacity_data"])?;
    let model_side = model.as_ref().map(one_sided);
    let data_side = data.as_ref().map(one_sided);
    for (i, (f, b)) in one_sided(&sba).into_iter().enumerate() {
        let m = model_side.as_ref().map(|v| v[i].1.to_string()).unwrap_or_default();
        let d = data_side.as_ref().map(|v| v[i].1.to_string()).unwrap_or_default();
        w.write_record([f.to_string(), b.to_string(), m, d])?;
    }
    w.flush()?;
    written.push(path);

    for mode in Mode::ALL {
        let trace = mode_dir(out, mode).join("temperature_trace.csv");
        if trace.exists() {
            let dest = dir.join(format!("temperature_trace_{}.csv", mode.as_str()));
            fs::copy(&trace, &dest)?;
            written.push(dest);
        }
    }
    Ok(written)
}
