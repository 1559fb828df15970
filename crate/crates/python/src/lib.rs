//! Python bindings: `import pyflexcap`.

use flexcap::capacity::{
    self, assemble_objective, estimate_b_dd, model_b, scale_ensemble, solve_qp, ProbeSettings,
    QPProblem, QoSSpec,
};
use flexcap::loads::{self, Ensemble, QoSChannel, StorageModel, ThermalLoad, ThermalParams};
use flexcap::signalgen::{self, NoiseRecipe};
use flexcap::spectra::{self, BasisSet};
use flexcap::FlexError;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: FlexError) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Discrete frequency grid of `n_freq` points with sampling interval `delta_t` seconds.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct FrequencyGrid(spectra::FrequencyGrid);

#[pymethods]
impl FrequencyGrid {
    #[new]
    fn new(n_freq: usize, delta_t: f64) -> PyResult<Self> {
        spectra::FrequencyGrid::new(n_freq, delta_t).map(Self).map_err(err)
    }

    #[getter]
    fn n_freq(&self) -> usize {
        self.0.n_freq()
    }

    #[getter]
    fn delta_t(&self) -> f64 {
        self.0.delta_t()
    }

    fn omegas(&self) -> Vec<f64> {
        self.0.omegas()
    }

    fn __repr__(&self) -> String {
        format!("FrequencyGrid(n_freq={}, delta_t={})", self.0.n_freq(), self.0.delta_t())
    }
}

#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct SpectralDensity(spectra::SpectralDensity);

#[pymethods]
impl SpectralDensity {
    #[new]
    fn new(grid: &FrequencyGrid, values: Vec<f64>) -> PyResult<Self> {
        spectra::SpectralDensity::new(grid.0, values).map(Self).map_err(err)
    }

    /// Indicator of `lo <= |omega| <= hi` scaled by `level`.
    #[staticmethod]
    fn band(grid: &FrequencyGrid, lo: f64, hi: f64, level: f64) -> PyResult<Self> {
        spectra::SpectralDensity::from_fn(grid.0, |w| {
            if (lo..=hi).contains(&w.abs()) {
                level
            } else {
                0.0
            }
        })
        .map(Self)
        .map_err(err)
    }

    #[getter]
    fn grid(&self) -> FrequencyGrid {
        FrequencyGrid(*self.0.grid())
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn integral(&self) -> f64 {
        spectra::integrate_sd(&self.0)
    }

    fn relative_l2(&self, other: &SpectralDensity) -> PyResult<f64> {
        self.0.relative_l2(&other.0).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.values().len()
    }
}

/// Averaged periodogram of equally long realizations.
#[pyfunction]
fn periodogram(realizations: Vec<Vec<f64>>, grid: &FrequencyGrid) -> PyResult<SpectralDensity> {
    spectra::periodogram(&realizations, &grid.0).map(SpectralDensity).map_err(err)
}

/// Zero-mean signal of `length` samples whose spectral density is `target`.
#[pyfunction]
fn synthesize(target: &SpectralDensity, length: usize, seed: u64) -> PyResult<Vec<f64>> {
    signalgen::synthesize(&NoiseRecipe::new(target.0.clone(), length, seed)).map_err(err)
}

/// Variance bound `c^2 * epsilon` from `P(|X| >= c) <= var / c^2`.
#[pyfunction]
fn chebyshev_bound(c: f64, epsilon: f64) -> PyResult<f64> {
    capacity::chebyshev_bound(c, epsilon).map_err(err)
}

/// A homogeneous ensemble of thermal loads with power, ramp, energy and
/// temperature limits.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
pub struct Building {
    params: ThermalParams,
    delta_t: f64,
    n: usize,
    limits: [f64; 4],
    epsilon: f64,
    ramp_steps: usize,
    window_steps: usize,
}

#[pymethods]
impl Building {
    /// Defaults are the large commercial building used throughout the docs.
    #[new]
    #[pyo3(signature = (
        n = 2000, delta_t = 20.0, r = 8.0, cth = 22.0, eta0 = 3.5, ta = 30.0,
        alpha1 = 0.0, alpha2 = 0.0, power_kw = 40.0, ramp_kw = 8.0, ramp_steps = 1,
        energy_kwh = 8.0, window_steps = 900, temperature_c = 1.0, epsilon = 0.05
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n: usize,
        delta_t: f64,
        r: f64,
        cth: f64,
        eta0: f64,
        ta: f64,
        alpha1: f64,
        alpha2: f64,
        power_kw: f64,
        ramp_kw: f64,
        ramp_steps: usize,
        energy_kwh: f64,
        window_steps: usize,
        temperature_c: f64,
        epsilon: f64,
    ) -> PyResult<Self> {
        let params = ThermalParams {
            r,
            cth,
            eta0,
            alpha1,
            alpha2,
            ta,
            ..ThermalParams::table1()
        };
        params.validate().map_err(err)?;
        let b = Self {
            params,
            delta_t,
            n,
            limits: [power_kw, ramp_kw, energy_kwh, temperature_c],
            epsilon,
            ramp_steps,
            window_steps,
        };
        b.simulator(StorageModel::Lti).map_err(err)?;
        Ok(b)
    }

    /// Aggregate QoS variance bounds `(n c)^2 epsilon`, in channel order.
    fn bounds(&self) -> PyResult<Vec<f64>> {
        Ok(self.specs(StorageModel::Lti).map_err(err)?.iter().map(|s| s.b).collect())
    }

    /// Aggregate temperature deviation times n for a power deviation input.
    #[pyo3(signature = (pdev, nonlinear = false))]
    fn simulate(&self, pdev: Vec<f64>, nonlinear: bool) -> PyResult<Vec<Vec<f64>>> {
        use loads::LoadSimulator;
        let sim = self.simulator(storage(nonlinear)).map_err(err)?;
        sim.simulate(&pdev).map_err(err)
    }

    /// Capacity spectral density for the reference `sba` over `d` equal
    /// bases spanning `[lo, hi]` rad/sample.
    ///
    /// `mode` is `"model"` (frequency responses) or `"data"` (simulator probing).
    #[pyo3(signature = (sba, d, lo, hi, mode = "data", n_real = 4, seed = 0, nonlinear = false))]
    #[allow(clippy::too_many_arguments)]
    fn capacity(
        &self,
        sba: &SpectralDensity,
        d: usize,
        lo: f64,
        hi: f64,
        mode: &str,
        n_real: usize,
        seed: u64,
        nonlinear: bool,
    ) -> PyResult<CapacityResult> {
        let model = storage(nonlinear);
        let basis = BasisSet::uniform(sba.0.grid(), d, lo, hi).map_err(err)?;
        let sim = self.simulator(model).map_err(err)?;
        let b = match mode {
            "model" => model_b(
                &self.channels(model),
                sim.inner().discretization(),
                &basis,
            ),
            "data" => estimate_b_dd(
                &sim,
                &basis,
                ProbeSettings::new(n_real, sba.0.grid().n_freq(), seed),
            ),
            other => {
                return Err(PyValueError::new_err(format!(
                    "mode must be 'model' or 'data', got {other:?}"
                )))
            }
        }
        .map_err(err)?;
        let bounds = self.bounds()?;
        let objective = assemble_objective(&basis, &sba.0).map_err(err)?;
        let problem = QPProblem::new(basis, objective, b, bounds).map_err(err)?;
        solve_qp(&problem).map(CapacityResult).map_err(err)
    }
}

fn storage(nonlinear: bool) -> StorageModel {
    if nonlinear {
        StorageModel::Bilinear
    } else {
        StorageModel::Lti
    }
}

impl Building {
    fn channels(&self, model: StorageModel) -> Vec<QoSChannel> {
        vec![
            QoSChannel::Power,
            QoSChannel::Ramp {
                delta_steps: self.ramp_steps,
            },
            QoSChannel::Energy {
                window_steps: self.window_steps,
            },
            QoSChannel::Storage { model },
        ]
    }

    fn simulator(&self, model: StorageModel) -> flexcap::Result<Ensemble<ThermalLoad>> {
        let load = ThermalLoad::new(self.params, self.delta_t, self.channels(model))?;
        Ensemble::new(load, self.n)
    }

    fn specs(&self, model: StorageModel) -> flexcap::Result<Vec<QoSSpec>> {
        let per_load = self
            .channels(model)
            .into_iter()
            .zip(self.limits)
            .map(|(ch, c)| QoSSpec::new(ch, c, self.epsilon))
            .collect::<flexcap::Result<Vec<_>>>()?;
        scale_ensemble(&per_load, self.n)
    }
}

#[pyclass(frozen, skip_from_py_object)]
pub struct CapacityResult(capacity::CapacityResult);

#[pymethods]
impl CapacityResult {
    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.0.theta_star.clone()
    }

    #[getter]
    fn capacity_sd(&self) -> SpectralDensity {
        SpectralDensity(self.0.capacity_sd.clone())
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.0.objective_value
    }

    #[getter]
    fn active_constraints(&self) -> Vec<usize> {
        self.0.active_constraints.clone()
    }

    #[getter]
    fn kkt_residual(&self) -> f64 {
        self.0.kkt_residual
    }

    #[getter]
    fn constraint_values(&self) -> Vec<f64> {
        self.0.constraint_values.clone()
    }
}

#[pymodule]
fn pyflexcap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<FrequencyGrid>()?;
    m.add_class::<SpectralDensity>()?;
    m.add_class::<Building>()?;
    m.add_class::<CapacityResult>()?;
    m.add_function(wrap_pyfunction!(periodogram, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(chebyshev_bound, m)?)?;
    Ok(())
}
