//! The balancing authority's reference: empirical net-demand density, an
//! ARMA(2,1) fit, extrapolation to finer sampling, brick-wall passbands and
//! a synthetic net-demand generator.

use std::f64::consts::PI;
use std::io::Read;

use chrono::NaiveDateTime;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FlexError, Result};
use crate::rng::rng_from_seed;
use crate::spectra::{segmented_periodogram, FrequencyGrid, SpectralDensity};

/// Native sampling interval of net-demand data (10 min).
pub const DEFAULT_NATIVE_DELTA_T: f64 = 600.0;

/// Samples discarded before [`synth_net_demand`] output starts.
pub const SYNTH_WARMUP: usize = 1000;

const COEF_LIMIT: f64 = 0.999;

/// `S(omega) = sigma^2 |1 + b1 e^{-j omega}|^2 / |1 + a1 e^{-j omega} + a2 e^{-2j omega}|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalSD {
    pub ar: [f64; 2],
    pub ma: f64,
    pub gain: f64,
    pub native_delta_t: f64,
}

impl RationalSD {
    pub fn new(ar: [f64; 2], ma: f64, gain: f64, native_delta_t: f64) -> Result<Self> {
        let m = Self {
            ar,
            ma,
            gain,
            native_delta_t,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn is_stationary(&self) -> bool {
        let [a1, a2] = self.ar;
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.ar.iter().chain([&self.ma, &self.gain, &self.native_delta_t]).all(|v| v.is_finite());
        if !finite || self.gain < 0.0 || self.native_delta_t <= 0.0 {
            return Err(FlexError::param(format!("invalid ARMA(2,1) model {self:?}")));
        }
        if !self.is_stationary() {
            return Err(FlexError::param(format!(
                "AR polynomial (1, {}, {}) has a root on or outside the unit circle",
                self.ar[0], self.ar[1]
            )));
        }
        Ok(())
    }

    /// Shape `|B|^2 / |A|^2` at `omega` (rad/sample of the native grid).
    pub fn shape(&self, omega: f64) -> f64 {
        let [a1, a2] = self.ar;
        let b1 = self.ma;
        let c = omega.cos();
        let num = 1.0 + b1 * b1 + 2.0 * b1 * c;
        let den = 1.0 + a1 * a1 + a2 * a2 + 2.0 * a1 * (1.0 + a2) * c + 2.0 * a2 * (2.0 * omega).cos();
        num / den
    }

    pub fn eval(&self, omega: f64) -> f64 {
        self.gain * self.shape(omega)
    }

    /// Direct evaluation on `grid`, read in the model's own normalized frequency.
    pub fn to_sd(&self, grid: &FrequencyGrid) -> Result<SpectralDensity> {
        SpectralDensity::from_fn(*grid, |w| self.eval(w))
    }
}

/// Physical band `[f_low, f_high]` in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Passband {
    pub f_low_hz: f64,
    pub f_high_hz: f64,
}

impl Passband {
    pub fn new(f_low_hz: f64, f_high_hz: f64) -> Result<Self> {
        if !(f_low_hz >= 0.0 && f_high_hz > f_low_hz && f_high_hz.is_finite()) {
            return Err(FlexError::input(format!(
                "passband needs 0 <= f_low < f_high, got [{f_low_hz}, {f_high_hz}] Hz"
            )));
        }
        Ok(Self { f_low_hz, f_high_hz })
    }

    pub fn per_hour(lo: f64, hi: f64) -> Result<Self> {
        Self::new(lo / 3600.0, hi / 3600.0)
    }

    pub fn per_minute(lo: f64, hi: f64) -> Result<Self> {
        Self::new(lo / 60.0, hi / 60.0)
    }

    /// `[1/6, 1/2]` cycles per hour.
    pub fn low() -> Self {
        Self {
            f_low_hz: 1.0 / 6.0 / 3600.0,
            f_high_hz: 0.5 / 3600.0,
        }
    }

    /// `[1/30, 1]` cycles per minute.
    pub fn high() -> Self {
        Self {
            f_low_hz: 1.0 / 30.0 / 60.0,
            f_high_hz: 1.0 / 60.0,
        }
    }

    /// Band edges in rad/sample on `grid`.
    pub fn omega_range(&self, grid: &FrequencyGrid) -> (f64, f64) {
        (grid.from_hz(self.f_low_hz), grid.from_hz(self.f_high_hz))
    }

    fn check(&self, grid: &FrequencyGrid) -> Result<()> {
        if self.f_high_hz > grid.nyquist_hz() * (1.0 + 1e-9) {
            return Err(FlexError::input(format!(
                "passband upper edge {} Hz is above the Nyquist frequency {} Hz",
                self.f_high_hz,
                grid.nyquist_hz()
            )));
        }
        Ok(())
    }
}

/// Averaged periodogram of the mean-removed series over segments of one grid length.
pub fn empirical_nd_sd(series: &[f64], grid: &FrequencyGrid) -> Result<SpectralDensity> {
    let n = grid.n_freq();
    if series.len() < 2 * n {
        return Err(FlexError::input(format!(
            "net-demand series of {} samples is shorter than two segments of {n}",
            series.len()
        )));
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let centred: Vec<f64> = series.iter().map(|v| v - mean).collect();
    segmented_periodogram(&centred, grid, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmaFit {
    pub model: RationalSD,
    /// Mean squared log-density error over the fitting band.
    pub residual: f64,
}

/// Least-squares fit of `log S` over `0 < omega <= pi` by multi-start
/// Nelder-Mead in a parameterization that only reaches stationary models.
/// `log sigma^2` is solved in closed form for each candidate.
pub fn fit_arma21(phi_nd: &SpectralDensity) -> Result<ArmaFit> {
    let grid = *phi_nd.grid();
    let dc = grid.dc_index();
    let mut omegas = Vec::new();
    let mut logs = Vec::new();
    for j in grid.nonnegative_indices() {
        if j == dc {
            continue;
        }
        let v = phi_nd.values()[j];
        if !(v > 0.0) {
            return Err(FlexError::input(format!(
                "density must be positive on the fitting band; S = {v} at omega = {}",
                grid.abs_omega(j)
            )));
        }
        omegas.push(grid.abs_omega(j));
        logs.push(v.ln());
    }
    let cos1: Vec<f64> = omegas.iter().map(|w| w.cos()).collect();
    let cos2: Vec<f64> = omegas.iter().map(|w| (2.0 * w).cos()).collect();
    let cost = |x: &[f64; 3]| -> (f64, f64) {
        let (a1, a2, b1) = from_unconstrained(x);
        let k = logs.len() as f64;
        let resid: Vec<f64> = (0..logs.len())
            .map(|i| {
                let num = 1.0 + b1 * b1 + 2.0 * b1 * cos1[i];
                let den = 1.0 + a1 * a1 + a2 * a2 + 2.0 * a1 * (1.0 + a2) * cos1[i] + 2.0 * a2 * cos2[i];
                logs[i] - (num / den).ln()
            })
            .collect();
        let log_gain = resid.iter().sum::<f64>() / k;
        let sse = resid.iter().map(|r| (r - log_gain).powi(2)).sum::<f64>() / k;
        (if sse.is_finite() { sse } else { f64::INFINITY }, log_gain)
    };

    let poles = [-0.5, 0.0, 0.5, 0.9, 0.99];
    let mut starts = Vec::new();
    for (i, &p1) in poles.iter().enumerate() {
        for &p2 in &poles[i..] {
            for b1 in [-0.5, 0.0, 0.5] {
                starts.push(to_unconstrained(-(p1 + p2), p1 * p2, b1));
            }
        }
    }
    let mut best: Option<([f64; 3], f64)> = None;
    for s in starts {
        let (x, f) = nelder_mead(|x| cost(x).0, s, 0.3, 2000, 1e-14);
        let better = match &best {
            None => true,
            Some((bx, bf)) => {
                let key = from_unconstrained(&x);
                let bkey = from_unconstrained(bx);
                f < *bf || (f == *bf && [key.0, key.1, key.2] < [bkey.0, bkey.1, bkey.2])
            }
        };
        if better {
            best = Some((x, f));
        }
    }
    let (x, residual) = best.expect("at least one start");
    if !residual.is_finite() {
        return Err(FlexError::Fit {
            reason: "no stationary ARMA(2,1) candidate fits the density".into(),
            residual,
        });
    }
    let (a1, a2, b1) = from_unconstrained(&x);
    let gain = cost(&x).1.exp();
    let model = RationalSD::new([a1, a2], b1, gain, grid.delta_t()).map_err(|e| FlexError::Fit {
        reason: e.to_string(),
        residual,
    })?;
    Ok(ArmaFit { model, residual })
}

fn from_unconstrained(x: &[f64; 3]) -> (f64, f64, f64) {
    let a2 = COEF_LIMIT * x[1].tanh();
    let a1 = (1.0 + a2) * COEF_LIMIT * x[0].tanh();
    let b1 = COEF_LIMIT * x[2].tanh();
    (a1, a2, b1)
}

fn to_unconstrained(a1: f64, a2: f64, b1: f64) -> [f64; 3] {
    let clip = |v: f64| v.clamp(-0.9999, 0.9999);
    let u2 = clip(a2 / COEF_LIMIT).atanh();
    let a2c = COEF_LIMIT * u2.tanh();
    let u1 = clip(a1 / ((1.0 + a2c) * COEF_LIMIT)).atanh();
    [u1, u2, clip(b1 / COEF_LIMIT).atanh()]
}

/// Minimizes `f` from `x0` with an initial simplex of edge `step`.
fn nelder_mead<F: Fn(&[f64; 3]) -> f64>(
    f: F,
    x0: [f64; 3],
    step: f64,
    max_evals: usize,
    ftol: f64,
) -> ([f64; 3], f64) {
    let mut simplex: Vec<([f64; 3], f64)> = (0..4)
        .map(|k| {
            let mut x = x0;
            if k > 0 {
                x[k - 1] += step;
            }
            (x, f(&x))
        })
        .collect();
    let mut evals = 4;
    let lerp = |a: &[f64; 3], b: &[f64; 3], t: f64| -> [f64; 3] {
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
    };
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo, hi) = (simplex[0].1, simplex[3].1);
        if (hi - lo).abs() <= ftol * (lo.abs() + hi.abs()) + 1e-300 {
            break;
        }
        let mut centroid = [0.0; 3];
        for (x, _) in &simplex[..3] {
            for d in 0..3 {
                centroid[d] += x[d] / 3.0;
            }
        }
        let worst = simplex[3].0;
        let reflected = lerp(&centroid, &worst, -1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < simplex[0].1 {
            let expanded = lerp(&centroid, &worst, -2.0);
            let fe = f(&expanded);
            evals += 1;
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < simplex[3].1 {
                let c = lerp(&centroid, &worst, -0.5);
                (c, f(&c))
            } else {
                let c = lerp(&centroid, &worst, 0.5);
                (c, f(&c))
            };
            evals += 1;
            if fc < fr.min(simplex[3].1) {
                simplex[3] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let x = lerp(&best, &entry.0, 0.5);
                    *entry = (x, f(&x));
                }
                evals += 3;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// The model's density on a finer `target_grid`: physical frequency is mapped
/// to the native normalized frequency, held at the native Nyquist value
/// beyond it, and rescaled by `dt_native / dt_target` so that variance below
/// the native Nyquist frequency is unchanged.
pub fn extrapolate(model: &RationalSD, target_grid: &FrequencyGrid) -> Result<SpectralDensity> {
    model.validate()?;
    let ratio = model.native_delta_t / target_grid.delta_t();
    if ratio < 1.0 - 1e-12 {
        return Err(FlexError::input(format!(
            "target sampling interval {} s is coarser than the native {} s",
            target_grid.delta_t(),
            model.native_delta_t
        )));
    }
    let scale = if (ratio - 1.0).abs() <= 1e-12 { 1.0 } else { ratio };
    SpectralDensity::from_fn(*target_grid, |w| model.eval((w * scale).min(PI)) * scale)
}

/// `S_ND` inside `band` (both signs of frequency), exactly zero elsewhere.
pub fn bandpass_reference(snd: &SpectralDensity, band: &Passband) -> Result<SpectralDensity> {
    let grid = *snd.grid();
    band.check(&grid)?;
    let (lo, hi) = band.omega_range(&grid);
    let tol = 1e-9 * grid.spacing();
    let values: Vec<f64> = (0..grid.n_freq())
        .map(|j| {
            let w = grid.abs_omega(j);
            if w >= lo - tol && w <= hi + tol {
                snd.values()[j]
            } else {
                0.0
            }
        })
        .collect();
    let in_band = (0..grid.n_freq()).any(|j| {
        let w = grid.abs_omega(j);
        w >= lo - tol && w <= hi + tol
    });
    if !in_band {
        return Err(FlexError::input(format!(
            "passband [{}, {}] Hz contains no grid point",
            band.f_low_hz, band.f_high_hz
        )));
    }
    SpectralDensity::new(grid, values)
}

/// `len` samples of the ARMA(2,1) process driven by seeded unit-variance
/// Gaussian noise, after discarding [`SYNTH_WARMUP`] samples.
pub fn synth_net_demand(model: &RationalSD, len: usize, seed: u64) -> Result<Vec<f64>> {
    model.validate()?;
    let [a1, a2] = model.ar;
    let sigma = model.gain.sqrt();
    let mut rng = rng_from_seed(seed);
    let (mut x1, mut x2, mut w1) = (0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(len);
    for k in 0..SYNTH_WARMUP + len {
        let w: f64 = rng.sample(StandardNormal);
        let x = -a1 * x1 - a2 * x2 + sigma * (w + model.ma * w1);
        x2 = x1;
        x1 = x;
        w1 = w;
        if k >= SYNTH_WARMUP {
            out.push(x);
        }
    }
    Ok(out)
}

/// A uniformly sampled net-demand record, converted to kW.
#[derive(Debug, Clone, PartialEq)]
pub struct NetDemand {
    pub values_kw: Vec<f64>,
    pub delta_t: f64,
}

/// Reads `timestamp,net_demand_mw` (timestamps in seconds or ISO 8601,
/// uniformly spaced) or a headerless single column sampled every
/// `delta_t` seconds.
pub fn read_net_demand_csv<R: Read>(input: R, delta_t: Option<f64>) -> Result<NetDemand> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = rdr.records();
    let first = match records.next() {
        Some(r) => r?,
        None => return Err(FlexError::input("net-demand file is empty")),
    };
    let two_column = first.len() == 2;
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    let header = two_column && first[1].parse::<f64>().is_err();
    if !header {
        rows.push(first.clone());
    } else if &first[1] != "net_demand_mw" {
        return Err(FlexError::input(format!(
            "expected header timestamp,net_demand_mw, got {:?}",
            first.iter().collect::<Vec<_>>()
        )));
    }
    for r in records {
        rows.push(r?);
    }
    let parse = |s: &str, row: usize| {
        s.parse::<f64>()
            .map_err(|_| FlexError::input(format!("row {row}: {s:?} is not a number")))
    };
    if two_column {
        let mut times = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != 2 {
                return Err(FlexError::input(format!("row {i}: expected 2 columns")));
            }
            times.push(parse_timestamp(&r[0], i)?);
            values.push(parse(&r[1], i)? * 1000.0);
        }
        if times.len() < 2 {
            return Err(FlexError::input("need at least two samples to infer the sampling interval"));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(FlexError::input("timestamps must increase"));
        }
        if let Some(i) = times
            .windows(2)
            .position(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0))
        {
            return Err(FlexError::input(format!(
                "timestamps are not uniformly spaced at row {}",
                i + 1
            )));
        }
        if let Some(given) = delta_t {
            if (given - dt).abs() > 1e-6 * dt {
                return Err(FlexError::input(format!(
                    "timestamps are {dt} s apart but the configured interval is {given} s"
                )));
            }
        }
        Ok(NetDemand {
            values_kw: values,
            delta_t: dt,
        })
    } else {
        let dt = delta_t.ok_or_else(|| {
            FlexError::input("a single-column net-demand file needs the sampling interval in the config")
        })?;
        let values = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if r.len() != 1 {
                    return Err(FlexError::input(format!("row {i}: expected 1 column")));
                }
                Ok(parse(&r[0], i)? * 1000.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NetDemand {
            values_kw: values,
            delta_t: dt,
        })
    }
}

fn parse_timestamp(s: &str, row: usize) -> Result<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s.trim_end_matches('Z'), fmt) {
            return Ok(t.and_utc().timestamp() as f64);
        }
    }
    Err(FlexError::input(format!("row {row}: cannot parse timestamp {s:?}")))
}
