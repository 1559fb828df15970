//! Frequency grids, spectral densities and the indicator-band basis.
//!
//! All densities live on a two-sided grid of `n_freq` uniformly spaced points
//! on `[-pi, pi)` (rad/sample). Index `j` sits at `-pi + 2*pi*j/n_freq`, so
//! index `n_freq/2` is DC and index 0 is the Nyquist point `-pi` (identified
//! with `+pi`). Values are in (signal unit)^2 per rad/sample, normalised so
//! that the variance is `(1/2pi) * integral` = the mean of the values.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{FlexError, Result};

/// Default number of grid points.
pub const DEFAULT_N_FREQ: usize = 4096;

/// Relative tolerance for evenness of estimated densities.
pub const EVENNESS_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    n_freq: usize,
    delta_t: f64,
}

impl FrequencyGrid {
    /// `n_freq` must be even and at least 2 so the grid contains both DC and `-pi`.
    pub fn new(n_freq: usize, delta_t: f64) -> Result<Self> {
        if n_freq < 2 || n_freq % 2 != 0 {
            return Err(FlexError::input(format!(
                "grid size must be an even number >= 2, got {n_freq}"
            )));
        }
        if !(delta_t.is_finite() && delta_t > 0.0) {
            return Err(FlexError::input(format!(
                "sampling interval must be positive, got {delta_t}"
            )));
        }
        Ok(Self { n_freq, delta_t })
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    /// Sampling interval in seconds.
    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n_freq as f64
    }

    pub fn omega(&self, j: usize) -> f64 {
        -PI + self.spacing() * j as f64
    }

    pub fn omegas(&self) -> Vec<f64> {
        (0..self.n_freq).map(|j| self.omega(j)).collect()
    }

    /// `|omega|` of point `j`, with the Nyquist point reported as `+pi`.
    pub fn abs_omega(&self, j: usize) -> f64 {
        let q = j as i64 - (self.n_freq / 2) as i64;
        q.unsigned_abs() as f64 * self.spacing()
    }

    /// Index of `-omega_j`.
    pub fn mirror(&self, j: usize) -> usize {
        (self.n_freq - j) % self.n_freq
    }

    pub fn dc_index(&self) -> usize {
        self.n_freq / 2
    }

    /// Physical frequency in Hz of a normalised frequency in rad/sample.
    pub fn to_hz(&self, omega: f64) -> f64 {
        omega / (2.0 * PI * self.delta_t)
    }

    pub fn from_hz(&self, hz: f64) -> f64 {
        2.0 * PI * hz * self.delta_t
    }

    pub fn nyquist_hz(&self) -> f64 {
        0.5 / self.delta_t
    }

    /// Indices with `omega >= 0` in increasing frequency order (DC .. +pi).
    pub fn nonnegative_indices(&self) -> Vec<usize> {
        let half = self.n_freq / 2;
        (half..self.n_freq).chain(std::iter::once(0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    grid: FrequencyGrid,
    values: Vec<f64>,
}

impl SpectralDensity {
    /// Checks nonnegativity and evenness (relative tolerance [`EVENNESS_RTOL`]).
    pub fn new(grid: FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values)?;
        let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for j in 0..grid.n_freq() {
            let k = grid.mirror(j);
            if (values[j] - values[k]).abs() > EVENNESS_RTOL * scale {
                return Err(FlexError::input(format!(
                    "spectral density is not even: S[{j}] = {} vs S[{k}] = {}",
                    values[j], values[k]
                )));
            }
        }
        Ok(Self { grid, values })
    }

    /// Averages each value with its mirror image before validating.
    pub fn symmetrized(grid: FrequencyGrid, mut values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values)?;
        for j in 0..grid.n_freq() {
            let k = grid.mirror(j);
            if k > j {
                let avg = 0.5 * (values[j] + values[k]);
                values[j] = avg;
                values[k] = avg;
            }
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: FrequencyGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_freq()],
        }
    }

    pub fn constant(grid: FrequencyGrid, level: f64) -> Result<Self> {
        Self::new(grid, vec![level; grid.n_freq()])
    }

    /// Builds a density from an even function of `omega`.
    pub fn from_fn(grid: FrequencyGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..grid.n_freq()).map(|j| f(grid.abs_omega(j))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|v| v * factor).collect())
    }

    /// Relative L2 distance `||self - other|| / ||other||` over the grid.
    pub fn relative_l2(&self, other: &SpectralDensity) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        Ok(relative_l2(&self.values, &other.values))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["omega_rad_per_sample", "value"])?;
        for (j, v) in self.values.iter().enumerate() {
            w.write_record([self.grid.omega(j).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV form; the sampling interval is not part of the file.
    pub fn read_csv<R: Read>(input: R, delta_t: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "omega_rad_per_sample" || &headers[1] != "value" {
            return Err(FlexError::input(format!(
                "expected header omega_rad_per_sample,value, got {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut omegas = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| FlexError::input(format!("bad number {s:?}: {e}")))
            };
            omegas.push(parse(&rec[0])?);
            values.push(parse(&rec[1])?);
        }
        let grid = FrequencyGrid::new(values.len(), delta_t)?;
        for (j, w) in omegas.iter().enumerate() {
            if (w - grid.omega(j)).abs() > 1e-9 {
                return Err(FlexError::input(format!(
                    "row {j}: frequency {w} is not on the uniform grid"
                )));
            }
        }
        Self::new(grid, values)
    }

    pub fn to_json(&self) -> SdJson {
        SdJson {
            delta_t_s: self.grid.delta_t(),
            n_freq: self.grid.n_freq(),
            values: self.values.clone(),
        }
    }

    pub fn from_json(j: SdJson) -> Result<Self> {
        let grid = FrequencyGrid::new(j.n_freq, j.delta_t_s)?;
        Self::new(grid, j.values)
    }
}

/// JSON form of a [`SpectralDensity`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdJson {
    pub delta_t_s: f64,
    pub n_freq: usize,
    pub values: Vec<f64>,
}

fn check_values(grid: &FrequencyGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.n_freq() {
        return Err(FlexError::input(format!(
            "expected {} values, got {}",
            grid.n_freq(),
            values.len()
        )));
    }
    if let Some((j, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(FlexError::input(format!(
            "spectral density must be finite and nonnegative; S[{j}] = {v}"
        )));
    }
    Ok(())
}

pub(crate) fn same_grid(a: &FrequencyGrid, b: &FrequencyGrid) -> Result<()> {
    if a.n_freq() != b.n_freq() || (a.delta_t() - b.delta_t()).abs() > 1e-12 * a.delta_t() {
        return Err(FlexError::input(format!(
            "grid mismatch: ({}, {} s) vs ({}, {} s)",
            a.n_freq(),
            a.delta_t(),
            b.n_freq(),
            b.delta_t()
        )));
    }
    Ok(())
}

pub fn relative_l2(x: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = x
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Variance of the process with density `sd`: `(1/2pi) * sum S * (2pi/n)`.
pub fn integrate_sd(sd: &SpectralDensity) -> f64 {
    sd.values.iter().sum::<f64>() / sd.values.len() as f64
}

/// Reusable periodogram evaluator for a fixed record length and grid.
///
/// Each record of length `N` is zero-padded to the smallest multiple `M` of
/// `n_freq` with `M >= N`, transformed, and the `M`-point periodogram
/// `|X|^2 / N` is folded onto the grid with a trapezoidal window of
/// `M / n_freq` fine bins per grid point. Every fine bin carries total weight
/// one, so the grid mean equals the record's mean square exactly.
pub struct Periodogram {
    grid: FrequencyGrid,
    len: usize,
    padded: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Periodogram {
    pub fn new(grid: FrequencyGrid, len: usize) -> Result<Self> {
        if len < grid.n_freq() {
            return Err(FlexError::input(format!(
                "record length {len} is shorter than the grid size {}",
                grid.n_freq()
            )));
        }
        let n = grid.n_freq();
        let padded = len.div_ceil(n) * n;
        let fft = FftPlanner::new().plan_fft_forward(padded);
        Ok(Self {
            grid,
            len,
            padded,
            fft,
        })
    }

    /// Single-record periodogram on the grid (not symmetrized).
    pub fn single(&self, record: &[f64]) -> Result<Vec<f64>> {
        if record.len() != self.len {
            return Err(FlexError::input(format!(
                "record length {} differs from expected {}",
                record.len(),
                self.len
            )));
        }
        let mut buf: Vec<Complex64> = record
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(self.padded)
            .collect();
        self.fft.process(&mut buf);
        let inv_n = 1.0 / self.len as f64;
        let fine: Vec<f64> = buf.iter().map(|c| c.norm_sqr() * inv_n).collect();
        Ok(self.fold(&fine))
    }

    fn fold(&self, fine: &[f64]) -> Vec<f64> {
        let n = self.grid.n_freq();
        let m = self.padded as i64;
        let r = (self.padded / n) as i64;
        let half = (n / 2) as i64;
        (0..n)
            .map(|j| {
                let centre = (j as i64 - half) * r;
                let at = |t: i64| fine[(centre + t).rem_euclid(m) as usize];
                if r == 1 {
                    at(0)
                } else if r % 2 == 1 {
                    let h = (r - 1) / 2;
                    (-h..=h).map(at).sum::<f64>() / r as f64
                } else {
                    let h = r / 2;
                    let inner: f64 = (-h + 1..h).map(at).sum();
                    (inner + 0.5 * (at(-h) + at(h))) / r as f64
                }
            })
            .collect()
    }

    /// Ensemble average over realizations, symmetrized.
    pub fn average(&self, realizations: &[Vec<f64>]) -> Result<SpectralDensity> {
        if realizations.is_empty() {
            return Err(FlexError::input("periodogram needs at least one realization"));
        }
        let mut acc = vec![0.0; self.grid.n_freq()];
        for z in realizations {
            for (a, p) in acc.iter_mut().zip(self.single(z)?) {
                *a += p;
            }
        }
        let k = realizations.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        SpectralDensity::symmetrized(self.grid, acc)
    }
}

/// Averaged periodogram of equal-length realizations evaluated on `grid`.
pub fn periodogram(realizations: &[Vec<f64>], grid: &FrequencyGrid) -> Result<SpectralDensity> {
    let len = realizations
        .first()
        .map(Vec::len)
        .ok_or_else(|| FlexError::input("periodogram needs at least one realization"))?;
    if let Some(bad) = realizations.iter().position(|z| z.len() != len) {
        return Err(FlexError::input(format!(
            "realization {bad} has length {} but realization 0 has length {len}",
            realizations[bad].len()
        )));
    }
    Periodogram::new(*grid, len)?.average(realizations)
}

/// Averaged periodogram over consecutive non-overlapping segments of `segment_len` samples.
pub fn segmented_periodogram(
    series: &[f64],
    grid: &FrequencyGrid,
    segment_len: usize,
) -> Result<SpectralDensity> {
    if segment_len == 0 || series.len() < segment_len {
        return Err(FlexError::input(format!(
            "series of length {} cannot hold a segment of {segment_len}",
            series.len()
        )));
    }
    let segments: Vec<Vec<f64>> = series
        .chunks_exact(segment_len)
        .map(|c| c.to_vec())
        .collect();
    periodogram(&segments, grid)
}

/// Output density of an LTI filter with squared gain `gain2` driven by `sd`.
pub fn apply_lti_sd(sd: &SpectralDensity, gain2: &[f64]) -> Result<SpectralDensity> {
    if gain2.len() != sd.grid.n_freq() {
        return Err(FlexError::input(format!(
            "gain has {} points but the grid has {}",
            gain2.len(),
            sd.grid.n_freq()
        )));
    }
    let values = sd.values.iter().zip(gain2).map(|(s, g)| s * g).collect();
    SpectralDensity::new(sd.grid, values)
}

/// Indicator bands on the positive frequency axis, mirrored to negative frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    grid: FrequencyGrid,
    edges: Vec<f64>,
    members: Vec<Vec<usize>>,
}

impl BasisSet {
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Band edges in rad/sample.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Grid indices (both signs of frequency) where basis `i` equals one.
    pub fn members(&self, i: usize) -> &[usize] {
        &self.members[i]
    }

    /// Grid indices of basis `i` with `omega >= 0`, in increasing frequency order.
    pub fn nonnegative_members(&self, i: usize) -> Vec<usize> {
        let half = self.grid.n_freq() / 2;
        let mut idx: Vec<usize> = self.members[i]
            .iter()
            .copied()
            .filter(|&j| j >= half || j == 0)
            .collect();
        idx.sort_by(|a, b| self.grid.abs_omega(*a).total_cmp(&self.grid.abs_omega(*b)));
        idx
    }

    /// Two-sided width of band `i` in rad/sample (point count times spacing).
    pub fn two_sided_width(&self, i: usize) -> f64 {
        self.members[i].len() as f64 * self.grid.spacing()
    }

    pub fn psi(&self, i: usize) -> SpectralDensity {
        let mut values = vec![0.0; self.grid.n_freq()];
        for &j in &self.members[i] {
            values[j] = 1.0;
        }
        SpectralDensity {
            grid: self.grid,
            values,
        }
    }

    /// Equal-width bands covering `[lo, hi]` rad/sample.
    pub fn uniform(grid: &FrequencyGrid, count: usize, lo: f64, hi: f64) -> Result<Self> {
        if count == 0 {
            return Err(FlexError::input("basis needs at least one band"));
        }
        let edges: Vec<f64> = (0..=count)
            .map(|k| lo + (hi - lo) * k as f64 / count as f64)
            .collect();
        make_basis(grid, &edges)
    }
}

/// Indicator basis for `edges[0] < ... < edges[d]` (rad/sample, within `[0, pi]`).
///
/// Band `i` holds the grid points with `edges[i] <= |omega| < edges[i+1]`; a
/// top edge equal to `pi` is closed so the Nyquist point is covered.
pub fn make_basis(grid: &FrequencyGrid, edges: &[f64]) -> Result<BasisSet> {
    if edges.len() < 2 {
        return Err(FlexError::input("basis needs at least two edges"));
    }
    let tol = 1e-9 * grid.spacing();
    if edges[0] < -tol || edges[edges.len() - 1] > PI + tol {
        return Err(FlexError::input(format!(
            "basis edges must lie in [0, pi], got {} .. {}",
            edges[0],
            edges[edges.len() - 1]
        )));
    }
    if let Some(w) = edges.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(FlexError::input(format!(
            "basis edges must be strictly increasing, got {} then {}",
            w[0], w[1]
        )));
    }
    let d = edges.len() - 1;
    let top_closed = edges[d] >= PI - tol;
    let mut members = vec![Vec::new(); d];
    for j in 0..grid.n_freq() {
        let w = grid.abs_omega(j);
        let band = (0..d).find(|&i| {
            let upper_ok = if i == d - 1 && top_closed {
                w <= edges[i + 1] + tol
            } else {
                w < edges[i + 1] - tol
            };
            w >= edges[i] - tol && upper_ok
        });
        if let Some(i) = band {
            members[i].push(j);
        }
    }
    Ok(BasisSet {
        grid: *grid,
        edges: edges.to_vec(),
        members,
    })
}

/// `Psi^T theta`.
pub fn eval_basis(basis: &BasisSet, theta: &[f64]) -> Result<SpectralDensity> {
    check_theta(basis, theta)?;
    let mut values = vec![0.0; basis.grid.n_freq()];
    for (i, &t) in theta.iter().enumerate() {
        for &j in &basis.members[i] {
            values[j] += t;
        }
    }
    SpectralDensity::new(basis.grid, values)
}

pub(crate) fn check_theta(basis: &BasisSet, theta: &[f64]) -> Result<()> {
    if theta.len() != basis.len() {
        return Err(FlexError::input(format!(
            "theta has {} entries but the basis has {}",
            theta.len(),
            basis.len()
        )));
    }
    if let Some((i, t)) = theta
        .iter()
        .enumerate()
        .find(|(_, t)| !(t.is_finite() && **t >= 0.0))
    {
        return Err(FlexError::input(format!(
            "theta must be nonnegative; theta[{i}] = {t}"
        )));
    }
    Ok(())
}
