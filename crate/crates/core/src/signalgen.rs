//! Zero-mean WSS sequences with a prescribed spectral density.
//!
//! The default random-phase method builds an `N`-point spectrum with
//! amplitude `sqrt(N * S(omega_m))` at every DFT bin `m` and a uniform random
//! phase, mirrors it for realness and inverts it. The expected periodogram of
//! the result equals `S` and its mean square equals the mean of the
//! resampled target. The target is resampled onto the `N`-point grid by
//! nearest grid point, so bases are piecewise constant in frequency.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{FlexError, Result};
use crate::rng::{rng_from_seed, sub_seed};
use crate::spectra::{check_theta, BasisSet, SpectralDensity};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    RandomPhase,
    /// Circular complex Gaussian DFT coefficients with `E|X_m|^2 = N S`:
    /// the periodogram fluctuates around `S` as for a Gaussian process.
    GaussianSpectrum,
    /// Minimum-phase spectral factor (cepstral method) driven by white
    /// Gaussian noise. Needs a strictly positive target.
    SpectralFactorization,
}

#[derive(Debug, Clone)]
pub struct NoiseRecipe {
    pub target: SpectralDensity,
    pub length: usize,
    pub seed: u64,
    pub method: Method,
}

impl NoiseRecipe {
    pub fn new(target: SpectralDensity, length: usize, seed: u64) -> Self {
        Self {
            target,
            length,
            seed,
            method: Method::RandomPhase,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }
}

pub fn synthesize(recipe: &NoiseRecipe) -> Result<Vec<f64>> {
    let n_freq = recipe.target.grid().n_freq();
    if recipe.length < n_freq {
        return Err(FlexError::input(format!(
            "sequence length {} is shorter than the grid size {n_freq}",
            recipe.length
        )));
    }
    if recipe.target.values().iter().any(|v| *v < 0.0) {
        return Err(FlexError::input("target spectral density has negative values"));
    }
    match recipe.method {
        Method::RandomPhase => {
            let mut spectrum = vec![Complex64::new(0.0, 0.0); recipe.length];
            add_random_phase(&mut spectrum, &recipe.target, 1.0, recipe.seed);
            Ok(inverse_real(spectrum))
        }
        Method::GaussianSpectrum => {
            let mut spectrum = vec![Complex64::new(0.0, 0.0); recipe.length];
            add_gaussian(&mut spectrum, &recipe.target, recipe.seed);
            Ok(inverse_real(spectrum))
        }
        Method::SpectralFactorization => spectral_factorization(recipe),
    }
}

/// `u[k] = sum_i phi_i[k]` where `phi_i` has density `theta_i * psi_i` and
/// is drawn from the child seed `sub_seed(seed, i)`.
///
/// Components are summed in the frequency domain; a single nonzero
/// coefficient reproduces [`synthesize`] on that component bit for bit.
pub fn synthesize_mixture(
    basis: &BasisSet,
    theta: &[f64],
    length: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_theta(basis, theta)?;
    let n_freq = basis.grid().n_freq();
    if length < n_freq {
        return Err(FlexError::input(format!(
            "sequence length {length} is shorter than the grid size {n_freq}"
        )));
    }
    let mut spectrum = vec![Complex64::new(0.0, 0.0); length];
    for (i, &t) in theta.iter().enumerate() {
        if t > 0.0 {
            add_random_phase(&mut spectrum, &basis.psi(i), t, sub_seed(seed, i as u64));
        }
    }
    Ok(inverse_real(spectrum))
}

/// Grid index of the target point nearest to DFT bin `m` of an `len`-point transform.
pub(crate) fn nearest_grid_index(m: usize, len: usize, n_freq: usize) -> usize {
    let q = ((m as f64) * n_freq as f64 / len as f64 + 0.5).floor() as usize;
    let half = n_freq / 2;
    if q >= half {
        0
    } else {
        q + half
    }
}

/// Adds `sqrt(scale * len * S)` with random phases to bins `0..=len/2` and
/// their conjugate mirrors. One uniform is drawn per bin regardless of the
/// target so the phases depend only on the seed.
fn add_random_phase(spectrum: &mut [Complex64], target: &SpectralDensity, scale: f64, seed: u64) {
    let len = spectrum.len();
    let n_freq = target.grid().n_freq();
    let values = target.values();
    let mut rng = rng_from_seed(seed);
    for m in 0..=len / 2 {
        let u: f64 = rng.random();
        let s = values[nearest_grid_index(m, len, n_freq)];
        let amp = (scale * s * len as f64).sqrt();
        let self_conjugate = m == 0 || 2 * m == len;
        let c = if self_conjugate {
            Complex64::new(if u < 0.5 { amp } else { -amp }, 0.0)
        } else {
            Complex64::from_polar(amp, 2.0 * PI * u)
        };
        spectrum[m] += c;
        if !self_conjugate {
            spectrum[len - m] += c.conj();
        }
    }
}

fn add_gaussian(spectrum: &mut [Complex64], target: &SpectralDensity, seed: u64) {
    let len = spectrum.len();
    let n_freq = target.grid().n_freq();
    let values = target.values();
    let mut rng = rng_from_seed(seed);
    for m in 0..=len / 2 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let s = values[nearest_grid_index(m, len, n_freq)] * len as f64;
        if m == 0 || 2 * m == len {
            spectrum[m] += Complex64::new(s.sqrt() * re, 0.0);
        } else {
            let c = Complex64::new(re, im) * (s / 2.0).sqrt();
            spectrum[m] += c;
            spectrum[len - m] += c.conj();
        }
    }
}

fn inverse_real(mut spectrum: Vec<Complex64>) -> Vec<f64> {
    let len = spectrum.len();
    FftPlanner::new().plan_fft_inverse(len).process(&mut spectrum);
    let inv = 1.0 / len as f64;
    spectrum.into_iter().map(|c| c.re * inv).collect()
}

fn spectral_factorization(recipe: &NoiseRecipe) -> Result<Vec<f64>> {
    let target = &recipe.target;
    let n = target.grid().n_freq();
    if let Some(j) = target.values().iter().position(|v| *v <= 0.0) {
        return Err(FlexError::input(format!(
            "spectral factorization needs a strictly positive target (S[{j}] = {})",
            target.values()[j]
        )));
    }
    let impulse = minimum_phase_impulse(target);

    let len = recipe.length;
    let total = len + n;
    let conv_len = (total + n).next_power_of_two();
    let mut rng = rng_from_seed(recipe.seed);
    let mut noise: Vec<Complex64> = (0..conv_len)
        .map(|k| {
            let w: f64 = if k < total { rng.sample(StandardNormal) } else { 0.0 };
            Complex64::new(w, 0.0)
        })
        .collect();
    let mut h: Vec<Complex64> = impulse
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(conv_len)
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(conv_len);
    fwd.process(&mut noise);
    fwd.process(&mut h);
    let mut prod: Vec<Complex64> = noise.iter().zip(&h).map(|(a, b)| a * b).collect();
    planner.plan_fft_inverse(conv_len).process(&mut prod);
    let inv = 1.0 / conv_len as f64;
    // drop the filter start-up transient
    Ok(prod[n..n + len].iter().map(|c| c.re * inv).collect())
}

/// Impulse response (length `n_freq`) of the minimum-phase filter with `|H|^2 = S`.
fn minimum_phase_impulse(target: &SpectralDensity) -> Vec<f64> {
    let n = target.grid().n_freq();
    let half = n / 2;
    let mut planner = FftPlanner::new();
    // DFT bin m sits at grid index m + n/2 (mod n)
    let mut log_mag: Vec<Complex64> = (0..n)
        .map(|m| Complex64::new(0.5 * target.values()[(m + half) % n].ln(), 0.0))
        .collect();
    planner.plan_fft_inverse(n).process(&mut log_mag);
    let inv = 1.0 / n as f64;
    let mut cep: Vec<Complex64> = log_mag.iter().map(|c| c * inv).collect();
    // fold the real cepstrum onto causal quefrencies
    for (k, c) in cep.iter_mut().enumerate() {
        if k == 0 || k == half {
            continue;
        } else if k < half {
            *c *= 2.0;
        } else {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_forward(n).process(&mut cep);
    let mut h: Vec<Complex64> = cep.iter().map(|c| c.exp()).collect();
    planner.plan_fft_inverse(n).process(&mut h);
    h.iter().map(|c| c.re * inv).collect()
}

/// Repeats the tail of a periodic sequence in front of it: returns
/// `x[len-warmup..] ++ ... ++ x` of total length `warmup + len`.
pub fn cyclic_extend(x: &[f64], warmup: usize) -> Vec<f64> {
    let len = x.len();
    if len == 0 {
        return Vec::new();
    }
    let start = (len - warmup % len) % len;
    let mut out = Vec::with_capacity(warmup + len);
    out.extend((0..warmup).map(|k| x[(start + k) % len]));
    out.extend_from_slice(x);
    out
}
