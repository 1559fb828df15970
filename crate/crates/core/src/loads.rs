//! Thermal load models and the quality-of-service (QoS) channels that map a
//! power deviation `P~[k]` (kW) to the signal each QoS constraint bounds.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FlexError, Result};
use crate::spectra::FrequencyGrid;

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Time constants of transient kept out of every statistic.
pub const WARMUP_TIME_CONSTANTS: f64 = 5.0;

/// Building and HVAC parameters. Units: R in degC/kW, Cth in kWh/degC,
/// temperatures in degC, internal gain in kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalParams {
    pub r: f64,
    pub cth: f64,
    pub eta0: f64,
    #[serde(default)]
    pub alpha1: f64,
    #[serde(default)]
    pub alpha2: f64,
    pub ta: f64,
    #[serde(default = "default_tbar")]
    pub tbar: f64,
    #[serde(default)]
    pub qint: f64,
}

fn default_tbar() -> f64 {
    22.0
}

impl ThermalParams {
    /// Large commercial building (R = 8, C = 22, COP 3.5, 30 degC outside, 22 degC setpoint).
    pub fn table1() -> Self {
        Self {
            r: 8.0,
            cth: 22.0,
            eta0: 3.5,
            alpha1: 0.0,
            alpha2: 0.0,
            ta: 30.0,
            tbar: 22.0,
            qint: 0.0,
        }
    }

    pub fn with_cop_model(mut self, alpha1: f64, alpha2: f64) -> Self {
        self.alpha1 = alpha1;
        self.alpha2 = alpha2;
        self
    }

    /// COP at the setpoint, `eta0 - alpha1 * (Ta - Tbar) + alpha2`.
    pub fn eta_bar(&self) -> f64 {
        self.eta0 - self.alpha1 * (self.ta - self.tbar) + self.alpha2
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.r, self.cth, self.eta0, self.alpha1, self.alpha2, self.ta, self.tbar, self.qint,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(FlexError::param("thermal parameters must be finite"));
        }
        if self.r <= 0.0 || self.cth <= 0.0 || self.eta0 <= 0.0 {
            return Err(FlexError::param(format!(
                "R, C and eta0 must be positive (R = {}, C = {}, eta0 = {})",
                self.r, self.cth, self.eta0
            )));
        }
        if self.eta_bar() <= 0.0 {
            return Err(FlexError::param(format!(
                "effective COP {} is not positive",
                self.eta_bar()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopModel {
    /// `eta = eta0`.
    #[default]
    Constant,
    /// `eta = eta_bar`, the temperature-dependent COP at the setpoint.
    TemperatureDependent,
}

/// Steady-state power that holds the setpoint, `((Ta - Tbar)/R + qint) / eta`.
///
/// Positive when cooling a building that is warmer outside.
pub fn baseline_power(p: &ThermalParams, cop: CopModel) -> Result<f64> {
    let eta = match cop {
        CopModel::Constant => p.eta0,
        CopModel::TemperatureDependent => p.eta_bar(),
    };
    if !(eta > 0.0) {
        return Err(FlexError::param(format!("COP {eta} is not positive")));
    }
    if p.r <= 0.0 {
        return Err(FlexError::param("R must be positive"));
    }
    Ok(((p.ta - p.tbar) / p.r + p.qint) / eta)
}

/// First-order model `T~[k+1] = a T~[k] + b P~[k]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub delta_t_s: f64,
    pub a: f64,
    /// `1 - a`, kept separately because `a` is within 1e-4 of one for slow buildings.
    pub one_minus_a: f64,
    pub b: f64,
    /// 1/h
    pub gamma: f64,
    /// degC per kWh
    pub beta: f64,
}

impl Discretization {
    /// Backward-Euler counterpart with COP `eta_bar`:
    /// `a = 1/(1 + gamma dt)`, `b = beta dt/(1 + gamma dt)`.
    pub fn backward_euler(p: &ThermalParams, delta_t_s: f64) -> Self {
        let dt_h = delta_t_s / SECONDS_PER_HOUR;
        let gamma = 1.0 / (p.r * p.cth);
        let beta = p.eta_bar() / p.cth;
        let den = 1.0 + gamma * dt_h;
        Self {
            delta_t_s,
            a: 1.0 / den,
            one_minus_a: gamma * dt_h / den,
            b: beta * dt_h / den,
            gamma,
            beta,
        }
    }

    pub fn delta_t_hours(&self) -> f64 {
        self.delta_t_s / SECONDS_PER_HOUR
    }

    /// `ceil(5 / (1 - a))`.
    pub fn settling_steps(&self) -> usize {
        (WARMUP_TIME_CONSTANTS / self.one_minus_a).ceil() as usize
    }
}

/// Exact zero-order-hold discretization of `dT/dt = -gamma T + beta P` with
/// `gamma = 1/(R C)`, `beta = eta0/C`; `dt` in seconds, rates per hour.
pub fn discretize(p: &ThermalParams, delta_t_s: f64) -> Discretization {
    let dt_h = delta_t_s / SECONDS_PER_HOUR;
    let gamma = 1.0 / (p.r * p.cth);
    let beta = p.eta0 / p.cth;
    let one_minus_a = -(-gamma * dt_h).exp_m1();
    Discretization {
        delta_t_s,
        a: (-gamma * dt_h).exp(),
        one_minus_a,
        b: beta * one_minus_a / gamma,
        gamma,
        beta,
    }
}

/// Output `T[0..len]` with `T[0] = t0`; `T[k]` depends on inputs before `k`.
pub fn simulate_lti(d: &Discretization, pdev: &[f64], t0: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(pdev.len());
    let mut t = t0;
    for &p in pdev {
        out.push(t);
        t = d.a * t + d.b * p;
    }
    out
}

/// Backward-Euler step of the bilinear deviation model
///
/// `C dT/dt = -T/R + eta_bar P + alpha1 Pbar T + alpha1 T P`
///
/// with `Pbar` the baseline at the temperature-dependent COP. The implicit
/// update is affine in `T[k+1]` and solved exactly. Indexing matches
/// [`simulate_lti`].
pub fn simulate_bilinear(
    p: &ThermalParams,
    delta_t_s: f64,
    pdev: &[f64],
    t0: f64,
) -> Result<Vec<f64>> {
    p.validate()?;
    let pbar = baseline_power(p, CopModel::TemperatureDependent)?;
    let h = delta_t_s / SECONDS_PER_HOUR / p.cth;
    let eta_bar = p.eta_bar();
    let base_rate = 1.0 / p.r - p.alpha1 * pbar;
    let mut out = Vec::with_capacity(pdev.len());
    let mut t = t0;
    for (k, &u) in pdev.iter().enumerate() {
        out.push(t);
        let den = 1.0 + h * (base_rate - p.alpha1 * u);
        if !(den > 0.0) {
            return Err(FlexError::Simulation {
                step: k,
                reason: format!("implicit step denominator {den:.3e} <= 0 at P~ = {u} kW"),
            });
        }
        t = (t + h * eta_bar * u) / den;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageModel {
    #[default]
    Lti,
    Bilinear,
}

/// The signal a QoS constraint bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QoSChannel {
    /// `P~[k]` itself (kW).
    Power,
    /// `P~[k] - P~[k - delta]` (kW).
    Ramp { delta_steps: usize },
    /// `dt * sum_{s=k-T+1..k} P~[s]` (kWh).
    Energy { window_steps: usize },
    /// Indoor temperature deviation (degC).
    Storage { model: StorageModel },
}

impl QoSChannel {
    pub fn name(&self) -> &'static str {
        match self {
            QoSChannel::Power => "power",
            QoSChannel::Ramp { .. } => "ramp",
            QoSChannel::Energy { .. } => "energy",
            QoSChannel::Storage { .. } => "storage",
        }
    }

    pub fn unit(&self) -> &'static str {
        match self {
            QoSChannel::Power | QoSChannel::Ramp { .. } => "kW",
            QoSChannel::Energy { .. } => "kWh",
            QoSChannel::Storage { .. } => "degC",
        }
    }

    pub fn is_lti(&self) -> bool {
        !matches!(
            self,
            QoSChannel::Storage {
                model: StorageModel::Bilinear
            }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            QoSChannel::Ramp { delta_steps: 0 } => Err(FlexError::input("ramp interval must be >= 1 step")),
            QoSChannel::Energy { window_steps: 0 } => {
                Err(FlexError::input("energy window must be >= 1 step"))
            }
            _ => Ok(()),
        }
    }

    /// Samples dropped before any statistic is computed on this channel.
    pub fn warmup_steps(&self, d: &Discretization) -> usize {
        match *self {
            QoSChannel::Power => 0,
            QoSChannel::Ramp { delta_steps } => delta_steps,
            QoSChannel::Energy { window_steps } => window_steps,
            QoSChannel::Storage { .. } => d.settling_steps(),
        }
    }
}

/// `Z_l[k]` for the whole input (same length). Samples before
/// [`QoSChannel::warmup_steps`] use zero history and should be discarded.
pub fn qos_signal(
    ch: &QoSChannel,
    pdev: &[f64],
    p: &ThermalParams,
    d: &Discretization,
) -> Result<Vec<f64>> {
    ch.validate()?;
    let warm = match *ch {
        QoSChannel::Ramp { delta_steps } => delta_steps,
        QoSChannel::Energy { window_steps } => window_steps,
        _ => 0,
    };
    if pdev.len() < warm.max(1) {
        return Err(FlexError::input(format!(
            "{} channel needs at least {warm} samples, got {}",
            ch.name(),
            pdev.len()
        )));
    }
    Ok(match *ch {
        QoSChannel::Power => pdev.to_vec(),
        QoSChannel::Ramp { delta_steps } => ramp(pdev, delta_steps),
        QoSChannel::Energy { window_steps } => energy(pdev, window_steps, d.delta_t_hours()),
        QoSChannel::Storage {
            model: StorageModel::Lti,
        } => simulate_lti(d, pdev, 0.0),
        QoSChannel::Storage {
            model: StorageModel::Bilinear,
        } => simulate_bilinear(p, d.delta_t_s, pdev, 0.0)?,
    })
}

fn ramp(x: &[f64], delta: usize) -> Vec<f64> {
    (0..x.len())
        .map(|k| x[k] - if k >= delta { x[k - delta] } else { 0.0 })
        .collect()
}

fn energy(x: &[f64], window: usize, dt_h: f64) -> Vec<f64> {
    // the running sum is refreshed every window to bound roundoff drift
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for k in 0..x.len() {
        acc += x[k];
        if k >= window {
            acc -= x[k - window];
        }
        if k % window == window - 1 {
            acc = x[k + 1 - window..=k].iter().sum();
        }
        out.push(acc * dt_h);
    }
    out
}

/// `|G_l(e^{j omega})|^2` on the grid.
pub fn lti_gain2(ch: &QoSChannel, d: &Discretization, grid: &FrequencyGrid) -> Result<Vec<f64>> {
    ch.validate()?;
    if !ch.is_lti() {
        return Err(FlexError::Unsupported(
            "the bilinear storage channel has no frequency response".into(),
        ));
    }
    Ok((0..grid.n_freq())
        .map(|j| gain2_at(ch, d, grid.abs_omega(j)))
        .collect())
}

fn gain2_at(ch: &QoSChannel, d: &Discretization, w: f64) -> f64 {
    match *ch {
        QoSChannel::Power => 1.0,
        QoSChannel::Ramp { delta_steps } => 2.0 - 2.0 * (w * delta_steps as f64).cos(),
        QoSChannel::Energy { window_steps } => {
            let t = window_steps as f64;
            let dt_h = d.delta_t_hours();
            let s = (w / 2.0).sin();
            if s.abs() < 1e-12 {
                t * t * dt_h * dt_h
            } else {
                let num = (w * t / 2.0).sin();
                dt_h * dt_h * num * num / (s * s)
            }
        }
        QoSChannel::Storage { .. } => {
            // 1 - 2a cos w + a^2 = (1-a)^2 + 2a(1 - cos w)
            let den = d.one_minus_a * d.one_minus_a + 4.0 * d.a * (w / 2.0).sin().powi(2);
            d.b * d.b / den
        }
    }
}

/// `integral_{lo}^{hi} |G_l(e^{j omega})|^2 d omega` for `0 <= lo <= hi <= pi`, in closed form.
pub fn gain2_integral(ch: &QoSChannel, d: &Discretization, lo: f64, hi: f64) -> Result<f64> {
    ch.validate()?;
    if !ch.is_lti() {
        return Err(FlexError::Unsupported(
            "the bilinear storage channel has no frequency response".into(),
        ));
    }
    if !(0.0 <= lo && lo <= hi && hi <= PI + 1e-12) {
        return Err(FlexError::input(format!(
            "integration interval [{lo}, {hi}] is not inside [0, pi]"
        )));
    }
    let antiderivative = |w: f64| -> f64 {
        match *ch {
            QoSChannel::Power => w,
            QoSChannel::Ramp { delta_steps } => {
                let dl = delta_steps as f64;
                2.0 * w - 2.0 * (dl * w).sin() / dl
            }
            QoSChannel::Energy { window_steps } => {
                // sin^2(Tw/2)/sin^2(w/2) = T + 2 sum_{k<T} (T-k) cos(kw)
                let t = window_steps as f64;
                let dt_h = d.delta_t_hours();
                let series: f64 = (1..window_steps)
                    .map(|k| (t - k as f64) * (k as f64 * w).sin() / k as f64)
                    .sum();
                dt_h * dt_h * (t * w + 2.0 * series)
            }
            QoSChannel::Storage { .. } => {
                let one_plus_a = 1.0 + d.a;
                let k = one_plus_a / d.one_minus_a;
                let scale = 2.0 * d.b * d.b / (d.one_minus_a * one_plus_a);
                scale * (k * (w / 2.0).sin()).atan2((w / 2.0).cos())
            }
        }
    };
    Ok(antiderivative(hi) - antiderivative(lo))
}

/// A black-box load: maps a power-deviation sequence to every QoS signal.
///
/// Data-driven estimation only calls [`simulate`](LoadSimulator::simulate);
/// it never looks inside the model.
pub trait LoadSimulator {
    fn channels(&self) -> &[QoSChannel];

    /// Leading samples of every output that carry start-up transient.
    fn warmup_steps(&self) -> usize;

    /// One output sequence per channel, each as long as `pdev`.
    fn simulate(&self, pdev: &[f64]) -> Result<Vec<Vec<f64>>>;
}

/// Single building with one or more QoS channels.
#[derive(Debug, Clone)]
pub struct ThermalLoad {
    params: ThermalParams,
    disc: Discretization,
    channels: Vec<QoSChannel>,
    warmup: usize,
}

impl ThermalLoad {
    pub fn new(params: ThermalParams, delta_t_s: f64, channels: Vec<QoSChannel>) -> Result<Self> {
        params.validate()?;
        if !(delta_t_s.is_finite() && delta_t_s > 0.0) {
            return Err(FlexError::param(format!("sampling interval {delta_t_s} s")));
        }
        for ch in &channels {
            ch.validate()?;
        }
        let disc = discretize(&params, delta_t_s);
        let mut warmup = channels
            .iter()
            .map(|c| c.warmup_steps(&disc))
            .max()
            .unwrap_or(0);
        let bilinear = channels.iter().any(|c| !c.is_lti());
        if bilinear {
            // the bilinear pole at zero deviation is (1/R - alpha1 Pbar)/C
            let pbar = baseline_power(&params, CopModel::TemperatureDependent)?;
            let rate = (1.0 / params.r - params.alpha1 * pbar) / params.cth;
            if !(rate > 0.0) {
                return Err(FlexError::param(format!(
                    "bilinear model is unstable at the baseline (decay rate {rate:.3e} 1/h)"
                )));
            }
            let one_minus_a = -(-rate * disc.delta_t_hours()).exp_m1();
            warmup = warmup.max((WARMUP_TIME_CONSTANTS / one_minus_a).ceil() as usize);
        }
        Ok(Self {
            params,
            disc,
            channels,
            warmup,
        })
    }

    pub fn params(&self) -> &ThermalParams {
        &self.params
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }
}

impl LoadSimulator for ThermalLoad {
    fn channels(&self) -> &[QoSChannel] {
        &self.channels
    }

    fn warmup_steps(&self) -> usize {
        self.warmup
    }

    fn simulate(&self, pdev: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.channels
            .iter()
            .map(|ch| qos_signal(ch, pdev, &self.params, &self.disc))
            .collect()
    }
}

/// `n` identical loads that each track `1/n` of the aggregate deviation.
///
/// Input and outputs are aggregate quantities: the per-load signal of
/// `u / n` scaled back up by `n`.
#[derive(Debug, Clone)]
pub struct Ensemble<S> {
    inner: S,
    n: usize,
}

impl<S: LoadSimulator> Ensemble<S> {
    pub fn new(inner: S, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(FlexError::input("ensemble size must be at least 1"));
        }
        Ok(Self { inner, n })
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn size(&self) -> usize {
        self.n
    }
}

impl<S: LoadSimulator> LoadSimulator for Ensemble<S> {
    fn channels(&self) -> &[QoSChannel] {
        self.inner.channels()
    }

    fn warmup_steps(&self) -> usize {
        self.inner.warmup_steps()
    }

    fn simulate(&self, pdev: &[f64]) -> Result<Vec<Vec<f64>>> {
        if self.n == 1 {
            return self.inner.simulate(pdev);
        }
        let n = self.n as f64;
        let per_load: Vec<f64> = pdev.iter().map(|u| u / n).collect();
        let mut out = self.inner.simulate(&per_load)?;
        out.iter_mut()
            .for_each(|z| z.iter_mut().for_each(|v| *v *= n));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn baseline_cases() {
        let mut p = ThermalParams::table1();
        assert_relative_eq!(baseline_power(&p, CopModel::Constant).unwrap(), 8.0 / 28.0);
        assert_relative_eq!(
            baseline_power(&p, CopModel::Constant).unwrap(),
            0.2857,
            epsilon = 1e-4
        );
        p.ta = p.tbar;
        assert_eq!(baseline_power(&p, CopModel::Constant).unwrap(), 0.0);
        let mut q = ThermalParams::table1();
        let base = baseline_power(&q, CopModel::Constant).unwrap();
        q.ta = q.tbar + 2.0 * (q.ta - q.tbar);
        assert_relative_eq!(baseline_power(&q, CopModel::Constant).unwrap(), 2.0 * base);
    }

    #[test]
    fn nonphysical_cop_rejected() {
        let p = ThermalParams::table1().with_cop_model(1.0, 0.0);
        assert!(p.validate().is_err());
        assert!(baseline_power(&p, CopModel::TemperatureDependent).is_err());
        let mut q = ThermalParams::table1();
        q.r = 0.0;
        assert!(q.validate().is_err());
    }

    #[test]
    fn discretize_table1_60s() {
        let d = discretize(&ThermalParams::table1(), 60.0);
        assert_relative_eq!(d.gamma, 1.0 / 176.0);
        assert_relative_eq!(d.a, (-(1.0 / 60.0) / 176.0_f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(d.a.ln(), -9.4697e-5, max_relative = 1e-4);
        assert_relative_eq!(d.b / d.one_minus_a, 3.5 * 8.0, max_relative = 1e-12);
        assert!(d.a > 0.0 && d.a < 1.0 && d.b > 0.0);
    }

    #[test]
    fn discretize_small_step_limit() {
        let d = discretize(&ThermalParams::table1(), 1e-6);
        assert!((1.0 - d.a) < 1e-11 && d.b < 1e-10);
    }

    #[test]
    fn lti_step_response_is_geometric() {
        let d = discretize(&ThermalParams::table1(), 60.0);
        let out = simulate_lti(&d, &vec![1.0; 200], 0.0);
        for (k, t) in out.iter().enumerate() {
            let expect = d.b * (1.0 - d.a.powi(k as i32)) / (1.0 - d.a);
            assert_relative_eq!(*t, expect, max_relative = 1e-9, epsilon = 1e-15);
        }
        assert!(simulate_lti(&d, &[0.0; 10], 0.0).iter().all(|&t| t == 0.0));
    }

    #[test]
    fn lti_steady_state_gain() {
        let mut p = ThermalParams::table1();
        p.r = 0.5;
        p.cth = 0.2;
        let d = discretize(&p, 60.0);
        let out = simulate_lti(&d, &vec![2.0; 20_000], 0.0);
        assert_relative_eq!(*out.last().unwrap(), p.eta0 * p.r * 2.0, max_relative = 1e-9);
    }

    #[test]
    fn bilinear_reduces_to_backward_euler_lti() {
        let p = ThermalParams::table1();
        let d = Discretization::backward_euler(&p, 20.0);
        let u: Vec<f64> = (0..5000).map(|k| (k as f64 * 0.01).sin() * 3.0).collect();
        let lin = simulate_lti(&d, &u, 0.1);
        let bil = simulate_bilinear(&p, 20.0, &u, 0.1).unwrap();
        for (a, b) in lin.iter().zip(&bil) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert!(simulate_bilinear(&p, 20.0, &[0.0; 10], 0.0)
            .unwrap()
            .iter()
            .all(|&t| t == 0.0));
    }

    #[test]
    fn bilinear_converges_to_lti_as_alpha1_vanishes() {
        let u: Vec<f64> = (0..20_000)
            .map(|k| 2.0 * (k as f64 * 0.002).sin() + (k as f64 * 0.03).cos())
            .collect();
        let base = ThermalParams::table1();
        let lin = simulate_lti(&Discretization::backward_euler(&base, 20.0), &u, 0.0);
        let mut last = f64::INFINITY;
        for alpha1 in [0.1, 0.03, 0.01, 0.003, 0.001] {
            let p = base.with_cop_model(alpha1, alpha1 * (base.ta - base.tbar));
            let out = simulate_bilinear(&p, 20.0, &u, 0.0).unwrap();
            let sup = lin
                .iter()
                .zip(&out)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(sup < last, "sup {sup} at alpha1 {alpha1}");
            last = sup;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn bilinear_reports_failing_step() {
        let p = ThermalParams::table1().with_cop_model(0.15, 1.175);
        let mut u = vec![0.0; 10];
        u[4] = 1e9;
        match simulate_bilinear(&p, 20.0, &u, 0.0) {
            Err(FlexError::Simulation { step, .. }) => assert_eq!(step, 4),
            other => panic!("expected simulation error, got {other:?}"),
        }
    }

    #[test]
    fn qos_signals() {
        let p = ThermalParams::table1();
        let d = discretize(&p, 60.0);
        let u: Vec<f64> = (0..50).map(|k| k as f64).collect();
        assert_eq!(qos_signal(&QoSChannel::Power, &u, &p, &d).unwrap(), u);
        let flat = vec![3.0; 50];
        let r = qos_signal(&QoSChannel::Ramp { delta_steps: 3 }, &flat, &p, &d).unwrap();
        assert!(r[3..].iter().all(|&v| v == 0.0));
        let ones = vec![1.0; 900];
        let e = qos_signal(&QoSChannel::Energy { window_steps: 300 }, &ones, &p, &d).unwrap();
        for v in &e[299..] {
            assert_relative_eq!(*v, 5.0, max_relative = 1e-12);
        }
        assert!(qos_signal(&QoSChannel::Energy { window_steps: 300 }, &flat, &p, &d).is_err());
        assert!(QoSChannel::Ramp { delta_steps: 0 }.validate().is_err());
    }

    #[test]
    fn gain2_cases() {
        let p = ThermalParams::table1();
        let d = discretize(&p, 60.0);
        let g = FrequencyGrid::new(64, 60.0).unwrap();
        assert!(lti_gain2(&QoSChannel::Power, &d, &g).unwrap().iter().all(|&v| v == 1.0));
        let ramp = lti_gain2(&QoSChannel::Ramp { delta_steps: 1 }, &d, &g).unwrap();
        assert_eq!(ramp[g.dc_index()], 0.0);
        assert_relative_eq!(ramp[0], 4.0);
        let st = lti_gain2(&QoSChannel::Storage { model: StorageModel::Lti }, &d, &g).unwrap();
        assert_relative_eq!(st[g.dc_index()], (3.5 * 8.0_f64).powi(2), max_relative = 1e-9);
        let en = lti_gain2(&QoSChannel::Energy { window_steps: 300 }, &d, &g).unwrap();
        assert_relative_eq!(en[g.dc_index()], 25.0, max_relative = 1e-12);
        assert!(matches!(
            lti_gain2(&QoSChannel::Storage { model: StorageModel::Bilinear }, &d, &g),
            Err(FlexError::Unsupported(_))
        ));
    }

    #[test]
    fn gain2_integrals_match_quadrature() {
        let d = discretize(&ThermalParams::table1(), 600.0);
        let channels = [
            QoSChannel::Power,
            QoSChannel::Ramp { delta_steps: 2 },
            QoSChannel::Energy { window_steps: 7 },
            QoSChannel::Storage { model: StorageModel::Lti },
        ];
        let (lo, hi) = (0.3, 1.7);
        for ch in &channels {
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let quad: f64 = (0..n)
                .map(|k| gain2_at(ch, &d, lo + (k as f64 + 0.5) * h) * h)
                .sum();
            let exact = gain2_integral(ch, &d, lo, hi).unwrap();
            assert_relative_eq!(exact, quad, max_relative = 1e-8);
        }
    }

    #[test]
    fn storage_full_band_integral_is_variance_gain() {
        let d = discretize(&ThermalParams::table1(), 20.0);
        let full = gain2_integral(&QoSChannel::Storage { model: StorageModel::Lti }, &d, 0.0, PI)
            .unwrap()
            / PI;
        assert_relative_eq!(full, d.b * d.b / (1.0 - d.a * d.a), max_relative = 1e-6);
    }

    #[test]
    fn ensemble_scales_linear_channels() {
        let p = ThermalParams::table1();
        let load = ThermalLoad::new(
            p,
            60.0,
            vec![QoSChannel::Power, QoSChannel::Storage { model: StorageModel::Lti }],
        )
        .unwrap();
        let ens = Ensemble::new(load.clone(), 100).unwrap();
        let u: Vec<f64> = (0..100).map(|k| (k as f64).sin()).collect();
        let a = load.simulate(&u).unwrap();
        let b = ens.simulate(&u).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert_relative_eq!(x, y, max_relative = 1e-12, epsilon = 1e-15);
        }
        assert!(Ensemble::new(load, 0).is_err());
    }
}
