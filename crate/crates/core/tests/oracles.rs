//! Checks against oracles that do not go through the library's own synthesis.

use flexcap::loads::{discretize, lti_gain2, qos_signal, QoSChannel, StorageModel, ThermalParams};
use flexcap::spectra::{apply_lti_sd, integrate_sd, periodogram, relative_l2, FrequencyGrid, SpectralDensity};
use flexcap::signalgen::{synthesize, NoiseRecipe};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn white(n: usize, sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

#[test]
fn white_noise_has_a_flat_density_at_its_variance() {
    let n = 1 << 14;
    let grid = FrequencyGrid::new(n, 1.0).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let runs: Vec<Vec<f64>> = (0..100).map(|_| white(n, 2.0, &mut rng)).collect();
    let est = periodogram(&runs, &grid).unwrap();
    let mean = est.values().iter().sum::<f64>() / n as f64;
    assert!((mean - 4.0).abs() / 4.0 < 0.05, "{mean}");
}

#[test]
fn periodogram_integral_matches_sample_variance() {
    let n = 1 << 14;
    let grid = FrequencyGrid::new(n, 1.0).unwrap();
    let target = SpectralDensity::from_fn(grid, |w| if w.abs() < 1.0 { 3.0 } else { 0.5 }).unwrap();
    for seed in 0..50 {
        let x = synthesize(&NoiseRecipe::new(target.clone(), n, seed)).unwrap();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let est = integrate_sd(&periodogram(&[x], &grid).unwrap());
        assert!((est - var).abs() / var <= 0.05, "{est} vs {var}");
    }
}

#[test]
fn first_order_filter_obeys_the_gain_law() {
    let n = 4096;
    let grid = FrequencyGrid::new(n, 1.0).unwrap();
    let (a, b) = (0.8, 0.5);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let warm = 200;
    let runs: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            let w = white(n + warm, 1.0, &mut rng);
            let mut x = 0.0;
            let mut out = Vec::with_capacity(n);
            for (k, wk) in w.iter().enumerate() {
                x = a * x + b * wk;
                if k >= warm {
                    out.push(x);
                }
            }
            out
        })
        .collect();
    let est = periodogram(&runs, &grid).unwrap();
    let gain2: Vec<f64> = grid.omegas().iter().map(|w| b * b / (1.0 - 2.0 * a * w.cos() + a * a)).collect();
    let law = apply_lti_sd(&SpectralDensity::constant(grid, 1.0).unwrap(), &gain2).unwrap();
    let err = est.relative_l2(&law).unwrap();
    assert!(err <= 0.10, "{err}");
}

#[test]
fn qos_channels_obey_their_gain_law_for_gaussian_white_input() {
    let n = 2048;
    let dt = 60.0;
    let grid = FrequencyGrid::new(n, dt).unwrap();
    // a 30-step time constant keeps the storage pole wide compared with one bin
    let p = ThermalParams { r: 0.5, cth: 1.0, ..ThermalParams::table1() };
    let d = discretize(&p, dt);
    let channels = [
        QoSChannel::Power,
        QoSChannel::Ramp { delta_steps: 3 },
        QoSChannel::Energy { window_steps: 32 },
        QoSChannel::Storage { model: StorageModel::Lti },
    ];
    let warm = d.settling_steps();
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let inputs: Vec<Vec<f64>> = (0..400).map(|_| white(warm + n, 1.5, &mut rng)).collect();
    for ch in &channels {
        let outs: Vec<Vec<f64>> = inputs
            .iter()
            .map(|u| qos_signal(ch, u, &p, &d).unwrap()[warm..].to_vec())
            .collect();
        let est = periodogram(&outs, &grid).unwrap();
        let g2 = lti_gain2(ch, &d, &grid).unwrap();
        let law: Vec<f64> = g2.iter().map(|g| g * 2.25).collect();
        let err = relative_l2(est.values(), &law);
        assert!(err <= 0.10, "{}: {err}", ch.name());
    }
}
