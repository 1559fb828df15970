use flexcap::capacity::{
    assemble_objective, chebyshev_bound, solve_qp, ConstraintMap, Provenance, QPProblem,
};
use flexcap::loads::{
    discretize, qos_signal, simulate_bilinear, simulate_lti, Discretization, QoSChannel,
    ThermalParams,
};
use flexcap::refsd::{bandpass_reference, Passband, RationalSD};
use flexcap::signalgen::{synthesize, synthesize_mixture, NoiseRecipe};
use flexcap::spectra::{
    eval_basis, integrate_sd, make_basis, periodogram, BasisSet, FrequencyGrid, SpectralDensity,
};
use proptest::prelude::*;
use std::f64::consts::PI;

fn is_even(sd: &SpectralDensity) -> bool {
    let g = sd.grid();
    (0..g.n_freq()).all(|j| sd.values()[j] == sd.values()[g.mirror(j)])
}

fn edges_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 2..8).prop_map(|w| {
        let total: f64 = w.iter().sum();
        let mut acc = 0.0;
        let mut edges = vec![0.0];
        for x in w {
            acc += x / total * PI;
            edges.push(acc.min(PI));
        }
        edges
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn estimated_and_constructed_densities_are_even(seed in 0u64..1000, level in 0.1f64..10.0, tilt in -0.9f64..0.9) {
        let g = FrequencyGrid::new(128, 1.0).unwrap();
        let s = SpectralDensity::from_fn(g, |w| level * (1.0 + tilt * w.cos())).unwrap();
        prop_assert!(is_even(&s));
        let x = synthesize(&NoiseRecipe::new(s, 300, seed)).unwrap();
        let est = periodogram(&[x], &g).unwrap();
        prop_assert!(is_even(&est));
        prop_assert!(est.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn bases_are_disjoint_and_orthogonal(edges in edges_strategy()) {
        let g = FrequencyGrid::new(256, 1.0).unwrap();
        let basis = make_basis(&g, &edges).unwrap();
        for i in 0..basis.len() {
            prop_assert!(is_even(&basis.psi(i)));
            for k in 0..i {
                let overlap: f64 = basis.psi(i).values().iter()
                    .zip(basis.psi(k).values())
                    .map(|(a, b)| a * b)
                    .sum();
                prop_assert_eq!(overlap, 0.0);
            }
        }
        let objective = assemble_objective(&basis, &SpectralDensity::constant(g, 1.0).unwrap()).unwrap();
        for i in 0..basis.len() {
            for k in 0..basis.len() {
                if i != k {
                    prop_assert_eq!(objective.a[i][k], 0.0);
                }
            }
        }
    }

    #[test]
    fn eval_basis_integral_is_weighted_width(edges in edges_strategy(), scale in 0.0f64..5.0) {
        let g = FrequencyGrid::new(256, 1.0).unwrap();
        let basis = make_basis(&g, &edges).unwrap();
        let theta: Vec<f64> = (0..basis.len()).map(|i| scale * (1 + i) as f64).collect();
        let sd = eval_basis(&basis, &theta).unwrap();
        prop_assert!(is_even(&sd));
        let want: f64 = (0..basis.len())
            .map(|i| theta[i] * basis.members(i).len() as f64 / g.n_freq() as f64)
            .sum();
        prop_assert!((integrate_sd(&sd) - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn synthesis_scales_with_the_square_root_of_the_target(seed in 0u64..10_000, c in 0.01f64..100.0) {
        let g = FrequencyGrid::new(64, 1.0).unwrap();
        let s = SpectralDensity::from_fn(g, |w| 1.0 + w.abs()).unwrap();
        let x = synthesize(&NoiseRecipe::new(s.clone(), 64, seed)).unwrap();
        let y = synthesize(&NoiseRecipe::new(s.scaled(c).unwrap(), 64, seed)).unwrap();
        let again = synthesize(&NoiseRecipe::new(s, 64, seed)).unwrap();
        prop_assert_eq!(&x, &again);
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a * c.sqrt() - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn mixture_components_are_uncorrelated(seed in 0u64..10_000) {
        let n = 4096;
        let g = FrequencyGrid::new(n, 1.0).unwrap();
        let basis = make_basis(&g, &[0.0, 1.0, 2.0, PI]).unwrap();
        let parts: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                let mut theta = vec![0.0; 3];
                theta[i] = 1.0;
                synthesize_mixture(&basis, &theta, n, seed).unwrap()
            })
            .collect();
        let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..3 {
            for k in 0..i {
                let dot: f64 = parts[i].iter().zip(&parts[k]).map(|(a, b)| a * b).sum();
                let corr = dot / (norm(&parts[i]) * norm(&parts[k]));
                prop_assert!(corr.abs() <= 3.0 / (n as f64).sqrt());
            }
        }
    }

    #[test]
    fn energy_of_a_constant_input_is_window_times_level(level in -5.0f64..5.0, window in 1usize..50, dt in 10.0f64..600.0) {
        let p = ThermalParams::table1();
        let d = discretize(&p, dt);
        let ch = QoSChannel::Energy { window_steps: window };
        let z = qos_signal(&ch, &vec![level; window + 20], &p, &d).unwrap();
        let want = level * window as f64 * dt / 3600.0;
        for v in &z[window..] {
            prop_assert!((v - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn bilinear_approaches_the_linear_model(seed in 0u64..1000) {
        let dt = 60.0;
        let g = FrequencyGrid::new(256, 1.0).unwrap();
        let u = synthesize(&NoiseRecipe::new(SpectralDensity::constant(g, 0.04).unwrap(), 600, seed)).unwrap();
        let sup_gap = |p: &ThermalParams| {
            let lin = simulate_lti(&Discretization::backward_euler(p, dt), &u, 0.0);
            let bil = simulate_bilinear(p, dt, &u, 0.0).unwrap();
            lin.iter().zip(&bil).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        prop_assert!(sup_gap(&ThermalParams::table1()) <= 1e-12);
        let mut last = 0.0;
        for alpha1 in [1e-5, 1e-4, 1e-3, 1e-2] {
            let gap = sup_gap(&ThermalParams::table1().with_cop_model(alpha1, 0.0));
            prop_assert!(gap >= last);
            last = gap;
        }
    }

    #[test]
    fn brick_wall_is_exactly_zero_out_of_band(lo in 0.0f64..1e-3, width in 1e-4f64..5e-3, a1 in -1.5f64..1.5, gain in 0.1f64..100.0) {
        let a2 = 0.6;
        let model = RationalSD::new([a1, a2], 0.3, gain, 600.0).unwrap();
        let g = FrequencyGrid::new(2048, 20.0).unwrap();
        let snd = model.to_sd(&g).unwrap();
        let band = Passband::new(lo, lo + width).unwrap();
        let sba = bandpass_reference(&snd, &band).unwrap();
        let (wlo, whi) = band.omega_range(&g);
        prop_assert!(is_even(&sba));
        for j in 0..g.n_freq() {
            let w = g.abs_omega(j);
            if w < wlo * (1.0 - 1e-9) || w > whi * (1.0 + 1e-9) {
                prop_assert_eq!(sba.values()[j], 0.0);
            } else {
                prop_assert_eq!(sba.values()[j], snd.values()[j]);
            }
        }
    }

    #[test]
    fn chebyshev_bound_scales_quadratically(c in 1e-3f64..1e3, eps in 1e-3f64..1.0, k in 0.1f64..10.0) {
        let b = chebyshev_bound(c, eps).unwrap();
        let bk = chebyshev_bound(k * c, eps).unwrap();
        prop_assert!((bk - k * k * b).abs() <= 1e-12 * bk);
    }
}

fn random_problem(d: usize, rows: &[Vec<f64>], bounds: &[f64], levels: &[f64]) -> QPProblem {
    let g = FrequencyGrid::new(512, 1.0).unwrap();
    let basis = BasisSet::uniform(&g, d, 0.05, 3.0).unwrap();
    let sba = eval_basis(&basis, levels).unwrap();
    let objective = assemble_objective(&basis, &sba).unwrap();
    let constraints = ConstraintMap {
        b: rows.to_vec(),
        provenance: vec![Provenance::Model; rows.len()],
        stderr: None,
    };
    QPProblem::new(basis, objective, constraints, bounds.to_vec()).unwrap()
}

fn qp_case() -> impl Strategy<Value = (usize, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    (2usize..10, 1usize..5).prop_flat_map(|(d, m)| {
        (
            Just(d),
            prop::collection::vec(prop::collection::vec(0.0f64..10.0, d), m),
            prop::collection::vec(0.1f64..50.0, m),
            prop::collection::vec(0.0f64..20.0, d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qp_solutions_are_feasible_and_stationary((d, rows, bounds, levels) in qp_case()) {
        let problem = random_problem(d, &rows, &bounds, &levels);
        let res = solve_qp(&problem).unwrap();
        prop_assert!(res.kkt_residual <= 1e-6);
        prop_assert!(res.theta_star.iter().all(|t| *t >= -1e-12));
        for (l, v) in problem.constraints.apply(&res.theta_star).iter().enumerate() {
            prop_assert!(*v <= bounds[l] * (1.0 + 1e-6) + 1e-6);
        }
        prop_assert!(res.objective_value <= problem.objective.value(&vec![0.0; d]) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn relaxing_a_bound_never_raises_the_objective((d, rows, bounds, levels) in qp_case(), which in 0usize..5, factor in 1.0f64..10.0) {
        let l = which % bounds.len();
        let tight = solve_qp(&random_problem(d, &rows, &bounds, &levels)).unwrap();
        let mut looser = bounds.clone();
        looser[l] *= factor;
        let loose = solve_qp(&random_problem(d, &rows, &looser, &levels)).unwrap();
        prop_assert!(loose.objective_value <= tight.objective_value + 1e-9 * tight.objective_value.abs().max(1.0));
    }

    #[test]
    fn ensemble_scaling_is_homogeneous((d, rows, bounds, levels) in qp_case(), n in 2usize..50) {
        let n2 = (n * n) as f64;
        let scaled_bounds: Vec<f64> = bounds.iter().map(|b| b * n2).collect();
        let big = solve_qp(&random_problem(d, &rows, &scaled_bounds, &levels)).unwrap();
        let per_load: Vec<f64> = levels.iter().map(|v| v / n2).collect();
        let small = solve_qp(&random_problem(d, &rows, &bounds, &per_load)).unwrap();
        for (a, b) in big.theta_star.iter().zip(&small.theta_star) {
            prop_assert!((a - b * n2).abs() <= 1e-6 * (1.0 + a.abs()));
        }
    }
}
