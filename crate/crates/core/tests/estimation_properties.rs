use nalgebra::DMatrix;
use proptest::prelude::*;

use saltfim::estimation::{
    monte_carlo_crlb, nls_fit, predicted_measurements, simulate_measurements, FitConfig,
    MonteCarloConfig, SampleGrid,
};
use saltfim::hybrid::{simulate, IntegratorConfig};
use saltfim::information::{NoiseModel, OutputMap};
use saltfim::linalg::{lambda_min, sym_eigenvalues};
use saltfim::systems::{bouncing_ball_spec, ramp_spec};

fn ball() -> (
    saltfim::hybrid::HybridSystemSpec,
    [f64; 2],
    IntegratorConfig,
) {
    (
        bouncing_ball_spec(1.0, 0.0).unwrap(),
        [9.81, 0.8],
        IntegratorConfig::default().with_max_step(0.01),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn same_seed_same_measurements_and_fit(seed in any::<u64>()) {
        let (spec, theta, cfg) = ball();
        let arc = simulate(&spec, &theta, &spec.initial_state, spec.initial_mode, 1.0, &cfg).unwrap();
        let out = OutputMap::full_state(2, 2);
        let noise = NoiseModel::isotropic(2, 1e-4).unwrap();
        let grid = SampleGrid::Uniform { count: 50 };
        let a = simulate_measurements(&arc, &spec, &theta, &out, &noise, &grid, seed, &cfg).unwrap();
        let b = simulate_measurements(&arc, &spec, &theta, &out, &noise, &grid, seed, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        let c = simulate_measurements(&arc, &spec, &theta, &out, &noise, &grid, seed.wrapping_add(1), &cfg).unwrap();
        prop_assert_ne!(&a.flow_samples, &c.flow_samples);
        let fit = FitConfig { integrator: cfg.clone(), ..FitConfig::default() };
        let fa = nls_fit(&a, &spec, &out, &theta, &fit).unwrap();
        let fb = nls_fit(&b, &spec, &out, &theta, &fit).unwrap();
        prop_assert_eq!(fa, fb);
    }
}

#[test]
fn noiseless_fit_recovers_truth() {
    let (spec, theta, cfg) = ball();
    let arc = simulate(
        &spec,
        &theta,
        &spec.initial_state,
        spec.initial_mode,
        1.2,
        &cfg,
    )
    .unwrap();
    let out = OutputMap::full_state(2, 2);
    let noise = NoiseModel::isotropic(2, 1e-4).unwrap();
    let ms = predicted_measurements(
        &arc,
        &spec,
        &theta,
        &out,
        &noise,
        &SampleGrid::Integrator,
        &cfg,
    )
    .unwrap();
    let fit = FitConfig {
        integrator: cfg.clone(),
        ..FitConfig::default()
    };
    let r = nls_fit(&ms, &spec, &out, &[9.7, 0.79], &fit).unwrap();
    assert!(r.converged);
    for (a, b) in r.theta_hat.iter().zip(theta) {
        assert!(((a - b) / b).abs() < 1e-6, "{:?}", r.theta_hat);
    }
    assert!(r.final_cost < 1e-8, "cost {}", r.final_cost);
}

#[test]
fn crlb_dominance_on_linear_model() {
    let spec = ramp_spec(None).unwrap();
    let mut config = MonteCarloConfig::default();
    config.fit.integrator = IntegratorConfig::default().with_max_step(0.02);
    let out = OutputMap::full_state(1, 1);
    let noise = NoiseModel::isotropic(1, 0.5).unwrap();
    let s = monte_carlo_crlb(&spec, &[2.0], &out, &noise, 200, 4, &config).unwrap();
    let norm = sym_eigenvalues(&s.empirical_cov)
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 3.0 * norm * (2.0f64 / 200.0).sqrt();
    assert!(lambda_min(&(&s.empirical_cov - &s.crlb)) >= -tol);
    assert!((s.crlb[(0, 0)] - 1.5).abs() < 1e-3, "{}", s.crlb);
}

#[test]
fn monte_carlo_independent_of_thread_count() {
    let spec = ramp_spec(None).unwrap();
    let out = OutputMap::full_state(1, 1);
    let noise = NoiseModel::isotropic(1, 1.0).unwrap();
    let run = |threads| {
        let mut config = MonteCarloConfig {
            threads: Some(threads),
            ..MonteCarloConfig::default()
        };
        config.fit.integrator = IntegratorConfig::default().with_max_step(0.05);
        monte_carlo_crlb(&spec, &[1.0], &out, &noise, 60, 17, &config).unwrap()
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a, b);
    assert_eq!(a.runs, 60);
    assert!(a.empirical_cov != DMatrix::zeros(1, 1));
}
