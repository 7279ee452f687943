use nalgebra::DMatrix;
use proptest::prelude::*;

use saltfim::hybrid::{simulate, IntegratorConfig};
use saltfim::information::{
    accumulate_fim, analyze, event_increment, flow_information, full_horizon_window, EventNoise,
    NoiseModel, OutputMap, OutputSensitivities,
};
use saltfim::linalg::{asymmetry, lambda_min, sym_eigenvalues};
use saltfim::sensitivity::PropagationMode;
use saltfim::systems::bouncing_ball_spec;

fn matrix(m: usize, p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, m * p).prop_map(move |v| DMatrix::from_row_slice(m, p, &v))
}

fn spd(m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (matrix(m, m), 0.05..2.0f64)
        .prop_map(move |(a, s)| &a * a.transpose() + DMatrix::identity(m, m) * s)
}

/// Output sensitivities on a grid over `[0, 1]` with events at interior grid points.
fn outputs(m: usize, p: usize) -> impl Strategy<Value = OutputSensitivities> {
    (3usize..10, 0usize..4).prop_flat_map(move |(per, events)| {
        let segments = events + 1;
        (
            prop::collection::vec(matrix(m, p), per * segments),
            prop::collection::vec(matrix(m, p), events),
        )
            .prop_map(move |(flow_j, post)| {
                let mut flow = Vec::new();
                let mut pre = Vec::new();
                let mut boundaries = Vec::new();
                let mut times = Vec::new();
                for s in 0..segments {
                    let (a, b) = (s as f64 / segments as f64, (s + 1) as f64 / segments as f64);
                    for k in 0..per {
                        let t = if k + 1 == per {
                            b
                        } else {
                            a + (b - a) * k as f64 / (per - 1) as f64
                        };
                        let j = if s > 0 && k == 0 {
                            post[s - 1].clone()
                        } else {
                            flow_j[s * per + k].clone()
                        };
                        flow.push((t, j));
                    }
                    if s < events {
                        pre.push(flow.last().unwrap().1.clone());
                        boundaries.push(flow.len());
                        times.push(b);
                    }
                }
                OutputSensitivities {
                    flow,
                    pre,
                    post: post.clone(),
                    event_times: times,
                    boundaries,
                    m,
                    p,
                }
            })
    })
}

fn case() -> impl Strategy<Value = (OutputSensitivities, NoiseModel)> {
    (1usize..4, 1usize..5).prop_flat_map(|(m, p)| {
        (outputs(m, p), spd(m), spd(m)).prop_map(|(o, v, vj)| {
            let noise = NoiseModel::new(v)
                .unwrap()
                .with_event_noise(EventNoise::Shared(vj))
                .unwrap();
            (o, noise)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fim_is_symmetric_psd((o, noise) in case()) {
        for mode in PropagationMode::ALL {
            let f = accumulate_fim(&o, &noise, mode, mode != PropagationMode::Smooth).unwrap().fim;
            prop_assert_eq!(asymmetry(&f), 0.0);
            let ev = sym_eigenvalues(&f);
            let top = ev.last().copied().unwrap_or(0.0).abs();
            prop_assert!(ev[0] >= -1e-12 * top);
        }
    }

    #[test]
    fn accumulation_is_monotone((o, noise) in case()) {
        let r = accumulate_fim(&o, &noise, PropagationMode::Saltation, true).unwrap();
        for w in r.series.windows(2) {
            let d = &w[1].fim - &w[0].fim;
            let scale = sym_eigenvalues(&w[1].fim).last().copied().unwrap_or(0.0).abs();
            prop_assert!(lambda_min(&d) >= -1e-12 * scale.max(1.0));
        }
        prop_assert!((&r.series.last().unwrap().fim - &r.fim).abs().max() <= 1e-12 * r.fim.abs().max().max(1.0));
    }

    #[test]
    fn increment_decomposes(a in matrix(2, 3), b in matrix(2, 3), v in spd(2)) {
        let inc = event_increment(0, &a, &b, &v).unwrap();
        let sum = &inc.cross + &inc.quadratic;
        let scale = inc.delta.abs().max().max(1.0);
        prop_assert!((&inc.delta - sum).abs().max() <= 1e-12 * scale);
    }

    #[test]
    fn flow_information_scales_inversely((o, noise) in case(), c in 0.01..100.0f64) {
        let v = noise.flow_cov().clone();
        let f1 = flow_information(&o.flow, &v).unwrap();
        let fc = flow_information(&o.flow, &(&v * c)).unwrap();
        let scale = f1.abs().max().max(1e-300);
        prop_assert!((fc * c - &f1).abs().max() <= 1e-10 * scale);
    }

    #[test]
    fn hpe_bound_holds((o, noise) in case()) {
        let w = full_horizon_window(&o, &noise).unwrap();
        prop_assume!(w.alpha > 0.0);
        let f = accumulate_fim(&o, &noise, PropagationMode::Saltation, true).unwrap().fim;
        let floor = noise.information_floor(o.post.len()) * w.alpha;
        prop_assert!(lambda_min(&f) >= floor - 1e-10 * (1.0 + floor));
    }
}

#[test]
fn quadrature_order_two() {
    let exact = 1.0 / 3.0;
    let err = |n: usize| {
        let s: Vec<_> = (0..=n)
            .map(|i| {
                (
                    i as f64 / n as f64,
                    DMatrix::from_element(1, 1, i as f64 / n as f64),
                )
            })
            .collect();
        (flow_information(&s, &DMatrix::identity(1, 1)).unwrap()[(0, 0)] - exact).abs()
    };
    for n in [4, 8, 16, 32, 64] {
        assert!(err(n) / err(2 * n) >= 3.99, "n = {n}");
    }
}

#[test]
fn identity_outputs_reproduce_event_terms() {
    let spec = bouncing_ball_spec(1.0, 0.0).unwrap();
    let theta = [9.81, 0.8];
    let cfg = IntegratorConfig::default().with_max_step(0.01);
    let arc = simulate(
        &spec,
        &theta,
        &spec.initial_state,
        spec.initial_mode,
        1.0,
        &cfg,
    )
    .unwrap();
    let out = OutputMap::full_state(2, 2);
    let noise = NoiseModel::isotropic(2, 0.1).unwrap();
    let z0 = DMatrix::zeros(2, 2);
    let a = analyze(
        &arc,
        &spec,
        &theta,
        &out,
        &noise,
        PropagationMode::Saltation,
        &z0,
        &cfg,
    )
    .unwrap();
    assert_eq!(a.fim.increments.len(), arc.events.len());
    let jumps: DMatrix<f64> = a
        .outputs
        .post
        .iter()
        .map(|j| j.transpose() * j / 0.1)
        .fold(DMatrix::zeros(2, 2), |s, m| s + m);
    assert!((&a.fim.jumps - jumps).abs().max() <= 1e-12 * a.fim.jumps.abs().max());
    let smooth = analyze(
        &arc,
        &spec,
        &theta,
        &out,
        &noise,
        PropagationMode::Smooth,
        &z0,
        &cfg,
    )
    .unwrap();
    assert_eq!(smooth.fim.jumps.abs().max(), 0.0);
}
