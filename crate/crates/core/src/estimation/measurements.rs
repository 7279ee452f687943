use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::eval::ModelEval;
use crate::hybrid::simulate::HybridArc;
use crate::hybrid::spec::{HybridSystemSpec, IntegratorConfig};
use crate::information::fim::trapezoid_weights;
use crate::information::noise::NoiseModel;
use crate::information::output::OutputMap;

/// Where flow measurements are taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleGrid {
    /// The accepted steps of the nominal arc.
    #[default]
    Integrator,
    /// `count` equally spaced times on `[0, T]`.
    Uniform {
        count: usize,
    },
    Times(Vec<f64>),
}

/// A flow measurement. Its noise covariance is `V / weight`, so that the
/// weighted sum over samples approximates the continuous-time information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub t: f64,
    pub weight: f64,
    pub y: Vec<f64>,
    /// Set when the sample sits on an event boundary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<EventAnchor>,
}

/// Side of event `j` a boundary sample belongs to. The sample follows the
/// event when the parameters move it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAnchor {
    Before(usize),
    After(usize),
}

/// Measurement taken right after event `j`, at the time it was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSample {
    pub j: usize,
    pub t: f64,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub flow_samples: Vec<FlowSample>,
    pub event_samples: Vec<EventSample>,
    pub noise: NoiseModel,
    pub seed: u64,
    pub horizon: f64,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.flow_samples.len() + self.event_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sample times and trapezoid weights. Repeated times (segment boundaries)
/// are merged into one sample carrying the summed weight.
pub fn sample_times(arc: &HybridArc, grid: &SampleGrid) -> Result<Vec<(f64, f64)>> {
    let times: Vec<f64> = match grid {
        SampleGrid::Integrator => arc
            .segments
            .iter()
            .flat_map(|s| s.trajectory.times.iter().copied())
            .collect(),
        SampleGrid::Uniform { count } => {
            if *count < 2 {
                return Err(Error::InvalidArgument(
                    "a uniform grid needs at least two samples".into(),
                ));
            }
            (0..*count)
                .map(|i| arc.horizon * i as f64 / (*count - 1) as f64)
                .collect()
        }
        SampleGrid::Times(ts) => ts.clone(),
    };
    let start = arc.segments.first().map_or(0.0, |s| s.t_start);
    if times.iter().any(|&t| !(t >= start && t <= arc.horizon)) {
        return Err(Error::InvalidArgument(
            "sample times must lie within the arc horizon".into(),
        ));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(
            "sample times must be non-decreasing".into(),
        ));
    }
    let w = trapezoid_weights(&times);
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(times.len());
    for (t, wi) in times.into_iter().zip(w) {
        match out.last_mut() {
            Some(last) if last.0 == t => last.1 += wi,
            _ => out.push((t, wi)),
        }
    }
    out.retain(|s| s.1 > 0.0);
    Ok(out)
}

/// Noise-free outputs `h` of `arc` at the flow sample times and after every
/// measured event.
pub fn predicted_measurements(
    arc: &HybridArc,
    spec: &HybridSystemSpec,
    theta: &[f64],
    out: &OutputMap,
    noise: &NoiseModel,
    grid: &SampleGrid,
    cfg: &IntegratorConfig,
) -> Result<MeasurementSet> {
    if noise.m() != out.m {
        return Err(Error::ShapeMismatch {
            context: "measurement noise",
            expected: out.m.to_string(),
            actual: noise.m().to_string(),
        });
    }
    let mut ev = ModelEval::new(spec, theta, cfg)?;
    let mut flow_samples = Vec::new();
    let st = sample_times(arc, grid)?;
    for (i, &(t, weight)) in st.iter().enumerate() {
        let at: Vec<usize> = (0..arc.events.len())
            .filter(|&j| arc.events[j].time == t)
            .collect();
        let (Some(&first), Some(&last)) = (at.first(), at.last()) else {
            let y = out.evaluate(&mut ev, arc.mode_at(t), &arc.state_at(t), t)?;
            flow_samples.push(FlowSample {
                t,
                weight,
                y,
                anchor: None,
            });
            continue;
        };
        let left = if i > 0 { 0.5 * (t - st[i - 1].0) } else { 0.0 };
        let right = if i + 1 < st.len() {
            0.5 * (st[i + 1].0 - t)
        } else {
            0.0
        };
        let (pre, post) = (&arc.events[first], &arc.events[last]);
        if left > 0.0 {
            let y = out.evaluate(&mut ev, pre.source, &pre.pre_state, t)?;
            flow_samples.push(FlowSample {
                t,
                weight: left,
                y,
                anchor: Some(EventAnchor::Before(first)),
            });
        }
        if right > 0.0 {
            let y = out.evaluate(&mut ev, post.target, &post.post_state, t)?;
            flow_samples.push(FlowSample {
                t,
                weight: right,
                y,
                anchor: Some(EventAnchor::After(last)),
            });
        }
    }
    let mut event_samples = Vec::new();
    for (j, e) in arc.events.iter().enumerate() {
        if noise.event_cov(j).is_some() {
            let y = out.evaluate(&mut ev, e.target, &e.post_state, e.time)?;
            event_samples.push(EventSample { j, t: e.time, y });
        }
    }
    Ok(MeasurementSet {
        flow_samples,
        event_samples,
        noise: noise.clone(),
        seed: 0,
        horizon: arc.horizon,
    })
}

fn standard_normal(rng: &mut ChaCha8Rng, m: usize) -> DVector<f64> {
    DVector::from_iterator(m, (0..m).map(|_| StandardNormal.sample(rng)))
}

/// `y_i = h(x(t_i), θ, t_i) + ε_i` with Cholesky-colored Gaussian noise.
#[allow(clippy::too_many_arguments)]
pub fn simulate_measurements(
    arc: &HybridArc,
    spec: &HybridSystemSpec,
    theta: &[f64],
    out: &OutputMap,
    noise: &NoiseModel,
    grid: &SampleGrid,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<MeasurementSet> {
    let mut ms = predicted_measurements(arc, spec, theta, out, noise, grid, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = noise.m();
    let l = noise.flow_chol();
    for s in &mut ms.flow_samples {
        let e = l * standard_normal(&mut rng, m) / s.weight.sqrt();
        for (y, d) in s.y.iter_mut().zip(e.iter()) {
            *y += d;
        }
    }
    for s in &mut ms.event_samples {
        let cov = noise.event_cov(s.j).expect("event sample has a covariance");
        let lj = crate::linalg::cholesky_lower(cov, "event noise covariance")?;
        let e = lj * standard_normal(&mut rng, m);
        for (y, d) in s.y.iter_mut().zip(e.iter()) {
            *y += d;
        }
    }
    ms.seed = seed;
    Ok(ms)
}
