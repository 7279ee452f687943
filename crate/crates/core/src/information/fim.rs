use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hybrid::eval::ModelEval;
use crate::hybrid::simulate::HybridArc;
use crate::hybrid::spec::{HybridSystemSpec, IntegratorConfig};
use crate::information::metrics::{info_metrics, InfoMetrics};
use crate::information::noise::NoiseModel;
use crate::information::output::{output_sensitivity, OutputMap};
use crate::information::serialize_matrix;
use crate::linalg::{spd_inverse, symmetrize};
use crate::sensitivity::{propagate, PropagationMode, SensitivityTrajectory};

/// `J(t)` on the integration grid plus `J(τ_j⁻)` and `J(τ_j⁺)` at every event.
///
/// `flow` concatenates all segments in order; each event time appears twice
/// (end of one segment, start of the next), which the trapezoid rule weights
/// with a zero-length interval.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSensitivities {
    pub flow: Vec<(f64, DMatrix<f64>)>,
    pub pre: Vec<DMatrix<f64>>,
    pub post: Vec<DMatrix<f64>>,
    pub event_times: Vec<f64>,
    /// Index into `flow` of the first sample after event `j`.
    pub boundaries: Vec<usize>,
    pub m: usize,
    pub p: usize,
}

pub fn output_sensitivities(
    arc: &HybridArc,
    sens: &SensitivityTrajectory,
    spec: &HybridSystemSpec,
    theta: &[f64],
    out: &OutputMap,
    cfg: &IntegratorConfig,
) -> Result<OutputSensitivities> {
    if sens.segments.len() != arc.segments.len() {
        return Err(Error::InvalidArgument(
            "sensitivities were not propagated on this arc".into(),
        ));
    }
    let mut ev = ModelEval::new(spec, theta, cfg)?;
    let mut flow = Vec::new();
    let mut pre = Vec::with_capacity(arc.events.len());
    let mut post = Vec::with_capacity(arc.events.len());
    let mut boundaries = Vec::with_capacity(arc.events.len());
    for (i, seg) in sens.segments.iter().enumerate() {
        let mut last = None;
        for (t, x, z) in sens.samples(i) {
            let (dx, dth) = out.jacobians(&mut ev, seg.mode, x, t)?;
            let j = output_sensitivity(&dx, &dth, &z)?;
            last = Some(j.clone());
            flow.push((t, j));
        }
        if let (Some(e), Some(jump)) = (arc.events.get(i), sens.jumps.get(i)) {
            pre.push(last.expect("segment has samples"));
            let (dx, dth) = out.jacobians(&mut ev, e.target, &e.post_state, e.time)?;
            post.push(output_sensitivity(&dx, &dth, &jump.z_post)?);
            boundaries.push(flow.len());
        }
    }
    Ok(OutputSensitivities {
        flow,
        pre,
        post,
        event_times: arc.event_times(),
        boundaries,
        m: out.m,
        p: spec.n_params,
    })
}

/// Trapezoid weights of a non-decreasing time grid.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = 0.5 * (times[i + 1] - times[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

fn weighted_gram(j: &DMatrix<f64>, v_inv: &DMatrix<f64>) -> DMatrix<f64> {
    j.transpose() * v_inv * j
}

/// `∫ Jᵀ V⁻¹ J dt` by the composite trapezoid rule on the sample grid.
pub fn flow_information(samples: &[(f64, DMatrix<f64>)], v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let v_inv = spd_inverse(v, "flow noise covariance")?;
    flow_information_inv(samples, &v_inv)
}

pub fn flow_information_inv(
    samples: &[(f64, DMatrix<f64>)],
    v_inv: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let Some((_, first)) = samples.first() else {
        return Err(Error::InvalidArgument("no samples".into()));
    };
    let p = first.ncols();
    let times: Vec<f64> = samples.iter().map(|s| s.0).collect();
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(
            "sample times must be non-decreasing".into(),
        ));
    }
    let w = trapezoid_weights(&times);
    let mut acc = DMatrix::zeros(p, p);
    for ((_, j), wi) in samples.iter().zip(w) {
        if j.nrows() != v_inv.nrows() || j.ncols() != p {
            return Err(Error::ShapeMismatch {
                context: "flow_information",
                expected: format!("{}x{p}", v_inv.nrows()),
                actual: format!("{}x{}", j.nrows(), j.ncols()),
            });
        }
        if wi != 0.0 {
            acc += weighted_gram(j, v_inv) * wi;
        }
    }
    Ok(symmetrize(&acc))
}

/// Change of the instantaneous information at an event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventIncrement {
    pub j: usize,
    pub delta: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub quadratic: DMatrix<f64>,
}

impl EventIncrement {
    pub fn trace(&self) -> f64 {
        self.delta.trace()
    }
}

pub fn event_increment(
    j: usize,
    j_pre: &DMatrix<f64>,
    j_post: &DMatrix<f64>,
    v_j: &DMatrix<f64>,
) -> Result<EventIncrement> {
    let inv = spd_inverse(v_j, "event noise covariance")?;
    event_increment_inv(j, j_pre, j_post, &inv)
}

pub fn event_increment_inv(
    j: usize,
    j_pre: &DMatrix<f64>,
    j_post: &DMatrix<f64>,
    v_inv: &DMatrix<f64>,
) -> Result<EventIncrement> {
    if j_pre.shape() != j_post.shape() || j_pre.nrows() != v_inv.nrows() {
        return Err(Error::ShapeMismatch {
            context: "event_increment",
            expected: format!("{:?}", j_pre.shape()),
            actual: format!("{:?}", j_post.shape()),
        });
    }
    let dj = j_post - j_pre;
    let delta = symmetrize(&(weighted_gram(j_post, v_inv) - weighted_gram(j_pre, v_inv)));
    let c = j_pre.transpose() * v_inv * &dj;
    let cross = &c + c.transpose();
    let quadratic = symmetrize(&weighted_gram(&dj, v_inv));
    Ok(EventIncrement {
        j,
        delta,
        cross,
        quadratic,
    })
}

pub fn total_event_contribution(increments: &[EventIncrement], p: usize) -> DMatrix<f64> {
    increments
        .iter()
        .fold(DMatrix::zeros(p, p), |acc, inc| acc + &inc.delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FimSeriesPoint {
    pub t: f64,
    pub fim: DMatrix<f64>,
}

/// Accumulated information for one propagation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct FimResult {
    pub mode: PropagationMode,
    pub fim: DMatrix<f64>,
    pub flow: DMatrix<f64>,
    pub jumps: DMatrix<f64>,
    pub increments: Vec<EventIncrement>,
    pub series: Vec<FimSeriesPoint>,
}

/// Sum flow quadrature and, unless `include_jumps` is false, one post-event
/// term per measured event.
pub fn accumulate_fim(
    outputs: &OutputSensitivities,
    noise: &NoiseModel,
    mode: PropagationMode,
    include_jumps: bool,
) -> Result<FimResult> {
    let p = outputs.p;
    if noise.m() != outputs.m {
        return Err(Error::ShapeMismatch {
            context: "noise covariance",
            expected: outputs.m.to_string(),
            actual: noise.m().to_string(),
        });
    }
    let v_inv = noise.flow_inv();
    let mut flow = DMatrix::zeros(p, p);
    let mut jumps = DMatrix::zeros(p, p);
    let mut series = Vec::with_capacity(outputs.flow.len() + outputs.post.len());
    let mut next_event = 0usize;
    let samples = &outputs.flow;
    for i in 0..samples.len() {
        if i > 0 {
            let (t0, j0) = &samples[i - 1];
            let (t1, j1) = &samples[i];
            let h = t1 - t0;
            if h < 0.0 {
                return Err(Error::InvalidArgument(
                    "sample times must be non-decreasing".into(),
                ));
            }
            flow += (weighted_gram(j0, v_inv) + weighted_gram(j1, v_inv)) * (0.5 * h);
        }
        while next_event < outputs.boundaries.len() && outputs.boundaries[next_event] == i {
            if include_jumps {
                if let Some(inv) = noise.event_inv(next_event) {
                    jumps += weighted_gram(&outputs.post[next_event], inv);
                }
            }
            next_event += 1;
        }
        series.push(FimSeriesPoint {
            t: samples[i].0,
            fim: symmetrize(&(&flow + &jumps)),
        });
    }
    let mut increments = Vec::with_capacity(outputs.pre.len());
    for (j, (a, b)) in outputs.pre.iter().zip(&outputs.post).enumerate() {
        let inv = noise.event_inv(j).unwrap_or(v_inv);
        increments.push(event_increment_inv(j, a, b, inv)?);
    }
    let flow = symmetrize(&flow);
    let jumps = symmetrize(&jumps);
    Ok(FimResult {
        mode,
        fim: &flow + &jumps,
        flow,
        jumps,
        increments,
        series,
    })
}

/// Sensitivities, output sensitivities and information for one mode.
#[derive(Debug, Clone)]
pub struct ModeAnalysis {
    pub sensitivity: SensitivityTrajectory,
    pub outputs: OutputSensitivities,
    pub fim: FimResult,
}

#[allow(clippy::too_many_arguments)]
pub fn analyze(
    arc: &HybridArc,
    spec: &HybridSystemSpec,
    theta: &[f64],
    out: &OutputMap,
    noise: &NoiseModel,
    mode: PropagationMode,
    z0: &DMatrix<f64>,
    cfg: &IntegratorConfig,
) -> Result<ModeAnalysis> {
    let sensitivity = propagate(arc, spec, theta, z0, mode, cfg)?;
    let outputs = output_sensitivities(arc, &sensitivity, spec, theta, out, cfg)?;
    let fim = accumulate_fim(&outputs, noise, mode, mode != PropagationMode::Smooth)?;
    Ok(ModeAnalysis {
        sensitivity,
        outputs,
        fim,
    })
}

/// SFIM: flow quadrature plus saltation-updated post-event terms.
pub fn salted_fim(
    arc: &HybridArc,
    spec: &HybridSystemSpec,
    theta: &[f64],
    out: &OutputMap,
    noise: &NoiseModel,
    z0: &DMatrix<f64>,
    cfg: &IntegratorConfig,
) -> Result<ModeAnalysis> {
    analyze(
        arc,
        spec,
        theta,
        out,
        noise,
        PropagationMode::Saltation,
        z0,
        cfg,
    )
}

/// Variational-only baseline; no post-event terms.
pub fn smooth_fim(
    arc: &HybridArc,
    spec: &HybridSystemSpec,
    theta: &[f64],
    out: &OutputMap,
    noise: &NoiseModel,
    z0: &DMatrix<f64>,
    cfg: &IntegratorConfig,
) -> Result<ModeAnalysis> {
    analyze(
        arc,
        spec,
        theta,
        out,
        noise,
        PropagationMode::Smooth,
        z0,
        cfg,
    )
}

pub fn reset_jacobian_fim(
    arc: &HybridArc,
    spec: &HybridSystemSpec,
    theta: &[f64],
    out: &OutputMap,
    noise: &NoiseModel,
    z0: &DMatrix<f64>,
    cfg: &IntegratorConfig,
) -> Result<ModeAnalysis> {
    analyze(
        arc,
        spec,
        theta,
        out,
        noise,
        PropagationMode::ResetJacobian,
        z0,
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementSummary {
    pub j: usize,
    pub time: f64,
    pub trace: f64,
    pub cross_trace: f64,
    pub quadratic_trace: f64,
}

/// JSON-facing summary of one FIM.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InformationReport {
    pub mode: PropagationMode,
    #[serde(rename = "F", serialize_with = "serialize_matrix")]
    pub fim: DMatrix<f64>,
    #[serde(flatten)]
    pub metrics: InfoMetrics,
    pub event_increments: Vec<IncrementSummary>,
    #[serde(serialize_with = "serialize_matrix")]
    pub total_event_contribution: DMatrix<f64>,
}

impl InformationReport {
    pub fn new(fim: &FimResult, event_times: &[f64], epsilon: f64) -> Result<Self> {
        let metrics = info_metrics(&fim.fim, epsilon)?;
        let p = fim.fim.nrows();
        Ok(Self {
            mode: fim.mode,
            fim: fim.fim.clone(),
            metrics,
            event_increments: fim
                .increments
                .iter()
                .map(|inc| IncrementSummary {
                    j: inc.j,
                    time: event_times.get(inc.j).copied().unwrap_or(f64::NAN),
                    trace: inc.delta.trace(),
                    cross_trace: inc.cross.trace(),
                    quadratic_trace: inc.quadratic.trace(),
                })
                .collect(),
            total_event_contribution: total_event_contribution(&fim.increments, p),
        })
    }
}
