use serde::Serialize;

use crate::error::{Error, Result};
use crate::hybrid::eval::ModelEval;
use crate::hybrid::events::{apply_reset, check_transversality, locate_event};
use crate::hybrid::integrator::{DenseTrajectory, Dopri5};
use crate::hybrid::spec::{HybridSystemSpec, IntegratorConfig, ModeId};

/// One flow interval of an arc, in a single mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcSegment {
    pub mode: ModeId,
    pub t_start: f64,
    pub t_end: f64,
    pub trajectory: DenseTrajectory,
}

impl ArcSegment {
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        self.trajectory.at(t)
    }

    pub fn start_state(&self) -> &[f64] {
        &self.trajectory.states[0]
    }

    pub fn end_state(&self) -> &[f64] {
        self.trajectory.last_state()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    /// Index into `spec.transitions`.
    pub transition: usize,
    pub time: f64,
    pub source: ModeId,
    pub target: ModeId,
    pub pre_state: Vec<f64>,
    pub post_state: Vec<f64>,
    /// `D_t g + D_x g · f⁻`.
    pub guard_rate: f64,
    /// Guard value at the pre-event state.
    pub guard_value: f64,
}

/// Executed hybrid trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridArc {
    pub segments: Vec<ArcSegment>,
    pub events: Vec<EventRecord>,
    pub t0: f64,
    pub horizon: f64,
}

impl HybridArc {
    /// Index of the segment containing `t`; at an event time the later segment.
    pub fn segment_index(&self, t: f64) -> usize {
        let k = self.segments.partition_point(|s| s.t_start <= t);
        k.saturating_sub(1).min(self.segments.len() - 1)
    }

    /// Right-continuous state lookup.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        self.segments[self.segment_index(t)].state_at(t)
    }

    pub fn mode_at(&self, t: f64) -> ModeId {
        self.segments[self.segment_index(t)].mode
    }

    pub fn mode_sequence(&self) -> Vec<ModeId> {
        self.segments.iter().map(|s| s.mode).collect()
    }

    pub fn final_state(&self) -> &[f64] {
        self.segments.last().expect("arc has a segment").end_state()
    }

    pub fn event_times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }
}

/// Run the hybrid system from `(x0, q0)` at `t = 0` up to `horizon`.
pub fn simulate(
    spec: &HybridSystemSpec,
    theta: &[f64],
    x0: &[f64],
    q0: ModeId,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<HybridArc> {
    simulate_from(spec, theta, x0, q0, 0.0, horizon, cfg)
}

pub fn simulate_from(
    spec: &HybridSystemSpec,
    theta: &[f64],
    x0: &[f64],
    q0: ModeId,
    t0: f64,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<HybridArc> {
    cfg.validate()?;
    spec.mode(q0)?;
    if x0.len() != spec.n_states {
        return Err(Error::ShapeMismatch {
            context: "initial state",
            expected: spec.n_states.to_string(),
            actual: x0.len().to_string(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "initial state must be finite".into(),
        ));
    }
    if !(horizon > t0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon must exceed the start time {t0}"
        )));
    }
    let mut ev = ModelEval::new(spec, theta, cfg)?;
    let mut segments = Vec::new();
    let mut events: Vec<EventRecord> = Vec::new();
    let mut q = q0;
    let mut t = t0;
    let mut x = x0.to_vec();

    loop {
        if !ev.invariant_holds(q, &x, t)? {
            log::warn!(
                "state leaves the invariant of mode {} at t = {t}",
                spec.mode_name(q)
            );
        }
        let (traj, event) = flow_until_event(&mut ev, q, t, &x, horizon)?;
        let t_end = traj.t_end();
        segments.push(ArcSegment {
            mode: q,
            t_start: t,
            t_end,
            trajectory: traj,
        });
        let Some(e) = event else { break };
        if events.len() >= cfg.max_events {
            return Err(Error::TooManyEvents(cfg.max_events));
        }
        q = e.target;
        t = e.time;
        x = e.post_state.clone();
        events.push(e);
        if t >= horizon {
            // Event exactly at the horizon: close with an empty segment in the new mode.
            segments.push(ArcSegment {
                mode: q,
                t_start: t,
                t_end: t,
                trajectory: DenseTrajectory::start(t, x),
            });
            break;
        }
    }
    Ok(HybridArc {
        segments,
        events,
        t0,
        horizon,
    })
}

fn flow_until_event(
    ev: &mut ModelEval<'_>,
    q: ModeId,
    t0: f64,
    x0: &[f64],
    horizon: f64,
) -> Result<(DenseTrajectory, Option<EventRecord>)> {
    let spec = ev.spec;
    let cfg = ev.cfg;
    let outgoing = spec.outgoing(q);
    let mut traj = DenseTrajectory::start(t0, x0.to_vec());
    let mut g_prev = Vec::with_capacity(outgoing.len());
    for &k in &outgoing {
        g_prev.push(ev.guard(k, x0, t0)?);
    }
    let mut stepper = {
        let mut rhs = |t: f64, x: &[f64], out: &mut [f64]| ev.field_into(q, x, t, out);
        Dopri5::new(&mut rhs, t0, x0, horizon, &cfg)?
    };
    loop {
        let (dense, y1) = {
            let mut rhs = |t: f64, x: &[f64], out: &mut [f64]| ev.field_into(q, x, t, out);
            stepper.step(&mut rhs, horizon)?
        };
        if y1.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t: stepper.time(),
                reason: "state became non-finite".into(),
            });
        }
        let t_lo = dense.t0;
        let t1 = stepper.time();
        let mut g1 = Vec::with_capacity(outgoing.len());
        for &k in &outgoing {
            g1.push(ev.guard(k, &y1, t1)?);
        }

        let mut hits: Vec<(f64, usize)> = Vec::new();
        for (i, &k) in outgoing.iter().enumerate() {
            let dir = spec.transitions[k].direction;
            if dir.crossed(g_prev[i], g1[i]) {
                let tau = locate_event(
                    |s| {
                        let xs = dense.eval(s);
                        ev.guard(k, &xs, s)
                    },
                    t_lo,
                    t1,
                    dir,
                    cfg.event_tol_time,
                    cfg.event_tol_guard,
                )?;
                hits.push((tau, k));
            }
        }

        if hits.is_empty() {
            traj.push(dense, t1, y1);
            g_prev = g1;
            if t1 >= horizon {
                return Ok((traj, None));
            }
            continue;
        }

        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (tau, k) = hits[0];
        if let Some(&(tau2, k2)) = hits.get(1) {
            if tau2 - tau <= cfg.event_tol_time {
                return Err(Error::AmbiguousEvent {
                    first: k,
                    second: k2,
                    t: tau,
                    dt: tau2 - tau,
                });
            }
        }
        let pre = if tau == t1 { y1 } else { dense.eval(tau) };
        let guard_value = ev.guard(k, &pre, tau)?;
        let rate = check_transversality(ev, k, &pre, tau)?;
        if !(rate.abs() >= cfg.transversality_floor) {
            return Err(Error::Grazing { t: tau, rate });
        }
        let post = apply_reset(ev, k, &pre, tau)?;
        traj.push(dense, tau, pre.clone());
        let tr = &spec.transitions[k];
        log::debug!(
            "event {} -> {} at t = {tau}",
            spec.mode_name(tr.source),
            spec.mode_name(tr.target)
        );
        let record = EventRecord {
            transition: k,
            time: tau,
            source: tr.source,
            target: tr.target,
            pre_state: pre,
            post_state: post,
            guard_rate: rate,
            guard_value,
        };
        return Ok((traj, Some(record)));
    }
}
