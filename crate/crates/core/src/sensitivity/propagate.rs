use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::eval::ModelEval;
use crate::hybrid::integrator::{integrate, DenseTrajectory};
use crate::hybrid::simulate::HybridArc;
use crate::hybrid::spec::{HybridSystemSpec, IntegratorConfig, ModeId};
use crate::sensitivity::saltation::{
    event_time_sensitivity, guard_parameter_correction, jacobian_bundle, saltation_matrix,
    sensitivity_jump, variational_rhs,
};

/// How `Z` is carried across events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    /// Saltation jump with the event-time shift.
    Saltation,
    /// `Z⁺ = D_x R Z⁻ + D_θ R`.
    ResetJacobian,
    /// `Z⁺ = Z⁻`.
    #[serde(alias = "smooth_ignore_events")]
    Smooth,
}

impl PropagationMode {
    pub const ALL: [PropagationMode; 3] = [Self::Saltation, Self::ResetJacobian, Self::Smooth];

    pub fn name(self) -> &'static str {
        match self {
            Self::Saltation => "saltation",
            Self::ResetJacobian => "reset_jacobian",
            Self::Smooth => "smooth",
        }
    }
}

impl std::str::FromStr for PropagationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "saltation" | "sfim" => Ok(Self::Saltation),
            "reset_jacobian" | "reset" => Ok(Self::ResetJacobian),
            "smooth" | "smooth_ignore_events" => Ok(Self::Smooth),
            other => Err(Error::Config(format!("unknown propagation mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for PropagationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Record of what happened to `Z` at one event.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityJump {
    pub event: usize,
    pub saltation: DMatrix<f64>,
    pub z_pre: DMatrix<f64>,
    pub z_post: DMatrix<f64>,
    pub event_time_gradient: RowDVector<f64>,
    /// `D_θ R` at the event.
    pub dtheta_r: DMatrix<f64>,
    /// Term added to `Ξ Z⁻ + D_θ R` for θ-dependent guards.
    pub guard_correction: DMatrix<f64>,
}

/// `(x, Z)` integrated jointly over one arc segment; `Z` is stored column-major
/// after the `n` state entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySegment {
    pub mode: ModeId,
    pub t_start: f64,
    pub t_end: f64,
    pub trajectory: DenseTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTrajectory {
    pub n: usize,
    pub p: usize,
    pub mode: PropagationMode,
    pub segments: Vec<SensitivitySegment>,
    pub jumps: Vec<SensitivityJump>,
}

pub fn split_augmented(n: usize, p: usize, y: &[f64]) -> (&[f64], DMatrix<f64>) {
    (&y[..n], DMatrix::from_column_slice(n, p, &y[n..n + n * p]))
}

impl SensitivityTrajectory {
    fn segment_index(&self, t: f64) -> usize {
        let k = self.segments.partition_point(|s| s.t_start <= t);
        k.saturating_sub(1).min(self.segments.len() - 1)
    }

    /// Right-continuous `Z(t)`.
    pub fn z_at(&self, t: f64) -> DMatrix<f64> {
        let y = self.segments[self.segment_index(t)].trajectory.at(t);
        split_augmented(self.n, self.p, &y).1
    }

    pub fn x_at(&self, t: f64) -> Vec<f64> {
        let y = self.segments[self.segment_index(t)].trajectory.at(t);
        y[..self.n].to_vec()
    }

    pub fn final_z(&self) -> DMatrix<f64> {
        let seg = self.segments.last().expect("trajectory has a segment");
        split_augmented(self.n, self.p, seg.trajectory.last_state()).1
    }

    /// Samples `(t, x, Z)` of segment `i` on its integration grid.
    pub fn samples(&self, i: usize) -> impl Iterator<Item = (f64, &[f64], DMatrix<f64>)> + '_ {
        let seg = &self.segments[i];
        seg.trajectory
            .times
            .iter()
            .zip(&seg.trajectory.states)
            .map(move |(&t, y)| {
                let (x, z) = split_augmented(self.n, self.p, y);
                (t, x, z)
            })
    }
}

/// Integrate `Z` along `arc` and apply the jump rule of `mode` at every event.
pub fn propagate(
    arc: &HybridArc,
    spec: &HybridSystemSpec,
    theta: &[f64],
    z0: &DMatrix<f64>,
    mode: PropagationMode,
    cfg: &IntegratorConfig,
) -> Result<SensitivityTrajectory> {
    let n = spec.n_states;
    let p = spec.n_params;
    if z0.shape() != (n, p) {
        return Err(Error::ShapeMismatch {
            context: "initial sensitivity",
            expected: format!("{n}x{p}"),
            actual: format!("{}x{}", z0.nrows(), z0.ncols()),
        });
    }
    if arc.segments.len() != arc.events.len() + 1 {
        return Err(Error::InvalidArgument(
            "arc segments and events are inconsistent".into(),
        ));
    }
    let mut ev = ModelEval::new(spec, theta, cfg)?;
    let mut z = z0.clone();
    let mut segments = Vec::with_capacity(arc.segments.len());
    let mut jumps = Vec::with_capacity(arc.events.len());

    for (i, seg) in arc.segments.iter().enumerate() {
        let q = seg.mode;
        let mut y0 = seg.start_state().to_vec();
        y0.extend_from_slice(z.as_slice());
        let traj = if seg.t_end > seg.t_start {
            let mut rhs = |t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
                let (x, zz) = split_augmented(n, p, y);
                ev.field_into(q, x, t, &mut out[..n])?;
                let (a, b) = ev.flow_jacobians(q, x, t)?;
                let zd = variational_rhs(&a, &b, &zz)?;
                out[n..].copy_from_slice(zd.as_slice());
                Ok(())
            };
            integrate(&mut rhs, seg.t_start, &y0, seg.t_end, cfg)?
        } else {
            DenseTrajectory::start(seg.t_start, y0)
        };
        z = split_augmented(n, p, traj.last_state()).1;
        segments.push(SensitivitySegment {
            mode: q,
            t_start: seg.t_start,
            t_end: seg.t_end,
            trajectory: traj,
        });

        let Some(e) = arc.events.get(i) else { break };
        let b = jacobian_bundle(&mut ev, e.transition, &e.pre_state, e.time)?;
        let f_pre = DVector::from_vec(ev.field(e.source, &e.pre_state, e.time)?);
        let f_post = DVector::from_vec(ev.field(e.target, &e.post_state, e.time)?);
        let floor = cfg.transversality_floor;
        let xi =
            saltation_matrix(&b, &f_pre, &f_post, floor).map_err(|err| at_time(err, e.time))?;
        let dtau =
            event_time_sensitivity(&b, &z, &f_pre, floor).map_err(|err| at_time(err, e.time))?;
        let correction = guard_parameter_correction(&b, &f_pre, &f_post, floor)?;
        let z_post = match mode {
            PropagationMode::Saltation => sensitivity_jump(&xi, &z, &b.dtheta_r)? + &correction,
            PropagationMode::ResetJacobian => sensitivity_jump(&b.dx_r, &z, &b.dtheta_r)?,
            PropagationMode::Smooth => z.clone(),
        };
        if z_post.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "sensitivity jump at t = {}",
                e.time
            )));
        }
        jumps.push(SensitivityJump {
            event: i,
            saltation: xi,
            z_pre: z.clone(),
            z_post: z_post.clone(),
            event_time_gradient: dtau,
            dtheta_r: b.dtheta_r,
            guard_correction: correction,
        });
        z = z_post;
    }
    Ok(SensitivityTrajectory {
        n,
        p,
        mode,
        segments,
        jumps,
    })
}

fn at_time(err: Error, t: f64) -> Error {
    match err {
        Error::Grazing { rate, .. } => Error::Grazing { t, rate },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::simulate::simulate;
    use crate::hybrid::spec::{Crossing, ModeSpec, Reset, TransitionSpec};

    fn tight() -> IntegratorConfig {
        IntegratorConfig {
            rel_tol: 1e-11,
            abs_tol: 1e-13,
            event_tol_time: 1e-14,
            event_tol_guard: 1e-14,
            ..IntegratorConfig::default()
        }
    }

    #[test]
    fn linear_growth_sensitivity() {
        let m = ModeSpec::ode("q", |_x, th, _t| vec![th[0]]);
        let spec = HybridSystemSpec::new(1, 1, vec![m], vec![], ModeId(0), vec![0.0]).unwrap();
        let arc = simulate(&spec, &[2.0], &[0.0], ModeId(0), 1.5, &tight()).unwrap();
        let s = propagate(
            &arc,
            &spec,
            &[2.0],
            &DMatrix::zeros(1, 1),
            PropagationMode::Saltation,
            &tight(),
        )
        .unwrap();
        assert!((s.final_z()[(0, 0)] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn exponential_sensitivity() {
        let m = ModeSpec::ode("q", |x, th, _t| vec![th[0] * x[0]]);
        let spec = HybridSystemSpec::new(1, 1, vec![m], vec![], ModeId(0), vec![1.0]).unwrap();
        let th = 0.7;
        let arc = simulate(&spec, &[th], &[1.0], ModeId(0), 2.0, &tight()).unwrap();
        let s = propagate(
            &arc,
            &spec,
            &[th],
            &DMatrix::zeros(1, 1),
            PropagationMode::Saltation,
            &tight(),
        )
        .unwrap();
        let want = 2.0 * (th * 2.0f64).exp();
        assert!((s.final_z()[(0, 0)] - want).abs() < 1e-7 * want);
    }

    #[test]
    fn event_time_gradient_of_constant_rate() {
        let m0 = ModeSpec::ode("a", |_x, th, _t| vec![th[0]]);
        let m1 = ModeSpec::ode("b", |_x, _th, _t| vec![0.0]);
        let tr = TransitionSpec::new(
            ModeId(0),
            ModeId(1),
            |x, _, _| x[0] - 1.0,
            Crossing::Rising,
            Reset::Identity,
        );
        let spec =
            HybridSystemSpec::new(1, 1, vec![m0, m1], vec![tr], ModeId(0), vec![0.0]).unwrap();
        let arc = simulate(&spec, &[2.0], &[0.0], ModeId(0), 1.0, &tight()).unwrap();
        let s = propagate(
            &arc,
            &spec,
            &[2.0],
            &DMatrix::zeros(1, 1),
            PropagationMode::Saltation,
            &tight(),
        )
        .unwrap();
        let g = s.jumps[0].event_time_gradient[0];
        assert!((g + 0.25).abs() < 1e-8 * 0.25, "{g}");
        // Flow stops after the event: x(T) = 1 for every θ, so Z⁺ = 0.
        assert!(s.final_z()[(0, 0)].abs() < 1e-9);
    }

    #[test]
    fn modes_agree_without_events() {
        let m = ModeSpec::ode("q", |x, th, _t| vec![-th[0] * x[0], x[0]]);
        let spec = HybridSystemSpec::new(2, 1, vec![m], vec![], ModeId(0), vec![1.0, 0.0]).unwrap();
        let arc = simulate(&spec, &[0.3], &[1.0, 0.0], ModeId(0), 1.0, &tight()).unwrap();
        let z0 = DMatrix::zeros(2, 1);
        let zs: Vec<_> = PropagationMode::ALL
            .iter()
            .map(|&m| {
                propagate(&arc, &spec, &[0.3], &z0, m, &tight())
                    .unwrap()
                    .final_z()
            })
            .collect();
        assert_eq!(zs[0], zs[1]);
        assert_eq!(zs[1], zs[2]);
    }

    #[test]
    fn parse_modes() {
        assert_eq!(
            "reset_jacobian".parse::<PropagationMode>().unwrap(),
            PropagationMode::ResetJacobian
        );
        assert_eq!(
            "smooth_ignore_events".parse::<PropagationMode>().unwrap(),
            PropagationMode::Smooth
        );
        assert!("bogus".parse::<PropagationMode>().is_err());
    }
}
