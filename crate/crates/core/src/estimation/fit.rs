use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::measurements::{EventAnchor, MeasurementSet};
use crate::hybrid::eval::ModelEval;
use crate::hybrid::simulate::simulate;
use crate::hybrid::spec::{HybridSystemSpec, IntegratorConfig, ModeId};
use crate::information::output::{output_sensitivity, OutputMap};
use crate::information::serialize_matrix;
use crate::linalg::symmetrize;
use crate::sensitivity::{propagate, PropagationMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iters: usize,
    /// On the gradient's ∞-norm.
    pub grad_tol: f64,
    /// On the largest relative parameter change.
    pub step_tol: f64,
    /// On the decrease of the negative log-likelihood predicted by the
    /// Gauss–Newton model, relative to the cost once it exceeds one.
    pub decrease_tol: f64,
    pub max_halvings: usize,
    pub integrator: IntegratorConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            decrease_tol: 1e-8,
            max_halvings: 40,
            integrator: IntegratorConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        for (name, v) in [
            ("grad_tol", self.grad_tol),
            ("step_tol", self.step_tol),
            ("decrease_tol", self.decrease_tol),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub iterations: usize,
    /// `½ Σ rᵀ W r`.
    pub final_cost: f64,
    pub converged: bool,
    pub gradient_norm: f64,
    #[serde(serialize_with = "serialize_matrix")]
    pub gauss_newton_hessian: DMatrix<f64>,
}

struct Linearization {
    cost: f64,
    gradient: DVector<f64>,
    hessian: DMatrix<f64>,
}

/// Cost, and with `jacobian` also the gradient and Gauss–Newton Hessian,
/// of the measurements against a fresh simulation at `theta`.
fn linearize(
    ms: &MeasurementSet,
    spec: &HybridSystemSpec,
    out: &OutputMap,
    theta: &[f64],
    cfg: &IntegratorConfig,
    jacobian: bool,
) -> Result<Linearization> {
    let p = spec.n_params;
    let arc = simulate(
        spec,
        theta,
        &spec.initial_state,
        spec.initial_mode,
        ms.horizon,
        cfg,
    )?;
    let sens = if jacobian {
        Some(propagate(
            &arc,
            spec,
            theta,
            &DMatrix::zeros(spec.n_states, p),
            PropagationMode::Saltation,
            cfg,
        )?)
    } else {
        None
    };
    let mut ev = ModelEval::new(spec, theta, cfg)?;
    let mut lin = Linearization {
        cost: 0.0,
        gradient: DVector::zeros(p),
        hessian: DMatrix::zeros(p, p),
    };
    let mut add = |ev: &mut ModelEval<'_>,
                   q,
                   x: &[f64],
                   t: f64,
                   z: Option<DMatrix<f64>>,
                   y: &[f64],
                   w: &DMatrix<f64>|
     -> Result<()> {
        let h = out.evaluate(ev, q, x, t)?;
        let r = DVector::from_iterator(h.len(), h.iter().zip(y).map(|(a, b)| a - b));
        let wr = w * &r;
        lin.cost += 0.5 * r.dot(&wr);
        if let Some(z) = z {
            let (dx, dth) = out.jacobians(ev, q, x, t)?;
            let j = output_sensitivity(&dx, &dth, &z)?;
            lin.gradient += j.transpose() * &wr;
            lin.hessian += j.transpose() * w * &j;
        }
        Ok(())
    };
    let event = |j: usize| {
        arc.events.get(j).ok_or_else(|| {
            Error::Estimation(format!(
                "event {j} does not occur at the current parameters"
            ))
        })
    };
    // State on one side of event `j`, carried linearly to the sample time.
    let branch =
        |ev: &mut ModelEval<'_>, j: usize, after: bool, t: f64| -> Result<(ModeId, Vec<f64>)> {
            let e = event(j)?;
            let (q, x) = if after {
                (e.target, &e.post_state)
            } else {
                (e.source, &e.pre_state)
            };
            let f = ev.field(q, x, e.time)?;
            let dt = t - e.time;
            Ok((q, x.iter().zip(&f).map(|(x, f)| x + f * dt).collect()))
        };
    let v_inv = ms.noise.flow_inv();
    for s in &ms.flow_samples {
        let w = v_inv * s.weight;
        let (q, x, z) = match s.anchor {
            None => (
                arc.mode_at(s.t),
                arc.state_at(s.t),
                sens.as_ref().map(|p| p.z_at(s.t)),
            ),
            Some(EventAnchor::Before(j)) => {
                let (q, x) = branch(&mut ev, j, false, s.t)?;
                (q, x, sens.as_ref().map(|p| p.jumps[j].z_pre.clone()))
            }
            Some(EventAnchor::After(j)) => {
                let (q, x) = branch(&mut ev, j, true, s.t)?;
                (q, x, sens.as_ref().map(|p| p.jumps[j].z_post.clone()))
            }
        };
        add(&mut ev, q, &x, s.t, z, &s.y, &w)?;
    }
    for s in &ms.event_samples {
        let inv = ms.noise.event_inv(s.j).ok_or_else(|| {
            Error::InvalidArgument(format!("event sample {} has no covariance", s.j))
        })?;
        let (q, x) = branch(&mut ev, s.j, true, s.t)?;
        let z = sens.as_ref().map(|p| p.jumps[s.j].z_post.clone());
        add(&mut ev, q, &x, s.t, z, &s.y, inv)?;
    }
    if !lin.cost.is_finite() {
        return Err(Error::Estimation("cost is not finite".into()));
    }
    lin.hessian = symmetrize(&lin.hessian);
    Ok(lin)
}

/// Negative log-likelihood `½ Σ rᵀ W r` of the measurements at `theta`.
pub fn cost(
    ms: &MeasurementSet,
    spec: &HybridSystemSpec,
    out: &OutputMap,
    theta: &[f64],
    cfg: &IntegratorConfig,
) -> Result<f64> {
    Ok(linearize(ms, spec, out, theta, cfg, false)?.cost)
}

/// Jacobi-scaled solve of `H δ = -g`; falls back to a pseudo-inverse.
fn gauss_newton_step(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let p = g.len();
    let d = DVector::from_iterator(
        p,
        (0..p).map(|i| {
            let v = h[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        }),
    );
    let hs = DMatrix::from_fn(p, p, |i, j| d[i] * h[(i, j)] * d[j]);
    let gs = g.component_mul(&d);
    let ys = match hs.clone().cholesky() {
        Some(c) => c.solve(&(-&gs)),
        None => {
            hs.pseudo_inverse(1e-12)
                .map_err(|e| Error::Estimation(format!("singular Gauss–Newton system: {e}")))?
                * (-&gs)
        }
    };
    let step = ys.component_mul(&d);
    if step.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation("Gauss–Newton step is not finite".into()));
    }
    Ok(step)
}

/// Gauss–Newton minimization of the Gaussian negative log-likelihood with
/// step halving. The regressor is the saltation-propagated output sensitivity.
pub fn nls_fit(
    ms: &MeasurementSet,
    spec: &HybridSystemSpec,
    out: &OutputMap,
    theta_init: &[f64],
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    if theta_init.len() != spec.n_params {
        return Err(Error::ShapeMismatch {
            context: "initial parameters",
            expected: spec.n_params.to_string(),
            actual: theta_init.len().to_string(),
        });
    }
    if ms.is_empty() {
        return Err(Error::InvalidArgument("no measurements".into()));
    }
    let cfg = &config.integrator;
    let mut theta = theta_init.to_vec();
    let mut cur = linearize(ms, spec, out, &theta, cfg, true)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        if cur.gradient.amax() <= config.grad_tol {
            converged = true;
            break;
        }
        let step = gauss_newton_step(&cur.hessian, &cur.gradient)?;
        let predicted = -0.5 * cur.gradient.dot(&step);
        if predicted <= config.decrease_tol * cur.cost.max(1.0) {
            converged = true;
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let trial: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t + alpha * s)
                .collect();
            if let Ok(l) = linearize(ms, spec, out, &trial, cfg, false) {
                if l.cost < cur.cost {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else { break };
        let rel = theta
            .iter()
            .zip(&next)
            .map(|(a, b)| (b - a).abs() / a.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        theta = next;
        iterations += 1;
        cur = linearize(ms, spec, out, &theta, cfg, true)?;
        if rel <= config.step_tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        theta_hat: theta,
        iterations,
        final_cost: cur.cost,
        converged,
        gradient_norm: cur.gradient.amax(),
        gauss_newton_hessian: cur.hessian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::measurements::{predicted_measurements, SampleGrid};
    use crate::hybrid::ModeId;
    use crate::information::NoiseModel;
    use crate::systems::ramp_spec;

    #[test]
    fn linear_model_one_step() {
        let s = ramp_spec(None).unwrap();
        let cfg = IntegratorConfig::default().with_max_step(0.01);
        let arc = simulate(&s, &[3.0], &[0.0], ModeId(0), 1.0, &cfg).unwrap();
        let out = OutputMap::full_state(1, 1);
        let noise = NoiseModel::isotropic(1, 1.0).unwrap();
        let ms = predicted_measurements(
            &arc,
            &s,
            &[3.0],
            &out,
            &noise,
            &SampleGrid::Integrator,
            &cfg,
        )
        .unwrap();
        let fc = FitConfig {
            integrator: cfg,
            ..Default::default()
        };
        let r = nls_fit(&ms, &s, &out, &[1.0], &fc).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!((r.theta_hat[0] - 3.0).abs() < 1e-12);
        assert!((r.gauss_newton_hessian[(0, 0)] - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn wrong_dimension_rejected() {
        let s = ramp_spec(None).unwrap();
        let arc = simulate(&s, &[3.0], &[0.0], ModeId(0), 1.0, &Default::default()).unwrap();
        let out = OutputMap::full_state(1, 1);
        let noise = NoiseModel::isotropic(1, 1.0).unwrap();
        let ms = predicted_measurements(
            &arc,
            &s,
            &[3.0],
            &out,
            &noise,
            &SampleGrid::Integrator,
            &Default::default(),
        )
        .unwrap();
        assert!(nls_fit(&ms, &s, &out, &[1.0, 2.0], &FitConfig::default()).is_err());
    }
}
