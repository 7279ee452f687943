//! Evaluation of a spec at a fixed parameter vector: vector fields, guards and
//! resets, with algebraic variables eliminated for DAE modes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hybrid::spec::{
    AlgebraicLayer, HybridSystemSpec, IntegratorConfig, ModeId, Point, Reset,
};
use crate::sensitivity::jacobian::{numeric_jacobian, DEFAULT_JACOBIAN_SCALE};

/// Solve `c(x, y, θ, t) = 0` for `y` by damped Newton from `y_guess`.
///
/// Once the residual norm is below `newton_tol` one further Newton step is
/// taken, which drives `y` to rounding level so that downstream finite
/// differences see a smooth function.
pub fn solve_algebraic(
    layer: &AlgebraicLayer,
    x: &[f64],
    theta: &[f64],
    t: f64,
    y_guess: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    let residual = |y: &[f64]| -> Vec<f64> { (layer.residual)(Point::new(x, y, theta, t)) };
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut y = y_guess.to_vec();
    let mut r = residual(&y);
    if r.len() != layer.n_alg {
        return Err(Error::ShapeMismatch {
            context: "algebraic residual",
            expected: layer.n_alg.to_string(),
            actual: r.len().to_string(),
        });
    }
    let mut rn = norm(&r);
    let mut polished = false;
    for _ in 0..cfg.newton_max_iters {
        if !rn.is_finite() {
            break;
        }
        if rn <= cfg.newton_tol && polished {
            return Ok(y);
        }
        if rn == 0.0 {
            return Ok(y);
        }
        let jac = match &layer.jacobian_y {
            Some(j) => j(Point::new(x, &y, theta, t)),
            None => numeric_jacobian(|yy| Ok(residual(yy)), &y, DEFAULT_JACOBIAN_SCALE)?,
        };
        let step = jac
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or(Error::SingularAlgebraicJacobian { t })?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularAlgebraicJacobian { t });
        }
        let converged = rn <= cfg.newton_tol;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = y
                .iter()
                .zip(step.iter())
                .map(|(a, d)| a - lambda * d)
                .collect();
            let rt = residual(&trial);
            let rtn = norm(&rt);
            if rtn.is_finite() && (rtn < rn || (converged && rtn <= rn)) {
                y = trial;
                r = rt;
                rn = rtn;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                if converged {
                    return Ok(y);
                }
                return Err(Error::AlgebraicNonConvergence {
                    iterations: cfg.newton_max_iters,
                    residual: rn,
                });
            }
        }
        if converged {
            polished = true;
        }
    }
    if rn <= cfg.newton_tol {
        return Ok(y);
    }
    Err(Error::AlgebraicNonConvergence {
        iterations: cfg.newton_max_iters,
        residual: rn,
    })
}

/// Reduced first derivatives of a model function along the algebraic manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedJacobians {
    /// `k × n`
    pub dx: DMatrix<f64>,
    /// `k × p`
    pub dtheta: DMatrix<f64>,
    /// `k`
    pub dt: DVector<f64>,
}

/// Guard derivatives `D_x g`, `D_θ g`, `D_t g` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardDerivatives {
    pub dx: DVector<f64>,
    pub dtheta: DVector<f64>,
    pub dt: f64,
}

/// Reset derivatives `D_x R`, `D_θ R`, `D_t R` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResetDerivatives {
    pub dx: DMatrix<f64>,
    pub dtheta: DMatrix<f64>,
    pub dt: DVector<f64>,
}

/// Per-simulation evaluator. Holds the warm-start cache of every algebraic layer.
pub struct ModelEval<'a> {
    pub spec: &'a HybridSystemSpec,
    pub theta: &'a [f64],
    pub cfg: IntegratorConfig,
    warm: Vec<Vec<f64>>,
}

impl<'a> ModelEval<'a> {
    pub fn new(
        spec: &'a HybridSystemSpec,
        theta: &'a [f64],
        cfg: &IntegratorConfig,
    ) -> Result<Self> {
        if theta.len() != spec.n_params {
            return Err(Error::ShapeMismatch {
                context: "parameter vector",
                expected: spec.n_params.to_string(),
                actual: theta.len().to_string(),
            });
        }
        let warm = spec
            .modes
            .iter()
            .map(|m| {
                m.algebraic
                    .as_ref()
                    .map(|l| l.initial_guess.clone())
                    .unwrap_or_default()
            })
            .collect();
        Ok(Self {
            spec,
            theta,
            cfg: *cfg,
            warm,
        })
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.n_states {
            return Err(Error::ShapeMismatch {
                context: "state vector",
                expected: self.spec.n_states.to_string(),
                actual: x.len().to_string(),
            });
        }
        Ok(())
    }

    /// Algebraic variables of mode `q` at `(x, t)`; empty for ODE modes.
    pub fn algebraic(&mut self, q: ModeId, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mode = self.spec.mode(q)?;
        let Some(layer) = &mode.algebraic else {
            return Ok(Vec::new());
        };
        let y = solve_algebraic(layer, x, self.theta, t, &self.warm[q.0], &self.cfg)?;
        self.warm[q.0].clone_from(&y);
        Ok(y)
    }

    /// Reduced vector field of mode `q`.
    pub fn field(&mut self, q: ModeId, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let y = self.algebraic(q, x, t)?;
        let f = (self.spec.modes[q.0].dynamics)(Point::new(x, &y, self.theta, t));
        if f.len() != self.spec.n_states {
            return Err(Error::ShapeMismatch {
                context: "vector field",
                expected: self.spec.n_states.to_string(),
                actual: f.len().to_string(),
            });
        }
        Ok(f)
    }

    pub fn field_into(&mut self, q: ModeId, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let f = self.field(q, x, t)?;
        out.copy_from_slice(&f);
        Ok(())
    }

    pub fn guard(&mut self, k: usize, x: &[f64], t: f64) -> Result<f64> {
        let tr = &self.spec.transitions[k];
        let y = self.algebraic(tr.source, x, t)?;
        Ok((tr.guard)(Point::new(x, &y, self.theta, t)))
    }

    pub fn reset(&mut self, k: usize, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let tr = &self.spec.transitions[k];
        match &tr.reset {
            Reset::Identity => Ok(x.to_vec()),
            Reset::Map { map, .. } => {
                let y = self.algebraic(tr.source, x, t)?;
                let out = map(Point::new(x, &y, self.theta, t));
                if out.len() != self.spec.n_states {
                    return Err(Error::ShapeMismatch {
                        context: "reset map",
                        expected: self.spec.n_states.to_string(),
                        actual: out.len().to_string(),
                    });
                }
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("reset of transition {k}")));
                }
                Ok(out)
            }
        }
    }

    pub fn invariant_holds(&mut self, q: ModeId, x: &[f64], t: f64) -> Result<bool> {
        let Some(pred) = self.spec.modes[q.0].invariant.clone() else {
            return Ok(true);
        };
        let y = self.algebraic(q, x, t)?;
        Ok(pred(Point::new(x, &y, self.theta, t)))
    }

    /// Derivatives of `func(x, y, θ, t)` with `y = y(x, θ, t)` eliminated through
    /// the implicit function theorem on mode `q`'s algebraic layer.
    pub fn reduce<F>(&mut self, q: ModeId, func: F, x: &[f64], t: f64) -> Result<ReducedJacobians>
    where
        F: Fn(Point<'_>) -> Vec<f64>,
    {
        self.check_state(x)?;
        let y = self.algebraic(q, x, t)?;
        let theta = self.theta;
        let s = DEFAULT_JACOBIAN_SCALE;
        let mut dx = numeric_jacobian(|xx| Ok(func(Point::new(xx, &y, theta, t))), x, s)?;
        let mut dth = numeric_jacobian(|th| Ok(func(Point::new(x, &y, th, t))), theta, s)?;
        let mut dt = DVector::from_column_slice(
            numeric_jacobian(|tt| Ok(func(Point::new(x, &y, theta, tt[0]))), &[t], s)?.as_slice(),
        );
        if let Some(layer) = &self.spec.modes[q.0].algebraic {
            let c = &layer.residual;
            let f_y = numeric_jacobian(|yy| Ok(func(Point::new(x, yy, theta, t))), &y, s)?;
            let c_y = match &layer.jacobian_y {
                Some(j) => j(Point::new(x, &y, theta, t)),
                None => numeric_jacobian(|yy| Ok(c(Point::new(x, yy, theta, t))), &y, s)?,
            };
            let c_x = numeric_jacobian(|xx| Ok(c(Point::new(xx, &y, theta, t))), x, s)?;
            let c_th = numeric_jacobian(|th| Ok(c(Point::new(x, &y, th, t))), theta, s)?;
            let c_t = numeric_jacobian(|tt| Ok(c(Point::new(x, &y, theta, tt[0]))), &[t], s)?;
            let lu = c_y.lu();
            let solve = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
                lu.solve(m).ok_or(Error::SingularAlgebraicJacobian { t })
            };
            let dy_dx = -solve(&c_x)?;
            let dy_dth = -solve(&c_th)?;
            let dy_dt = -solve(&c_t)?;
            dx += &f_y * dy_dx;
            dth += &f_y * dy_dth;
            dt += DVector::from_column_slice((&f_y * dy_dt).as_slice());
        }
        Ok(ReducedJacobians {
            dx,
            dtheta: dth,
            dt,
        })
    }

    /// Reduced `D_x f` and `D_θ f` of mode `q`; analytic when supplied.
    pub fn flow_jacobians(
        &mut self,
        q: ModeId,
        x: &[f64],
        t: f64,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mode = self.spec.mode(q)?;
        if mode.algebraic.is_none() {
            if let (Some(jx), Some(jp)) = (&mode.state_jacobian, &mode.param_jacobian) {
                let p = Point::new(x, &[], self.theta, t);
                return Ok((jx(p), jp(p)));
            }
        }
        let dynamics = mode.dynamics.clone();
        let r = self.reduce(q, |p| dynamics(p), x, t)?;
        Ok((r.dx, r.dtheta))
    }

    pub fn guard_derivatives(&mut self, k: usize, x: &[f64], t: f64) -> Result<GuardDerivatives> {
        let tr = &self.spec.transitions[k];
        let guard = tr.guard.clone();
        let r = self.reduce(tr.source, |p| vec![guard(p)], x, t)?;
        Ok(GuardDerivatives {
            dx: r.dx.row(0).transpose(),
            dtheta: r.dtheta.row(0).transpose(),
            dt: r.dt[0],
        })
    }

    /// `D_x R`, `D_θ R`, `D_t R`. Identity resets return `I`, `0`, `0` exactly.
    pub fn reset_derivatives(&mut self, k: usize, x: &[f64], t: f64) -> Result<ResetDerivatives> {
        let n = self.spec.n_states;
        let p = self.spec.n_params;
        let tr = &self.spec.transitions[k];
        match &tr.reset {
            Reset::Identity => Ok(ResetDerivatives {
                dx: DMatrix::identity(n, n),
                dtheta: DMatrix::zeros(n, p),
                dt: DVector::zeros(n),
            }),
            Reset::Map {
                map,
                state_jacobian,
                param_jacobian,
                time_derivative,
            } => {
                let source_has_alg = self.spec.modes[tr.source.0].algebraic.is_some();
                let (map, sj, pj, td) = (
                    map.clone(),
                    state_jacobian.clone(),
                    param_jacobian.clone(),
                    time_derivative.clone(),
                );
                let numeric = if sj.is_none() || pj.is_none() || td.is_none() || source_has_alg {
                    Some(self.reduce(tr.source, |pt| map(pt), x, t)?)
                } else {
                    None
                };
                let pt = Point::new(x, &[], self.theta, t);
                let pick = |analytic: Option<DMatrix<f64>>, fallback: Option<&DMatrix<f64>>| match (
                    source_has_alg,
                    analytic,
                ) {
                    (false, Some(m)) => m,
                    _ => fallback.expect("numeric fallback computed").clone(),
                };
                let dx = pick(sj.map(|f| f(pt)), numeric.as_ref().map(|r| &r.dx));
                let dtheta = pick(pj.map(|f| f(pt)), numeric.as_ref().map(|r| &r.dtheta));
                let dt = match (source_has_alg, td) {
                    (false, Some(f)) => DVector::from_vec(f(pt)),
                    _ => numeric
                        .as_ref()
                        .expect("numeric fallback computed")
                        .dt
                        .clone(),
                };
                Ok(ResetDerivatives { dx, dtheta, dt })
            }
        }
    }
}
