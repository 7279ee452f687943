use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::hybrid::eval::ModelEval;

/// Every first derivative entering an event jump.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBundle {
    pub dx_f: DMatrix<f64>,
    pub dtheta_f: DMatrix<f64>,
    pub dx_g: RowDVector<f64>,
    pub dtheta_g: RowDVector<f64>,
    pub dt_g: f64,
    pub dx_r: DMatrix<f64>,
    pub dtheta_r: DMatrix<f64>,
    pub dt_r: DVector<f64>,
}

impl JacobianBundle {
    /// Bundle for an autonomous, parameter-free guard and reset.
    pub fn state_only(dx_g: RowDVector<f64>, dx_r: DMatrix<f64>, p: usize) -> Self {
        let n = dx_r.nrows();
        Self {
            dx_f: DMatrix::zeros(n, n),
            dtheta_f: DMatrix::zeros(n, p),
            dx_g,
            dtheta_g: RowDVector::zeros(p),
            dt_g: 0.0,
            dx_r,
            dtheta_r: DMatrix::zeros(n, p),
            dt_r: DVector::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.dx_r.nrows()
    }

    pub fn p(&self) -> usize {
        self.dtheta_r.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let p = self.p();
        let shapes = [
            ("D_x f", self.dx_f.shape(), (n, n)),
            ("D_θ f", self.dtheta_f.shape(), (n, p)),
            ("D_x g", self.dx_g.shape(), (1, n)),
            ("D_θ g", self.dtheta_g.shape(), (1, p)),
            ("D_x R", self.dx_r.shape(), (n, n)),
            ("D_t R", self.dt_r.shape(), (n, 1)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::ShapeMismatch {
                    context: "jacobian bundle",
                    expected: format!("{name} {want:?}"),
                    actual: format!("{got:?}"),
                });
            }
        }
        let finite = self
            .dx_f
            .iter()
            .chain(self.dtheta_f.iter())
            .chain(self.dx_g.iter())
            .chain(self.dtheta_g.iter())
            .chain(self.dx_r.iter())
            .chain(self.dtheta_r.iter())
            .chain(self.dt_r.iter())
            .all(|v| v.is_finite())
            && self.dt_g.is_finite();
        if !finite {
            return Err(Error::NonFinite("jacobian bundle".into()));
        }
        Ok(())
    }

    /// `D_t g + D_x g · f⁻`.
    pub fn guard_rate(&self, f_pre: &DVector<f64>) -> f64 {
        self.dt_g + (&self.dx_g * f_pre)[0]
    }

    fn checked_rate(&self, f_pre: &DVector<f64>, floor: f64) -> Result<f64> {
        let rate = self.guard_rate(f_pre);
        if !(rate.abs() >= floor) {
            return Err(Error::Grazing { t: f64::NAN, rate });
        }
        Ok(rate)
    }

    /// `f⁺ − D_x R f⁻ − D_t R`.
    pub fn jump_numerator(&self, f_pre: &DVector<f64>, f_post: &DVector<f64>) -> DVector<f64> {
        f_post - &self.dx_r * f_pre - &self.dt_r
    }
}

/// Assemble the bundle for transition `k` at the pre-event state.
pub fn jacobian_bundle(
    ev: &mut ModelEval<'_>,
    k: usize,
    x_pre: &[f64],
    tau: f64,
) -> Result<JacobianBundle> {
    let source = ev.spec.transitions[k].source;
    let (dx_f, dtheta_f) = ev.flow_jacobians(source, x_pre, tau)?;
    let g = ev.guard_derivatives(k, x_pre, tau)?;
    let r = ev.reset_derivatives(k, x_pre, tau)?;
    let b = JacobianBundle {
        dx_f,
        dtheta_f,
        dx_g: g.dx.transpose(),
        dtheta_g: g.dtheta.transpose(),
        dt_g: g.dt,
        dx_r: r.dx,
        dtheta_r: r.dtheta,
        dt_r: r.dt,
    };
    b.validate()?;
    Ok(b)
}

/// `Ξ = D_x R + (f⁺ − D_x R f⁻ − D_t R) D_x g / (D_t g + D_x g f⁻)`.
pub fn saltation_matrix(
    b: &JacobianBundle,
    f_pre: &DVector<f64>,
    f_post: &DVector<f64>,
    floor: f64,
) -> Result<DMatrix<f64>> {
    let n = b.n();
    if f_pre.len() != n || f_post.len() != n {
        return Err(Error::ShapeMismatch {
            context: "saltation vector fields",
            expected: n.to_string(),
            actual: format!("{} / {}", f_pre.len(), f_post.len()),
        });
    }
    let rate = b.checked_rate(f_pre, floor)?;
    let num = b.jump_numerator(f_pre, f_post);
    Ok(&b.dx_r + (num * &b.dx_g) / rate)
}

/// `Z⁺ = Ξ Z⁻ + D_θ R`.
pub fn sensitivity_jump(
    xi: &DMatrix<f64>,
    z_pre: &DMatrix<f64>,
    dtheta_r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if xi.ncols() != z_pre.nrows()
        || xi.nrows() != dtheta_r.nrows()
        || z_pre.ncols() != dtheta_r.ncols()
    {
        return Err(Error::ShapeMismatch {
            context: "sensitivity_jump",
            expected: format!("Ξ {:?} compatible with Z {:?}", xi.shape(), z_pre.shape()),
            actual: format!("D_θR {:?}", dtheta_r.shape()),
        });
    }
    Ok(xi * z_pre + dtheta_r)
}

/// `∂τ/∂θ = −(D_x g Z⁻ + D_θ g) / (D_t g + D_x g f⁻)`.
pub fn event_time_sensitivity(
    b: &JacobianBundle,
    z_pre: &DMatrix<f64>,
    f_pre: &DVector<f64>,
    floor: f64,
) -> Result<RowDVector<f64>> {
    if z_pre.shape() != (b.n(), b.p()) {
        return Err(Error::ShapeMismatch {
            context: "event_time_sensitivity",
            expected: format!("{:?}", (b.n(), b.p())),
            actual: format!("{:?}", z_pre.shape()),
        });
    }
    let rate = b.checked_rate(f_pre, floor)?;
    Ok(-(&b.dx_g * z_pre + &b.dtheta_g) / rate)
}

/// Extra post-event term `(f⁺ − D_x R f⁻ − D_t R) D_θ g / (D_t g + D_x g f⁻)`
/// for guards that depend on θ; zero for state-only guards.
pub fn guard_parameter_correction(
    b: &JacobianBundle,
    f_pre: &DVector<f64>,
    f_post: &DVector<f64>,
    floor: f64,
) -> Result<DMatrix<f64>> {
    let rate = b.checked_rate(f_pre, floor)?;
    Ok(b.jump_numerator(f_pre, f_post) * &b.dtheta_g / rate)
}

/// `Ż = D_x f Z + D_θ f`.
pub fn variational_rhs(
    dx_f: &DMatrix<f64>,
    dtheta_f: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if dx_f.ncols() != z.nrows()
        || dx_f.nrows() != dtheta_f.nrows()
        || z.ncols() != dtheta_f.ncols()
    {
        return Err(Error::ShapeMismatch {
            context: "variational_rhs",
            expected: format!("D_x f {:?}, D_θ f {:?}", dx_f.shape(), dtheta_f.shape()),
            actual: format!("Z {:?}", z.shape()),
        });
    }
    Ok(dx_f * z + dtheta_f)
}
