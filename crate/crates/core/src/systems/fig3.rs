//! Planar crossing of the switching surface `x1 = 0`, used to contrast the
//! reset-Jacobian update with the saltation update of a perturbation disk.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;

use crate::error::Result;
use crate::hybrid::integrator::integrate;
use crate::hybrid::{
    Crossing, HybridSystemSpec, IntegratorConfig, ModeId, ModeSpec, Reset, TransitionSpec,
};
use crate::sensitivity::{saltation_matrix, JacobianBundle};

#[derive(Debug, Clone, PartialEq)]
pub struct Fig3Case {
    pub dx_g: RowDVector<f64>,
    pub f_pre: DVector<f64>,
    pub f_post: DVector<f64>,
    pub dx_r: DMatrix<f64>,
    pub radius: f64,
}

pub fn fig3_case() -> Fig3Case {
    Fig3Case {
        dx_g: RowDVector::from_row_slice(&[1.0, 0.0]),
        f_pre: DVector::from_column_slice(&[1.0, -1.0]),
        f_post: DVector::from_column_slice(&[1.0, 2.0]),
        dx_r: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.7]),
        radius: 0.026,
    }
}

impl Fig3Case {
    pub fn bundle(&self) -> JacobianBundle {
        JacobianBundle::state_only(self.dx_g.clone(), self.dx_r.clone(), 1)
    }

    pub fn saltation(&self) -> Result<DMatrix<f64>> {
        saltation_matrix(&self.bundle(), &self.f_pre, &self.f_post, 1e-12)
    }

    /// `n` points on the boundary circle of the perturbation disk.
    pub fn circle(&self, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }

    pub fn images(&self, n: usize) -> Result<DiskImages> {
        let xi = self.saltation()?;
        let map = |m: &DMatrix<f64>, p: &[f64; 2]| {
            let v = m * DVector::from_column_slice(p);
            [v[0], v[1]]
        };
        let pre = self.circle(n);
        let reset = pre.iter().map(|p| map(&self.dx_r, p)).collect();
        let saltation = pre.iter().map(|p| map(&xi, p)).collect();
        Ok(DiskImages {
            pre,
            reset,
            saltation,
        })
    }
}

/// A perturbation circle and its images under `D_x R` and `Ξ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiskImages {
    pub pre: Vec<[f64; 2]>,
    pub reset: Vec<[f64; 2]>,
    pub saltation: Vec<[f64; 2]>,
}

impl DiskImages {
    pub fn max_distance(&self) -> f64 {
        self.reset
            .iter()
            .zip(&self.saltation)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }
}

fn f_pre(x: &[f64]) -> Vec<f64> {
    vec![1.0 + 0.5 * x[1] * x[1], -1.0 + x[0]]
}

fn f_post(x: &[f64]) -> Vec<f64> {
    vec![1.0 + x[1] * x[1], 2.0 - x[0]]
}

/// Two-mode system that crosses `x1 = 0` at the origin at `t = 0.5`, where
/// its fields and reset Jacobian equal those of [`fig3_case`]. The single
/// parameter only scales the post-event field's second component.
pub fn fig3_spec() -> Result<HybridSystemSpec> {
    let cfg = IntegratorConfig::default().scaled_tolerances(1e-4);
    let mut back = |_t: f64, x: &[f64], out: &mut [f64]| -> Result<()> {
        let f = f_pre(x);
        out[0] = -f[0];
        out[1] = -f[1];
        Ok(())
    };
    let traj = integrate(&mut back, 0.0, &[0.0, 0.0], 0.5, &cfg)?;
    let x0 = traj.last_state().to_vec();
    let pre = ModeSpec::ode("pre", |x, _, _| f_pre(x));
    let post = ModeSpec::ode("post", |x, th, _| {
        let f = f_post(x);
        vec![f[0], th[0] * f[1]]
    });
    let reset = Reset::map(|x, _, _| vec![x[0], -0.7 * x[1] + 0.5 * x[1] * x[1]]);
    let tr = TransitionSpec::new(
        ModeId(0),
        ModeId(1),
        |x, _, _| x[0],
        Crossing::Rising,
        reset,
    );
    HybridSystemSpec::new(2, 1, vec![pre, post], vec![tr], ModeId(0), x0)?
        .with_names(&["x1", "x2"], &["theta"])
}
