use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hybrid::eval::ModelEval;
use crate::hybrid::spec::{MatrixFn, ModeId, Point, VectorFn};

/// Measured signals `h(x, y, θ, t)` with optional analytic Jacobians.
///
/// Analytic Jacobians are used only on modes without an algebraic layer;
/// otherwise the output is differentiated along the constraint manifold.
#[derive(Clone)]
pub struct OutputMap {
    pub m: usize,
    pub names: Vec<String>,
    pub h: VectorFn,
    pub dx_h: Option<MatrixFn>,
    pub dtheta_h: Option<MatrixFn>,
}

impl std::fmt::Debug for OutputMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OutputMap")
            .field("m", &self.m)
            .field("names", &self.names)
            .finish()
    }
}

impl OutputMap {
    pub fn new<F>(m: usize, h: F) -> Self
    where
        F: Fn(Point<'_>) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            m,
            names: (1..=m).map(|i| format!("y{i}")).collect(),
            h: Arc::new(h),
            dx_h: None,
            dtheta_h: None,
        }
    }

    /// Output of the states at `indices`, with exact Jacobians.
    pub fn select(indices: &[usize], n: usize, p: usize) -> Self {
        let idx = indices.to_vec();
        let m = idx.len();
        let sel = idx.clone();
        let mut dx = DMatrix::zeros(m, n);
        for (r, &c) in idx.iter().enumerate() {
            dx[(r, c)] = 1.0;
        }
        let dth = DMatrix::zeros(m, p);
        Self {
            m,
            names: idx.iter().map(|i| format!("x{}", i + 1)).collect(),
            h: Arc::new(move |pt: Point<'_>| sel.iter().map(|&i| pt.x[i]).collect()),
            dx_h: Some(Arc::new(move |_| dx.clone())),
            dtheta_h: Some(Arc::new(move |_| dth.clone())),
        }
    }

    pub fn full_state(n: usize, p: usize) -> Self {
        Self::select(&(0..n).collect::<Vec<_>>(), n, p)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.m {
            return Err(Error::ShapeMismatch {
                context: "output names",
                expected: self.m.to_string(),
                actual: names.len().to_string(),
            });
        }
        self.names = names;
        Ok(self)
    }

    pub fn with_jacobians<A, B>(mut self, dx: A, dtheta: B) -> Self
    where
        A: Fn(Point<'_>) -> DMatrix<f64> + Send + Sync + 'static,
        B: Fn(Point<'_>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.dx_h = Some(Arc::new(dx));
        self.dtheta_h = Some(Arc::new(dtheta));
        self
    }

    /// Map measuring only the given rows of `self`.
    pub fn rows(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.m) {
            return Err(Error::InvalidArgument(format!(
                "output row {bad} out of range"
            )));
        }
        let pick = |m: &DMatrix<f64>, idx: &[usize]| {
            DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
        };
        let (h, sel) = (self.h.clone(), idx.to_vec());
        let mut out = Self {
            m: idx.len(),
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            h: Arc::new(move |pt| {
                let v = h(pt);
                sel.iter().map(|&i| v[i]).collect()
            }),
            dx_h: None,
            dtheta_h: None,
        };
        if let (Some(a), Some(b)) = (self.dx_h.clone(), self.dtheta_h.clone()) {
            let (sa, sb) = (idx.to_vec(), idx.to_vec());
            out.dx_h = Some(Arc::new(move |pt| pick(&a(pt), &sa)));
            out.dtheta_h = Some(Arc::new(move |pt| pick(&b(pt), &sb)));
        }
        Ok(out)
    }

    pub fn evaluate(
        &self,
        ev: &mut ModelEval<'_>,
        q: ModeId,
        x: &[f64],
        t: f64,
    ) -> Result<Vec<f64>> {
        let y = ev.algebraic(q, x, t)?;
        let v = (self.h)(Point::new(x, &y, ev.theta, t));
        if v.len() != self.m {
            return Err(Error::ShapeMismatch {
                context: "output map",
                expected: self.m.to_string(),
                actual: v.len().to_string(),
            });
        }
        Ok(v)
    }

    /// `(D_x h, D_θ h)` in mode `q`.
    pub fn jacobians(
        &self,
        ev: &mut ModelEval<'_>,
        q: ModeId,
        x: &[f64],
        t: f64,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let has_alg = ev.spec.mode(q)?.algebraic.is_some();
        if let (false, Some(a), Some(b)) = (has_alg, &self.dx_h, &self.dtheta_h) {
            let pt = Point::new(x, &[], ev.theta, t);
            return Ok((a(pt), b(pt)));
        }
        let h = self.h.clone();
        let r = ev.reduce(q, |pt| h(pt), x, t)?;
        Ok((r.dx, r.dtheta))
    }
}

/// `J = D_x h Z + D_θ h`.
pub fn output_sensitivity(
    dx_h: &DMatrix<f64>,
    dtheta_h: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if dx_h.ncols() != z.nrows()
        || dx_h.nrows() != dtheta_h.nrows()
        || z.ncols() != dtheta_h.ncols()
    {
        return Err(Error::ShapeMismatch {
            context: "output_sensitivity",
            expected: format!("D_x h {:?}, D_θ h {:?}", dx_h.shape(), dtheta_h.shape()),
            actual: format!("Z {:?}", z.shape()),
        });
    }
    Ok(dx_h * z + dtheta_h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_state_gives_z() {
        let z = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = OutputMap::full_state(2, 3);
        let pt = Point::new(&[0.0, 0.0], &[], &[0.0; 3], 0.0);
        let j =
            output_sensitivity(&(out.dx_h.unwrap())(pt), &(out.dtheta_h.unwrap())(pt), &z).unwrap();
        assert_eq!(j, z);
    }

    #[test]
    fn direct_parameter_output() {
        let t = 0.8;
        let j = output_sensitivity(
            &DMatrix::zeros(1, 1),
            &DMatrix::from_element(1, 1, t),
            &DMatrix::from_element(1, 1, 42.0),
        )
        .unwrap();
        assert_eq!(j[(0, 0)], t);
    }

    #[test]
    fn row_subset() {
        let out = OutputMap::full_state(3, 1).rows(&[2, 0]).unwrap();
        let pt = Point::new(&[1.0, 2.0, 3.0], &[], &[0.0], 0.0);
        assert_eq!((out.h)(pt), vec![3.0, 1.0]);
        assert_eq!(out.names, vec!["x3", "x1"]);
        assert_eq!(
            (out.dx_h.as_ref().unwrap())(pt),
            DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0])
        );
        assert!(OutputMap::full_state(3, 1).rows(&[3]).is_err());
    }

    #[test]
    fn shape_checked() {
        assert!(output_sensitivity(
            &DMatrix::zeros(1, 2),
            &DMatrix::zeros(1, 1),
            &DMatrix::zeros(3, 1)
        )
        .is_err());
    }
}
