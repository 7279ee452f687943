use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default relative step for model Jacobians that are not supplied analytically.
pub const DEFAULT_JACOBIAN_SCALE: f64 = 1e-7;

/// Central-difference Jacobian of `f` at `point`.
///
/// Component `i` is perturbed by `scale * max(|point_i|, 1)`, so the
/// truncation error is O(h²) and affine maps are differentiated exactly up to
/// rounding.
pub fn numeric_jacobian<F>(mut f: F, point: &[f64], scale: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(
            "jacobian scale must be positive".into(),
        ));
    }
    let n = point.len();
    let mut probe = point.to_vec();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut m = None;
    for i in 0..n {
        let h = scale * point[i].abs().max(1.0);
        probe[i] = point[i] + h;
        let up = f(&probe)?;
        probe[i] = point[i] - h;
        let down = f(&probe)?;
        probe[i] = point[i];
        if up.len() != down.len() || m.is_some_and(|m| m != up.len()) {
            return Err(Error::ShapeMismatch {
                context: "numeric_jacobian",
                expected: format!("{}", m.unwrap_or(up.len())),
                actual: format!("{}", down.len()),
            });
        }
        m = Some(up.len());
        let actual_h = (point[i] + h) - (point[i] - h);
        let col: Vec<f64> = up
            .iter()
            .zip(&down)
            .map(|(a, b)| (a - b) / actual_h)
            .collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("numeric_jacobian".into()));
        }
        columns.push(col);
    }
    let rows = match m {
        Some(m) => m,
        None => f(point)?.len(),
    };
    Ok(DMatrix::from_fn(rows, n, |r, c| columns[c][r]))
}

/// Central-difference derivative of a vector function of one scalar.
pub fn numeric_derivative<F>(mut f: F, s: f64, scale: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let h = scale * s.abs().max(1.0);
    let up = f(s + h)?;
    let down = f(s - h)?;
    let actual_h = (s + h) - (s - h);
    let d: Vec<f64> = up
        .iter()
        .zip(&down)
        .map(|(a, b)| (a - b) / actual_h)
        .collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("numeric_derivative".into()));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let j = numeric_jacobian(|x| Ok(vec![x[0] * x[0]]), &[3.0], 1e-6).unwrap();
        assert!((j[(0, 0)] - 6.0).abs() < 1e-8, "{}", j[(0, 0)]);
    }

    #[test]
    fn affine_map_is_exact() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.25, -4.0]);
        let f = |x: &[f64]| {
            let v = &a * nalgebra::DVector::from_column_slice(x);
            Ok(vec![v[0] + 1.0, v[1] - 2.0])
        };
        let j = numeric_jacobian(f, &[0.3, -1.2, 2.0], 1e-7).unwrap();
        assert!((&j - &a).amax() < 1e-8);
    }

    #[test]
    fn rejects_non_finite() {
        let r = numeric_jacobian(|x| Ok(vec![1.0 / (x[0] - 1e-7)]), &[0.0], 1e-7);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
