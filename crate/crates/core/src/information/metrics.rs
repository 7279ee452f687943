use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    check_symmetric, principal_submatrix, sym_eigen_sorted, sym_eigenvalues, symmetrize,
};

/// Regularizer added before taking log-determinants and inverses.
pub const DEFAULT_EPSILON: f64 = 1e-14;

/// Spectral summary of a Fisher information matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoMetrics {
    pub rank: usize,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub lambda_min_nonzero: f64,
    pub sigma: f64,
    pub logdet_regularized: f64,
    pub epsilon: f64,
    pub rank_threshold: f64,
    pub trace: f64,
    pub weakest_direction: Vec<f64>,
    pub weakest_multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakestDirection {
    pub vector: Vec<f64>,
    pub eigenvalue: f64,
    /// Dimension of the smallest eigenspace; above 1 the vector is one basis element.
    pub multiplicity: usize,
}

/// Default numerical rank threshold `p · λ_max · ε_machine`.
pub fn rank_threshold(eigenvalues: &[f64]) -> f64 {
    let lmax = eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    eigenvalues.len() as f64 * lmax * f64::EPSILON
}

pub fn info_metrics(f: &DMatrix<f64>, epsilon: f64) -> Result<InfoMetrics> {
    info_metrics_with_threshold(f, epsilon, None)
}

pub fn info_metrics_with_threshold(
    f: &DMatrix<f64>,
    epsilon: f64,
    threshold: Option<f64>,
) -> Result<InfoMetrics> {
    check_symmetric(f, "information matrix")?;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("information matrix".into()));
    }
    let eigenvalues = sym_eigenvalues(f);
    let thr = threshold.unwrap_or_else(|| rank_threshold(&eigenvalues));
    let above: Vec<f64> = eigenvalues.iter().copied().filter(|&l| l > thr).collect();
    let rank = above.len();
    let p = eigenvalues.len();
    let lambda_min_nonzero = above.first().copied().unwrap_or(0.0);
    let sigma = if rank < p {
        0.0
    } else {
        eigenvalues[0].max(0.0).sqrt()
    };
    let logdet_regularized = eigenvalues
        .iter()
        .map(|&l| {
            let v = l + epsilon;
            if v > 0.0 {
                v.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .sum();
    let weak = least_observable_direction(f)?;
    Ok(InfoMetrics {
        rank,
        trace: f.trace(),
        eigenvalues,
        lambda_min_nonzero,
        sigma,
        logdet_regularized,
        epsilon,
        rank_threshold: thr,
        weakest_direction: weak.vector,
        weakest_multiplicity: weak.multiplicity,
    })
}

/// Unit eigenvector of the smallest eigenvalue, sign-normalized so that its
/// largest-magnitude entry is positive.
pub fn least_observable_direction(f: &DMatrix<f64>) -> Result<WeakestDirection> {
    check_symmetric(f, "information matrix")?;
    let (vals, vecs) = sym_eigen_sorted(f);
    if vals.is_empty() {
        return Err(Error::InvalidArgument("empty information matrix".into()));
    }
    let lmax = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-10 * lmax.max(f64::MIN_POSITIVE);
    let multiplicity = vals.iter().take_while(|&&l| l - vals[0] <= tol).count();
    let mut v: Vec<f64> = vecs.column(0).iter().copied().collect();
    let (imax, _) = v.iter().enumerate().fold((0, -1.0), |(bi, bv), (i, &x)| {
        if x.abs() > bv {
            (i, x.abs())
        } else {
            (bi, bv)
        }
    });
    if v[imax] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(WeakestDirection {
        vector: v,
        eigenvalue: vals[0],
        multiplicity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalFim {
    #[serde(serialize_with = "crate::information::serialize_matrix")]
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// `F_bb` was singular and its pseudo-inverse was used.
    pub pseudo_inverse_used: bool,
}

/// Schur complement `F_aa − F_ab F_bb⁻¹ F_ba`.
pub fn conditional_fim(f: &DMatrix<f64>, a: &[usize]) -> Result<ConditionalFim> {
    check_symmetric(f, "information matrix")?;
    let p = f.nrows();
    if a.is_empty() || a.iter().any(|&i| i >= p) {
        return Err(Error::InvalidArgument(format!(
            "index set {a:?} is not within 0..{p}"
        )));
    }
    let mut sorted = a.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != a.len() {
        return Err(Error::InvalidArgument("index set has duplicates".into()));
    }
    let b: Vec<usize> = (0..p).filter(|i| !a.contains(i)).collect();
    let faa = principal_submatrix(f, a);
    if b.is_empty() {
        let eigenvalues = sym_eigenvalues(&faa);
        return Ok(ConditionalFim {
            matrix: faa,
            eigenvalues,
            pseudo_inverse_used: false,
        });
    }
    let fbb = principal_submatrix(f, &b);
    let fab = DMatrix::from_fn(a.len(), b.len(), |i, j| f[(a[i], b[j])]);
    let (inv, pseudo) = match symmetrize(&fbb).cholesky() {
        Some(c) => (c.inverse(), false),
        None => {
            let (vals, vecs) = sym_eigen_sorted(&fbb);
            let thr = rank_threshold(&vals);
            let d = DVector::from_iterator(
                vals.len(),
                vals.iter().map(|&l| if l > thr { 1.0 / l } else { 0.0 }),
            );
            (&vecs * DMatrix::from_diagonal(&d) * vecs.transpose(), true)
        }
    };
    let matrix = symmetrize(&(faa - &fab * inv * fab.transpose()));
    let eigenvalues = sym_eigenvalues(&matrix);
    Ok(ConditionalFim {
        matrix,
        eigenvalues,
        pseudo_inverse_used: pseudo,
    })
}

/// `(F + εI)⁻¹`.
pub fn crlb(f: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    check_symmetric(f, "information matrix")?;
    let p = f.nrows();
    let reg = symmetrize(f) + DMatrix::identity(p, p) * epsilon;
    let chol = reg.cholesky().ok_or_else(|| {
        Error::Singular("information matrix is singular after regularization".into())
    })?;
    let inv = symmetrize(&chol.inverse());
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(
            "information matrix inverse is not finite".into(),
        ));
    }
    Ok(inv)
}
