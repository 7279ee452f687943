//! Hybrid persistence of excitation: regressor Gramians over time/jump windows
//! and the resulting lower bound on the smallest SFIM eigenvalue.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::information::fim::OutputSensitivities;
use crate::information::metrics::rank_threshold;
use crate::information::noise::NoiseModel;
use crate::information::serialize_matrix;
use crate::linalg::{lambda_min, sym_eigenvalues, symmetrize};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HpeWindow {
    pub t0: f64,
    pub mu_t: f64,
    pub j0: usize,
    pub mu_j: usize,
    #[serde(rename = "G", serialize_with = "serialize_matrix")]
    pub g: DMatrix<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HpeCertificate {
    pub holds: bool,
    pub alpha: f64,
    /// `min{λ_min(V⁻¹), λ_min(V_j⁻¹)}`.
    pub lambda_bar: f64,
    pub lambda_floor: f64,
    pub windows: usize,
}

fn gram(j: &DMatrix<f64>) -> DMatrix<f64> {
    j.transpose() * j
}

fn lerp(a: &DMatrix<f64>, b: &DMatrix<f64>, s: f64) -> DMatrix<f64> {
    a * (1.0 - s) + b * s
}

/// `∫_a^b JᵀJ dt` by the trapezoid rule on the samples, with `J` linearly
/// interpolated where the window cuts a sample interval.
fn clipped_flow_gramian(flow: &[(f64, DMatrix<f64>)], a: f64, b: f64, p: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(p, p);
    for w in flow.windows(2) {
        let (t0, j0) = (&w[0].0, &w[0].1);
        let (t1, j1) = (&w[1].0, &w[1].1);
        let h = t1 - t0;
        if h <= 0.0 || *t1 <= a || *t0 >= b {
            continue;
        }
        let lo = t0.max(a);
        let hi = t1.min(b);
        let ja = if lo > *t0 {
            lerp(j0, j1, (lo - t0) / h)
        } else {
            j0.clone()
        };
        let jb = if hi < *t1 {
            lerp(j0, j1, (hi - t0) / h)
        } else {
            j1.clone()
        };
        g += (gram(&ja) + gram(&jb)) * (0.5 * (hi - lo));
    }
    g
}

/// `G = ∫ JᵀJ dt + Σ J_kᵀ J_k` over all flow samples and the given jump regressors.
pub fn hpe_gramian(flow: &[(f64, DMatrix<f64>)], jumps: &[DMatrix<f64>]) -> Result<HpeWindow> {
    let p = flow
        .first()
        .map(|s| s.1.ncols())
        .or_else(|| jumps.first().map(DMatrix::ncols))
        .ok_or_else(|| Error::InvalidArgument("empty HPE window".into()))?;
    let (t0, t1) = match (flow.first(), flow.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => (0.0, 0.0),
    };
    let mut g = clipped_flow_gramian(flow, t0, t1, p);
    for j in jumps {
        if j.ncols() != p {
            return Err(Error::ShapeMismatch {
                context: "hpe_gramian",
                expected: p.to_string(),
                actual: j.ncols().to_string(),
            });
        }
        g += gram(j);
    }
    let g = symmetrize(&g);
    Ok(HpeWindow {
        t0,
        mu_t: t1 - t0,
        j0: 0,
        mu_j: jumps.len(),
        alpha: lambda_min(&g),
        g,
    })
}

/// Gramian over `[t0, t0 + μ_t]` and the measured jumps `j0 .. j0 + μ_j`.
pub fn hpe_window(
    outputs: &OutputSensitivities,
    noise: &NoiseModel,
    t0: f64,
    mu_t: f64,
    j0: usize,
    mu_j: usize,
) -> Result<HpeWindow> {
    if !(mu_t >= 0.0) {
        return Err(Error::InvalidArgument(
            "window length must be non-negative".into(),
        ));
    }
    let p = outputs.p;
    let mut g = clipped_flow_gramian(&outputs.flow, t0, t0 + mu_t, p);
    let end = (j0 + mu_j).min(outputs.post.len());
    for j in j0..end {
        if noise.event_inv(j).is_some() {
            g += gram(&outputs.post[j]);
        }
    }
    let g = symmetrize(&g);
    Ok(HpeWindow {
        t0,
        mu_t,
        j0,
        mu_j,
        alpha: lambda_min(&g),
        g,
    })
}

/// Single window spanning the whole arc and every measured event.
pub fn full_horizon_window(outputs: &OutputSensitivities, noise: &NoiseModel) -> Result<HpeWindow> {
    let (t0, t1) = match (outputs.flow.first(), outputs.flow.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(Error::InvalidArgument("empty HPE window".into())),
    };
    hpe_window(outputs, noise, t0, t1 - t0, 0, outputs.post.len())
}

/// Sliding windows of length `μ_t` advanced by `stride`; each takes the `μ_j`
/// events that follow its start.
pub fn hpe_windows(
    outputs: &OutputSensitivities,
    noise: &NoiseModel,
    mu_t: f64,
    mu_j: usize,
    stride: f64,
) -> Result<Vec<HpeWindow>> {
    if !(mu_t > 0.0) || !(stride > 0.0) {
        return Err(Error::InvalidArgument(
            "window length and stride must be positive".into(),
        ));
    }
    let (start, end) = match (outputs.flow.first(), outputs.flow.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(Error::InvalidArgument("empty HPE window".into())),
    };
    if mu_t > end - start {
        return Ok(vec![full_horizon_window(outputs, noise)?]);
    }
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let t0 = start + stride * k as f64;
        if t0 + mu_t > end * (1.0 + 1e-12) {
            break;
        }
        let j0 = outputs.event_times.partition_point(|&tau| tau < t0);
        out.push(hpe_window(outputs, noise, t0, mu_t, j0, mu_j)?);
        k += 1;
    }
    Ok(out)
}

/// `α = min λ_min(G)` over the windows and `λ_floor = λ̲ α`. A window whose
/// `α` is below its Gramian's numerical rank threshold does not count as excited.
pub fn hpe_certificate(
    windows: &[HpeWindow],
    noise: &NoiseModel,
    n_events: usize,
) -> HpeCertificate {
    let alpha = windows
        .iter()
        .map(|w| w.alpha)
        .fold(f64::INFINITY, f64::min);
    let alpha = if windows.is_empty() { 0.0 } else { alpha };
    let excited = !windows.is_empty()
        && windows
            .iter()
            .all(|w| w.alpha > 0.0 && w.alpha > rank_threshold(&sym_eigenvalues(&w.g)));
    let lambda_bar = noise.information_floor(n_events);
    HpeCertificate {
        holds: excited,
        alpha,
        lambda_bar,
        lambda_floor: lambda_bar * alpha,
        windows: windows.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_jump_fails() {
        let w = hpe_gramian(&[], &[DMatrix::from_row_slice(1, 2, &[1.0, 0.0])]).unwrap();
        assert_eq!(w.g, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(w.alpha, 0.0);
    }

    #[test]
    fn two_jumps_span() {
        let w = hpe_gramian(
            &[],
            &[
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            ],
        )
        .unwrap();
        assert_eq!(w.g, DMatrix::identity(2, 2));
        assert_eq!(w.alpha, 1.0);
    }

    #[test]
    fn rotating_regressor() {
        let n = 4000;
        let tau = std::f64::consts::TAU;
        let flow: Vec<_> = (0..=n)
            .map(|i| {
                let t = tau * i as f64 / n as f64;
                (t, DMatrix::from_row_slice(1, 2, &[t.sin(), t.cos()]))
            })
            .collect();
        let w = hpe_gramian(&flow, &[]).unwrap();
        let pi = std::f64::consts::PI;
        assert!((&w.g - DMatrix::identity(2, 2) * pi).amax() < 1e-5);
        assert!((w.alpha - pi).abs() < 1e-5);
    }

    #[test]
    fn empty_window_rejected() {
        assert!(hpe_gramian(&[], &[]).is_err());
    }

    #[test]
    fn certificate_floor() {
        let noise = NoiseModel::isotropic(1, 2.0).unwrap();
        let w = HpeWindow {
            t0: 0.0,
            mu_t: 1.0,
            j0: 0,
            mu_j: 0,
            g: DMatrix::identity(2, 2),
            alpha: 1.0,
        };
        let c = hpe_certificate(std::slice::from_ref(&w), &noise, 0);
        assert!(c.holds);
        assert!((c.lambda_floor - 0.5).abs() < 1e-15);
        let zero = HpeWindow { alpha: 0.0, ..w };
        assert!(!hpe_certificate(&[zero], &noise, 0).holds);
    }

    #[test]
    fn clipping_matches_full_integral_pieces() {
        let flow: Vec<_> = (0..=10)
            .map(|i| (i as f64 * 0.1, DMatrix::from_element(1, 1, 1.0)))
            .collect();
        let g = clipped_flow_gramian(&flow, 0.25, 0.65, 1);
        assert!((g[(0, 0)] - 0.4).abs() < 1e-14);
    }
}
