use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, cholesky_lower, lambda_min, spd_inverse};

/// Covariance of the post-event measurements.
#[derive(Debug, Clone, PartialEq)]
pub enum EventNoise {
    /// Every event is measured with the flow covariance `V`.
    SameAsFlow,
    /// Every event is measured with one common covariance.
    Shared(DMatrix<f64>),
    /// Event `j` is measured with entry `j`; `None` or a missing entry means
    /// the event carries no measurement.
    PerEvent(Vec<Option<DMatrix<f64>>>),
    /// No event is measured.
    Disabled,
}

/// Flow covariance `V` and event covariances `V_j`, all validated SPD.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    v: DMatrix<f64>,
    v_inv: DMatrix<f64>,
    v_chol: DMatrix<f64>,
    events: EventNoise,
    shared_inv: Option<DMatrix<f64>>,
    per_event_inv: Vec<Option<DMatrix<f64>>>,
}

impl NoiseModel {
    pub fn new(v: DMatrix<f64>) -> Result<Self> {
        if !v.is_square() || v.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "noise covariance must be square and non-empty".into(),
            ));
        }
        check_symmetric(&v, "noise covariance")?;
        let v_chol = cholesky_lower(&v, "noise covariance")?;
        let v_inv = spd_inverse(&v, "noise covariance")?;
        Ok(Self {
            v,
            v_inv,
            v_chol,
            events: EventNoise::SameAsFlow,
            shared_inv: None,
            per_event_inv: Vec::new(),
        })
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(
            &nalgebra::DVector::from_column_slice(variances),
        ))
    }

    pub fn isotropic(m: usize, variance: f64) -> Result<Self> {
        Self::diagonal(&vec![variance; m])
    }

    pub fn with_event_noise(mut self, events: EventNoise) -> Result<Self> {
        let m = self.m();
        let prep = |c: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            if c.shape() != (m, m) {
                return Err(Error::ShapeMismatch {
                    context: "event noise covariance",
                    expected: format!("{m}x{m}"),
                    actual: format!("{}x{}", c.nrows(), c.ncols()),
                });
            }
            check_symmetric(c, "event noise covariance")?;
            spd_inverse(c, "event noise covariance")
        };
        self.shared_inv = None;
        self.per_event_inv.clear();
        match &events {
            EventNoise::Shared(c) => self.shared_inv = Some(prep(c)?),
            EventNoise::PerEvent(list) => {
                for c in list {
                    self.per_event_inv.push(c.as_ref().map(prep).transpose()?);
                }
            }
            EventNoise::SameAsFlow | EventNoise::Disabled => {}
        }
        self.events = events;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    pub fn flow_cov(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn flow_inv(&self) -> &DMatrix<f64> {
        &self.v_inv
    }

    /// Lower Cholesky factor of `V`.
    pub fn flow_chol(&self) -> &DMatrix<f64> {
        &self.v_chol
    }

    pub fn event_noise(&self) -> &EventNoise {
        &self.events
    }

    pub fn event_cov(&self, j: usize) -> Option<&DMatrix<f64>> {
        match &self.events {
            EventNoise::SameAsFlow => Some(&self.v),
            EventNoise::Shared(c) => Some(c),
            EventNoise::PerEvent(list) => list.get(j).and_then(|c| c.as_ref()),
            EventNoise::Disabled => None,
        }
    }

    pub fn event_inv(&self, j: usize) -> Option<&DMatrix<f64>> {
        match &self.events {
            EventNoise::SameAsFlow => Some(&self.v_inv),
            EventNoise::Shared(_) => self.shared_inv.as_ref(),
            EventNoise::PerEvent(_) => self.per_event_inv.get(j).and_then(|c| c.as_ref()),
            EventNoise::Disabled => None,
        }
    }

    /// `min{λ_min(V⁻¹), λ_min(V_j⁻¹)}` over the first `n_events` measured events.
    pub fn information_floor(&self, n_events: usize) -> f64 {
        let mut lam = lambda_min(&self.v_inv);
        for j in 0..n_events {
            if let Some(inv) = self.event_inv(j) {
                lam = lam.min(lambda_min(inv));
            }
        }
        lam
    }

    /// Same model with every covariance multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(
                "noise scale must be positive".into(),
            ));
        }
        let events = match &self.events {
            EventNoise::Shared(m) => EventNoise::Shared(m * c),
            EventNoise::PerEvent(list) => {
                EventNoise::PerEvent(list.iter().map(|o| o.as_ref().map(|m| m * c)).collect())
            }
            other => other.clone(),
        };
        Self::new(&self.v * c)?.with_event_noise(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indefinite() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(NoiseModel::new(v).is_err());
        assert!(NoiseModel::diagonal(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn rejects_asymmetric() {
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.0, 2.0]);
        assert!(NoiseModel::new(v).is_err());
    }

    #[test]
    fn event_lookup() {
        let n = NoiseModel::isotropic(1, 2.0).unwrap();
        assert!((n.event_inv(7).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
        let n = n
            .with_event_noise(EventNoise::PerEvent(vec![
                Some(DMatrix::from_element(1, 1, 4.0)),
                None,
            ]))
            .unwrap();
        assert!((n.event_inv(0).unwrap()[(0, 0)] - 0.25).abs() < 1e-15);
        assert!(n.event_inv(1).is_none());
        assert!(n.event_inv(2).is_none());
        assert!((n.information_floor(3) - 0.25).abs() < 1e-15);
        let d = n.clone().with_event_noise(EventNoise::Disabled).unwrap();
        assert!(d.event_cov(0).is_none());
    }
}
