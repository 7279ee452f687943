//! DC-DC buck converter in discontinuous conduction mode, and its
//! duty-cycle averaged counterpart.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{Crossing, HybridSystemSpec, ModeId, ModeSpec, Reset, TransitionSpec};

pub const STATE_NAMES: [&str; 2] = ["i_L", "v_C"];
pub const PARAM_NAMES: [&str; 3] = ["L", "C", "r_L"];

/// What the `q2 -> q3` transition does to the capacitor voltage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BuckReset {
    /// `(x1, x2) -> (0, x2)`.
    #[default]
    Hold,
    /// `(x1, x2) -> (0, x2 * L)`.
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuckParams {
    pub l: f64,
    pub c: f64,
    pub r_l: f64,
    pub r_load: f64,
    pub v_in: f64,
    pub v_hi: f64,
    pub v_lo: f64,
    pub duties: [f64; 3],
    pub reset: BuckReset,
    /// Initial inductor current and capacitor voltage, starting in `q1`.
    pub x0: [f64; 2],
}

impl Default for BuckParams {
    fn default() -> Self {
        Self {
            l: 1e-3,
            c: 1e-4,
            r_l: 0.1,
            r_load: 10.0,
            v_in: 12.0,
            v_hi: 5.05,
            v_lo: 4.95,
            duties: [0.4, 0.35, 0.25],
            reset: BuckReset::Hold,
            x0: [0.0, 4.95],
        }
    }
}

impl BuckParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("L", self.l),
            ("C", self.c),
            ("r_L", self.r_l),
            ("R", self.r_load),
            ("v_in", self.v_in),
            ("v_hi", self.v_hi),
            ("v_lo", self.v_lo),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "buck parameter {name} must be positive"
                )));
            }
        }
        if self.v_hi <= self.v_lo {
            return Err(Error::InvalidModel(
                "buck thresholds need v_hi > v_lo".into(),
            ));
        }
        if self.duties.iter().any(|&d| !(d >= 0.0))
            || (self.duties.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidModel(
                "buck duties must be non-negative and sum to 1".into(),
            ));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(
                "buck initial state must be finite".into(),
            ));
        }
        Ok(())
    }

    /// `θ = (L, C, r_L)`.
    pub fn theta(&self) -> Vec<f64> {
        vec![self.l, self.c, self.r_l]
    }

    pub fn set_theta(&mut self, th: &[f64]) {
        [self.l, self.c, self.r_l] = [th[0], th[1], th[2]];
    }
}

/// Vector field of mode `q` (0, 1, 2 for `q1`, `q2`, `q3`).
pub fn buck_field(q: usize, x: &[f64], th: &[f64], r_load: f64, v_in: f64) -> [f64; 2] {
    let (l, c, r) = (th[0], th[1], th[2]);
    match q {
        0 => [(v_in - x[1] - r * x[0]) / l, (x[0] - x[1] / r_load) / c],
        1 => [(-x[1] - r * x[0]) / l, (x[0] - x[1] / r_load) / c],
        _ => [0.0, (-x[1] / r_load) / c],
    }
}

fn field_dx(q: usize, th: &[f64], r_load: f64) -> DMatrix<f64> {
    let (l, c, r) = (th[0], th[1], th[2]);
    match q {
        0 | 1 => DMatrix::from_row_slice(2, 2, &[-r / l, -1.0 / l, 1.0 / c, -1.0 / (r_load * c)]),
        _ => DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -1.0 / (r_load * c)]),
    }
}

fn field_dtheta(q: usize, x: &[f64], th: &[f64], r_load: f64, v_in: f64) -> DMatrix<f64> {
    let f = buck_field(q, x, th, r_load, v_in);
    let (l, c) = (th[0], th[1]);
    match q {
        0 | 1 => DMatrix::from_row_slice(2, 3, &[-f[0] / l, 0.0, -x[0] / l, 0.0, -f[1] / c, 0.0]),
        _ => DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 0.0, -f[1] / c, 0.0]),
    }
}

pub fn buck_reset(kind: BuckReset, x: &[f64], th: &[f64]) -> Vec<f64> {
    match kind {
        BuckReset::Hold => vec![0.0, x[1]],
        BuckReset::Scaled => vec![0.0, x[1] * th[0]],
    }
}

fn mode(q: usize, p: &BuckParams) -> ModeSpec {
    let (rl, vin) = (p.r_load, p.v_in);
    let name = ["q1", "q2", "q3"][q];
    ModeSpec::ode(name, move |x, th, _| buck_field(q, x, th, rl, vin).to_vec()).with_jacobians(
        move |_, th, _| field_dx(q, th, rl),
        move |x, th, _| field_dtheta(q, x, th, rl, vin),
    )
}

/// Three-mode DCM converter with state `(i_L, v_C)` and `θ = (L, C, r_L)`.
///
/// Transitions, in order: `q1 -> q2` on `v_C` rising through `v_hi`,
/// `q2 -> q1` on `v_C` falling through `v_lo`, `q2 -> q3` on `i_L` falling
/// through zero, `q3 -> q1` on `v_C` falling through `v_lo`.
pub fn buck_dcm_spec(p: &BuckParams) -> Result<HybridSystemSpec> {
    p.validate()?;
    let (hi, lo, kind) = (p.v_hi, p.v_lo, p.reset);
    let reset = Reset::map(move |x, th, _| buck_reset(kind, x, th)).with_jacobians(
        move |_, th, _| {
            let s = match kind {
                BuckReset::Hold => 1.0,
                BuckReset::Scaled => th[0],
            };
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, s])
        },
        move |x, _, _| {
            let mut m = DMatrix::zeros(2, 3);
            if kind == BuckReset::Scaled {
                m[(1, 0)] = x[1];
            }
            m
        },
    );
    let transitions = vec![
        TransitionSpec::new(
            ModeId(0),
            ModeId(1),
            move |x, _, _| x[1] - hi,
            Crossing::Rising,
            Reset::Identity,
        ),
        TransitionSpec::new(
            ModeId(1),
            ModeId(0),
            move |x, _, _| x[1] - lo,
            Crossing::Falling,
            Reset::Identity,
        ),
        TransitionSpec::new(
            ModeId(1),
            ModeId(2),
            |x, _, _| x[0],
            Crossing::Falling,
            reset,
        ),
        TransitionSpec::new(
            ModeId(2),
            ModeId(0),
            move |x, _, _| x[1] - lo,
            Crossing::Falling,
            Reset::Identity,
        ),
    ];
    HybridSystemSpec::new(
        2,
        3,
        vec![mode(0, p), mode(1, p), mode(2, p)],
        transitions,
        ModeId(0),
        p.x0.to_vec(),
    )?
    .with_names(&STATE_NAMES, &PARAM_NAMES)
}

/// `ẋ = d1 f_q1 + d2 f_q2 + d3 f_q3`.
pub fn buck_averaged_rhs(
    p: &BuckParams,
) -> impl Fn(&[f64], &[f64]) -> [f64; 2] + Send + Sync + 'static {
    let (d, rl, vin) = (p.duties, p.r_load, p.v_in);
    move |x, th| {
        let mut out = [0.0; 2];
        for (q, &w) in d.iter().enumerate() {
            let f = buck_field(q, x, th, rl, vin);
            out[0] += w * f[0];
            out[1] += w * f[1];
        }
        out
    }
}

/// Single-mode spec of the averaged converter.
pub fn buck_averaged_spec(p: &BuckParams) -> Result<HybridSystemSpec> {
    p.validate()?;
    let rhs = buck_averaged_rhs(p);
    let (d, rl, vin) = (p.duties, p.r_load, p.v_in);
    let m = ModeSpec::ode("avg", move |x, th, _| rhs(x, th).to_vec()).with_jacobians(
        move |_, th, _| {
            (0..3).fold(DMatrix::zeros(2, 2), |acc, q| {
                acc + field_dx(q, th, rl) * d[q]
            })
        },
        move |x, th, _| {
            (0..3).fold(DMatrix::zeros(2, 3), |acc, q| {
                acc + field_dtheta(q, x, th, rl, vin) * d[q]
            })
        },
    );
    HybridSystemSpec::new(2, 3, vec![m], vec![], ModeId(0), p.x0.to_vec())?
        .with_names(&STATE_NAMES, &PARAM_NAMES)
}
