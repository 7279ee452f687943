//! Small systems with closed-form answers.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::hybrid::{Crossing, HybridSystemSpec, ModeId, ModeSpec, Reset, TransitionSpec};

/// `ẋ = θ` from `x = 0`; with a threshold `c` the transition fires at `τ = c/θ`
/// into an identical mode.
pub fn ramp_spec(threshold: Option<f64>) -> Result<HybridSystemSpec> {
    let m = |name: &str| {
        ModeSpec::ode(name, |_, th, _| vec![th[0]]).with_jacobians(
            |_, _, _| DMatrix::zeros(1, 1),
            |_, _, _| DMatrix::from_element(1, 1, 1.0),
        )
    };
    match threshold {
        None => HybridSystemSpec::new(1, 1, vec![m("flow")], vec![], ModeId(0), vec![0.0]),
        Some(c) => {
            let tr = TransitionSpec::new(
                ModeId(0),
                ModeId(1),
                move |x, _, _| x[0] - c,
                Crossing::Rising,
                Reset::Identity,
            );
            HybridSystemSpec::new(
                1,
                1,
                vec![m("below"), m("above")],
                vec![tr],
                ModeId(0),
                vec![0.0],
            )
        }
    }
}

/// Ball under gravity with restitution: state `(h, v)`, `θ = (g, e)`.
pub fn bouncing_ball_spec(h0: f64, v0: f64) -> Result<HybridSystemSpec> {
    let fall = ModeSpec::ode("flight", |x, th, _| vec![x[1], -th[0]]).with_jacobians(
        |_, _, _| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        |_, _, _| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -1.0, 0.0]),
    );
    let reset = Reset::map(|x, th, _| vec![x[0], -th[1] * x[1]]).with_jacobians(
        |_, th, _| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -th[1]]),
        |x, _, _| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -x[1]]),
    );
    let tr = TransitionSpec::new(
        ModeId(0),
        ModeId(0),
        |x, _, _| x[0],
        Crossing::Falling,
        reset,
    );
    HybridSystemSpec::new(2, 2, vec![fall], vec![tr], ModeId(0), vec![h0, v0])?
        .with_names(&["h", "v"], &["g", "e"])
}

/// Two modes with the same smooth field joined by an identity reset.
pub fn continuous_toggle_spec() -> Result<HybridSystemSpec> {
    let field = |x: &[f64], th: &[f64], _t: f64| vec![x[1], -th[0] * x[0] - th[1] * x[1]];
    let tr =
        |a, b, dir| TransitionSpec::new(ModeId(a), ModeId(b), |x, _, _| x[0], dir, Reset::Identity);
    HybridSystemSpec::new(
        2,
        2,
        vec![ModeSpec::ode("left", field), ModeSpec::ode("right", field)],
        vec![tr(0, 1, Crossing::Rising), tr(1, 0, Crossing::Falling)],
        ModeId(0),
        vec![-1.0, 0.0],
    )
}
