//! Hybrid system data model and execution: specs, integration, events, arcs.

pub mod eval;
pub mod events;
pub mod integrator;
pub mod simulate;
pub mod spec;

pub use eval::{solve_algebraic, GuardDerivatives, ModelEval, ResetDerivatives};
pub use events::{apply_reset, check_transversality, locate_event};
pub use integrator::{DenseStep, DenseTrajectory};
pub use simulate::{simulate, simulate_from, ArcSegment, EventRecord, HybridArc};
pub use spec::{
    AlgebraicLayer, Crossing, HybridSystemSpec, IntegratorConfig, ModeId, ModeSpec, Point, Reset,
    TransitionSpec,
};

use crate::error::Result;

/// Reduced vector field of mode `q` at `(x, θ, t)`.
pub fn evaluate_dynamics(
    spec: &HybridSystemSpec,
    q: ModeId,
    x: &[f64],
    theta: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    ModelEval::new(spec, theta, &IntegratorConfig::default())?.field(q, x, t)
}
