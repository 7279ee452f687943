//! Parameter sensitivities along hybrid arcs: variational flow, saltation
//! jumps and event-time gradients.

pub mod jacobian;
pub mod propagate;
pub mod saltation;

pub use jacobian::{numeric_derivative, numeric_jacobian, DEFAULT_JACOBIAN_SCALE};
pub use propagate::{
    propagate, PropagationMode, SensitivityJump, SensitivitySegment, SensitivityTrajectory,
};
pub use saltation::{
    event_time_sensitivity, guard_parameter_correction, jacobian_bundle, saltation_matrix,
    sensitivity_jump, variational_rhs, JacobianBundle,
};
