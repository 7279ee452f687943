//! Ready-made hybrid systems.

pub mod buck;
pub mod fig3;
pub mod toys;
pub mod wtg;

pub use buck::{buck_averaged_rhs, buck_averaged_spec, buck_dcm_spec, BuckParams, BuckReset};
pub use fig3::{fig3_case, fig3_spec, DiskImages, Fig3Case};
pub use toys::{bouncing_ball_spec, continuous_toggle_spec, ramp_spec};
pub use wtg::{
    wind_profile, wtg_equilibrium, wtg_model, wtg_spec, GuardKind, WtgEquilibrium, WtgModel,
    WtgParams,
};
