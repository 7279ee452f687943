//! Noisy measurements from hybrid arcs, Gauss–Newton maximum likelihood fits
//! and Monte-Carlo checks of the Cramér–Rao bound.

pub mod fit;
pub mod measurements;
pub mod montecarlo;

pub use fit::{cost, nls_fit, FitConfig, FitResult};
pub use measurements::{
    predicted_measurements, sample_times, simulate_measurements, EventAnchor, EventSample,
    FlowSample, MeasurementSet, SampleGrid,
};
pub use montecarlo::{monte_carlo_crlb, thread_cap, MonteCarloConfig, MonteCarloSummary, MIN_RUNS};
