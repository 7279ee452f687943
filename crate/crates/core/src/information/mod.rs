//! Fisher information along hybrid arcs: flow quadrature, post-event terms,
//! spectral metrics, HPE certificates and conditional information.

pub mod fim;
pub mod hpe;
pub mod metrics;
pub mod noise;
pub mod output;

pub use fim::{
    accumulate_fim, analyze, event_increment, flow_information, output_sensitivities,
    reset_jacobian_fim, salted_fim, smooth_fim, total_event_contribution, trapezoid_weights,
    EventIncrement, FimResult, FimSeriesPoint, InformationReport, ModeAnalysis,
    OutputSensitivities,
};
pub use hpe::{
    full_horizon_window, hpe_certificate, hpe_gramian, hpe_window, hpe_windows, HpeCertificate,
    HpeWindow,
};
pub use metrics::{
    conditional_fim, crlb, info_metrics, least_observable_direction, ConditionalFim, InfoMetrics,
    WeakestDirection, DEFAULT_EPSILON,
};
pub use noise::{EventNoise, NoiseModel};
pub use output::{output_sensitivity, OutputMap};

use nalgebra::DMatrix;
use serde::ser::{SerializeSeq, Serializer};

/// Serialize a matrix as a list of rows.
pub fn serialize_matrix<S: Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}
