//! Scoring against labeled anomalies and labeled synthetic data.

pub mod metrics;
pub mod synthetic;

pub use metrics::{
    compare_fp, match_detections, match_reports, read_labels, write_labels, Detection, FpUnit,
    GroundTruthAnomaly, MetricsResult, DEFAULT_K,
};
pub use synthetic::{InjectedAnomaly, SyntheticSeries, SyntheticSpec};
