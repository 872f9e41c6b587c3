//! Online anomaly detection for multivariate time series.
//!
//! Every variable is watched by its own small LSTM-based detector with a
//! self-adjusting threshold. When a detector flags a point, the variables
//! that are highly correlated with it over a recent window vote with their
//! own verdicts, and a joint anomaly is reported when the flagged side wins a
//! strict majority. Reports list every involved variable.
//!
//! ```no_run
//! use mvad_core::coordinator::{Coordinator, MultivariateSample};
//! use mvad_core::detector::DetectorConfig;
//!
//! let mut engine = Coordinator::with_defaults(3, &DetectorConfig::default(), 2880, 0.95)?;
//! let sample = MultivariateSample { t: 0, timestamp: "t0".into(), values: vec![1.0, 2.0, 3.0] };
//! for report in engine.process_timestep(&sample)?.reports {
//!     println!("T={} variables={:?}", report.t, report.variables);
//! }
//! # Ok::<(), mvad_core::Error>(())
//! ```

pub mod coordinator;
pub mod correlation;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod ingestion;
pub mod lstm;
pub mod output;
pub mod pipeline;

pub use coordinator::{AnomalyReport, Coordinator, MultivariateSample, SeedReport, StepOutcome};
pub use detector::{DetectorConfig, DetectorState, Status, Verdict};
pub use error::{Error, Result};
pub use pipeline::{run, run_stream, RunConfig, RunSummary};
