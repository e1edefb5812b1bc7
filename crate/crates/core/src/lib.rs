//! Out-of-distribution detection and drift monitoring for feature streams.
//!
//! Items are scored against an in-distribution baseline with cosine
//! similarity or Mahalanobis distance, then flagged with 3-sigma control
//! limits (per item or per daily batch) or a two-sided CUSUM. The `sim` and
//! `eval` modules reproduce a step-drift monitoring protocol and measure
//! detection quality with bootstrap confidence intervals.

pub mod baseline;
pub mod error;
pub mod eval;
pub mod feature;
pub mod features;
pub mod metrics;
pub mod num;
pub mod rng;
pub mod sim;
pub mod spc;

pub use baseline::{fit_baseline, BaselineProfile, MetricStats, DEFAULT_LAMBDA_REL};
pub use error::{Error, Result};
pub use feature::{parse_dataset, DataFormat, FeatureVector, MetricKind};
pub use metrics::{cosine_similarity, mahalanobis, score, score_batch, MetricValue};
pub use sim::{run_simulation, SimulationConfig, SimulationReport};
pub use spc::{ChartKind, ChartParams, FlagEvent, Side};
