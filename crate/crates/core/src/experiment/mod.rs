//! Reproducible experiments: identification, closed-loop runs, comparisons.

pub mod config;
pub mod metrics;
mod run;
pub mod svg;

pub use config::{
    Anchor, ExcitationSection, ExperimentConfig, IdentificationSection, ModelSpec, MultiModelSection, OutputSection,
    PlantSection, PlantSource, RunSection, ScheduleEntry,
};
pub use metrics::{channel_metrics, ChannelMetrics};
pub use run::*;

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "MMPC_OUTPUT_ROOT";
