//! Agent pipeline, reports and command line.
//!
//! Four agents run the pipeline: the HMI carries the configuration and
//! sequences the run, Computing produces levels 0 to 3, Traceability owns the
//! store and Reporting writes report files and outbox messages. They run on
//! separate threads and exchange [`AgentMessage`]s over bounded queues, so a
//! slow consumer blocks its producer.

pub mod agents;
pub mod cli;
pub mod config;
pub mod message;
pub mod outbox;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{ConfigError, PipelineConfig, ThresholdMode, DEMO_CONFIG};
pub use message::{AgentId, AgentMessage, MessageKind, Payload, TraceEntry};
pub use outbox::{dispatch_report, OutboxMessage};
pub use pipeline::{
    generate, learn_from_store, report_from_store, run_pipeline, run_traced, store_stats, RunSummary,
};
pub use report::{build_report, render_text, Report, ReportError, ReportFormat, ReportSpec};

use crate::store::StoreError;

#[derive(Debug, Error)]
pub enum OrchestrateError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{agent} agent failed in stage {stage}: {message}")]
    Stage {
        agent: AgentId,
        stage: String,
        message: String,
    },
    #[error("store {0} already holds rows; use a fresh --out directory")]
    NonEmptyStore(PathBuf),
    #[error("no store at {0}; run the pipeline first")]
    MissingStore(PathBuf),
    #[error("no smart data in the store; run the pipeline first")]
    NoSmartData,
    #[error("no monitoring data in the store; run the pipeline first")]
    NoMonitoringData,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
