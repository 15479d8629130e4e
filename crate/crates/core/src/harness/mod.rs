//! Backtest harness: ingestion, memory building, the online test loop,
//! metrics, ablations and explainability reports.

pub mod calendar;
pub mod config;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod synthetic;

use chrono::NaiveDate;
use thiserror::Error;

pub use calendar::TradingCalendar;
pub use config::{AblationFlags, BacktestConfig, CompanySpec, DateRange, Representation};
pub use metrics::{accuracy, compute_mcc, CompanyMetrics, ConfusionMatrix, MetricsReport};
pub use pipeline::{ablate, run_backtest, standard_variants, AblationResult, BacktestOutcome, BacktestRecord, Inputs, Pipeline};
pub use report::report_explainability;

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("unknown company {0}")]
    UnknownCompany(String),
    #[error("no stored events for {company} on {date}; the day was never processed")]
    MissingDay { company: String, date: NaiveDate },
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Backend(#[from] crate::backends::BackendError),
    #[error(transparent)]
    Prompt(#[from] crate::prompts::PromptError),
    #[error(transparent)]
    Extraction(#[from] crate::extraction::ExtractionError),
    #[error(transparent)]
    Merge(#[from] crate::merging::MergeError),
    #[error(transparent)]
    Tracking(#[from] crate::tracking::TrackingError),
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
    #[error(transparent)]
    Reflection(#[from] crate::reflection::ReflectionError),
    #[error(transparent)]
    Inference(#[from] crate::inference::InferenceError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}
