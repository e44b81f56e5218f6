//! HTTP service, command line and ablation harness around `nprompt-core`.

pub mod cli;
pub mod config;
pub mod eval;
pub mod models;
pub mod records;
pub mod service;

pub use config::{Config, Mode, ScoringBackends};
pub use eval::{Condition, EvalOptions, EvalReport, Harness};
pub use records::{GenerationRecord, RecordStore, RECORD_LOG_HEADER};
pub use service::{router, AppState};
