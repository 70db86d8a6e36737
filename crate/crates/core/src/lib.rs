//! Multi-agent LLM debate engine: protocol orchestration, provider clients,
//! semantic and psychometric metrics, statistics and run persistence.

pub mod exec;
pub mod metrics;
pub mod model;
pub mod numfmt;
pub mod orchestrator;
pub mod personas;
pub mod provider;
pub mod report;
pub mod stats;
pub mod store;
pub mod templates;
