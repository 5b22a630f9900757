//! Provider-agnostic toolkit for measuring an LLM's political-economy bias:
//! administers a scale questionnaire with a repeated-sampling protocol,
//! matches the model's answers to survey respondents via per-group
//! confidence intervals, and estimates self-perception and absolute bias
//! with a stratified econometric decomposition.

pub mod config;
pub mod econ;
pub mod estimator;
pub mod ingest;
pub mod parser;
pub mod questionnaire;
pub mod report;
pub mod sampler;
pub mod stats;
