//! Batch runner around `ebsde-core`: JSON experiment configs, the CLI
//! pipelines and the reproduction suite.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod suite;
