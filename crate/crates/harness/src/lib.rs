//! Pipeline harness: dataset IO, the provider gateway with its response
//! cache, the scoring/build/answer/report stages, synthetic test worlds,
//! and the CLI.

pub mod cli;
pub mod config;
pub mod convergence;
pub mod corpus;
pub mod gateway;
pub mod ledger;
pub mod passages;
pub mod qa;
pub mod report;
pub mod similarity;
pub mod testworld;
