//! Core algorithms for convergence-guided passage construction and QA evaluation.
//!
//! This crate is `no_std` + `alloc`: everything here is pure computation over
//! owned strings and slices. IO, providers, caching, and the CLI live in the
//! `convqa` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod chat;
pub mod convergence;
pub mod corpus;
pub mod metrics;
pub mod qa;
pub mod similarity;
pub mod subsets;
