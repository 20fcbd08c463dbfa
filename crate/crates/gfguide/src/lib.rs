//! Experiment harness, remote reward client and CLI plumbing around
//! `gfguide-core`.

pub mod config;
pub mod error;
pub mod exec;
pub mod harness;
pub mod mock;
pub mod remote;
pub mod scenario;

pub use error::HarnessError;
