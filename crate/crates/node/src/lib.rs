//! Transports, test harness, file formats and reports for running the
//! three-party protocols on a host.

pub mod cli;
pub mod engine;
pub mod files;
pub mod fuzz;
pub mod harness;
pub mod inproc;
pub mod model;
pub mod report;
pub mod tcp;

pub use lthmpc_core;
