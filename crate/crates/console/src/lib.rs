//! Command-line and HTTP front ends for [`actgraph`].
//!
//! [`cli::run`] implements the `actgraph` binary; [`service::router`] builds
//! the HTTP API that `actgraph serve` exposes.

pub mod cli;
pub mod service;
