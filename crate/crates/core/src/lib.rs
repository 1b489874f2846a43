//! Streaming engine for real-time risk scoring on event-camera data.
//!
//! The crate is organized around the data path: [`event`] turns frames
//! into event streams and synthesizes labeled scenarios; [`graph`] builds
//! spatiotemporal event graphs that support incremental insertion;
//! [`nn`] provides the numeric kernels (spline graph convolution, GRU,
//! attention, optimizers) with analytic gradients; [`pipeline`] wires
//! them into the hybrid scoring model with per-object recurrent state and
//! desk-scale training; [`metrics`] evaluates the resulting risk
//! timelines with timing-aware metrics. [`oracle`] holds brute-force
//! references used by the test suites and the `selftest` command.

pub mod error;
pub mod event;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod pipeline;

pub use error::{Error, Result};
