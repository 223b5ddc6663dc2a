//! CSI sensing toolkit for 802.11ac captures.
//!
//! Ingests Nexmon-style CSI datagrams (UDP or pcap), removes the per-packet
//! synchronization phase via a wired reference chain, detects and repairs the
//! inter-antenna phase-shift anomaly with a sliding-window detector, and
//! estimates joint AoA-ToF path parameters on a 2D spectrum grid. A built-in
//! synthetic multipath generator with fault injection serves as the ground
//! truth oracle for the whole pipeline.

pub mod estimate;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sanitize;
pub mod synth;

pub use model::{ArrayGeometry, CaptureConfig, ComplexSample, CsiFrame, CsiSession};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
