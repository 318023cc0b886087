//! Localizes sources and sinks of sub- and super-synchronous oscillations in
//! three-phase recordings by tracking dissipative energy flow per mode.
//!
//! [`pipeline::analyze`] runs the chain in memory; [`stages`] runs it through a
//! run directory; [`synth`] builds datasets with analytic ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod def;
pub mod dq;
pub mod error;
pub mod filter;
pub mod graph;
pub mod mode_filter;
pub mod pipeline;
pub mod spectrum;
pub mod stages;
pub mod synth;
pub mod waveform;

pub use config::{AnalysisConfig, DefRule, DetrendMode, Threshold};
pub use error::{Error, Result};
