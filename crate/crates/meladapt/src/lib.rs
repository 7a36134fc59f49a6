//! Mel-spectrogram adaptation between extraction configurations.
//!
//! Synthesizers and vocoders rarely agree on how a mel spectrogram should
//! be computed: FFT size, window, hop, padding, filterbank band, amplitude
//! scaling. This crate converts a mel spectrogram extracted under one
//! configuration into one parametrized by another, in two stages:
//!
//! 1. [`convert::approximate_convert`] — analytic re-synthesis: undo the
//!    value transform, lift through the filterbank pseudo-inverse, recover
//!    phase with Griffin-Lim, and re-extract under the target config.
//! 2. [`refine`] — a config-conditioned U-Net that cleans up the artifacts
//!    stage 1 leaves behind, trained once over random configurations.
//!
//! Supporting modules provide the configuration format ([`config`]), DSP
//! primitives ([`dsp`]), exact value-space conversions ([`normalize`]),
//! objective quality metrics ([`metrics`]), reference baselines
//! ([`baselines`]), and file formats ([`io`]).

pub mod baselines;
pub mod cli;
pub mod config;
pub mod convert;
pub mod dsp;
mod error;
pub mod io;
pub mod metrics;
pub mod normalize;
pub mod refine;

pub use error::{Error, Result};
