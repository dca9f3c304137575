//! Simulation and equalization toolkit for high-speed serial links.
//!
//! The crate covers the full experiment loop for studying intersymbol
//! interference on a lossy channel:
//!
//! - [`signal`]: bit sources, trapezoidal NRZ modulation, resampling and the
//!   serial-in/parallel-out delay line feeding an equalizer.
//! - [`channel`]: FIR channel models, synthetic lossy responses and AWGN.
//! - [`touchstone`]: Touchstone `.s2p` ingestion and S21-to-impulse
//!   conversion for measured channels.
//! - [`lstm`]: a recurrent gated equalizer (LSTM cells, deep stack with
//!   dropout, fully-connected decoder, FIR post-filter) with a streaming
//!   forward pass.
//! - [`train`]: dataset windowing, backpropagation through time, Adam, and
//!   a validation-gated training loop.
//! - [`rom`]: text serialization of trained equalizer parameters.
//! - [`baseline`]: classical FFE + DFE equalization with least-squares tap
//!   fitting, for comparison.
//! - [`eye`]: eye-diagram accumulation and metrics, bit error rate, and
//!   raster export.
//! - [`pipeline`]: end-to-end experiment assembly shared by the CLI and the
//!   acceptance tests.
//!
//! All randomness flows from explicit seeds; repeated runs reproduce
//! results exactly.

pub mod baseline;
pub mod channel;
pub mod error;
pub mod eye;
mod fft;
pub mod io;
pub mod lstm;
pub mod pipeline;
pub mod rng;
pub mod rom;
pub mod signal;
pub mod touchstone;
pub mod train;

pub use error::{Error, Result};
