//! Diagnostics for repetitive loops and exposure bias in autoregressive text
//! generation.
//!
//! The crate is model-agnostic: passages, hidden states, and masked-LM scores
//! arrive through files (see [`trace`]), and [`toylm`] provides a small
//! self-reinforcing model so every analysis can run without a neural network.

pub mod cli;
pub mod decode;
pub mod error;
pub mod loopdetect;
pub mod neighborhood;
pub mod rng;
pub mod textmetrics;
pub mod toylm;
pub mod trace;

pub use error::{Error, Result};
