//! Song popularity regression from audio and catalog metadata.
//!
//! A WAV clip becomes a log-mel spectrogram ([`spectrogram`]); a small CNN
//! written from scratch ([`nn`]) reads it alongside z-scored track and
//! artist features ([`dataset`]) and predicts popularity on a 0 to 100
//! scale. [`training`] runs the epoch loop with patience-based early
//! stopping, [`evaluation`] computes the metrics and analysis tables, and
//! [`pipeline`] wires everything into the commands exposed by the
//! `songpop` binary.

pub mod audio;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod pipeline;
pub mod spectrogram;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
