//! Segmentation-based text-line recognition trained from transcripts alone.
//!
//! The recognizer predicts, for each fixed-width horizontal region of a line,
//! a character-presence confidence, a box and a class distribution. Training
//! on unannotated lines keeps per-character pseudo boxes that are refined
//! whenever a prediction is aligned with the transcript.

pub mod alphabet;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod decode;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod lm;
pub mod model;
pub mod pathsig;
pub mod pipeline;
pub mod preprocess;
pub mod sample;
pub mod synth;
pub mod toy;
pub mod train;
pub mod viz;
pub mod weaksup;

pub use error::{Error, Result};
