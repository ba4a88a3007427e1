//! Heart-sound screening pipeline.
//!
//! The crate covers the full desk-scale workflow: WAV ingestion, wavelet-based
//! signal-quality gating, bandpass/spike preprocessing, MFCC feature
//! extraction, a transformer-based residual 1D CNN classifier trained with
//! class-weighted cross entropy, patient-wise evaluation, and a seeded
//! synthetic corpus generator so everything is testable without clinical data.

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod manifest;
pub mod model;
pub mod preprocess;
pub mod quality;
pub mod recording;
pub mod rng;
pub mod synth;
pub mod wav;

pub use config::RunConfig;
pub use error::{PcgError, Result};
pub use recording::{split_recording, DurationClass, Label, PcgRecording, Position, Segment};
