//! Depression screening from SDS questionnaire answers and per-question
//! facial video: clip segmentation, a 3D convolutional clip encoder,
//! redundancy-aware self-attention over clips, and score/time-conditioned
//! fusion, all on a small reverse-mode autodiff engine.

pub mod checks;
pub mod cli;
pub mod clipper;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod params;
pub mod plot;
pub mod ras;
pub mod trainer;

pub use error::{Error, Result};
