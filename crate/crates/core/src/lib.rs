//! Acoustic-to-articulatory speech inversion from cortical spectro-temporal
//! features.
//!
//! The pipeline runs audio through an auditory front end, a bank of
//! spectro-temporal receptive fields, per-mode HOSVD reduction, a deep
//! feed-forward regressor and a Kalman smoother, and scores the six estimated
//! tract variables by Pearson correlation.

pub mod audio;
pub mod config;
pub mod cortical;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod ftc;
pub mod hosvd;
pub mod kalman;
pub mod linalg;
pub mod mfcc;
pub mod mlp;
pub mod pipeline;
pub mod synth;
pub mod tv;

pub use error::{Error, Result};
