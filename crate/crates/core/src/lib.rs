// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio_io;
pub mod cli;
pub mod corpus;
pub mod degradation;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod pitch_codec;
pub mod spectrogram;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
