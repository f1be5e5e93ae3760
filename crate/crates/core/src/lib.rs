//! Attention-enhanced 3D convolutional recurrent fall detection on thermal
//! video: tensors with reverse-mode differentiation, the layer zoo, the five
//! model variants, Farneback motion flow, training, metrics, and a streaming
//! inference pipeline with latency accounting.

// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod config;
pub mod data;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod motionflow;
pub mod nn;
pub mod par;
pub mod recurrent;
pub mod rtpipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
