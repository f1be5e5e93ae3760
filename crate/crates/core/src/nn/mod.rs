//! Non-attention layers: 3D convolution, 3D max pooling, dropout, dense, and
//! the pooling/flatten reshaping in front of the classifier head.

mod conv;
mod dense;
mod dropout;
mod init;
mod params;
mod pool;

pub use conv::{Conv3dLayer, Padding};
pub use dense::DenseLayer;
pub use dropout::dropout;
pub use init::glorot_uniform;
pub use params::{Bound, ParamId, ParamStore};

use crate::error::Result;
use crate::tensor::{Scalar, Tape, Var};

/// LeakyReLU slope used after every convolution.
pub const LEAKY_ALPHA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Linear,
    LeakyRelu(f64),
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<F: Scalar>(self, tape: &mut Tape<F>, x: Var) -> Result<Var> {
        match self {
            Activation::Linear => Ok(x),
            Activation::LeakyRelu(a) => tape.leaky_relu(x, a),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Mean over H and W: `(B, T, H, W, C) → (B, T, C)`.
pub fn global_spatial_pool<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    tape.reduce_mean(x, &[2, 3], false)
}
