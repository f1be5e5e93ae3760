//! Spatial, temporal, feature (squeeze-excitation), multi-head self, and
//! general attention over `(B, T, H, W, C)` feature maps.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};

fn expect_rank5<F: Scalar>(tape: &Tape<F>, x: Var, op: &'static str) -> Result<[usize; 5]> {
    let s = tape.shape(x);
    <[usize; 5]>::try_from(s).map_err(|_| Error::shape(op, s, &[0, 0, 0, 0, 0]))
}

/// `sigmoid(mean_{t,c}(x)) ⊙ x`: one gate per spatial cell, shared over time
/// and channels.
pub fn spatial_attention<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    expect_rank5(tape, x, "spatial_attention")?;
    let m = tape.reduce_mean(x, &[1, 4], true)?;
    let gate = tape.sigmoid(m)?;
    tape.mul(x, gate)
}

/// `sigmoid(mean_{h,w}(x)) ⊙ x`: one gate per `(t, c)`.
pub fn temporal_attention<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    expect_rank5(tape, x, "temporal_attention")?;
    let m = tape.reduce_mean(x, &[2, 3], true)?;
    let gate = tape.sigmoid(m)?;
    tape.mul(x, gate)
}

/// Squeeze-excitation channel gate:
/// `x ⊙ sigmoid(W_rto · relu(W_rdu · z + b_rdu) + b_rto)` with `z` the
/// per-channel mean over `(t, h, w)`.
#[derive(Clone, Debug)]
pub struct FeatureAttention {
    pub w_reduce: ParamId,
    pub b_reduce: ParamId,
    pub w_restore: ParamId,
    pub b_restore: ParamId,
    pub channels: usize,
    pub ratio: usize,
}

impl FeatureAttention {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if ratio == 0 || !channels.is_multiple_of(ratio) {
            return Err(Error::InvalidSpec(format!(
                "{name}: reduction ratio {ratio} does not divide {channels} channels"
            )));
        }
        let hidden = channels / ratio;
        Ok(Self {
            w_reduce: store.add(
                format!("{name}.w_reduce"),
                glorot_uniform(&[channels, hidden], channels, hidden, rng),
            ),
            b_reduce: store.add(format!("{name}.b_reduce"), Tensor::zeros(&[hidden])),
            w_restore: store.add(
                format!("{name}.w_restore"),
                glorot_uniform(&[hidden, channels], hidden, channels, rng),
            ),
            b_restore: store.add(format!("{name}.b_restore"), Tensor::zeros(&[channels])),
            channels,
            ratio,
        })
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
        let [b, _, _, _, c] = expect_rank5(tape, x, "feature_attention")?;
        if c != self.channels {
            return Err(Error::shape("feature_attention", tape.shape(x), &[self.channels]));
        }
        let z = tape.reduce_mean(x, &[1, 2, 3], false)?;
        let r = tape.matmul(z, p[self.w_reduce])?;
        let r = tape.add(r, p[self.b_reduce])?;
        let r = tape.relu(r)?;
        let s = tape.matmul(r, p[self.w_restore])?;
        let s = tape.add(s, p[self.b_restore])?;
        let gate = tape.sigmoid(s)?;
        let gate = tape.reshape(gate, &[b, 1, 1, 1, c])?;
        tape.mul(x, gate)
    }
}

/// Multi-head scaled dot-product attention over all `T·H·W` positions.
///
/// Per-head projections are packed column-wise: head `i` owns columns
/// `i·d_k .. (i+1)·d_k` of each of `W_q`, `W_k`, `W_v (C, h·d_k)`, and the
/// concatenated heads are projected back by `W_o (h·d_k, C)`.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub w_out: ParamId,
    pub channels: usize,
    pub heads: usize,
    pub key_dim: usize,
}

impl SelfAttention {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        heads: usize,
        key_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || key_dim == 0 {
            return Err(Error::InvalidSpec(format!("{name}: heads and key_dim must be positive")));
        }
        let inner = heads * key_dim;
        let mut proj = |suffix: &str, shape: [usize; 2]| {
            store.add(format!("{name}.{suffix}"), glorot_uniform(&shape, shape[0], shape[1], rng))
        };
        Ok(Self {
            w_query: proj("w_query", [channels, inner]),
            w_key: proj("w_key", [channels, inner]),
            w_value: proj("w_value", [channels, inner]),
            w_out: proj("w_out", [inner, channels]),
            channels,
            heads,
            key_dim,
        })
    }

    /// `(B, N, h·d_k) → (B·h, N, d_k)`.
    fn split_heads<F: Scalar>(&self, tape: &mut Tape<F>, v: Var, b: usize, n: usize) -> Result<Var> {
        let v = tape.reshape(v, &[b, n, self.heads, self.key_dim])?;
        let v = tape.permute(v, &[0, 2, 1, 3])?;
        tape.reshape(v, &[b * self.heads, n, self.key_dim])
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
        let shape = expect_rank5(tape, x, "self_attention")?;
        let [b, t, h, w, c] = shape;
        if c != self.channels {
            return Err(Error::shape("self_attention", &shape, &[self.channels]));
        }
        let n = t * h * w;
        let flat = tape.reshape(x, &[b, n, c])?;
        let q = tape.matmul(flat, p[self.w_query])?;
        let k = tape.matmul(flat, p[self.w_key])?;
        let v = tape.matmul(flat, p[self.w_value])?;
        let q = self.split_heads(tape, q, b, n)?;
        let k = self.split_heads(tape, k, b, n)?;
        let v = self.split_heads(tape, v, b, n)?;
        let scores = tape.bmm(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (self.key_dim as f64).sqrt())?;
        let weights = tape.softmax_last(scores)?;
        let heads = tape.bmm(weights, v, false)?;
        let heads = tape.reshape(heads, &[b, self.heads, n, self.key_dim])?;
        let heads = tape.permute(heads, &[0, 2, 1, 3])?;
        let concat = tape.reshape(heads, &[b, n, self.heads * self.key_dim])?;
        let out = tape.matmul(concat, p[self.w_out])?;
        tape.reshape(out, &shape)
    }
}

/// Softmax-weighted pooling of positions into one `(B, C)` vector:
/// `Σ_pos softmax(tanh(x·W + b)) ⊙ x`.
#[derive(Clone, Debug)]
pub struct GeneralAttention {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
}

impl GeneralAttention {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), glorot_uniform(&[channels, 1], channels, 1, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1])),
            channels,
        }
    }

    /// Accepts `(B, T, H, W, C)` (softmax over all `t, h, w`) or `(B, T, C)`
    /// (softmax over `t`).
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if !(s.len() == 5 || s.len() == 3) || s[s.len() - 1] != self.channels {
            return Err(Error::shape("general_attention", &s, &[self.channels]));
        }
        let b = s[0];
        let n: usize = s[1..s.len() - 1].iter().product();
        let c = self.channels;
        let flat = tape.reshape(x, &[b, n, c])?;
        let scores = tape.matmul(flat, p[self.weight])?;
        let scores = tape.add(scores, p[self.bias])?;
        let scores = tape.tanh(scores)?;
        let scores = tape.reshape(scores, &[b, n])?;
        let weights = tape.softmax_last(scores)?;
        let weights = tape.reshape(weights, &[b, n, 1])?;
        let weighted = tape.mul(flat, weights)?;
        tape.reduce_sum(weighted, &[1], false)
    }
}
