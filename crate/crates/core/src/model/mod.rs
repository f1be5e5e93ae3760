//! Baseline and attention/recurrent variants M1–M4 assembled from the layer
//! modules, with analytic cost accounting and a binary weight format.

mod plan;
mod spec;
mod weights;

pub use plan::{dense_flops, estimate_flops, plan, Stage};
pub use spec::{fnv1a64, ModelSpec, Scale, Variant, POOL_ROUNDS};
pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{spatial_attention, temporal_attention, FeatureAttention, GeneralAttention, SelfAttention};
use crate::error::{Error, Result};
use crate::nn::{
    dropout, global_spatial_pool, Activation, Bound, Conv3dLayer, DenseLayer, Mode, Padding, ParamStore, LEAKY_ALPHA,
};
use crate::recurrent::{biconvlstm, ConvLstm};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Temporal/spatial extents of the max-pool window in every conv block.
pub const POOL_WINDOW: [usize; 3] = [1, 2, 2];

#[derive(Clone, Debug)]
enum Recurrence {
    Uni(ConvLstm),
    Bi(ConvLstm, ConvLstm),
}

/// A built network: spec, parameters, and the layer wiring.
#[derive(Clone, Debug)]
pub struct Model<F: Scalar = f32> {
    spec: ModelSpec,
    params: ParamStore<F>,
    convs: [Conv3dLayer; 3],
    feature: Option<FeatureAttention>,
    self_attention: Option<SelfAttention>,
    recurrence: Option<Recurrence>,
    general: Option<GeneralAttention>,
    dense: DenseLayer,
    output: DenseLayer,
}

/// Per-stage `(name, output shape)` pairs recorded by a traced forward.
pub type Trace = Vec<(String, Vec<usize>)>;

impl<F: Scalar> Model<F> {
    pub fn build<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let leaky = Activation::LeakyRelu(LEAKY_ALPHA);
        let [w1, w2, w3] = spec.widths;
        let convs = [
            Conv3dLayer::new(&mut store, "conv1", [3, 3, 3], spec.in_channels, w1, Padding::Same, leaky, rng)?,
            Conv3dLayer::new(&mut store, "conv2", [3, 3, 3], w1, w2, Padding::Same, leaky, rng)?,
            Conv3dLayer::new(&mut store, "conv3", [3, 3, 3], w2, w3, Padding::Same, leaky, rng)?,
        ];
        let feature = if spec.variant.has_layer_attention() {
            Some(FeatureAttention::new(&mut store, "feature_attention", w3, spec.reduction_ratio, rng)?)
        } else {
            None
        };
        let self_attention = if spec.variant == Variant::M4 {
            Some(SelfAttention::new(&mut store, "self_attention", w3, spec.heads, spec.key_dim, rng)?)
        } else {
            None
        };
        let k = [spec.recurrent_kernel; 2];
        let f = spec.recurrent_filters;
        let recurrence = match spec.variant {
            Variant::M1 | Variant::M3 => Some(Recurrence::Uni(ConvLstm::new(&mut store, "convlstm", w3, f, k, rng)?)),
            Variant::M2 => Some(Recurrence::Bi(
                ConvLstm::new(&mut store, "biconvlstm.forward", w3, f, k, rng)?,
                ConvLstm::new(&mut store, "biconvlstm.backward", w3, f, k, rng)?,
            )),
            _ => None,
        };
        let general = if spec.variant.is_recurrent() {
            Some(GeneralAttention::new(&mut store, "general_attention", spec.head_channels(), rng))
        } else {
            None
        };
        let head_in = if spec.variant.is_recurrent() {
            spec.head_channels()
        } else {
            spec.frames * spec.head_channels()
        };
        let dense = DenseLayer::new(&mut store, "dense", head_in, spec.dense_units, Activation::Linear, rng);
        let output = DenseLayer::new(&mut store, "output", spec.dense_units, 1, Activation::Sigmoid, rng);
        Ok(Self {
            spec: spec.clone(),
            params: store,
            convs,
            feature,
            self_attention,
            recurrence,
            general,
            dense,
            output,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Same wiring with parameters converted to another precision.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            spec: self.spec.clone(),
            params: self.params.cast(),
            convs: self.convs.clone(),
            feature: self.feature.clone(),
            self_attention: self.self_attention.clone(),
            recurrence: self.recurrence.clone(),
            general: self.general.clone(),
            dense: self.dense.clone(),
            output: self.output.clone(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = self.spec.input_extents();
        if shape.len() != 5 || shape[1..] != want || shape[0] == 0 {
            let mut expected = vec![0];
            expected.extend_from_slice(&want);
            return Err(Error::shape("model input (B, T, H, W, Cin)", shape, &expected));
        }
        Ok(())
    }

    /// Record the forward pass on `tape` with parameters `p` (from
    /// [`ParamStore::bind`]). Returns `(B, 1)` probabilities.
    pub fn forward_on<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.forward_traced(tape, p, x, mode, rng, None)
    }

    pub(crate) fn forward_traced<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        x: Var,
        mode: Mode,
        rng: &mut R,
        mut trace: Option<&mut Trace>,
    ) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        let mut mark = |tape: &Tape<F>, name: &str, v: Var| {
            if let Some(t) = trace.as_deref_mut() {
                t.push((name.to_string(), tape.shape(v).to_vec()));
            }
        };
        let spec = &self.spec;
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            let n = i + 1;
            h = conv.forward(tape, p, h)?;
            mark(tape, &format!("conv{n}"), h);
            h = tape.maxpool3d(h, POOL_WINDOW)?;
            mark(tape, &format!("pool{n}"), h);
            h = dropout(tape, h, spec.conv_dropout, mode, rng)?;
            mark(tape, &format!("dropout{n}"), h);
            if spec.variant.has_layer_attention() {
                h = match i {
                    0 => spatial_attention(tape, h)?,
                    1 => temporal_attention(tape, h)?,
                    _ => self.feature.as_ref().expect("feature attention").forward(tape, p, h)?,
                };
                mark(tape, ["spatial_attention", "temporal_attention", "feature_attention"][i], h);
            }
        }
        if let Some(sa) = &self.self_attention {
            h = sa.forward(tape, p, h)?;
            mark(tape, "self_attention", h);
        }
        match &self.recurrence {
            Some(Recurrence::Uni(cell)) => {
                h = cell.sequence(tape, p, h, true)?;
                mark(tape, "convlstm", h);
            }
            Some(Recurrence::Bi(fwd, bwd)) => {
                h = biconvlstm(tape, p, fwd, bwd, h)?;
                mark(tape, "biconvlstm", h);
            }
            None => {}
        }
        h = global_spatial_pool(tape, h)?;
        mark(tape, "global_pool", h);
        if let Some(ga) = &self.general {
            h = ga.forward(tape, p, h)?;
            mark(tape, "general_attention", h);
        } else {
            let b = tape.shape(h)[0];
            h = tape.reshape(h, &[b, spec.frames * spec.head_channels()])?;
            mark(tape, "flatten", h);
        }
        h = self.dense.forward(tape, p, h)?;
        mark(tape, "dense", h);
        h = dropout(tape, h, spec.dense_dropout, mode, rng)?;
        mark(tape, "dropout_fc", h);
        h = self.output.forward(tape, p, h)?;
        mark(tape, "output", h);
        Ok(h)
    }

    /// Inference on `(B, T, H, W, Cin)`; returns `(B, 1)` scores.
    pub fn predict(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(x.shape())?;
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        // Dropout is the identity in inference mode, so the RNG is never drawn.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = self.forward_on(&mut tape, &p, xv, Mode::Infer, &mut rng)?;
        Ok(tape.value(y).clone())
    }

    /// [`predict`](Self::predict) over batch chunks of at most `chunk`
    /// samples, bounding peak activation memory. Results equal a single
    /// batched call because every stage is per-sample.
    pub fn predict_chunked(&self, x: &Tensor<F>, chunk: usize) -> Result<Tensor<F>> {
        self.check_input(x.shape())?;
        let b = x.shape()[0];
        let per = x.len() / b;
        let mut out = Vec::with_capacity(b);
        for start in (0..b).step_by(chunk.max(1)) {
            let n = chunk.max(1).min(b - start);
            let mut shape = x.shape().to_vec();
            shape[0] = n;
            let part = Tensor::new(&shape, x.data()[start * per..(start + n) * per].to_vec())?;
            out.extend_from_slice(self.predict(&part)?.data());
        }
        Tensor::new(&[b, 1], out)
    }

    /// Output shapes of every named stage for input `x`, from a real
    /// inference pass.
    pub fn trace_shapes(&self, x: &Tensor<F>) -> Result<Trace> {
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut trace = Trace::new();
        self.forward_traced(&mut tape, &p, xv, Mode::Infer, &mut rng, Some(&mut trace))?;
        Ok(trace)
    }

    /// Mean BCE of the model on `(x, labels)` recorded on `tape`, with
    /// parameters bound from `p`. Returns the scalar loss.
    pub fn loss_on<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        x: Var,
        labels: &Tensor<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let y = self.forward_on(tape, p, x, mode, rng)?;
        tape.bce(y, labels)
    }
}
