//! Central-difference checks of the reverse-mode gradients in f64.
//!
//! Each check reduces a layer output `y` to `Σ y ⊙ R` with a fixed
//! pseudo-random `R`, so every output element contributes a distinct weight.
//! Relative errors use `|a − n| / max(|a|, |n|, FLOOR)`: below `FLOOR` the
//! central difference is dominated by round-off, not by the derivative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermo_core::attention::{spatial_attention, temporal_attention, FeatureAttention, GeneralAttention, SelfAttention};
use thermo_core::model::{Model, ModelSpec, Variant};
use thermo_core::nn::{dropout, global_spatial_pool, Activation, Bound, Conv3dLayer, DenseLayer, Mode, Padding, ParamStore, LEAKY_ALPHA};
use thermo_core::recurrent::{biconvlstm, ConvLstm, RecurrentState};
use thermo_core::tensor::{Tape, Tensor, Var};
use thermo_core::Result;

use super::uniform;

pub const EPS: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
pub const FLOOR: f64 = 1e-5;

fn scalar<Fun>(f: &Fun, tape: &mut Tape<f64>, inputs: &[Tensor<f64>]) -> (Vec<Var>, Var)
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(tape, &vars).expect("objective");
    assert_eq!(tape.value(out).len(), 1, "objective must be scalar");
    (vars, out)
}

fn bumped(inputs: &[Tensor<f64>], which: usize, elem: usize, delta: f64) -> Vec<Tensor<f64>> {
    let mut out = inputs.to_vec();
    let mut data = out[which].data().to_vec();
    data[elem] += delta;
    out[which] = Tensor::new(inputs[which].shape(), data).unwrap();
    out
}

/// Worst relative error between reverse-mode and central-difference
/// derivatives of scalar `f` at the picked `(input, element)` pairs.
pub fn finite_difference<Fun>(f: Fun, inputs: &[Tensor<f64>], picks: &[(usize, usize)]) -> f64
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let (vars, out) = scalar(&f, &mut tape, inputs);
    let grads = tape.backward(out).expect("backward");
    let eval = |inp: &[Tensor<f64>]| {
        let mut t = Tape::inference();
        let (_, o) = scalar(&f, &mut t, inp);
        t.value(o).data()[0]
    };
    picks
        .iter()
        .map(|&(which, elem)| {
            let analytic = grads.get_or_zeros(vars[which], inputs[which].shape()).data()[elem];
            let up = eval(&bumped(inputs, which, elem, EPS));
            let down = eval(&bumped(inputs, which, elem, -EPS));
            let numeric = (up - down) / (2.0 * EPS);
            (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
        })
        .fold(0.0, f64::max)
}

fn weighted_sum(t: &mut Tape<f64>, y: Var) -> Result<Var> {
    let r = Tensor::from_fn(t.shape(y), |i| {
        let k = i.iter().fold(0usize, |a, &v| a * 31 + v + 1);
        (k as f64 * 0.7313).sin() + 0.25
    });
    let r = t.leaf(r);
    let prod = t.mul(y, r)?;
    t.sum_all(prod)
}

/// Every element of small inputs, or `per_tensor` sampled elements of larger ones.
fn picks(inputs: &[Tensor<f64>], per_tensor: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        if t.len() <= per_tensor {
            out.extend((0..t.len()).map(|e| (i, e)));
        } else {
            out.extend((0..per_tensor).map(|_| (i, rng.random_range(0..t.len()))));
        }
    }
    out
}

fn check<Fun>(f: Fun, inputs: Vec<Tensor<f64>>, per_tensor: usize, seed: u64) -> f64
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let picks = picks(&inputs, per_tensor, &mut ChaCha8Rng::seed_from_u64(seed));
    finite_difference(
        |t, v| {
            let y = f(t, v)?;
            weighted_sum(t, y)
        },
        &inputs,
        &picks,
    )
}

/// Check a parameterised layer: inputs are the store's tensors followed by `x`.
fn check_params<Fun>(store: &ParamStore<f64>, x: Tensor<f64>, per_tensor: usize, seed: u64, f: Fun) -> f64
where
    Fun: Fn(&mut Tape<f64>, &Bound, Var) -> Result<Var>,
{
    let n = store.len();
    let mut inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    inputs.push(x);
    check(
        |t, v| f(t, &Bound::from_vars(v[..n].to_vec()), v[n]),
        inputs,
        per_tensor,
        seed,
    )
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut impl Rng, scale: f64) {
    for id in store.ids().collect::<Vec<_>>() {
        let s = store.get(id).shape().to_vec();
        store.set(id, uniform(rng, &s, -scale, scale));
    }
}

pub type Check = fn(&mut ChaCha8Rng) -> f64;

fn conv_same(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, &[2, 3, 4, 4, 2], -1.0, 1.0);
    let k = uniform(rng, &[3, 3, 3, 2, 3], -1.0, 1.0);
    let b = uniform(rng, &[3], -1.0, 1.0);
    check(|t, v| t.conv3d(v[0], v[1], Some(v[2]), Padding::Same), vec![x, k, b], 40, 1)
}

fn conv_valid(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, &[1, 3, 5, 4, 2], -1.0, 1.0);
    let k = uniform(rng, &[2, 3, 2, 2, 2], -1.0, 1.0);
    check(|t, v| t.conv3d(v[0], v[1], None, Padding::Valid), vec![x, k], 40, 2)
}

fn conv_layer(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let layer = Conv3dLayer::new(&mut store, "c", [3, 3, 3], 2, 3, Padding::Same, Activation::LeakyRelu(LEAKY_ALPHA), rng).unwrap();
    randomize(&mut store, rng, 0.5);
    let x = uniform(rng, &[1, 2, 4, 4, 2], -1.0, 1.0);
    check_params(&store, x, 30, 3, |t, p, x| layer.forward(t, p, x))
}

fn maxpool(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, &[2, 2, 4, 6, 3], -1.0, 1.0);
    check(|t, v| t.maxpool3d(v[0], [1, 2, 2]), vec![x], 1000, 4)
}

fn activations(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, &[3, 7], -2.0, 2.0);
    let acts = [
        Activation::LeakyRelu(LEAKY_ALPHA),
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Linear,
    ];
    acts.iter()
        .map(|a| check(|t, v| a.apply(t, v[0]), vec![x.clone()], 100, 5))
        .fold(0.0, f64::max)
}

fn dropout_train(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, &[2, 3, 4], -1.0, 1.0);
    check(
        |t, v| dropout(t, v[0], 0.4, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)),
        vec![x],
        100,
        6,
    )
}

fn dense(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let layer = DenseLayer::new(&mut store, "d", 5, 4, Activation::Sigmoid, rng);
    randomize(&mut store, rng, 0.8);
    let x = uniform(rng, &[3, 5], -1.0, 1.0);
    check_params(&store, x, 100, 7, |t, p, x| layer.forward(t, p, x))
}

fn spatial_pool(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, &[2, 3, 3, 4, 2], -1.0, 1.0);
    check(|t, v| global_spatial_pool(t, v[0]), vec![x], 40, 8)
}

fn bce(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, &[6, 1], -3.0, 3.0);
    let labels = Tensor::new(&[6, 1], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    check(
        |t, v| {
            let p = t.sigmoid(v[0])?;
            t.bce(p, &labels)
        },
        vec![x],
        100,
        9,
    )
}

fn spatial(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, &[2, 3, 3, 4, 2], -1.0, 1.0);
    check(|t, v| spatial_attention(t, v[0]), vec![x], 40, 10)
}

fn temporal(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(rng, &[2, 3, 3, 4, 2], -1.0, 1.0);
    check(|t, v| temporal_attention(t, v[0]), vec![x], 40, 11)
}

fn feature(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let fa = FeatureAttention::new(&mut store, "fa", 4, 2, rng).unwrap();
    randomize(&mut store, rng, 1.0);
    let x = uniform(rng, &[2, 2, 3, 3, 4], -1.0, 1.0);
    check_params(&store, x, 30, 12, |t, p, x| fa.forward(t, p, x))
}

fn self_attention(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let sa = SelfAttention::new(&mut store, "sa", 3, 2, 2, rng).unwrap();
    randomize(&mut store, rng, 1.0);
    let x = uniform(rng, &[2, 2, 2, 3, 3], -1.0, 1.0);
    check_params(&store, x, 30, 13, |t, p, x| sa.forward(t, p, x))
}

fn general_rank5(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let ga = GeneralAttention::new(&mut store, "ga", 3, rng);
    randomize(&mut store, rng, 1.0);
    let x = uniform(rng, &[2, 2, 3, 2, 3], -1.0, 1.0);
    check_params(&store, x, 30, 14, |t, p, x| ga.forward(t, p, x))
}

fn general_rank3(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let ga = GeneralAttention::new(&mut store, "ga", 4, rng);
    randomize(&mut store, rng, 1.0);
    let x = uniform(rng, &[3, 5, 4], -1.0, 1.0);
    check_params(&store, x, 60, 15, |t, p, x| ga.forward(t, p, x))
}

fn convlstm_step(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let cell = ConvLstm::new(&mut store, "l", 2, 3, [3, 3], rng).unwrap();
    randomize(&mut store, rng, 0.5);
    let n = store.len();
    let mut inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    inputs.push(uniform(rng, &[2, 3, 3, 2], -1.0, 1.0));
    inputs.push(uniform(rng, &[2, 3, 3, 3], -1.0, 1.0));
    inputs.push(uniform(rng, &[2, 3, 3, 3], -1.0, 1.0));
    check(
        |t, v| {
            let p = Bound::from_vars(v[..n].to_vec());
            let s = cell.step(t, &p, v[n], RecurrentState { hidden: v[n + 1], cell: v[n + 2] })?;
            t.concat(&[s.hidden, s.cell], 3)
        },
        inputs,
        30,
        16,
    )
}

fn convlstm_sequence(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let cell = ConvLstm::new(&mut store, "l", 2, 2, [3, 3], rng).unwrap();
    randomize(&mut store, rng, 0.5);
    let x = uniform(rng, &[2, 3, 3, 3, 2], -1.0, 1.0);
    check_params(&store, x, 30, 17, |t, p, x| cell.sequence(t, p, x, true))
}

fn biconv(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let fwd = ConvLstm::new(&mut store, "f", 2, 2, [3, 3], rng).unwrap();
    let bwd = ConvLstm::new(&mut store, "b", 2, 2, [3, 3], rng).unwrap();
    randomize(&mut store, rng, 0.5);
    let x = uniform(rng, &[2, 3, 3, 3, 2], -1.0, 1.0);
    check_params(&store, x, 30, 18, |t, p, x| biconvlstm(t, p, &fwd, &bwd, x))
}

pub const LAYER_CHECKS: [(&str, Check); 18] = [
    ("conv3d_same", conv_same),
    ("conv3d_valid", conv_valid),
    ("conv3d_layer", conv_layer),
    ("maxpool3d", maxpool),
    ("activations", activations),
    ("dropout_train", dropout_train),
    ("dense", dense),
    ("global_spatial_pool", spatial_pool),
    ("bce", bce),
    ("spatial_attention", spatial),
    ("temporal_attention", temporal),
    ("feature_attention", feature),
    ("self_attention", self_attention),
    ("general_attention_rank5", general_rank5),
    ("general_attention_rank3", general_rank3),
    ("convlstm_step", convlstm_step),
    ("convlstm_sequence", convlstm_sequence),
    ("biconvlstm", biconv),
];

pub fn layer_suite(seed: u64) -> Vec<(String, f64)> {
    LAYER_CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, f))| (name.to_string(), f(&mut ChaCha8Rng::seed_from_u64(seed + i as u64))))
        .collect()
}

/// Mean BCE of a full desk-scale variant on two 3-frame windows, with
/// training-mode dropout under a fixed mask. Checks sampled elements of
/// every parameter tensor and of the input.
pub fn variant_check(variant: Variant, seed: u64) -> f64 {
    let spec = ModelSpec::desk(variant).with_frames(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::<f64>::build(&spec, &mut rng).unwrap();
    let n = model.params().len();
    let mut shape = vec![2];
    shape.extend_from_slice(&spec.input_extents());
    let mut inputs: Vec<Tensor<f64>> = model.params().iter().map(|(_, t)| t.clone()).collect();
    inputs.push(uniform(&mut rng, &shape, 0.0, 1.0));
    let labels = Tensor::new(&[2, 1], vec![1.0, 0.0]).unwrap();
    let picks = picks(&inputs, 3, &mut rng);
    finite_difference(
        |t, v| {
            let p = Bound::from_vars(v[..n].to_vec());
            let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            model.loss_on(t, &p, v[n], &labels, Mode::Train, &mut drop_rng)
        },
        &inputs,
        &picks,
    )
}

pub fn variant_suite(seed: u64) -> Vec<(String, f64)> {
    Variant::ALL
        .iter()
        .map(|&v| (format!("model_{v}"), variant_check(v, seed)))
        .collect()
}
