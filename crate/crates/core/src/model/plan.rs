use super::spec::{ModelSpec, Variant};

/// One named stage of the forward pass with its output shape and analytic
/// cost per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub name: String,
    pub shape: Vec<usize>,
    pub flops: f64,
}

/// Analytic stage list for `spec` at batch size `batch`, mirroring the
/// wiring of [`Model`](super::Model) without allocating activations.
///
/// Cost convention: one multiply-add is 2 FLOPs; activations, gates and
/// max-pooling cost 1 FLOP per output element; mean reductions cost 1 per
/// input element; dropout is free at inference.
pub fn plan(spec: &ModelSpec, batch: usize) -> Vec<Stage> {
    let mut stages = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, flops: f64| {
        let mut full = vec![batch];
        full.extend(shape);
        stages.push(Stage {
            name: name.to_string(),
            shape: full,
            flops,
        });
    };
    let t = spec.frames;
    let (mut h, mut w, mut c) = (spec.height, spec.width, spec.in_channels);
    for (i, &cout) in spec.widths.iter().enumerate() {
        let n = i + 1;
        let out = (t * h * w * cout) as f64;
        push(&format!("conv{n}"), vec![t, h, w, cout], 2.0 * 27.0 * (c * cout) as f64 * (t * h * w) as f64 + out);
        h /= 2;
        w /= 2;
        c = cout;
        let numel = (t * h * w * c) as f64;
        push(&format!("pool{n}"), vec![t, h, w, c], numel);
        push(&format!("dropout{n}"), vec![t, h, w, c], 0.0);
        if spec.variant.has_layer_attention() {
            let (name, flops) = match i {
                0 => ("spatial_attention", 2.0 * numel + (h * w) as f64),
                1 => ("temporal_attention", 2.0 * numel + (t * c) as f64),
                _ => {
                    let hid = (c / spec.reduction_ratio) as f64;
                    let c = c as f64;
                    ("feature_attention", 2.0 * numel + 4.0 * c * hid + hid + c)
                }
            };
            push(name, vec![t, h, w, c], flops);
        }
    }
    if spec.variant == Variant::M4 {
        let n = (t * h * w) as f64;
        let inner = (spec.heads * spec.key_dim) as f64;
        let heads = spec.heads as f64;
        let dk = spec.key_dim as f64;
        let projections = 3.0 * 2.0 * n * c as f64 * inner + 2.0 * n * inner * c as f64;
        let scores = 2.0 * heads * n * n * dk + heads * n * n;
        let softmax = heads * n * n;
        let mixing = 2.0 * heads * n * n * dk;
        push("self_attention", vec![t, h, w, c], projections + scores + softmax + mixing);
    }
    if spec.variant.is_recurrent() {
        let f = spec.recurrent_filters;
        let k2 = (spec.recurrent_kernel * spec.recurrent_kernel) as f64;
        let px = (h * w) as f64;
        let per_step = 2.0 * k2 * (c * 4 * f) as f64 * px + 2.0 * k2 * (f * 4 * f) as f64 * px
            // gate activations, then f⊙c, i⊙g, sum, tanh, o⊙tanh
            + 4.0 * (f as f64) * px
            + 5.0 * (f as f64) * px;
        let directions = if spec.variant == Variant::M2 { 2 } else { 1 };
        let name = if directions == 2 { "biconvlstm" } else { "convlstm" };
        c = directions * f;
        push(name, vec![t, h, w, c], directions as f64 * t as f64 * per_step);
    }
    push("global_pool", vec![t, c], (t * h * w * c) as f64);
    let head_in = if spec.variant.is_recurrent() {
        let (tf, cf) = (t as f64, c as f64);
        push("general_attention", vec![c], 2.0 * tf * cf + 2.0 * tf + 2.0 * tf * cf);
        c
    } else {
        push("flatten", vec![t * c], 0.0);
        t * c
    };
    push("dense", vec![spec.dense_units], dense_flops(head_in, spec.dense_units));
    push("dropout_fc", vec![spec.dense_units], 0.0);
    push("output", vec![1], dense_flops(spec.dense_units, 1) + 1.0);
    stages
}

/// Multiply-add count of a dense layer, at 2 FLOPs each.
pub fn dense_flops(inputs: usize, outputs: usize) -> f64 {
    2.0 * (inputs * outputs) as f64
}

/// Analytic FLOPs for one sample of `spec.frames` frames.
pub fn estimate_flops(spec: &ModelSpec) -> f64 {
    plan(spec, 1).iter().map(|s| s.flops).sum()
}
