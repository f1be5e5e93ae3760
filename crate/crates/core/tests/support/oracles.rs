//! Straight nested-loop forms of each layer, written from the layer
//! definitions rather than from the engine's vectorised code.
#![allow(clippy::needless_range_loop)]

use rand::Rng;
use thermo_core::attention::{spatial_attention, temporal_attention, FeatureAttention, GeneralAttention, SelfAttention};
use thermo_core::metrics::{roc_auc, Confusion};
use thermo_core::nn::{Padding, ParamStore};
use thermo_core::recurrent::{biconvlstm, ConvLstm};
use thermo_core::tensor::{Tape, Tensor};

use super::{idx, sigmoid, softmax, uniform};

/// `(B, T, H, W, Cin) ⋆ (kT, kH, kW, Cin, Cout) + bias`, stride 1.
pub fn conv3d(x: &Tensor<f64>, k: &Tensor<f64>, bias: Option<&Tensor<f64>>, same: bool) -> Tensor<f64> {
    let xs = x.shape();
    let ks = k.shape();
    let (b, t, h, w, cin) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (kt, kh, kw, cout) = (ks[0], ks[1], ks[2], ks[4]);
    let (pt, ph, pw) = if same { (kt / 2, kh / 2, kw / 2) } else { (0, 0, 0) };
    let (to, ho, wo) = (t + 2 * pt + 1 - kt, h + 2 * ph + 1 - kh, w + 2 * pw + 1 - kw);
    let os = [b, to, ho, wo, cout];
    let mut out = vec![0.0; os.iter().product()];
    for bi in 0..b {
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    for co in 0..cout {
                        let mut acc = bias.map_or(0.0, |bb| bb.data()[co]);
                        for dt in 0..kt {
                            for dh in 0..kh {
                                for dw in 0..kw {
                                    let it = (ot + dt) as isize - pt as isize;
                                    let ih = (oh + dh) as isize - ph as isize;
                                    let iw = (ow + dw) as isize - pw as isize;
                                    if it < 0 || ih < 0 || iw < 0 || it >= t as isize || ih >= h as isize || iw >= w as isize {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        let xv = x.data()[idx(xs, &[bi, it as usize, ih as usize, iw as usize, ci])];
                                        let kv = k.data()[idx(ks, &[dt, dh, dw, ci, co])];
                                        acc += xv * kv;
                                    }
                                }
                            }
                        }
                        out[idx(&os, &[bi, ot, oh, ow, co])] = acc;
                    }
                }
            }
        }
    }
    Tensor::new(&os, out).unwrap()
}

pub fn maxpool3d(x: &Tensor<f64>, win: [usize; 3]) -> Tensor<f64> {
    let xs = x.shape();
    let os = [xs[0], xs[1] / win[0], xs[2] / win[1], xs[3] / win[2], xs[4]];
    Tensor::from_fn(&os, |o| {
        let mut best = f64::NEG_INFINITY;
        for dt in 0..win[0] {
            for dh in 0..win[1] {
                for dw in 0..win[2] {
                    let at = [o[0], o[1] * win[0] + dt, o[2] * win[1] + dh, o[3] * win[2] + dw, o[4]];
                    best = best.max(x.data()[idx(xs, &at)]);
                }
            }
        }
        best
    })
}

pub fn spatial(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(s, |i| {
        let mut m = 0.0;
        for t in 0..s[1] {
            for c in 0..s[4] {
                m += x.data()[idx(s, &[i[0], t, i[2], i[3], c])];
            }
        }
        m /= (s[1] * s[4]) as f64;
        sigmoid(m) * x.data()[idx(s, i)]
    })
}

pub fn temporal(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(s, |i| {
        let mut m = 0.0;
        for h in 0..s[2] {
            for w in 0..s[3] {
                m += x.data()[idx(s, &[i[0], i[1], h, w, i[4]])];
            }
        }
        m /= (s[2] * s[3]) as f64;
        sigmoid(m) * x.data()[idx(s, i)]
    })
}

/// Squeeze-excitation with `w_reduce (C, C/r)`, `w_restore (C/r, C)`.
pub fn feature(x: &Tensor<f64>, w1: &Tensor<f64>, b1: &Tensor<f64>, w2: &Tensor<f64>, b2: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (b, c) = (s[0], s[4]);
    let hidden = w1.shape()[1];
    let n = s[1] * s[2] * s[3];
    let mut gates = vec![0.0; b * c];
    for bi in 0..b {
        let mut z = vec![0.0; c];
        for p in 0..n {
            for ci in 0..c {
                z[ci] += x.data()[(bi * n + p) * c + ci];
            }
        }
        z.iter_mut().for_each(|v| *v /= n as f64);
        let mut r = vec![0.0; hidden];
        for j in 0..hidden {
            let mut acc = b1.data()[j];
            for ci in 0..c {
                acc += z[ci] * w1.data()[ci * hidden + j];
            }
            r[j] = acc.max(0.0);
        }
        for ci in 0..c {
            let mut acc = b2.data()[ci];
            for j in 0..hidden {
                acc += r[j] * w2.data()[j * c + ci];
            }
            gates[bi * c + ci] = sigmoid(acc);
        }
    }
    Tensor::from_fn(s, |i| x.data()[idx(s, i)] * gates[i[0] * c + i[4]])
}

/// Multi-head attention over the `T·H·W` positions; head `i` uses columns
/// `i·d_k..(i+1)·d_k` of the projections.
pub fn self_attention(
    x: &Tensor<f64>,
    wq: &Tensor<f64>,
    wk: &Tensor<f64>,
    wv: &Tensor<f64>,
    wo: &Tensor<f64>,
    heads: usize,
    dk: usize,
) -> Tensor<f64> {
    let s = x.shape();
    let (b, c) = (s[0], s[4]);
    let n = s[1] * s[2] * s[3];
    let inner = heads * dk;
    let mut out = vec![0.0; x.len()];
    let proj = |w: &Tensor<f64>, bi: usize, p: usize, col: usize| -> f64 {
        (0..c).map(|ci| x.data()[(bi * n + p) * c + ci] * w.data()[ci * inner + col]).sum()
    };
    for bi in 0..b {
        let mut concat = vec![vec![0.0; inner]; n];
        for hd in 0..heads {
            for p in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|m| {
                        (0..dk)
                            .map(|j| proj(wq, bi, p, hd * dk + j) * proj(wk, bi, m, hd * dk + j))
                            .sum::<f64>()
                            / (dk as f64).sqrt()
                    })
                    .collect();
                let a = softmax(&scores);
                for j in 0..dk {
                    concat[p][hd * dk + j] = (0..n).map(|m| a[m] * proj(wv, bi, m, hd * dk + j)).sum();
                }
            }
        }
        for p in 0..n {
            for ci in 0..c {
                out[(bi * n + p) * c + ci] = (0..inner).map(|i| concat[p][i] * wo.data()[i * c + ci]).sum();
            }
        }
    }
    Tensor::new(s, out).unwrap()
}

/// `Σ_pos softmax_pos(tanh(x·W + b)) ⊙ x` for rank-5 or rank-3 input.
pub fn general(x: &Tensor<f64>, w: &Tensor<f64>, bias: f64) -> Tensor<f64> {
    let s = x.shape();
    let (b, c) = (s[0], s[s.len() - 1]);
    let n: usize = s[1..s.len() - 1].iter().product();
    let mut out = vec![0.0; b * c];
    for bi in 0..b {
        let row = |p: usize| &x.data()[(bi * n + p) * c..(bi * n + p + 1) * c];
        let scores: Vec<f64> = (0..n)
            .map(|p| (row(p).iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>() + bias).tanh())
            .collect();
        let a = softmax(&scores);
        for p in 0..n {
            for ci in 0..c {
                out[bi * c + ci] += a[p] * row(p)[ci];
            }
        }
    }
    Tensor::new(&[b, c], out).unwrap()
}

/// One ConvLSTM step with gates `(i, f, g, o)`; returns `(h, c)`.
pub fn convlstm_step(
    x: &Tensor<f64>,
    h: &Tensor<f64>,
    c: &Tensor<f64>,
    wx: &Tensor<f64>,
    wh: &Tensor<f64>,
    bias: &Tensor<f64>,
) -> (Tensor<f64>, Tensor<f64>) {
    let xs = x.shape();
    let (b, hh, ww, cin) = (xs[0], xs[1], xs[2], xs[3]);
    let f = h.shape()[3];
    let (kh, kw) = (wx.shape()[0], wx.shape()[1]);
    let pre = |bi: usize, y: usize, xx: usize, gate: usize| -> f64 {
        let mut acc = bias.data()[gate];
        for dy in 0..kh {
            for dx in 0..kw {
                let iy = (y + dy) as isize - (kh / 2) as isize;
                let ix = (xx + dx) as isize - (kw / 2) as isize;
                if iy < 0 || ix < 0 || iy >= hh as isize || ix >= ww as isize {
                    continue;
                }
                let (iy, ix) = (iy as usize, ix as usize);
                for ci in 0..cin {
                    acc += x.data()[idx(xs, &[bi, iy, ix, ci])] * wx.data()[idx(wx.shape(), &[dy, dx, ci, gate])];
                }
                for fi in 0..f {
                    acc += h.data()[idx(h.shape(), &[bi, iy, ix, fi])] * wh.data()[idx(wh.shape(), &[dy, dx, fi, gate])];
                }
            }
        }
        acc
    };
    let shape = [b, hh, ww, f];
    let mut h_new = vec![0.0; b * hh * ww * f];
    let mut c_new = vec![0.0; b * hh * ww * f];
    for bi in 0..b {
        for y in 0..hh {
            for xx in 0..ww {
                for fi in 0..f {
                    let i = sigmoid(pre(bi, y, xx, fi));
                    let fg = sigmoid(pre(bi, y, xx, f + fi));
                    let g = pre(bi, y, xx, 2 * f + fi).tanh();
                    let o = sigmoid(pre(bi, y, xx, 3 * f + fi));
                    let at = idx(&shape, &[bi, y, xx, fi]);
                    let cell = fg * c.data()[at] + i * g;
                    c_new[at] = cell;
                    h_new[at] = o * cell.tanh();
                }
            }
        }
    }
    (Tensor::new(&shape, h_new).unwrap(), Tensor::new(&shape, c_new).unwrap())
}

fn dim(rng: &mut impl Rng) -> usize {
    rng.random_range(1..=4)
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut impl Rng, scale: f64) {
    for id in store.ids().collect::<Vec<_>>() {
        let s = store.get(id).shape().to_vec();
        store.set(id, uniform(rng, &s, -scale, scale));
    }
}

/// Largest |engine − oracle| over one random conv3d case.
pub fn conv3d_case(rng: &mut impl Rng) -> f64 {
    let same = rng.random_bool(0.5);
    let shape = [dim(rng), dim(rng), dim(rng), dim(rng), dim(rng)];
    let mut k = [0, 0, 0, shape[4], dim(rng)];
    for a in 0..3 {
        k[a] = if same { [1, 3][rng.random_range(0..2)] } else { rng.random_range(1..=shape[a + 1]) };
    }
    let x = uniform(rng, &shape, -1.0, 1.0);
    let kernel = uniform(rng, &k, -1.0, 1.0);
    let bias = uniform(rng, &[k[4]], -1.0, 1.0);
    let mut t = Tape::inference();
    let (xv, kv, bv) = (t.leaf(x.clone()), t.leaf(kernel.clone()), t.leaf(bias.clone()));
    let y = t
        .conv3d(xv, kv, Some(bv), if same { Padding::Same } else { Padding::Valid })
        .unwrap();
    t.value(y).max_abs_diff(&conv3d(&x, &kernel, Some(&bias), same))
}

pub fn maxpool_case(rng: &mut impl Rng) -> f64 {
    let win = [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2)];
    let shape = [dim(rng), win[0] * rng.random_range(1..=2), win[1] * rng.random_range(1..=2), win[2] * rng.random_range(1..=2), dim(rng)];
    let x = uniform(rng, &shape, -1.0, 1.0);
    let mut t = Tape::inference();
    let xv = t.leaf(x.clone());
    let y = t.maxpool3d(xv, win).unwrap();
    t.value(y).max_abs_diff(&maxpool3d(&x, win))
}

fn rank5(rng: &mut impl Rng) -> Tensor<f64> {
    let shape = [dim(rng), dim(rng), dim(rng), dim(rng), dim(rng)];
    uniform(rng, &shape, -2.0, 2.0)
}

pub fn spatial_case(rng: &mut impl Rng) -> f64 {
    let x = rank5(rng);
    let mut t = Tape::inference();
    let xv = t.leaf(x.clone());
    let y = spatial_attention(&mut t, xv).unwrap();
    t.value(y).max_abs_diff(&spatial(&x))
}

pub fn temporal_case(rng: &mut impl Rng) -> f64 {
    let x = rank5(rng);
    let mut t = Tape::inference();
    let xv = t.leaf(x.clone());
    let y = temporal_attention(&mut t, xv).unwrap();
    t.value(y).max_abs_diff(&temporal(&x))
}

pub fn feature_case(rng: &mut impl Rng) -> f64 {
    let ratio = rng.random_range(1..=2);
    let c = ratio * rng.random_range(1..=2);
    let shape = [dim(rng), dim(rng), dim(rng), dim(rng), c];
    let x = uniform(rng, &shape, -2.0, 2.0);
    let mut store = ParamStore::new();
    let fa = FeatureAttention::new(&mut store, "fa", c, ratio, rng).unwrap();
    randomize(&mut store, rng, 1.0);
    let mut t = Tape::inference();
    let p = store.bind(&mut t);
    let xv = t.leaf(x.clone());
    let y = fa.forward(&mut t, &p, xv).unwrap();
    let g = |id| store.get(id);
    t.value(y)
        .max_abs_diff(&feature(&x, g(fa.w_reduce), g(fa.b_reduce), g(fa.w_restore), g(fa.b_restore)))
}

pub fn self_attention_case(rng: &mut impl Rng) -> f64 {
    let x = rank5(rng);
    let (heads, dk) = (rng.random_range(1..=2), dim(rng));
    let mut store = ParamStore::new();
    let sa = SelfAttention::new(&mut store, "sa", x.shape()[4], heads, dk, rng).unwrap();
    randomize(&mut store, rng, 1.0);
    let mut t = Tape::inference();
    let p = store.bind(&mut t);
    let xv = t.leaf(x.clone());
    let y = sa.forward(&mut t, &p, xv).unwrap();
    let g = |id| store.get(id);
    t.value(y)
        .max_abs_diff(&self_attention(&x, g(sa.w_query), g(sa.w_key), g(sa.w_value), g(sa.w_out), heads, dk))
}

pub fn general_case(rng: &mut impl Rng) -> f64 {
    let x = if rng.random_bool(0.5) {
        rank5(rng)
    } else {
        let shape = [dim(rng), dim(rng), dim(rng)];
        uniform(rng, &shape, -2.0, 2.0)
    };
    let c = *x.shape().last().unwrap();
    let mut store = ParamStore::new();
    let ga = GeneralAttention::new(&mut store, "ga", c, rng);
    randomize(&mut store, rng, 1.0);
    let mut t = Tape::inference();
    let p = store.bind(&mut t);
    let xv = t.leaf(x.clone());
    let y = ga.forward(&mut t, &p, xv).unwrap();
    t.value(y).max_abs_diff(&general(&x, store.get(ga.weight), store.get(ga.bias).data()[0]))
}

pub fn convlstm_case(rng: &mut impl Rng) -> f64 {
    let (b, h, w, cin, f) = (dim(rng), dim(rng), dim(rng), dim(rng), dim(rng));
    let k = [[1, 3][rng.random_range(0..2)], [1, 3][rng.random_range(0..2)]];
    let mut store = ParamStore::new();
    let cell = ConvLstm::new(&mut store, "lstm", cin, f, k, rng).unwrap();
    randomize(&mut store, rng, 0.5);
    let x = uniform(rng, &[b, h, w, cin], -1.0, 1.0);
    let h0 = uniform(rng, &[b, h, w, f], -1.0, 1.0);
    let c0 = uniform(rng, &[b, h, w, f], -1.0, 1.0);
    let mut t = Tape::inference();
    let p = store.bind(&mut t);
    let state = thermo_core::recurrent::RecurrentState {
        hidden: t.leaf(h0.clone()),
        cell: t.leaf(c0.clone()),
    };
    let xv = t.leaf(x.clone());
    let next = cell.step(&mut t, &p, xv, state).unwrap();
    let (h_ref, c_ref) = convlstm_step(&x, &h0, &c0, store.get(cell.w_input), store.get(cell.w_hidden), store.get(cell.bias));
    t.value(next.hidden).max_abs_diff(&h_ref).max(t.value(next.cell).max_abs_diff(&c_ref))
}

/// Reverse axis 1 of a rank-5 tensor.
pub fn reverse_time(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(s, |i| x.data()[idx(s, &[i[0], s[1] - 1 - i[1], i[2], i[3], i[4]])])
}

/// The backward half of `bi(A, B)(x)` must equal the time reversal of the
/// forward half of `bi(B, A)(reverse(x))`, bit for bit.
pub fn bireversal_case(rng: &mut impl Rng) -> bool {
    let shape = [dim(rng), rng.random_range(1..=5), dim(rng), dim(rng), dim(rng)];
    let f = dim(rng);
    let mut store = ParamStore::new();
    let a = ConvLstm::new(&mut store, "a", shape[4], f, [3, 3], rng).unwrap();
    let bcell = ConvLstm::new(&mut store, "b", shape[4], f, [3, 3], rng).unwrap();
    randomize(&mut store, rng, 0.5);
    let x = uniform(rng, &shape, -1.0, 1.0);
    let mut t = Tape::inference();
    let p = store.bind(&mut t);
    let xv = t.leaf(x.clone());
    let y = biconvlstm(&mut t, &p, &a, &bcell, xv).unwrap();
    let bwd = t.slice(y, 4, f, f).unwrap();
    let rv = t.leaf(reverse_time(&x));
    let swapped = biconvlstm(&mut t, &p, &bcell, &a, rv).unwrap();
    let fwd_of_reversed = t.slice(swapped, 4, 0, f).unwrap();
    t.value(bwd).data() == reverse_time(t.value(fwd_of_reversed)).data()
}

/// Pair-counting AUC and loop-counted confusion metrics, compared exactly.
pub fn metrics_case(rng: &mut impl Rng) -> bool {
    let n = rng.random_range(2..=60);
    let levels = rng.random_range(2..=12);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / (levels - 1) as f64).collect();

    let (mut doubled, mut pos, mut neg) = (0u64, 0u64, 0u64);
    for i in 0..n {
        for j in 0..n {
            if labels[i] && !labels[j] {
                doubled += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
        if labels[i] {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    let auc = doubled as f64 / (2 * pos * neg) as f64;

    let threshold = 0.5;
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (s, l) in scores.iter().zip(&labels) {
        match (*s >= threshold, *l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
    let factors = [(tp + fp) as f64, (tp + fn_) as f64, (tn + fp) as f64, (tn + fn_) as f64];
    let mcc = if factors.contains(&0.0) {
        0.0
    } else {
        (tp as f64 * tn as f64 - fp as f64 * fn_ as f64) / factors.iter().product::<f64>().sqrt()
    };

    let cm = Confusion::from_scores(&scores, &labels, threshold);
    roc_auc(&scores, &labels).unwrap() == auc
        && (cm.tp, cm.fp, cm.tn, cm.fn_) == (tp, fp, tn, fn_)
        && cm.f1() == f1
        && cm.mcc() == mcc
}

pub type Case = fn(&mut rand_chacha::ChaCha8Rng) -> f64;

/// Every forward oracle, by name.
pub const FORWARD_CASES: [(&str, Case); 8] = [
    ("conv3d", conv3d_case),
    ("maxpool3d", maxpool_case),
    ("spatial_attention", spatial_case),
    ("temporal_attention", temporal_case),
    ("feature_attention", feature_case),
    ("self_attention", self_attention_case),
    ("general_attention", general_case),
    ("convlstm_step", convlstm_case),
];

/// Worst deviation of each forward oracle over `cases` random cases.
pub fn forward_suite(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    FORWARD_CASES
        .iter()
        .enumerate()
        .map(|(i, (name, case))| {
            let mut rng = super::rng(seed + i as u64);
            let worst = (0..cases).map(|_| case(&mut rng)).fold(0.0, f64::max);
            (*name, worst)
        })
        .collect()
}
