use super::{numel, strides, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Output shape of a singleton-axis broadcast. Shorter operands gain leading
/// unit axes; every other axis must agree or be 1.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let pa = r - a.len();
    let pb = r - b.len();
    (0..r)
        .map(|i| {
            let x = if i < pa { 1 } else { a[i - pa] };
            let y = if i < pb { 1 } else { b[i - pb] };
            match (x, y) {
                (x, y) if x == y => Some(x),
                (1, y) => Some(y),
                (x, 1) => Some(x),
                _ => None,
            }
        })
        .collect()
}

/// Strides of `in_shape` viewed through the broadcast to `out_shape`.
pub(crate) fn bcast_strides(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let r = out_shape.len();
    let pad = r - in_shape.len();
    let st = strides(in_shape);
    (0..r)
        .map(|i| {
            if i < pad || (in_shape[i - pad] == 1 && out_shape[i] != 1) {
                0
            } else {
                st[i - pad]
            }
        })
        .collect()
}

/// Walk every element of `shape`, yielding the flat index plus the offsets
/// under two alternative stride sets.
pub(crate) fn walk2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let r = shape.len();
    if r == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = shape[r - 1];
    let (ia, ib) = (sa[r - 1], sb[r - 1]);
    let outer = numel(shape) / inner;
    let mut idx = vec![0usize; r - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..outer {
        let base = o * inner;
        for j in 0..inner {
            f(base + j, oa + j * ia, ob + j * ib);
        }
        for ax in (0..r - 1).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            oa -= sa[ax] * shape[ax];
            ob -= sb[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

/// Sum a broadcast-shaped gradient back down to `shape`.
pub(crate) fn sum_to<F: Scalar>(g: &Tensor<F>, shape: &[usize]) -> Tensor<F> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut acc = vec![0f64; numel(shape)];
    let id = strides(g.shape());
    let bs = bcast_strides(shape, g.shape());
    let gd = g.data();
    walk2(g.shape(), &id, &bs, |_, i, o| acc[o] += gd[i].f64());
    Tensor::from_parts(shape.to_vec(), acc.into_iter().map(F::of).collect())
}

fn broadcast_binary<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    out_shape: &[usize],
    f: impl Fn(F, F) -> F,
) -> Tensor<F> {
    let (ad, bd) = (a.data(), b.data());
    if a.shape() == out_shape && b.shape() == out_shape {
        let data = ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_parts(out_shape.to_vec(), data);
    }
    let sa = bcast_strides(a.shape(), out_shape);
    let sb = bcast_strides(b.shape(), out_shape);
    let mut out = vec![F::zero(); numel(out_shape)];
    walk2(out_shape, &sa, &sb, |o, i, j| out[o] = f(ad[i], bd[j]));
    Tensor::from_parts(out_shape.to_vec(), out)
}

fn check_axes(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<()> {
    for (k, &a) in axes.iter().enumerate() {
        if a >= shape.len() || axes[..k].contains(&a) {
            return Err(Error::InvalidArgument(format!(
                "{op}: axes {axes:?} invalid for shape {shape:?}"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<F: Scalar> Tape<F> {
    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let out_shape =
            broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| Error::shape(name, ta.shape(), tb.shape()))?;
        let out = match kind {
            Binary::Add => broadcast_binary(&ta, &tb, &out_shape, |x, y| x + y),
            Binary::Sub => broadcast_binary(&ta, &tb, &out_shape, |x, y| x - y),
            Binary::Mul => broadcast_binary(&ta, &tb, &out_shape, |x, y| x * y),
        };
        self.push(name, out, &[a, b], move |g| match kind {
            Binary::Add => vec![sum_to(g, ta.shape()), sum_to(g, tb.shape())],
            Binary::Sub => vec![sum_to(g, ta.shape()), sum_to(&g.map(|v| -v), tb.shape())],
            Binary::Mul => {
                let ga = broadcast_binary(g, &tb, g.shape(), |x, y| x * y);
                let gb = broadcast_binary(g, &ta, g.shape(), |x, y| x * y);
                vec![sum_to(&ga, ta.shape()), sum_to(&gb, tb.shape())]
            }
        })
    }

    /// Elementwise sum with singleton-axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    /// Elementwise product with singleton-axis broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Pointwise map `f` with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        &mut self,
        op: &str,
        x: Var,
        f: impl Fn(F) -> F,
        df: impl Fn(F, F) -> F + 'static,
    ) -> Result<Var> {
        let tx = self.value(x).clone();
        let ty = tx.map(f);
        let ty2 = ty.clone();
        self.push(op, ty, &[x], move |g| {
            let data = g
                .data()
                .iter()
                .zip(tx.data())
                .zip(ty2.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Tensor::from_parts(g.shape().to_vec(), data)]
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, F::sigmoid, |_, y| y * (F::one() - y))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, F::tanh, |_, y| F::one() - y * y)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "relu",
            x,
            |v| if v > F::zero() { v } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        let a = F::of(alpha);
        self.unary(
            "leaky_relu",
            x,
            move |v| if v > F::zero() { v } else { a * v },
            move |x, _| if x > F::zero() { F::one() } else { a },
        )
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let k = F::of(s);
        self.unary("scale", x, move |v| v * k, move |_, _| k)
    }

    fn reduce(&mut self, op: &'static str, x: Var, axes: &[usize], keepdim: bool, mean: bool) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        check_axes(op, &in_shape, axes)?;
        let keep: Vec<usize> = in_shape
            .iter()
            .enumerate()
            .map(|(i, &e)| if axes.contains(&i) { 1 } else { e })
            .collect();
        let out_shape: Vec<usize> = if keepdim {
            keep.clone()
        } else {
            in_shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &e)| e)
                .collect()
        };
        let n: usize = axes.iter().map(|&a| in_shape[a]).product();
        let norm = if mean { 1.0 / n as f64 } else { 1.0 };
        let id = strides(&in_shape);
        let ks = bcast_strides(&keep, &in_shape);
        let mut acc = vec![0f64; numel(&keep)];
        {
            let xd = self.value(x).data();
            walk2(&in_shape, &id, &ks, |_, i, o| acc[o] += xd[i].f64());
        }
        let out = Tensor::from_parts(out_shape, acc.into_iter().map(|s| F::of(s * norm)).collect());
        self.push(op, out, &[x], move |g| {
            let f = F::of(norm);
            let gd = g.data();
            let mut gx = vec![F::zero(); numel(&in_shape)];
            walk2(&in_shape, &id, &ks, |_, i, o| gx[i] = gd[o] * f);
            vec![Tensor::from_parts(in_shape.clone(), gx)]
        })
    }

    /// Arithmetic mean over `axes` (accumulated in 64-bit).
    pub fn reduce_mean(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce("reduce_mean", x, axes, keepdim, true)
    }

    pub fn reduce_sum(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce("reduce_sum", x, axes, keepdim, false)
    }

    /// Mean over every element, as a rank-0 tensor.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce_mean(x, &axes, false)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce_sum(x, &axes, false)
    }

    /// Softmax over the trailing axis, max-subtracted.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let shape = tx.shape().to_vec();
        let n = *shape.last().ok_or_else(|| Error::InvalidArgument("softmax of a scalar".into()))?;
        let mut out = vec![F::zero(); tx.len()];
        for (row, dst) in tx.data().chunks(n).zip(out.chunks_mut(n)) {
            let m = row.iter().fold(row[0], |a, &b| a.max(b));
            let mut s = 0f64;
            for (d, &v) in dst.iter_mut().zip(row) {
                let e = (v - m).exp();
                *d = e;
                s += e.f64();
            }
            let inv = F::of(1.0 / s);
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let y = Tensor::from_parts(shape, out);
        let y2 = y.clone();
        self.push("softmax", y, &[x], move |g| {
            let mut gx = vec![F::zero(); g.len()];
            for ((gr, yr), dst) in g.data().chunks(n).zip(y2.data().chunks(n)).zip(gx.chunks_mut(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| (*a * *b).f64()).sum();
                let dot = F::of(dot);
                for ((d, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                    *d = yv * (gv - dot);
                }
            }
            vec![Tensor::from_parts(g.shape().to_vec(), gx)]
        })
    }

    /// Softmax jointly over `axes`.
    pub fn softmax(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axes("softmax", &shape, axes)?;
        if axes.is_empty() {
            return Err(Error::InvalidArgument("softmax needs at least one axis".into()));
        }
        let mut perm: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).collect();
        perm.extend_from_slice(axes);
        let permuted_shape: Vec<usize> = perm.iter().map(|&a| shape[a]).collect();
        let kept = shape.len() - axes.len();
        let mut flat: Vec<usize> = permuted_shape[..kept].to_vec();
        flat.push(axes.iter().map(|&a| shape[a]).product());
        let p = self.permute(x, &perm)?;
        let r = self.reshape(p, &flat)?;
        let s = self.softmax_last(r)?;
        let back = self.reshape(s, &permuted_shape)?;
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        self.permute(back, &inv)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let in_shape = tx.shape().to_vec();
        let out = tx.reshaped(shape)?;
        self.push("reshape", out, &[x], move |g| {
            vec![g.reshaped(&in_shape).expect("reshape backward")]
        })
    }

    /// Reorder axes: output axis `k` is input axis `perm[k]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..in_shape.len()).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(format!(
                "permutation {perm:?} invalid for rank {}",
                in_shape.len()
            )));
        }
        let out = permute_tensor(self.value(x), perm);
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        self.push("permute", out, &[x], move |g| vec![permute_tensor(g, &inv)])
    }

    /// Join along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidArgument(format!("concat axis {axis} for rank {}", base.len())));
        }
        let mut sizes = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len() && (0..s.len()).all(|i| i == axis || s[i] == base[i]);
            if !ok {
                return Err(Error::shape("concat", &base, s));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &sz) in xs.iter().zip(&sizes) {
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let t = Tensor::from_parts(out_shape, out);
        self.push("concat", t, xs, move |g| {
            let gd = g.data();
            let mut parts: Vec<Vec<F>> = sizes.iter().map(|&s| Vec::with_capacity(outer * s * inner)).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (p, &sz) in parts.iter_mut().zip(&sizes) {
                    p.extend_from_slice(&gd[off..off + sz * inner]);
                    off += sz * inner;
                }
            }
            parts
                .into_iter()
                .zip(&sizes)
                .map(|(p, &sz)| {
                    let mut s = base.clone();
                    s[axis] = sz;
                    Tensor::from_parts(s, p)
                })
                .collect()
        })
    }

    /// Contiguous range `start..start+len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let ext = shape[axis];
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = (o * ext + start) * inner;
            out.extend_from_slice(&d[b..b + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.push("slice", Tensor::from_parts(out_shape, out), &[x], move |g| {
            let mut gx = vec![F::zero(); numel(&shape)];
            let gd = g.data();
            for o in 0..outer {
                let b = (o * ext + start) * inner;
                gx[b..b + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Tensor::from_parts(shape.clone(), gx)]
        })
    }

    /// Index `axis` at `index`, dropping that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.slice(x, axis, index, 1)?;
        let mut shape = self.shape(s).to_vec();
        shape.remove(axis);
        self.reshape(s, &shape)
    }

    /// Stack equally shaped values along a new `axis`.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let mut expanded = Vec::with_capacity(xs.len());
        for &v in xs {
            let mut s = self.shape(v).to_vec();
            if axis > s.len() {
                return Err(Error::InvalidArgument(format!("stack axis {axis} for rank {}", s.len())));
            }
            s.insert(axis, 1);
            expanded.push(self.reshape(v, &s)?);
        }
        self.concat(&expanded, axis)
    }

    /// Reverse the order of entries along `axis`.
    pub fn reverse(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument(format!("reverse axis {axis} for {shape:?}")));
        }
        let out = reverse_tensor(self.value(x), axis);
        self.push("reverse", out, &[x], move |g| vec![reverse_tensor(g, axis)])
    }

    /// `(..., K) · (K, N) → (..., N)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        if sb.len() != 2 || sa.is_empty() || *sa.last().unwrap() != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = ta.len() / k;
        let mut out = vec![F::zero(); m * n];
        super::gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let mut out_shape = sa.clone();
        *out_shape.last_mut().unwrap() = n;
        self.push("matmul", Tensor::from_parts(out_shape, out), &[a, b], move |g| {
            let mut ga = vec![F::zero(); m * k];
            super::gemm(m, n, k, g.data(), false, tb.data(), true, &mut ga, false);
            let mut gb = vec![F::zero(); k * n];
            super::gemm(k, m, n, ta.data(), true, g.data(), false, &mut gb, false);
            vec![Tensor::from_parts(sa.clone(), ga), Tensor::from_parts(sb.clone(), gb)]
        })
    }

    /// Batched product `(S, M, K) · (S, K, N)`, or `(S, M, K) · (S, N, K)ᵀ`
    /// when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(Error::shape("bmm", &sa, &sb));
        }
        let (s, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![F::zero(); s * m * n];
        for i in 0..s {
            super::gemm(
                m,
                k,
                n,
                &ta.data()[i * m * k..],
                false,
                &tb.data()[i * k * n..],
                trans_b,
                &mut out[i * m * n..],
                false,
            );
        }
        self.push("bmm", Tensor::from_parts(vec![s, m, n], out), &[a, b], move |g| {
            let gd = g.data();
            let mut ga = vec![F::zero(); s * m * k];
            let mut gb = vec![F::zero(); s * k * n];
            for i in 0..s {
                let gi = &gd[i * m * n..];
                let ai = &ta.data()[i * m * k..];
                let bi = &tb.data()[i * k * n..];
                // dA = dC · op(B)ᵀ
                super::gemm(m, n, k, gi, false, bi, !trans_b, &mut ga[i * m * k..], false);
                if trans_b {
                    // dB (N×K) = dCᵀ · A
                    super::gemm(n, m, k, gi, true, ai, false, &mut gb[i * k * n..], false);
                } else {
                    // dB (K×N) = Aᵀ · dC
                    super::gemm(k, m, n, ai, true, gi, false, &mut gb[i * k * n..], false);
                }
            }
            vec![Tensor::from_parts(sa.clone(), ga), Tensor::from_parts(sb.clone(), gb)]
        })
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels.
    /// Predictions are clamped to `[1e-7, 1 - 1e-7]` before the log.
    pub fn bce(&mut self, pred: Var, labels: &Tensor<F>) -> Result<Var> {
        let tp = self.value(pred).clone();
        if tp.shape() != labels.shape() {
            return Err(Error::shape("bce", tp.shape(), labels.shape()));
        }
        if labels.data().iter().any(|&y| y != F::zero() && y != F::one()) {
            return Err(Error::InvalidArgument("bce labels must be 0 or 1".into()));
        }
        const EPS: f64 = 1e-7;
        let n = tp.len() as f64;
        let loss: f64 = tp
            .data()
            .iter()
            .zip(labels.data())
            .map(|(&p, &y)| {
                let p = p.f64().clamp(EPS, 1.0 - EPS);
                let y = y.f64();
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        let labels = labels.clone();
        self.push("bce", Tensor::scalar(F::of(loss)), &[pred], move |g| {
            let g0 = g.data()[0].f64();
            let data = tp
                .data()
                .iter()
                .zip(labels.data())
                .map(|(&p, &y)| {
                    let p = p.f64();
                    if !(EPS..=1.0 - EPS).contains(&p) {
                        return F::zero();
                    }
                    let y = y.f64();
                    F::of(g0 * (p - y) / (p * (1.0 - p)) / n)
                })
                .collect();
            vec![Tensor::from_parts(tp.shape().to_vec(), data)]
        })
    }
}

pub(crate) fn permute_tensor<F: Scalar>(x: &Tensor<F>, perm: &[usize]) -> Tensor<F> {
    let in_st = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src: Vec<usize> = perm.iter().map(|&p| in_st[p]).collect();
    let d = x.data();
    let mut out = vec![F::zero(); x.len()];
    walk2(&out_shape, &src, &src, |o, i, _| out[o] = d[i]);
    Tensor::from_parts(out_shape, out)
}

fn reverse_tensor<F: Scalar>(x: &Tensor<F>, axis: usize) -> Tensor<F> {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let ext = shape[axis];
    let d = x.data();
    let mut out = Vec::with_capacity(x.len());
    for o in 0..outer {
        for t in (0..ext).rev() {
            let b = (o * ext + t) * inner;
            out.extend_from_slice(&d[b..b + inner]);
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}
