use rand::Rng;

use super::{init::glorot_uniform, Activation, Bound, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{gemm, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2` on each side; odd kernels keep extents.
    Same,
    Valid,
}

/// Stride-1 convolution geometry over `(B, T, H, W, Cin)` inputs.
#[derive(Clone, Copy, Debug)]
struct Geom {
    b: usize,
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    pt: usize,
    ph: usize,
    pw: usize,
    to: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(x: &[usize], k: &[usize], padding: Padding) -> Result<Self> {
        if x.len() != 5 || k.len() != 5 || x[4] != k[3] {
            return Err(Error::shape("conv3d", x, k));
        }
        let (kt, kh, kw) = (k[0], k[1], k[2]);
        let (pt, ph, pw) = match padding {
            Padding::Same => {
                if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "same padding needs odd kernel extents, got {k:?}"
                    )));
                }
                (kt / 2, kh / 2, kw / 2)
            }
            Padding::Valid => {
                if x[1] < kt || x[2] < kh || x[3] < kw {
                    return Err(Error::shape("conv3d (valid)", x, k));
                }
                (0, 0, 0)
            }
        };
        Ok(Self {
            b: x[0],
            t: x[1],
            h: x[2],
            w: x[3],
            cin: x[4],
            kt,
            kh,
            kw,
            cout: k[4],
            pt,
            ph,
            pw,
            to: x[1] + 2 * pt + 1 - kt,
            ho: x[2] + 2 * ph + 1 - kh,
            wo: x[3] + 2 * pw + 1 - kw,
        })
    }

    fn patch_len(&self) -> usize {
        self.kt * self.kh * self.kw * self.cin
    }

    fn rows(&self) -> usize {
        self.ho * self.wo
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.b, self.to, self.ho, self.wo, self.cout]
    }

    /// Source offset of input frame `(bi, ti)`, or `None` when padded.
    fn frame(&self, bi: usize, to: usize, dt: usize) -> Option<usize> {
        let ti = (to + dt).checked_sub(self.pt).filter(|&ti| ti < self.t)?;
        Some((bi * self.t + ti) * self.h * self.w * self.cin)
    }

    /// Gather the receptive fields of output slice `(bi, to)` into rows of
    /// `patch_len()` values ordered `(kt, kh, kw, cin)`.
    fn im2col<F: Scalar>(&self, x: &[F], bi: usize, to: usize, out: &mut [F]) {
        let k = self.patch_len();
        let cin = self.cin;
        for ho in 0..self.ho {
            for wo in 0..self.wo {
                let row = &mut out[(ho * self.wo + wo) * k..][..k];
                let mut col = 0;
                for dt in 0..self.kt {
                    let frame = self.frame(bi, to, dt);
                    for dh in 0..self.kh {
                        let hi = (ho + dh).checked_sub(self.ph).filter(|&v| v < self.h);
                        for dw in 0..self.kw {
                            let wi = (wo + dw).checked_sub(self.pw).filter(|&v| v < self.w);
                            let dst = &mut row[col..col + cin];
                            match (frame, hi, wi) {
                                (Some(f), Some(hi), Some(wi)) => {
                                    let src = f + (hi * self.w + wi) * cin;
                                    dst.copy_from_slice(&x[src..src + cin]);
                                }
                                _ => dst.iter_mut().for_each(|v| *v = F::zero()),
                            }
                            col += cin;
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add patch gradients back into the input gradient of batch
    /// element `bi` (`dx_b` covers only that element).
    fn col2im<F: Scalar>(&self, dp: &[F], to: usize, dx_b: &mut [F]) {
        let k = self.patch_len();
        let cin = self.cin;
        for ho in 0..self.ho {
            for wo in 0..self.wo {
                let row = &dp[(ho * self.wo + wo) * k..][..k];
                let mut col = 0;
                for dt in 0..self.kt {
                    let frame = self.frame(0, to, dt);
                    for dh in 0..self.kh {
                        let hi = (ho + dh).checked_sub(self.ph).filter(|&v| v < self.h);
                        for dw in 0..self.kw {
                            let wi = (wo + dw).checked_sub(self.pw).filter(|&v| v < self.w);
                            if let (Some(f), Some(hi), Some(wi)) = (frame, hi, wi) {
                                let dst = f + (hi * self.w + wi) * cin;
                                for (d, &s) in dx_b[dst..dst + cin].iter_mut().zip(&row[col..col + cin]) {
                                    *d += s;
                                }
                            }
                            col += cin;
                        }
                    }
                }
            }
        }
    }
}

impl<F: Scalar> Tape<F> {
    /// Stride-1 3D cross-correlation of `x (B,T,H,W,Cin)` with
    /// `kernel (kT,kH,kW,Cin,Cout)`, plus optional `bias (Cout)`.
    pub fn conv3d(&mut self, x: Var, kernel: Var, bias: Option<Var>, padding: Padding) -> Result<Var> {
        let tx = self.value(x).clone();
        let tk = self.value(kernel).clone();
        let g = Geom::new(tx.shape(), tk.shape(), padding)?;
        let tb = match bias {
            Some(b) => {
                let tb = self.value(b).clone();
                if tb.shape() != [g.cout] {
                    return Err(Error::shape("conv3d bias", tb.shape(), &[g.cout]));
                }
                Some(tb)
            }
            None => None,
        };

        let (rows, k, cout) = (g.rows(), g.patch_len(), g.cout);
        let mut out = vec![F::zero(); g.b * g.to * rows * cout];
        {
            let (xd, kd) = (tx.data(), tk.data());
            let bd = tb.as_ref().map(|t| t.data());
            par::for_each_chunk(&mut out, rows * cout, |c, chunk| {
                let (bi, to) = (c / g.to, c % g.to);
                let mut patches = vec![F::zero(); rows * k];
                g.im2col(xd, bi, to, &mut patches);
                gemm(rows, k, cout, &patches, false, kd, false, chunk, false);
                if let Some(bd) = bd {
                    for r in chunk.chunks_mut(cout) {
                        r.iter_mut().zip(bd).for_each(|(v, &b)| *v += b);
                    }
                }
            });
        }
        let value = Tensor::from_parts(g.out_shape(), out);

        let mut parents = vec![x, kernel];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.push("conv3d", value, &parents, move |gy| {
            let (xd, kd, gd) = (tx.data(), tk.data(), gy.data());
            let frame_len = g.t * g.h * g.w * g.cin;
            let per_batch = par::map_range(g.b, |bi| {
                let mut dx = vec![F::zero(); frame_len];
                let mut dk = vec![F::zero(); k * cout];
                let mut patches = vec![F::zero(); rows * k];
                let mut dp = vec![F::zero(); rows * k];
                for to in 0..g.to {
                    let gchunk = &gd[(bi * g.to + to) * rows * cout..][..rows * cout];
                    g.im2col(xd, bi, to, &mut patches);
                    gemm(k, rows, cout, &patches, true, gchunk, false, &mut dk, true);
                    gemm(rows, cout, k, gchunk, false, kd, true, &mut dp, false);
                    g.col2im(&dp, to, &mut dx);
                }
                (dx, dk)
            });
            let mut dx = Vec::with_capacity(g.b * frame_len);
            let mut dk = vec![F::zero(); k * cout];
            for (px, pk) in per_batch {
                dx.extend_from_slice(&px);
                dk.iter_mut().zip(&pk).for_each(|(a, &b)| *a += b);
            }
            let mut grads = vec![
                Tensor::from_parts(tx.shape().to_vec(), dx),
                Tensor::from_parts(tk.shape().to_vec(), dk),
            ];
            if has_bias {
                let mut db = vec![0f64; cout];
                for r in gd.chunks(cout) {
                    db.iter_mut().zip(r).for_each(|(a, &v)| *a += v.f64());
                }
                grads.push(Tensor::from_parts(vec![cout], db.into_iter().map(F::of).collect()));
            }
            grads
        })
    }
}

/// Conv3D with bias and an optional activation.
#[derive(Clone, Debug)]
pub struct Conv3dLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub kernel_shape: [usize; 5],
    pub padding: Padding,
    pub activation: Activation,
}

impl Conv3dLayer {
    /// Register a Glorot-initialized kernel and zero bias under `name`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        kernel: [usize; 3],
        cin: usize,
        cout: usize,
        padding: Padding,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if padding == Padding::Same && kernel.iter().any(|k| k % 2 == 0) {
            return Err(Error::InvalidArgument(format!(
                "{name}: same padding needs odd kernel extents, got {kernel:?}"
            )));
        }
        let shape = [kernel[0], kernel[1], kernel[2], cin, cout];
        let taps = kernel[0] * kernel[1] * kernel[2];
        let k = store.add(format!("{name}.kernel"), glorot_uniform(&shape, taps * cin, taps * cout, rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Ok(Self {
            kernel: k,
            bias: b,
            kernel_shape: shape,
            padding,
            activation,
        })
    }

    pub fn cout(&self) -> usize {
        self.kernel_shape[4]
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv3d(x, p[self.kernel], Some(p[self.bias]), self.padding)?;
        self.activation.apply(tape, y)
    }
}
