use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

impl<F: Scalar> Tape<F> {
    /// Non-overlapping 3D max pooling over `(B, T, H, W, C)` with
    /// window = stride = `window`. Ties route the gradient to the first
    /// element of the window in `(t, h, w)` order.
    pub fn maxpool3d(&mut self, x: Var, window: [usize; 3]) -> Result<Var> {
        let tx = self.value(x).clone();
        let s = tx.shape().to_vec();
        if s.len() != 5 {
            return Err(Error::shape("maxpool3d", &s, &[0, 0, 0, 0, 0]));
        }
        let [pt, ph, pw] = window;
        if pt == 0 || ph == 0 || pw == 0 || !s[1].is_multiple_of(pt) || !s[2].is_multiple_of(ph) || !s[3].is_multiple_of(pw) {
            return Err(Error::InvalidArgument(format!(
                "maxpool3d window {window:?} does not divide extents {s:?}"
            )));
        }
        let (b, t, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
        let (to, ho, wo) = (t / pt, h / ph, w / pw);
        let out_len = b * to * ho * wo * c;
        let mut out = vec![F::zero(); out_len];
        let mut arg = vec![0usize; out_len];
        let xd = tx.data();
        let mut o = 0;
        for bi in 0..b {
            for ti in 0..to {
                for hi in 0..ho {
                    for wi in 0..wo {
                        for ci in 0..c {
                            let mut best = usize::MAX;
                            for dt in 0..pt {
                                for dh in 0..ph {
                                    for dw in 0..pw {
                                        let idx = ((((bi * t + ti * pt + dt) * h + hi * ph + dh) * w)
                                            + wi * pw
                                            + dw)
                                            * c
                                            + ci;
                                        if best == usize::MAX || xd[idx] > xd[best] {
                                            best = idx;
                                        }
                                    }
                                }
                            }
                            out[o] = xd[best];
                            arg[o] = best;
                            o += 1;
                        }
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![b, to, ho, wo, c], out);
        let n_in = tx.len();
        self.push("maxpool3d", value, &[x], move |g| {
            let mut gx = vec![F::zero(); n_in];
            for (&src, &gv) in arg.iter().zip(g.data()) {
                gx[src] += gv;
            }
            vec![Tensor::from_parts(s.clone(), gx)]
        })
    }
}
