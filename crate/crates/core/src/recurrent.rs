//! ConvLSTM cell, sequence unrolling, and the bidirectional wrapper.
//!
//! Gates are laid out `(input, forget, cell, output)` along the channel axis
//! of the fused `4·F` pre-activation; no peephole terms.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, Bound, Padding, ParamId, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Hidden and cell state, each `(B, H, W, F)`.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentState {
    pub hidden: Var,
    pub cell: Var,
}

#[derive(Clone, Debug)]
pub struct ConvLstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub filters: usize,
    pub kernel: [usize; 2],
}

impl ConvLstm {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        inputs: usize,
        filters: usize,
        kernel: [usize; 2],
        rng: &mut R,
    ) -> Result<Self> {
        if kernel.iter().any(|k| k % 2 == 0) || filters == 0 {
            return Err(Error::InvalidSpec(format!(
                "{name}: ConvLSTM needs odd kernel extents and F > 0, got {kernel:?}, F={filters}"
            )));
        }
        let [kh, kw] = kernel;
        let gates = 4 * filters;
        Ok(Self {
            w_input: store.add(
                format!("{name}.w_input"),
                glorot_uniform(&[kh, kw, inputs, gates], kh * kw * inputs, kh * kw * gates, rng),
            ),
            w_hidden: store.add(
                format!("{name}.w_hidden"),
                glorot_uniform(&[kh, kw, filters, gates], kh * kw * filters, kh * kw * gates, rng),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[gates])),
            inputs,
            filters,
            kernel,
        })
    }

    pub fn zero_state<F: Scalar>(&self, tape: &mut Tape<F>, batch: usize, h: usize, w: usize) -> RecurrentState {
        let shape = [batch, h, w, self.filters];
        RecurrentState {
            hidden: tape.leaf(Tensor::zeros(&shape)),
            cell: tape.leaf(Tensor::zeros(&shape)),
        }
    }

    /// One recurrence step on `x_t (B, H, W, Cin)`.
    pub fn step<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        x_t: Var,
        state: RecurrentState,
    ) -> Result<RecurrentState> {
        let xs = tape.shape(x_t).to_vec();
        let hs = tape.shape(state.hidden).to_vec();
        let fl = self.filters;
        if xs.len() != 4
            || xs[3] != self.inputs
            || hs.len() != 4
            || hs[..3] != xs[..3]
            || hs[3] != fl
            || tape.shape(state.cell) != hs.as_slice()
        {
            return Err(Error::shape("convlstm_step", &xs, &hs));
        }
        let [kh, kw] = self.kernel;
        let (b, h, w) = (xs[0], xs[1], xs[2]);
        let x5 = tape.reshape(x_t, &[b, 1, h, w, self.inputs])?;
        let wi = tape.reshape(p[self.w_input], &[1, kh, kw, self.inputs, 4 * fl])?;
        let gx = tape.conv3d(x5, wi, Some(p[self.bias]), Padding::Same)?;
        let h5 = tape.reshape(state.hidden, &[b, 1, h, w, fl])?;
        let wh = tape.reshape(p[self.w_hidden], &[1, kh, kw, fl, 4 * fl])?;
        let gh = tape.conv3d(h5, wh, None, Padding::Same)?;
        let gates = tape.add(gx, gh)?;
        let gates = tape.reshape(gates, &[b, h, w, 4 * fl])?;

        let i = tape.slice(gates, 3, 0, fl)?;
        let f = tape.slice(gates, 3, fl, fl)?;
        let g = tape.slice(gates, 3, 2 * fl, fl)?;
        let o = tape.slice(gates, 3, 3 * fl, fl)?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let g = tape.tanh(g)?;
        let o = tape.sigmoid(o)?;

        let keep = tape.mul(f, state.cell)?;
        let write = tape.mul(i, g)?;
        let cell = tape.add(keep, write)?;
        let squashed = tape.tanh(cell)?;
        let hidden = tape.mul(o, squashed)?;
        Ok(RecurrentState { hidden, cell })
    }

    /// Unroll over `x (B, T, H, W, Cin)` from a zero state. Returns every
    /// hidden state `(B, T, H, W, F)` or only the last `(B, H, W, F)`.
    pub fn sequence<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound, x: Var, return_sequence: bool) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 5 {
            return Err(Error::shape("convlstm_sequence", &s, &[0, 0, 0, 0, self.inputs]));
        }
        if s[1] == 0 {
            return Err(Error::InvalidArgument("convlstm_sequence over zero timesteps".into()));
        }
        let mut state = self.zero_state(tape, s[0], s[2], s[3]);
        let mut hidden = Vec::with_capacity(s[1]);
        for t in 0..s[1] {
            let x_t = tape.select(x, 1, t)?;
            state = self.step(tape, p, x_t, state)?;
            hidden.push(state.hidden);
        }
        if return_sequence {
            tape.stack(&hidden, 1)
        } else {
            Ok(state.hidden)
        }
    }
}

/// Forward and time-reversed passes concatenated on channels (forward first),
/// both returned as full sequences in ascending time: `(B, T, H, W, 2F)`.
pub fn biconvlstm<F: Scalar>(
    tape: &mut Tape<F>,
    p: &Bound,
    forward: &ConvLstm,
    backward: &ConvLstm,
    x: Var,
) -> Result<Var> {
    if forward.filters != backward.filters || forward.kernel != backward.kernel || forward.inputs != backward.inputs {
        return Err(Error::InvalidSpec(format!(
            "bidirectional halves disagree: F {} vs {}, kernel {:?} vs {:?}",
            forward.filters, backward.filters, forward.kernel, backward.kernel
        )));
    }
    let fwd = forward.sequence(tape, p, x, true)?;
    let rev = tape.reverse(x, 1)?;
    let bwd = backward.sequence(tape, p, rev, true)?;
    let bwd = tape.reverse(bwd, 1)?;
    tape.concat(&[fwd, bwd], 4)
}
