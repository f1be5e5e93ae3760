use rand::Rng;

use super::{init::glorot_uniform, Activation, Bound, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Fully connected layer `y = act(x · W + b)` over the trailing axis.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            glorot_uniform(&[inputs, outputs], inputs, outputs, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self {
            weight,
            bias,
            inputs,
            outputs,
            activation,
        }
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.last() != Some(&self.inputs) {
            return Err(Error::shape("dense", s, &[self.inputs, self.outputs]));
        }
        let y = tape.matmul(x, p[self.weight])?;
        let y = tape.add(y, p[self.bias])?;
        self.activation.apply(tape, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let layer = DenseLayer::new(&mut store, "d", 3, 3, Activation::Linear, &mut rng);
        store.set(layer.weight, Tensor::from_fn(&[3, 3], |i| (i[0] == i[1]) as u8 as f64));
        let mut t = Tape::new();
        let p = store.bind(&mut t);
        let x = t.leaf(Tensor::new(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap());
        let y = layer.forward(&mut t, &p, x).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn sigmoid_output_in_unit_interval_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f32>::new();
        let layer = DenseLayer::new(&mut store, "out", 2, 3, Activation::Sigmoid, &mut rng);
        assert_eq!(store.count(), 9);
        let mut t = Tape::inference();
        let p = store.bind(&mut t);
        let x = t.leaf(Tensor::new(&[1, 2], vec![5.0, -3.0]).unwrap());
        let y = layer.forward(&mut t, &p, x).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
        let bad = t.leaf(Tensor::zeros(&[1, 4]));
        assert!(layer.forward(&mut t, &p, bad).is_err());
    }
}
