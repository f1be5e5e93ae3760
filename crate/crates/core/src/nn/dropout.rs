use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Inverted dropout: in training, zero each element with probability `rate`
/// and scale survivors by `1 / (1 - rate)`. Identity at inference.
pub fn dropout<F: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<F>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x);
    }
    let keep = F::of(1.0 / (1.0 - rate));
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<F> = (0..n)
        .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
        .collect();
    let m = tape.leaf(Tensor::new(&shape, mask)?);
    tape.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_cases_are_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::from_fn(&[3, 4], |i| (i[0] as f32 - 1.3) * (i[1] as f32 + 0.7)));
        let y = dropout(&mut t, x, 0.5, Mode::Infer, &mut rng).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let y = dropout(&mut t, x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(t.value(y), t.value(x));
        assert!(dropout(&mut t, x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn survivor_fraction_and_mean_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::full(&[10_000], 1.0));
        let y = dropout(&mut t, x, 0.5, Mode::Train, &mut rng).unwrap();
        let out = t.value(y);
        let survivors = out.data().iter().filter(|&&v| v != 0.0).count() as f64 / 10_000.0;
        assert!((survivors - 0.5).abs() <= 0.02, "{survivors}");
        assert!((out.mean_f64() - 1.0).abs() <= 0.02, "{}", out.mean_f64());
    }
}
