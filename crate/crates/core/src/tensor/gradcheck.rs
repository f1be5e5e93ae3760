use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_scalar<Fun>(f: &Fun, inputs: &[Tensor<f64>]) -> Result<f64>
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    let y = v.data()[0];
    if !y.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    Ok(y)
}

/// Compare reverse-mode gradients against central differences for selected
/// `(input, element)` pairs. Returns the maximum relative error.
pub fn grad_check_at<Fun>(f: Fun, inputs: &[Tensor<f64>], picks: &[(usize, usize)], eps: f64) -> Result<f64>
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "grad_check needs a scalar function, got shape {:?}",
            tape.value(out).shape()
        )));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();
    drop(tape);

    let mut worst = 0f64;
    let mut perturbed = inputs.to_vec();
    for &(which, elem) in picks {
        let orig = inputs[which].data()[elem];
        perturbed[which].data_mut()[elem] = orig + eps;
        let up = eval_scalar(&f, &perturbed)?;
        perturbed[which].data_mut()[elem] = orig - eps;
        let down = eval_scalar(&f, &perturbed)?;
        perturbed[which].data_mut()[elem] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[which].data()[elem], numeric));
    }
    Ok(worst)
}

/// Maximum relative error between analytic and central-difference gradients
/// of the scalar function `f` over every element of `x`.
pub fn grad_check<Fun>(f: Fun, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    Fun: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let picks: Vec<(usize, usize)> = (0..x.len()).map(|i| (0, i)).collect();
    grad_check_at(|t, v| f(t, v[0]), std::slice::from_ref(x), &picks, eps)
}
