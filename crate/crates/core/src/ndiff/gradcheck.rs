//! Central-difference verification of recorded gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Max over coordinates of `|analytic − numeric| / max(1, |numeric|)`.
///
/// `f` builds a scalar from the given input on a fresh tape; it is called
/// once with a differentiable leaf and twice per coordinate with perturbed
/// constants.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(
        |tape: &mut Tape, vars: &[Var]| f(tape, vars[0]),
        std::slice::from_ref(x),
        h,
    )
}

/// [`grad_check`] over several inputs at once.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::contract("grad_check requires h > 0"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
    let root = f(&mut tape, &vars)?;
    if !tape.value(root).item().is_finite() {
        return Err(Error::Evaluation { coordinate: 0 });
    }
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf gradient"))
        .collect();

    let eval = |inputs: &[Tensor], coordinate: usize| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let root = f(&mut tape, &vars)?;
        let v = tape.value(root).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation { coordinate })
        }
    };

    let mut worst: f64 = 0.0;
    let mut inputs = xs.to_vec();
    let mut coordinate = 0;
    for (k, grad) in analytic.iter().enumerate() {
        for e in 0..inputs[k].numel() {
            let orig = inputs[k].data()[e];
            inputs[k].data_mut()[e] = orig + h;
            let plus = eval(&inputs, coordinate)?;
            inputs[k].data_mut()[e] = orig - h;
            let minus = eval(&inputs, coordinate)?;
            inputs[k].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (grad.data()[e] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
            coordinate += 1;
        }
    }
    Ok(worst)
}
