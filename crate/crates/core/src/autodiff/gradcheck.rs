//! Central finite-difference gradient checking.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Largest discrepancy between the tape gradient of `f` at `point` and a
/// central-difference estimate with step `h`.
///
/// Per coordinate the error is `|analytic - numeric| / max(1, |numeric|)`;
/// the maximum over all coordinates of all inputs is returned.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|p| tape.var(p.clone())).collect();
        f(&tape, &vars)?.backward()?;
        vars.iter().map(Var::grad).collect::<Vec<_>>()
    };
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        f(&tape, &vars)?.item()
    };
    let mut worst = 0.0_f64;
    let mut shifted: Vec<Tensor> = point.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for c in 0..point[k].len() {
            let orig = point[k].data()[c];
            shifted[k].data_mut()[c] = orig + h;
            let up = eval(&shifted)?;
            shifted[k].data_mut()[c] = orig - h;
            let down = eval(&shifted)?;
            shifted[k].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (grad.data()[c] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
