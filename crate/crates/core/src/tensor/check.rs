//! Central finite-difference gradient checking in `f64`.

use alloc::vec::Vec;

use super::{Tape, Tensor, TensorError, Var};
use crate::rng::SquaresRng;

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over inputs.
    pub max_rel_error: f64,
    /// Input at which it occurred.
    pub worst_input: usize,
}

/// Compare the tape's gradients of `f` against central differences.
///
/// `f` may return a tensor of any shape; it is contracted with fixed random
/// weights to a scalar so that every output element contributes. Each input
/// element is perturbed by `±h` and `f` is re-evaluated on a fresh tape.
/// Gradients whose norms are both below `1e-10` count as agreeing.
pub fn gradient_check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let weights = |shape: &[usize]| {
        let mut rng = SquaresRng::new(0x6772_6164);
        let n = super::numel(shape);
        Tensor::<f64>::new(shape, (0..n).map(|_| rng.normal()).collect())
    };
    let eval = |xs: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let w = weights(tape.shape(out))?;
        Ok(tape.value(out).data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let w = tape.constant(weights(tape.shape(out))?);
    let prod = tape.mul(out, w)?;
    let loss = tape.sum_all(prod)?;
    let grads = tape.grad(loss, &vars)?;

    let mut result = GradCheck { max_rel_error: 0.0, worst_input: 0 };
    let mut xs = inputs.to_vec();
    for (idx, g) in grads.iter().enumerate() {
        let analytic = tape.value(*g).data().to_vec();
        let mut diff2 = 0.0;
        let mut an2 = 0.0;
        let mut nu2 = 0.0;
        for e in 0..xs[idx].len() {
            let orig = xs[idx].data()[e];
            xs[idx].data_mut()[e] = orig + h;
            let up = eval(&xs)?;
            xs[idx].data_mut()[e] = orig - h;
            let down = eval(&xs)?;
            xs[idx].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            diff2 += (analytic[e] - numeric) * (analytic[e] - numeric);
            an2 += analytic[e] * analytic[e];
            nu2 += numeric * numeric;
        }
        let scale = libm::sqrt(an2.max(nu2));
        let rel = if scale < 1e-10 { 0.0 } else { libm::sqrt(diff2) / scale };
        if rel > result.max_rel_error {
            result = GradCheck { max_rel_error: rel, worst_input: idx };
        }
    }
    Ok(result)
}
