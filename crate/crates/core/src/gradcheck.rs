//! Central finite-difference oracle shared by unit tests.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Norm-wise relative error between reverse-mode and central-difference
/// gradients of the scalar built by `f`, over every entry of every input.
pub(crate) fn check<F>(inputs: &[(&str, Tensor)], step: f64, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs
        .iter()
        .map(|(n, t)| tape.leaf(*n, t.clone()))
        .collect();
    let loss = f(&tape, &vars).expect("forward");
    let grads = tape.backward(loss).expect("backward");

    let eval = |values: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).expect("forward").value().item()
    };

    let (mut diff2, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    for (k, (name, t)) in inputs.iter().enumerate() {
        let analytic = grads.get(name).expect("leaf gradient");
        for i in 0..t.len() {
            let orig = values[k].data()[i];
            values[k].data_mut()[i] = orig + step;
            let plus = eval(&values);
            values[k].data_mut()[i] = orig - step;
            let minus = eval(&values);
            values[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            diff2 += (a - numeric).powi(2);
            norm_a += a * a;
            norm_n += numeric * numeric;
        }
    }
    diff2.sqrt() / (norm_a.sqrt() + norm_n.sqrt()).max(1e-12)
}

pub(crate) fn random_tensor(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}
