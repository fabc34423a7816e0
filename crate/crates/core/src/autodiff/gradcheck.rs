//! Central finite-difference gradient checking, used by the op tests and
//! available for model-level probes.

use super::{Shape, Tape, Var};

/// Central-difference gradient of `loss` at `x`.
pub fn numeric_gradient<F>(x: &[f64], mut loss: F, eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let hi = loss(&probe);
        probe[i] = x[i] - eps;
        let lo = loss(&probe);
        probe[i] = x[i];
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}

/// Analytic gradient of the scalar produced by `build` with respect to a
/// single parameter leaf of the given shape.
pub fn analytic_gradient<F>(x: &[f64], shape: Shape, build: F) -> Vec<f64>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let p = tape.param(shape, x.to_vec());
    let loss = build(&mut tape, p);
    let grads = tape.backward(loss).expect("scalar loss");
    grads
        .get(p)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()])
}

/// Worst-case relative error between two gradients, with an absolute floor
/// so near-zero entries compare absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Compare analytic and central-difference gradients of the graph built by
/// `build`, returning the worst relative error across components.
pub fn check<F>(x: &[f64], shape: Shape, build: F, eps: f64) -> f64
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let analytic = analytic_gradient(x, shape, &build);
    let numeric = numeric_gradient(
        x,
        |probe| {
            let mut tape = Tape::new();
            let p = tape.param(shape, probe.to_vec());
            let loss = build(&mut tape, p);
            tape.value_scalar(loss)
        },
        eps,
    );
    max_relative_error(&analytic, &numeric)
}
