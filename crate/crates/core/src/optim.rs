//! Adam with bias correction, operating on the model's tensor list.

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed updates; bias correction uses `t + 1` internally.
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// Moment buffers shaped after `params`, in its visit order.
    pub fn new(params: &ModelParams) -> Self {
        let mut m = Vec::new();
        params.clone().visit_mut(|_, t| m.push(vec![0.0; t.len()]));
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: m.clone(),
            v: m,
        }
    }

    /// One update. `grads` is aligned with the params' visit order; `None`
    /// means the tensor did not appear in the loss and gets a zero gradient.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Option<Vec<f64>>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut idx = 0;
        params.visit_mut(|_, tensor| {
            assert!(idx < grads.len(), "gradient list shorter than params");
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            assert_eq!(m.len(), tensor.len(), "parameter shape changed");
            match &grads[idx] {
                Some(g) => {
                    assert_eq!(g.len(), tensor.len());
                    for i in 0..tensor.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        tensor[i] -= lr * mh / (vh.sqrt() + self.eps);
                    }
                }
                None => {
                    for i in 0..tensor.len() {
                        m[i] *= self.beta1;
                        v[i] *= self.beta2;
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        tensor[i] -= lr * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
            idx += 1;
        });
        assert_eq!(idx, grads.len(), "gradient list longer than params");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Hyperparams;

    fn tiny_params() -> ModelParams {
        let mut hp = Hyperparams::default();
        hp.n_s = 3;
        hp.n_s_star = 3;
        hp.n_phase = vec![2];
        ModelParams::init(hp, 1)
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut params = tiny_params();
        let mut names = Vec::new();
        params.clone().visit_mut(|n, t| names.push((n.to_string(), t.len())));
        let wp = names.iter().position(|(n, _)| n == "w_p").unwrap();

        let before = params.w_p[0];
        let grads: Vec<Option<Vec<f64>>> = names
            .iter()
            .enumerate()
            .map(|(i, (_, len))| (i == wp).then(|| vec![3.7; *len]))
            .collect();
        let mut adam = Adam::new(&params);
        adam.step(&mut params, &grads, 0.01);
        // bias-corrected first step is lr * g / (|g| + eps), i.e. almost lr
        let moved = before - params.w_p[0];
        assert!((moved - 0.01).abs() < 1e-8, "moved {moved}");
    }

    #[test]
    fn zero_gradient_layers_stay_put() {
        let mut params = tiny_params();
        let snapshot = params.clone();
        let mut n = 0;
        params.clone().visit_mut(|_, _| n += 1);
        let grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut adam = Adam::new(&params);
        for _ in 0..5 {
            adam.step(&mut params, &grads, 0.1);
        }
        let mut same = true;
        let mut a = Vec::new();
        params.visit_mut(|_, t| a.push(t.clone()));
        let mut b = Vec::new();
        snapshot.clone().visit_mut(|_, t| b.push(t.clone()));
        for (x, y) in a.iter().zip(&b) {
            same &= x == y;
        }
        assert!(same);
    }

    #[test]
    fn momentum_keeps_moving_after_gradient_stops() {
        let mut params = tiny_params();
        let mut names = Vec::new();
        params.clone().visit_mut(|n, t| names.push((n.to_string(), t.len())));
        let wp = names.iter().position(|(n, _)| n == "w_p").unwrap();
        let with_grad: Vec<Option<Vec<f64>>> = names
            .iter()
            .enumerate()
            .map(|(i, (_, len))| (i == wp).then(|| vec![1.0; *len]))
            .collect();
        let without: Vec<Option<Vec<f64>>> = vec![None; names.len()];

        let mut adam = Adam::new(&params);
        adam.step(&mut params, &with_grad, 0.01);
        let after_one = params.w_p[0];
        adam.step(&mut params, &without, 0.01);
        assert!(params.w_p[0] < after_one, "momentum should carry the step");
    }
}
