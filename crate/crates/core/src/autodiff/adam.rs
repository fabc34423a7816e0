use serde::{Deserialize, Serialize};

/// First and second moment estimates for one parameter array.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One Adam update with bias correction. `t` is the 1-based global
    /// update count, shared by all parameter arrays.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, t: u64) {
        assert_eq!(params.len(), self.m.len(), "adam: parameter length changed");
        assert_eq!(params.len(), grad.len(), "adam: gradient length mismatch");
        assert!(t >= 1, "adam: update count is 1-based");
        let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Learning rate annealed log-linearly from `lr_start` to `lr_end` over the
/// first `anneal_updates` updates, constant at `lr_end` afterwards.
/// `update` is 0-based.
pub fn lr_schedule(update: u64, lr_start: f64, lr_end: f64, anneal_updates: u64) -> f64 {
    if anneal_updates == 0 || update >= anneal_updates {
        return lr_end;
    }
    let frac = update as f64 / anneal_updates as f64;
    let log_lr = lr_start.ln() + frac * (lr_end.ln() - lr_start.ln());
    log_lr.exp()
}
