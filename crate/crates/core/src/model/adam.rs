use super::stencil::ModelParameters;
use crate::error::{Error, Result};

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update from `params.grad` and zeroes the gradient. A
    /// non-finite gradient leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut ModelParameters, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::shape(format!("{} optimizer slots", params.len()), self.m.len()));
        }
        if let Some(index) = params.grad.iter().position(|g| !g.is_finite()) {
            params.zero_grad();
            return Err(Error::NonFiniteGradient { index });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = params.grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params.values[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        params.zero_grad();
        Ok(())
    }
}
