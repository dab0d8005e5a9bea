//! First-order optimizers over a flat view of the network parameters.

use serde::{Deserialize, Serialize};

use super::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, num_params: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { num_params } else { 0 };
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
            steps: 0,
        }
    }

    /// Applies one descent step of `grads` to `params`.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams) {
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.values_mut().zip(grads.values()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                let iter = params
                    .values_mut()
                    .zip(grads.values())
                    .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()));
                for ((p, &g), (m, v)) in iter {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                }
            }
        }
    }
}
