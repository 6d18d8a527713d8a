use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::{round_to_precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed group of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    ids: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, config: AdamConfig) -> Self {
        let m = ids.iter().map(|&id| Tensor::zeros(store.value(id).shape())).collect();
        let v = ids.iter().map(|&id| Tensor::zeros(store.value(id).shape())).collect();
        Adam {
            config,
            steps: 0,
            ids,
            m,
            v,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn moments_mut(&mut self) -> (&mut [Tensor], &mut [Tensor]) {
        (&mut self.m, &mut self.v)
    }

    /// Applies one bias-corrected update from the stored gradients, then
    /// zeroes those gradients.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.steps += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((&id, m), v) in self.ids.iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = store.grad(id).clone();
            let value = store.value_mut(id);
            for (((p, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
            round_to_precision(value.data_mut());
            store.grad_mut(id).data_mut().fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    fn quadratic_step(theta: f64) -> f64 {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::from_vec(vec![theta]));
        let mut adam = Adam::new(&store, vec![id], AdamConfig { lr: 0.1, ..Default::default() });
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let sq = g.square(x);
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        store.accumulate_all(&g);
        adam.step(&mut store);
        assert!(store.grad(id).data().iter().all(|&v| v == 0.0));
        store.value(id).data()[0]
    }

    #[test]
    fn step_descends_quadratic() {
        let next = quadratic_step(1.0);
        assert!(next < 1.0);
        // First Adam step moves by lr regardless of gradient scale.
        assert!((next - 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::from_vec(vec![0.7, -2.0]));
        let mut adam = Adam::new(&store, vec![id], AdamConfig::default());
        adam.step(&mut store);
        assert_eq!(store.value(id).data(), &[0.7, -2.0]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        assert_eq!(quadratic_step(1.3).to_bits(), quadratic_step(1.3).to_bits());
    }
}
