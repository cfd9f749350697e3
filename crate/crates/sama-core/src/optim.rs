//! Adaptive-moment optimizer with decoupled weight decay.

use crate::param::ParamStore;
use crate::tensor::Tensor;

/// AdamW: first/second moment estimates with bias correction, weight
/// decay applied directly to the parameters rather than to the gradient.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let m = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        let v = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m,
            v,
        }
    }

    /// One update from the gradients currently held in the store.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let g = store.grad(id).data().to_vec();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let theta = store.value_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                theta[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps)
                    + self.weight_decay * theta[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{Init, ParamStore};

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut store = ParamStore::new(0);
        let id = store.register("w", &[3], Init::Constant(1.5));
        let mut opt = AdamW::new(&store, 0.0, 0.0);
        store.accumulate_grad(id, &Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]));
        opt.step(&mut store);
        assert_eq!(store.value(id).data(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn descends_a_quadratic() {
        // minimize (w - 3)^2 elementwise
        let mut store = ParamStore::new(0);
        let id = store.register("w", &[1], Init::Zeros);
        let mut opt = AdamW::new(&store, 0.05, 0.0);
        for _ in 0..500 {
            store.zero_grads();
            let w = store.value(id).data()[0];
            store.accumulate_grad(id, &Tensor::scalar(2.0 * (w - 3.0)));
            opt.step(&mut store);
        }
        let w = store.value(id).data()[0];
        assert!((w - 3.0).abs() < 1e-2, "w = {w}");
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut store = ParamStore::new(0);
        let id = store.register("w", &[1], Init::Constant(1.0));
        let mut opt = AdamW::new(&store, 0.1, 0.5);
        store.zero_grads();
        opt.step(&mut store);
        // theta -= lr * wd * theta = 1 - 0.05
        let w = store.value(id).data()[0];
        assert!((w - 0.95).abs() < 1e-12);
    }

    #[test]
    fn first_step_is_lr_sized() {
        // with bias correction the very first update is lr * sign(g)
        let mut store = ParamStore::new(0);
        let id = store.register("w", &[1], Init::Zeros);
        let mut opt = AdamW::new(&store, 0.01, 0.0);
        store.accumulate_grad(id, &Tensor::scalar(7.3));
        opt.step(&mut store);
        let w = store.value(id).data()[0];
        assert!((w + 0.01).abs() < 1e-6, "w = {w}");
    }
}
