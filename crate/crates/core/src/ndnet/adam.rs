use super::ParamStore;

/// Adam with bias correction. Moment buffers and the step counter live in the
/// [`ParamStore`]; gradients are zeroed after every step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn step(&self, store: &mut ParamStore) {
        store.adam_update(self.lr, self.beta1, self.beta2, self.eps);
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(3e-4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnet::{ParamGrads, Tensor};

    fn scalar_store(w: f64) -> (ParamStore, crate::ndnet::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![w])).unwrap();
        (store, id)
    }

    fn set_grad(store: &mut ParamStore, id: crate::ndnet::ParamId, g: f64) {
        let mut grads = ParamGrads::new(1);
        grads.entry(id, 1)[0] = g;
        store.accumulate(&grads);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for (g, beta) in [(3.0, 0.9), (-0.02, 0.5), (120.0, 0.99)] {
            let (mut store, id) = scalar_store(1.0);
            set_grad(&mut store, id, g);
            Adam::new(0.01).with_betas(beta, 0.999).step(&mut store);
            let moved = store.values(id)[0] - 1.0;
            assert!((moved + 0.01 * f64::signum(g)).abs() < 1e-6, "{moved}");
            assert_eq!(store.grad(id)[0], 0.0);
            assert_eq!(store.step_count(), 1);
        }
    }

    #[test]
    fn zero_gradient_is_noop() {
        let (mut store, id) = scalar_store(0.7);
        Adam::new(0.1).step(&mut store);
        assert_eq!(store.values(id)[0], 0.7);
        assert_eq!(store.step_count(), 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let (mut store, id) = scalar_store(0.0);
        let adam = Adam::new(0.1);
        for _ in 0..500 {
            let w = store.values(id)[0];
            set_grad(&mut store, id, 2.0 * (w - 2.0));
            adam.step(&mut store);
        }
        assert!((store.values(id)[0] - 2.0).abs() < 0.01);
    }
}
