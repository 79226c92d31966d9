use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-5,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| s.ids().map(|id| vec![0.0; s.value(id).numel()]).collect();
        AdamW {
            cfg,
            step: 0,
            first: zeros(store),
            second: zeros(store),
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the store's accumulated gradients. Gradients
    /// are left in place; callers zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let (value, grad) = store.value_and_grad_mut(id);
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            for (((p, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
                *p -= c.lr * (update + c.weight_decay * *p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let w = store.register("w", Tensor::vector(vec![3.0, -2.0])).unwrap();
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.1,
                weight_decay: 0.0,
                ..Default::default()
            },
            &store,
        );
        for _ in 0..300 {
            store.zero_grads();
            let tape = Tape::new();
            let x = tape.param(&store, w);
            x.mul(x).unwrap().sum().backward().unwrap();
            store.accumulate_grads(&tape);
            opt.step(&mut store);
        }
        assert!(store.value(w).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn weight_decay_is_decoupled() {
        // zero gradient: only the decay term moves the parameter
        let mut store = ParamStore::new();
        let w = store.register("w", Tensor::vector(vec![2.0])).unwrap();
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.5,
                weight_decay: 0.1,
                ..Default::default()
            },
            &store,
        );
        opt.step(&mut store);
        assert!((store.value(w).data()[0] - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-12);
    }
}
