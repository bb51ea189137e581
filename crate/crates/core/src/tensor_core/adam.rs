use serde::{Deserialize, Serialize};

use super::tensor::ParamStore;
use crate::error::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 2e-5;
    pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-5;

    /// Zeroed moments shaped after every parameter in `store`.
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            lr: Self::DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: Self::DEFAULT_WEIGHT_DECAY,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// One update from the gradients stored on each parameter, at learning rate
    /// `lr` (falls back to `self.lr`). Parameters without a gradient buffer are
    /// treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, lr: Option<f64>) -> Result<()> {
        if store.len() != self.first_moment.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first_moment.len(),
                store.len()
            )));
        }
        for (id, name, t) in store.iter() {
            if self.first_moment[id.index()].len() != t.numel() {
                return Err(Error::Dimension(format!("optimizer state for `{name}` has the wrong size")));
            }
            if let Some(g) = t.grad() {
                let bad = g.iter().filter(|x| !x.is_finite()).count();
                if bad > 0 {
                    return Err(Error::NonFiniteGradient { name: name.to_string(), count: bad });
                }
            }
        }

        self.step_count += 1;
        let lr = lr.unwrap_or(self.lr);
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);

        for (i, tensor) in store.tensors_mut().enumerate() {
            let grad = tensor.grad().map(<[f64]>::to_vec);
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, theta) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *theta);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::Tensor;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.insert("theta", Tensor::new(vec![1], vec![value]).unwrap()).unwrap();
        store.get_mut(id).accumulate_grad(&[grad], 1.0).unwrap();
        store
    }

    #[test]
    fn defaults() {
        let s = AdamState::new(&ParamStore::new());
        assert_eq!(s.lr, 2e-5);
        assert_eq!(s.weight_decay, 1e-5);
    }

    #[test]
    fn zero_gradient_applies_only_weight_decay() {
        let mut store = single(3.0, 0.0);
        let mut adam = AdamState::new(&store).with_lr(0.1).with_weight_decay(0.01);
        adam.step(&mut store, None).unwrap();
        let after = store.by_name("theta").unwrap().data()[0];
        assert!((after - (3.0 - 0.1 * 0.01 * 3.0)).abs() < 1e-15);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn unit_gradient_single_step() {
        let mut store = single(0.0, 1.0);
        let mut adam = AdamState::new(&store).with_lr(0.1).with_weight_decay(0.0);
        adam.step(&mut store, None).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let after = store.by_name("theta").unwrap().data()[0];
        assert!((after + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        // f(x) = (x - 2)^2, gradient 2(x - 2)
        let mut store = single(5.0, 0.0);
        let mut adam = AdamState::new(&store).with_lr(0.1).with_weight_decay(0.0);
        let mut prev = 9.0;
        for _ in 0..2 {
            let x = store.by_name("theta").unwrap().data()[0];
            let id = store.id("theta").unwrap();
            store.get_mut(id).zero_grad();
            store.get_mut(id).accumulate_grad(&[2.0 * (x - 2.0)], 1.0).unwrap();
            adam.step(&mut store, None).unwrap();
            let x = store.by_name("theta").unwrap().data()[0];
            let f = (x - 2.0) * (x - 2.0);
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = single(1.0, f64::NAN);
        let mut adam = AdamState::new(&store);
        match adam.step(&mut store, None) {
            Err(Error::NonFiniteGradient { name, count }) => {
                assert_eq!(name, "theta");
                assert_eq!(count, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(store.by_name("theta").unwrap().data()[0], 1.0);
        assert_eq!(adam.step_count, 0);
    }
}
