//! Stochastic gradient descent with momentum and L2 weight decay.

use std::collections::HashMap;

use crate::module::Param;

/// Plain SGD: `g = grad + weight_decay * p`, `v = momentum * v + g`,
/// `p = p - lr * v`, with `v` starting at zero.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: HashMap<String, Vec<f32>>,
}

impl Sgd {
    pub fn new(learning_rate: f32, momentum: f32, weight_decay: f32) -> Self {
        Sgd {
            learning_rate,
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    /// Update one named parameter from its accumulated gradient.
    pub fn update(&mut self, name: &str, param: &mut Param) {
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; param.value.len()]);
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        let grads = param.grad.data();
        for ((p, &g), vel) in param.value.data_mut().iter_mut().zip(grads).zip(v.iter_mut()) {
            let g = g + wd * *p;
            *vel = mu * *vel + g;
            *p -= lr * *vel;
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&[f32]> {
        self.velocity.get(name).map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn two_steps_match_hand_computation() {
        let mut p = Param::new(Tensor::from_vec(&[1], vec![1.0]));
        let mut sgd = Sgd::new(0.1, 0.9, 0.0);
        p.grad = Tensor::from_vec(&[1], vec![0.5]);
        sgd.update("w", &mut p);
        // v = 0.5, p = 1 - 0.05
        assert_eq!(p.value.data()[0], 1.0 - 0.1 * 0.5);
        p.grad = Tensor::from_vec(&[1], vec![0.25]);
        sgd.update("w", &mut p);
        let v = 0.25 + 0.9 * 0.5f32;
        assert_eq!(p.value.data()[0], (1.0f32 - 0.1 * 0.5) - 0.1 * v);
    }

    #[test]
    fn weight_decay_pulls_towards_zero() {
        let mut p = Param::new(Tensor::from_vec(&[1], vec![2.0]));
        let mut sgd = Sgd::new(0.5, 0.0, 0.1);
        sgd.update("w", &mut p);
        assert!((p.value.data()[0] - (2.0 - 0.5 * 0.2)).abs() < 1e-7);
    }
}
