use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::nn::Module;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub name: String,
    pub m: ArrayD<T>,
    pub v: ArrayD<T>,
}

/// Adam with bias correction. Moment buffers are created lazily in the
/// module's parameter visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub steps: u64,
    pub moments: Vec<Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Applies one update from the accumulated gradients.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let step_size = T::lit(c.learning_rate / bias1);
        let inv_bias2_sqrt = T::lit(1.0 / bias2.sqrt());
        let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.eps));
        let one = T::one();
        let mut index = 0;
        let moments = &mut self.moments;
        module.visit_params("", &mut |name, p| {
            if moments.len() == index {
                moments.push(Moments {
                    name: name.to_string(),
                    m: ArrayD::zeros(p.value.raw_dim()),
                    v: ArrayD::zeros(p.value.raw_dim()),
                });
            }
            let state = &mut moments[index];
            debug_assert_eq!(state.name, name);
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut state.m)
                .and(&mut state.v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *w -= step_size * *m / ((*v).sqrt() * inv_bias2_sqrt + eps);
                });
            index += 1;
        });
    }
}
