//! First-order optimizers over a [`ParamSet`]'s trainable tensors.

use serde::{Deserialize, Serialize};

use crate::nets::{Grads, ParamSet};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    lr: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: i32,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig, lr: f64, params: &ParamSet<T>) -> Self {
        let zeros = || -> Vec<Tensor<T>> {
            params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.tensor.shape()))
                .collect()
        };
        Self {
            config,
            lr,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Grads<T>) {
        self.t += 1;
        let lr = T::of(self.lr);
        let trainable: Vec<bool> = params
            .entries()
            .iter()
            .map(|e| e.spec.kind.is_trainable())
            .collect();
        for (i, train) in trainable.into_iter().enumerate() {
            if !train {
                continue;
            }
            let g = grads.get(i).data();
            let p = params.tensor_mut(i).data_mut();
            match self.config {
                OptimizerConfig::Sgd => {
                    for (w, &gv) in p.iter_mut().zip(g) {
                        *w -= lr * gv;
                    }
                }
                OptimizerConfig::Adam { beta1, beta2, eps } => {
                    let (b1, b2) = (T::of(beta1), T::of(beta2));
                    let c1 = T::one() - T::of(beta1.powi(self.t));
                    let c2 = T::one() - T::of(beta2.powi(self.t));
                    let eps = T::of(eps);
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for j in 0..p.len() {
                        m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                        v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        p[j] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}
