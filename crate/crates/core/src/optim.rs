//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamTensor};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(alloc::format!("invalid Adam configuration {self:?}")))
        }
    }
}

/// First and second moments plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F> {
    pub step: u64,
    pub first: ModelParams<F>,
    pub second: ModelParams<F>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        Self {
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    /// Tensors that receive updates; the rest stay frozen.
    pub trainable: [bool; 6],
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            trainable: [true; 6],
        })
    }

    pub fn freeze(&mut self, tensor: ParamTensor) {
        self.trainable[tensor as usize] = false;
    }

    /// One update. The step counter advances even when every gradient is zero.
    pub fn step<F: Real>(
        &self,
        params: &mut ModelParams<F>,
        grads: &ModelParams<F>,
        state: &mut OptimizerState<F>,
    ) -> Result<()> {
        grads.validate()?;
        if grads.n_users != params.n_users || grads.n_items != params.n_items || grads.dim() != params.dim() {
            return Err(Error::Shape {
                what: "gradient vs parameters",
                expected: (params.n_nodes(), params.dim()),
                found: (grads.n_nodes(), grads.dim()),
            });
        }
        state.step += 1;
        let c = &self.config;
        let t = state.step as i32;
        let bc1 = 1.0 - num_traits::Float::powi(c.beta1, t);
        let bc2 = 1.0 - num_traits::Float::powi(c.beta2, t);
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let step_size = F::of(c.learning_rate / bc1);
        let inv_bc2 = F::of(1.0 / bc2);
        let eps = F::of(c.epsilon);
        for which in ParamTensor::ALL {
            if !self.trainable[which as usize] {
                continue;
            }
            let g = grads.tensor(which).as_slice();
            let m = state.first.tensor_mut(which).as_mut_slice();
            let v = state.second.tensor_mut(which).as_mut_slice();
            let p = params.tensor_mut(which).as_mut_slice();
            for k in 0..g.len() {
                m[k] = b1 * m[k] + (F::one() - b1) * g[k];
                v[k] = b2 * v[k] + (F::one() - b2) * g[k] * g[k];
                p[k] -= step_size * m[k] / ((v[k] * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_but_counts_step() {
        let mut p: ModelParams<f64> = ModelParams::glorot(3, 4, 2, 1).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let mut s = OptimizerState::new(&p);
        let adam = Adam::new(AdamConfig::default()).unwrap();
        adam.step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p: ModelParams<f64> = ModelParams::glorot(3, 4, 2, 1).unwrap();
        let before = p.clone();
        let g = p.map_like(|x| x + 0.3);
        let mut s = OptimizerState::new(&p);
        let adam = Adam::new(AdamConfig::with_learning_rate(0.0)).unwrap();
        for _ in 0..3 {
            adam.step(&mut p, &g, &mut s).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.step, 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_the_sign() {
        let mut p: ModelParams<f64> = ModelParams::zeros(1, 1, 1);
        let mut g = p.zeros_like();
        g.interest.set(0, 0, 4.0);
        g.disinterest.set(1, 0, -0.01);
        let mut s = OptimizerState::new(&p);
        Adam::new(AdamConfig::with_learning_rate(0.1))
            .unwrap()
            .step(&mut p, &g, &mut s)
            .unwrap();
        assert!((p.interest.get(0, 0) + 0.1).abs() < 1e-8);
        assert!((p.disinterest.get(1, 0) - 0.1).abs() < 1e-5);
    }

    #[test]
    fn frozen_tensor_is_untouched() {
        let mut p: ModelParams<f64> = ModelParams::glorot(2, 2, 2, 1).unwrap();
        let before = p.clone();
        let g = p.map_like(|_| 1.0);
        let mut s = OptimizerState::new(&p);
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        adam.freeze(ParamTensor::MlpHidden);
        adam.step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p.mlp_w1, before.mlp_w1);
        assert_ne!(p.interest, before.interest);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Adam::new(AdamConfig::with_learning_rate(-1.0)).is_err());
        assert!(Adam::new(AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        })
        .is_err());
    }
}
