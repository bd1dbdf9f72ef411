//! Classic-momentum SGD with L2 weight decay and a stepped learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::params::{Grads, ParameterStore};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    /// Epochs (1-based) at which the learning rate divides by the factor.
    pub lr_decay_epochs: Vec<usize>,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_factor: 10.0,
            lr_decay_epochs: vec![150, 250],
            batch_size: 128,
        }
    }
}

/// SGD state: one velocity buffer per parameter group.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub cfg: OptimizerConfig,
    pub velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(cfg: OptimizerConfig, params: &ParameterStore) -> Self {
        let velocity = params
            .groups
            .iter()
            .map(|g| Tensor::zeros(&g.tensor.shape))
            .collect();
        Sgd { cfg, velocity }
    }

    /// Learning rate in effect during `epoch` (1-based): the base rate
    /// divided by the decay factor once per decay epoch already reached.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.cfg.lr_decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.cfg.learning_rate / self.cfg.lr_decay_factor.powi(decays as i32)
    }

    /// One update: `v <- momentum * v + (g + weight_decay * theta)`,
    /// `theta <- theta - lr * v`. Errors if any parameter leaves the finite
    /// range.
    pub fn step(
        &mut self,
        params: &mut ParameterStore,
        grads: &Grads,
        epoch: usize,
    ) -> Result<()> {
        let lr = self.lr_at(epoch);
        let mu = self.cfg.momentum;
        let wd = self.cfg.weight_decay;
        for (gi, group) in params.groups.iter_mut().enumerate() {
            let v = &mut self.velocity[gi].data;
            let g = &grads.tensors[gi].data;
            let theta = &mut group.tensor.data;
            debug_assert_eq!(v.len(), g.len());
            let mut finite = true;
            for i in 0..theta.len() {
                let vi = mu * v[i] + (g[i] + wd * theta[i]);
                v[i] = vi;
                theta[i] -= lr * vi;
                finite &= theta[i].is_finite();
            }
            if !finite {
                return Err(Error::Run(format!(
                    "non-finite parameter in {} during epoch {epoch}",
                    group.name
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ParamGroup, ParamRole};

    fn one_weight(value: f64) -> ParameterStore {
        ParameterStore {
            groups: vec![ParamGroup {
                name: "l0.dense.weight".into(),
                role: ParamRole::Weight,
                layer: 0,
                prunable: true,
                tensor: Tensor::from_vec(&[1], vec![value]),
            }],
        }
    }

    #[test]
    fn lr_schedule_steps_down_at_decay_epochs() {
        let cfg = OptimizerConfig {
            lr_decay_epochs: vec![150, 250],
            ..OptimizerConfig::default()
        };
        let sgd = Sgd::new(cfg, &one_weight(0.0));
        assert!((sgd.lr_at(1) - 0.1).abs() < 1e-15);
        assert!((sgd.lr_at(149) - 0.1).abs() < 1e-15);
        assert!((sgd.lr_at(150) - 0.01).abs() < 1e-15);
        assert!((sgd.lr_at(249) - 0.01).abs() < 1e-15);
        assert!((sgd.lr_at(250) - 0.001).abs() < 1e-15);
        assert!((sgd.lr_at(350) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn momentum_update_matches_hand_computation() {
        let mut params = one_weight(1.0);
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.01,
            lr_decay_factor: 10.0,
            lr_decay_epochs: vec![],
            batch_size: 1,
        };
        let mut sgd = Sgd::new(cfg, &params);
        let grads = Grads {
            tensors: vec![Tensor::from_vec(&[1], vec![0.5])],
        };
        // v1 = 0.5 + 0.01 * 1.0 = 0.51; theta1 = 1.0 - 0.1 * 0.51 = 0.949
        sgd.step(&mut params, &grads, 1).unwrap();
        assert!((params.groups[0].tensor.data[0] - 0.949).abs() < 1e-12);
        // v2 = 0.9 * 0.51 + (0.5 + 0.01 * 0.949) = 0.96849
        // theta2 = 0.949 - 0.096849 = 0.852151
        sgd.step(&mut params, &grads, 1).unwrap();
        assert!((params.groups[0].tensor.data[0] - 0.852151).abs() < 1e-12);
    }

    #[test]
    fn non_finite_update_is_reported() {
        let mut params = one_weight(1.0);
        let mut sgd = Sgd::new(OptimizerConfig::default(), &params);
        let grads = Grads {
            tensors: vec![Tensor::from_vec(&[1], vec![f64::NAN])],
        };
        let err = sgd.step(&mut params, &grads, 1).unwrap_err();
        assert!(matches!(err, Error::Run(_)));
        assert!(err.to_string().contains("l0.dense.weight"));
    }
}
