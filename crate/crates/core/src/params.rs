//! Named parameter groups backing a network.
//!
//! Groups are stored in layer order so that seeded initialization and
//! mask/flip bookkeeping always traverse parameters the same way.

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// What a parameter group holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
}

/// One named tensor of trainable parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub role: ParamRole,
    /// Index of the owning layer in the network spec.
    pub layer: usize,
    /// Dense/conv weights may be pruned; biases and norm parameters may not.
    pub prunable: bool,
    pub tensor: Tensor,
}

/// All trainable parameters of a model, in layer order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParameterStore {
    pub groups: Vec<ParamGroup>,
}

impl ParameterStore {
    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.groups.iter().map(|g| g.tensor.numel()).sum()
    }

    /// Indices of the prunable groups, in store order.
    pub fn prunable_groups(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.prunable)
            .map(|(i, _)| i)
            .collect()
    }

    /// Total number of prunable weights.
    pub fn prunable_numel(&self) -> usize {
        self.groups
            .iter()
            .filter(|g| g.prunable)
            .map(|g| g.tensor.numel())
            .sum()
    }

    /// True when every parameter in every group is finite.
    pub fn is_finite(&self) -> bool {
        self.groups.iter().all(|g| g.tensor.is_finite())
    }
}

/// Gradients aligned one-to-one with the groups of a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub tensors: Vec<Tensor>,
}

impl Grads {
    /// Zero gradients shaped like `params`.
    pub fn zeros_like(params: &ParameterStore) -> Self {
        Grads {
            tensors: params
                .groups
                .iter()
                .map(|g| Tensor::zeros(&g.tensor.shape))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore {
        ParameterStore {
            groups: vec![
                ParamGroup {
                    name: "l0.dense.weight".into(),
                    role: ParamRole::Weight,
                    layer: 0,
                    prunable: true,
                    tensor: Tensor::zeros(&[4, 3]),
                },
                ParamGroup {
                    name: "l0.dense.bias".into(),
                    role: ParamRole::Bias,
                    layer: 0,
                    prunable: false,
                    tensor: Tensor::zeros(&[4]),
                },
            ],
        }
    }

    #[test]
    fn counts_and_prunable_selection() {
        let s = store();
        assert_eq!(s.numel(), 16);
        assert_eq!(s.prunable_numel(), 12);
        assert_eq!(s.prunable_groups(), vec![0]);
    }

    #[test]
    fn grads_align_with_groups() {
        let s = store();
        let g = Grads::zeros_like(&s);
        assert_eq!(g.tensors.len(), 2);
        assert_eq!(g.tensors[0].shape, vec![4, 3]);
    }
}
