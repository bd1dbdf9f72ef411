//! Comparison methods run under the same harness: global magnitude, random
//! pruning, one-shot SNIP, the Hoyer-Square regularizer, and the ablation
//! variants that remap to the flip criterion or magnitude with the noise
//! strength overridden.

use crate::error::{Error, Result};
use crate::flipout::ZeroFlipPolicy;
use crate::nn::{softmax_cross_entropy, Mode, Model};
use crate::params::{Grads, ParameterStore};
use crate::prune::{prune_lowest, Mask, PruneOutcome, Saliency};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fixed regularization grid for the Hoyer-Square trade-off curve: three
/// values per decade from 1e-7 to 6e-3.
pub const HOYER_ALPHA_GRID: [f64; 15] = [
    1e-7, 3e-7, 6e-7, 1e-6, 3e-6, 6e-6, 1e-5, 3e-5, 6e-5, 1e-4, 3e-4, 6e-4, 1e-3, 3e-3, 6e-3,
];

/// Pruning method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// No pruning: the reference run every curve includes.
    Dense,
    Flipout,
    GlobalMagnitude,
    Random,
    Snip,
    HoyerSquare,
    /// Ablation: flip criterion with the noise turned off.
    FlipoutNoNoise,
    /// Ablation: magnitude criterion with flip-style noise turned on.
    NoisyGlobalMagnitude,
}

impl MethodKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodKind::Dense => "dense",
            MethodKind::Flipout => "flipout",
            MethodKind::GlobalMagnitude => "global_magnitude",
            MethodKind::Random => "random",
            MethodKind::Snip => "snip",
            MethodKind::HoyerSquare => "hoyer_square",
            MethodKind::FlipoutNoNoise => "flipout_no_noise",
            MethodKind::NoisyGlobalMagnitude => "noisy_global_magnitude",
        }
    }
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dense" => MethodKind::Dense,
            "flipout" => MethodKind::Flipout,
            "global_magnitude" => MethodKind::GlobalMagnitude,
            "random" => MethodKind::Random,
            "snip" => MethodKind::Snip,
            "hoyer_square" => MethodKind::HoyerSquare,
            "flipout_no_noise" => MethodKind::FlipoutNoNoise,
            "noisy_global_magnitude" => MethodKind::NoisyGlobalMagnitude,
            other => return Err(Error::Config(format!("unknown method kind {other:?}"))),
        })
    }
}

/// One pruning method with its hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MethodSpec {
    pub kind: MethodKind,
    /// Noise strength for the flip criterion and its ablation pair.
    pub lambda: f64,
    /// Magnitude exponent of the flip criterion.
    pub p: f64,
    pub zero_flip: ZeroFlipPolicy,
    /// Regularization coefficient for Hoyer-Square.
    pub alpha: f64,
    /// Hoyer-Square threshold on |theta| at prune time.
    pub threshold: f64,
    /// Hoyer-Square fine-tune epochs; defaults to half the training epochs.
    pub fine_tune_epochs: Option<usize>,
    /// Sum the Hoyer penalty over one global term instead of per layer.
    pub hoyer_global: bool,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        MethodSpec {
            kind,
            lambda: 1.0,
            p: 2.0,
            zero_flip: ZeroFlipPolicy::default(),
            alpha: 1e-4,
            threshold: 1e-4,
            fine_tune_epochs: None,
            hoyer_global: false,
        }
    }

    /// Noise strength actually applied: the ablation kinds override lambda
    /// per their definitions, and methods without a noise hook use zero.
    pub fn effective_lambda(&self) -> f64 {
        match self.kind {
            MethodKind::Flipout | MethodKind::NoisyGlobalMagnitude => self.lambda,
            MethodKind::FlipoutNoNoise => 0.0,
            _ => 0.0,
        }
    }

    /// True for methods that prune at the scheduled epochs.
    pub fn is_iterative(&self) -> bool {
        matches!(
            self.kind,
            MethodKind::Flipout
                | MethodKind::FlipoutNoNoise
                | MethodKind::GlobalMagnitude
                | MethodKind::NoisyGlobalMagnitude
                | MethodKind::Random
        )
    }

    /// True for methods that rank by the flip-normalized criterion.
    pub fn uses_flips(&self) -> bool {
        matches!(self.kind, MethodKind::Flipout | MethodKind::FlipoutNoNoise)
    }
}

// --- magnitude and random saliency ------------------------------------------

/// Plain magnitude scores: |theta| per alive weight.
pub fn magnitude_saliency(params: &ParameterStore, mask: &Mask) -> Saliency {
    let scores = mask
        .layers
        .iter()
        .map(|ml| {
            let data = &params.groups[ml.group].tensor.data;
            data.iter().map(|v| v.abs()).collect()
        })
        .collect();
    Saliency { scores }
}

/// Uniform scores drawn per weight; masked entries draw too, so the stream
/// position never depends on the mask.
pub fn random_saliency(mask: &Mask, rng: &mut ChaCha8Rng) -> Saliency {
    let scores = mask
        .layers
        .iter()
        .map(|ml| (0..ml.keep.len()).map(|_| rng.gen::<f64>()).collect())
        .collect();
    Saliency { scores }
}

// --- SNIP ---------------------------------------------------------------------

/// Connection sensitivity at initialization: |g * theta| on one mini-batch,
/// normalized to sum to one over all prunable weights.
pub fn snip_saliency(model: &mut Model, x: &Tensor, labels: &[usize]) -> Saliency {
    let (logits, cache) = model.forward(x, Mode::Train);
    let (_, dlogits) = softmax_cross_entropy(&logits, labels);
    let grads = model.backward(&cache.expect("train mode caches"), &dlogits);
    let mask = Mask::all_alive(&model.params);
    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(mask.layers.len());
    let mut total = 0.0;
    for ml in &mask.layers {
        let theta = &model.params.groups[ml.group].tensor.data;
        let g = &grads.tensors[ml.group].data;
        let layer: Vec<f64> = theta.iter().zip(g).map(|(t, gi)| (t * gi).abs()).collect();
        total += layer.iter().sum::<f64>();
        scores.push(layer);
    }
    if total > 0.0 {
        for layer in scores.iter_mut() {
            for s in layer.iter_mut() {
                *s /= total;
            }
        }
    }
    Saliency { scores }
}

/// One-shot prune at initialization: remove `ceil(target_sparsity * total)`
/// weights with the lowest sensitivity. Returns the outcome; collapsed
/// layers are reported there, not treated as an error.
pub fn snip_prune(
    mask: &mut Mask,
    saliency: &Saliency,
    target_sparsity: f64,
) -> Result<PruneOutcome> {
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(Error::Config(format!(
            "snip target sparsity must lie in [0, 1), got {target_sparsity}"
        )));
    }
    let count = (target_sparsity * mask.total() as f64).ceil() as usize;
    Ok(prune_lowest(mask, saliency, count))
}

// --- Hoyer-Square ----------------------------------------------------------------

/// Square Hoyer measure of one weight slice: (sum |theta|)^2 / sum theta^2.
/// Zero for an all-zero slice.
pub fn hoyer_square(data: &[f64]) -> f64 {
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for &v in data {
        abs_sum += v.abs();
        sq_sum += v * v;
    }
    if sq_sum == 0.0 {
        0.0
    } else {
        abs_sum * abs_sum / sq_sum
    }
}

/// Total penalty over prunable layers: summed per layer, or one global term
/// over their concatenation.
pub fn hoyer_penalty(params: &ParameterStore, global: bool) -> f64 {
    let prunable = params.prunable_groups();
    if global {
        let all: Vec<f64> = prunable
            .iter()
            .flat_map(|&gi| params.groups[gi].tensor.data.iter().copied())
            .collect();
        hoyer_square(&all)
    } else {
        prunable
            .iter()
            .map(|&gi| hoyer_square(&params.groups[gi].tensor.data))
            .sum()
    }
}

/// Add `alpha * dH/dtheta` to the gradients of the prunable groups:
/// `2 sgn(theta_i) S1/S2 - 2 theta_i S1^2/S2^2` with S1 = sum |theta| and
/// S2 = sum theta^2 over the regularized slice. All-zero slices contribute
/// nothing.
pub fn hoyer_grad(params: &ParameterStore, alpha: f64, global: bool, grads: &mut Grads) {
    let prunable = params.prunable_groups();
    let slice_stats = |gis: &[usize]| {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for &gi in gis {
            for &v in &params.groups[gi].tensor.data {
                s1 += v.abs();
                s2 += v * v;
            }
        }
        (s1, s2)
    };
    let add = |gi: usize, s1: f64, s2: f64, grads: &mut Grads, params: &ParameterStore| {
        if s2 == 0.0 {
            return;
        }
        let a = 2.0 * s1 / s2;
        let b = 2.0 * s1 * s1 / (s2 * s2);
        let theta = &params.groups[gi].tensor.data;
        let g = &mut grads.tensors[gi].data;
        for (slot, &t) in g.iter_mut().zip(theta) {
            let sgn = if t > 0.0 {
                1.0
            } else if t < 0.0 {
                -1.0
            } else {
                0.0
            };
            *slot += alpha * (sgn * a - t * b);
        }
    };
    if global {
        let (s1, s2) = slice_stats(&prunable);
        for &gi in &prunable {
            add(gi, s1, s2, grads, params);
        }
    } else {
        for &gi in &prunable {
            let (s1, s2) = slice_stats(&[gi]);
            add(gi, s1, s2, grads, params);
        }
    }
}

/// One-shot removal of alive weights with |theta| below the threshold.
pub fn hoyer_threshold_prune(
    params: &ParameterStore,
    mask: &mut Mask,
    threshold: f64,
) -> PruneOutcome {
    let alive_before = mask.alive();
    for ml in mask.layers.iter_mut() {
        let data = &params.groups[ml.group].tensor.data;
        for (i, k) in ml.keep.iter_mut().enumerate() {
            if *k && data[i].abs() < threshold {
                *k = false;
            }
        }
    }
    let alive_after = mask.alive();
    PruneOutcome {
        pruned: alive_before - alive_after,
        alive_before,
        alive_after,
        collapsed_layers: mask.collapsed_layers(),
    }
}

// ---------------------------------------------------------------------------
