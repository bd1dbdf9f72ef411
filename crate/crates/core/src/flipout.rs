//! Flip-normalized saliency and self-annealing gradient noise.
//!
//! Saliency divides a magnitude power by the recorded sign-flip count, so
//! weights that keep crossing zero rank low. Injected gradient noise is
//! scaled per layer by the alive weight norm over the layer's original
//! width; as pruning removes weights the norm shrinks and the noise anneals
//! by itself.

use crate::params::{Grads, ParameterStore};
use crate::prune::{global_rank_and_prune, FlipState, Mask, PruneOutcome, Saliency};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// How weights that never flipped are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroFlipPolicy {
    /// Treat the flip count as one: saliency stays `|theta|^p`.
    #[default]
    FloorToOne,
    /// Rank every zero-flip weight above every flipped weight, ordered by
    /// magnitude among themselves.
    HighestSaliency,
}

/// Criterion hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlipOutConfig {
    /// Exponent on the weight magnitude.
    pub p: f64,
    /// Noise strength; zero disables injection.
    pub lambda: f64,
    pub zero_flip: ZeroFlipPolicy,
}

impl Default for FlipOutConfig {
    fn default() -> Self {
        FlipOutConfig {
            p: 2.0,
            lambda: 1.0,
            zero_flip: ZeroFlipPolicy::FloorToOne,
        }
    }
}

/// `|theta|^p` with exact forms for the common exponents, so equal-flip
/// rankings match plain magnitude rankings bit for bit.
#[inline]
pub fn magnitude_pow(theta: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if p == 1.0 {
        theta.abs()
    } else if p == 2.0 {
        theta * theta
    } else if p == 4.0 {
        let s = theta * theta;
        s * s
    } else {
        theta.abs().powf(p)
    }
}

/// Flip-normalized saliency for every alive weight. Scores are always
/// finite; masked entries get a placeholder that the ranking never reads.
pub fn saliency(
    params: &ParameterStore,
    mask: &Mask,
    flips: &FlipState,
    cfg: &FlipOutConfig,
) -> Saliency {
    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(mask.layers.len());
    let mut max_flipped = 0.0f64;
    for (ml, fl) in mask.layers.iter().zip(&flips.layers) {
        let data = &params.groups[ml.group].tensor.data;
        let mut layer = vec![0.0; data.len()];
        for (i, &k) in ml.keep.iter().enumerate() {
            if !k {
                continue;
            }
            let mag = magnitude_pow(data[i], cfg.p);
            layer[i] = match cfg.zero_flip {
                ZeroFlipPolicy::FloorToOne => mag / (fl.flips[i].max(1) as f64),
                ZeroFlipPolicy::HighestSaliency => {
                    if fl.flips[i] == 0 {
                        f64::NAN // placeholder, resolved below
                    } else {
                        let s = mag / fl.flips[i] as f64;
                        max_flipped = max_flipped.max(s);
                        s
                    }
                }
            };
        }
        scores.push(layer);
    }
    if let ZeroFlipPolicy::HighestSaliency = cfg.zero_flip {
        // Lift zero-flip weights above every flipped score, keeping their
        // magnitude order among themselves.
        let offset = max_flipped + 1.0;
        for (li, ml) in mask.layers.iter().enumerate() {
            let data = &params.groups[ml.group].tensor.data;
            for (i, &k) in ml.keep.iter().enumerate() {
                if k && flips.layers[li].flips[i] == 0 {
                    scores[li][i] = offset + magnitude_pow(data[i], cfg.p);
                }
            }
        }
    }
    debug_assert!(scores.iter().flatten().all(|s| s.is_finite()));
    Saliency { scores }
}

/// Per-layer noise variance: alive weight norm squared over the layer's
/// original weight count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub layers: Vec<LayerNoise>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNoise {
    pub name: String,
    pub sigma2: f64,
}

/// Compute the current noise variance of every prunable layer.
pub fn noise_report(params: &ParameterStore, mask: &Mask) -> NoiseReport {
    let layers = mask
        .layers
        .iter()
        .map(|ml| {
            let data = &params.groups[ml.group].tensor.data;
            let mut sq = 0.0;
            for (i, &k) in ml.keep.iter().enumerate() {
                if k {
                    sq += data[i] * data[i];
                }
            }
            LayerNoise {
                name: ml.name.clone(),
                sigma2: sq / ml.keep.len() as f64,
            }
        })
        .collect();
    NoiseReport { layers }
}

/// Add `lambda * N(0, sigma2_l)` noise to every prunable weight gradient.
/// Draw counts do not depend on the mask; masked entries are zeroed again
/// before the optimizer runs.
pub fn inject_noise(
    grads: &mut Grads,
    params: &ParameterStore,
    mask: &Mask,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) {
    if lambda == 0.0 {
        return;
    }
    let report = noise_report(params, mask);
    for (ml, ln) in mask.layers.iter().zip(&report.layers) {
        let sigma = ln.sigma2.sqrt();
        let g = &mut grads.tensors[ml.group].data;
        for gi in g.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *gi += lambda * sigma * eps;
        }
    }
}

/// True when no layer's noise variance grew from `before` to `after`
/// (up to rounding slack). Pruning can only shrink alive norms, so this
/// holds across every prune event.
pub fn annealing_ok(before: &NoiseReport, after: &NoiseReport) -> bool {
    before
        .layers
        .iter()
        .zip(&after.layers)
        .all(|(b, a)| a.sigma2 <= b.sigma2 + 1e-12 * b.sigma2.max(1.0))
}

/// One criterion-driven prune event: score alive weights, then remove the
/// lowest `rate` fraction globally.
pub fn prune_step(
    params: &ParameterStore,
    mask: &mut Mask,
    flips: &FlipState,
    cfg: &FlipOutConfig,
    rate: f64,
) -> PruneOutcome {
    let scores = saliency(params, mask, flips, cfg);
    global_rank_and_prune(mask, &scores, rate)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ParamGroup, ParamRole};
    use crate::tensor::Tensor;

    fn store(data: Vec<f64>) -> ParameterStore {
        ParameterStore {
            groups: vec![ParamGroup {
                name: "l0.dense.weight".into(),
                role: ParamRole::Weight,
                layer: 0,
                prunable: true,
                tensor: Tensor::from_vec(&[data.len()], data),
            }],
        }
    }

    fn with_flips(params: &ParameterStore, mask: &Mask, flips: Vec<u64>) -> FlipState {
        let mut state = FlipState::new(params, mask);
        state.layers[0].flips = flips;
        state
    }

    #[test]
    fn saliency_divides_magnitude_power_by_flips() {
        let params = store(vec![2.0, -3.0, 0.5]);
        let mask = Mask::all_alive(&params);
        let flips = with_flips(&params, &mask, vec![4, 0, 2]);
        let s = saliency(&params, &mask, &flips, &FlipOutConfig::default());
        assert_eq!(s.scores[0], vec![1.0, 9.0, 0.125]);
    }

    #[test]
    fn exponent_controls_the_magnitude_term() {
        let params = store(vec![-4.0, 4.0]);
        let mask = Mask::all_alive(&params);
        let flips = with_flips(&params, &mask, vec![2, 2]);
        for (p, expect) in [(0.0, 0.5), (0.5, 1.0), (1.0, 2.0), (2.0, 8.0), (4.0, 128.0)] {
            let cfg = FlipOutConfig { p, ..Default::default() };
            let s = saliency(&params, &mask, &flips, &cfg);
            assert!((s.scores[0][0] - expect).abs() < 1e-12, "p={p}");
            assert_eq!(s.scores[0][0], s.scores[0][1]);
        }
    }

    #[test]
    fn equal_flip_counts_reduce_to_magnitude_order() {
        let params = store(vec![0.3, -2.0, 1.1, -0.05]);
        let mask = Mask::all_alive(&params);
        let flips = with_flips(&params, &mask, vec![3, 3, 3, 3]);
        let s = saliency(&params, &mask, &flips, &FlipOutConfig::default());
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| s.scores[0][a].total_cmp(&s.scores[0][b]));
        assert_eq!(order, vec![3, 0, 2, 1]);
    }

    #[test]
    fn zero_flip_policy_lifts_unflipped_weights_to_the_top() {
        let params = store(vec![0.01, 5.0, -2.0]);
        let mask = Mask::all_alive(&params);
        let flips = with_flips(&params, &mask, vec![0, 7, 1]);
        let cfg = FlipOutConfig {
            zero_flip: ZeroFlipPolicy::HighestSaliency,
            ..Default::default()
        };
        let s = saliency(&params, &mask, &flips, &cfg);
        assert!(s.scores[0][0] > s.scores[0][1]);
        assert!(s.scores[0][0] > s.scores[0][2]);
        assert!(s.scores[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn noise_variance_tracks_alive_norm_over_original_width() {
        let params = store(vec![1.0; 12]);
        let mut mask = Mask::all_alive(&params);
        let before = noise_report(&params, &mask);
        assert!((before.layers[0].sigma2 - 1.0).abs() < 1e-15);
        for i in 0..6 {
            mask.layers[0].keep[i] = false;
        }
        let after = noise_report(&params, &mask);
        assert!((after.layers[0].sigma2 - 0.5).abs() < 1e-15);
        assert!(annealing_ok(&before, &after));
        assert!(!annealing_ok(&after, &before));
    }

    #[test]
    fn injection_is_seeded_and_disabled_at_zero_lambda() {
        let params = store(vec![0.5; 8]);
        let mask = Mask::all_alive(&params);
        let zeros = Grads::zeros_like(&params);
        let mut a = zeros.clone();
        let mut b = zeros.clone();
        let mut c = zeros.clone();
        inject_noise(&mut a, &params, &mask, 1.0, &mut crate::rng::stream(9, crate::rng::STREAM_NOISE));
        inject_noise(&mut b, &params, &mask, 1.0, &mut crate::rng::stream(9, crate::rng::STREAM_NOISE));
        inject_noise(&mut c, &params, &mask, 0.0, &mut crate::rng::stream(9, crate::rng::STREAM_NOISE));
        assert_eq!(a.tensors[0].data, b.tensors[0].data);
        assert!(a.tensors[0].data.iter().any(|&v| v != 0.0));
        assert!(c.tensors[0].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn injected_noise_matches_the_declared_variance() {
        // sigma2 = sum(theta^2) / d = 8 * 0.25 / 8 = 0.25, lambda = 2 ->
        // var(g) = 4 * 0.25 = 1.0.
        let params = store(vec![0.5; 8]);
        let mask = Mask::all_alive(&params);
        let mut rng = crate::rng::stream(123, crate::rng::STREAM_NOISE);
        let mut draws = Vec::new();
        for _ in 0..4000 {
            let mut g = Grads::zeros_like(&params);
            inject_noise(&mut g, &params, &mask, 2.0, &mut rng);
            draws.extend_from_slice(&g.tensors[0].data);
        }
        let (mean, var) = crate::oracle::moments(&draws);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn prune_step_removes_flippy_low_magnitude_weights_first() {
        let params = store(vec![3.0, 0.1, -2.0, 0.2]);
        let mut mask = Mask::all_alive(&params);
        // Scores: 9/1, 0.01/9, 4/1, 0.04/1.
        let flips = with_flips(&params, &mask, vec![1, 9, 1, 1]);
        let out = prune_step(&params, &mut mask, &flips, &FlipOutConfig::default(), 0.5);
        assert_eq!(out.pruned, 2);
        assert_eq!(mask.layers[0].keep, vec![true, false, true, false]);
    }
}
