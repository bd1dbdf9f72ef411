//! Pruning core: keep-masks over prunable weights, iterative schedules,
//! global saliency ranking, and per-weight sign-flip bookkeeping.

use crate::error::{Error, Result};
use crate::optim::Sgd;
use crate::params::{Grads, ParameterStore};
use serde::{Deserialize, Serialize};

/// Sign of a weight as used by flip bookkeeping: -1, 0, or +1.
#[inline]
pub fn sign8(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

#[inline]
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

// --- mask --------------------------------------------------------------------

/// Keep-mask for one prunable parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLayer {
    /// Index of the group in the parameter store.
    pub group: usize,
    pub name: String,
    pub shape: Vec<usize>,
    pub keep: Vec<bool>,
}

/// Keep-masks for every prunable group, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub layers: Vec<MaskLayer>,
}

impl Mask {
    /// Fully-alive mask over the prunable groups of `params`.
    pub fn all_alive(params: &ParameterStore) -> Mask {
        let layers = params
            .prunable_groups()
            .into_iter()
            .map(|gi| {
                let g = &params.groups[gi];
                MaskLayer {
                    group: gi,
                    name: g.name.clone(),
                    shape: g.tensor.shape.clone(),
                    keep: vec![true; g.tensor.numel()],
                }
            })
            .collect();
        Mask { layers }
    }

    pub fn alive(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.keep.iter().filter(|&&k| k).count())
            .sum()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(|l| l.keep.len()).sum()
    }

    /// Fraction of prunable weights removed.
    pub fn sparsity(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.alive() as f64 / total as f64
    }

    /// (name, alive, total) per prunable layer.
    pub fn per_layer(&self) -> Vec<(String, usize, usize)> {
        self.layers
            .iter()
            .map(|l| {
                let alive = l.keep.iter().filter(|&&k| k).count();
                (l.name.clone(), alive, l.keep.len())
            })
            .collect()
    }

    /// Names of layers with no surviving weight.
    pub fn collapsed_layers(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| l.keep.iter().all(|&k| !k))
            .map(|l| l.name.clone())
            .collect()
    }

    /// Zero masked weights, and their momentum if an optimizer is attached,
    /// so pruned coordinates cannot drift back.
    pub fn apply(&self, params: &mut ParameterStore, sgd: Option<&mut Sgd>) {
        for layer in &self.layers {
            let data = &mut params.groups[layer.group].tensor.data;
            for (i, &k) in layer.keep.iter().enumerate() {
                if !k {
                    data[i] = 0.0;
                }
            }
        }
        if let Some(sgd) = sgd {
            for layer in &self.layers {
                let v = &mut sgd.velocity[layer.group].data;
                for (i, &k) in layer.keep.iter().enumerate() {
                    if !k {
                        v[i] = 0.0;
                    }
                }
            }
        }
    }

    /// Zero the gradient entries of masked weights.
    pub fn zero_masked_grads(&self, grads: &mut Grads) {
        for layer in &self.layers {
            let g = &mut grads.tensors[layer.group].data;
            for (i, &k) in layer.keep.iter().enumerate() {
                if !k {
                    g[i] = 0.0;
                }
            }
        }
    }

    /// Serializable artifact with one `0`/`1` character per weight
    /// (`1` = kept), row-major.
    pub fn to_artifact(&self) -> MaskArtifact {
        let layers = self
            .layers
            .iter()
            .map(|l| MaskArtifactLayer {
                name: l.name.clone(),
                shape: l.shape.clone(),
                bitmap: l.keep.iter().map(|&k| if k { '1' } else { '0' }).collect(),
            })
            .collect();
        MaskArtifact {
            alive: self.alive(),
            total: self.total(),
            layers,
        }
    }

    /// Rebuild a mask from an artifact against the prunable groups of
    /// `params`, matching layers by name.
    pub fn from_artifact(artifact: &MaskArtifact, params: &ParameterStore) -> Result<Mask> {
        let mut mask = Mask::all_alive(params);
        if artifact.layers.len() != mask.layers.len() {
            return Err(Error::Config(format!(
                "mask artifact has {} layers, model has {} prunable layers",
                artifact.layers.len(),
                mask.layers.len()
            )));
        }
        for (ml, al) in mask.layers.iter_mut().zip(&artifact.layers) {
            if ml.name != al.name || ml.shape != al.shape {
                return Err(Error::Config(format!(
                    "mask layer {} {:?} does not match model layer {} {:?}",
                    al.name, al.shape, ml.name, ml.shape
                )));
            }
            if al.bitmap.len() != ml.keep.len() {
                return Err(Error::Config(format!(
                    "mask layer {}: bitmap length {} != {} weights",
                    al.name,
                    al.bitmap.len(),
                    ml.keep.len()
                )));
            }
            for (i, ch) in al.bitmap.chars().enumerate() {
                ml.keep[i] = match ch {
                    '1' => true,
                    '0' => false,
                    _ => {
                        return Err(Error::Config(format!(
                            "mask layer {}: bitmap character {ch:?}",
                            al.name
                        )))
                    }
                };
            }
        }
        Ok(mask)
    }
}

/// On-disk form of a mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskArtifact {
    pub alive: usize,
    pub total: usize,
    pub layers: Vec<MaskArtifactLayer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskArtifactLayer {
    pub name: String,
    pub shape: Vec<usize>,
    pub bitmap: String,
}

// --- saliency + global ranking ------------------------------------------------

/// Per-weight scores aligned with the layers of a [`Mask`]. Lower scores
/// prune first.
#[derive(Debug, Clone)]
pub struct Saliency {
    pub scores: Vec<Vec<f64>>,
}

/// Result of one prune event.
#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub pruned: usize,
    pub alive_before: usize,
    pub alive_after: usize,
    pub collapsed_layers: Vec<String>,
}

/// Remove the `count` alive weights with the globally lowest saliency,
/// ranked across all layers at once. Ties break toward the earlier layer,
/// then the lower index. Already-masked weights are not candidates.
pub fn prune_lowest(mask: &mut Mask, saliency: &Saliency, count: usize) -> PruneOutcome {
    assert_eq!(saliency.scores.len(), mask.layers.len(), "saliency/mask misaligned");
    let alive_before = mask.alive();
    let count = count.min(alive_before);
    let mut candidates: Vec<(f64, u32, u32)> = Vec::with_capacity(alive_before);
    for (li, (layer, scores)) in mask.layers.iter().zip(&saliency.scores).enumerate() {
        assert_eq!(scores.len(), layer.keep.len(), "saliency/mask misaligned");
        for (i, &k) in layer.keep.iter().enumerate() {
            if k {
                candidates.push((scores[i], li as u32, i as u32));
            }
        }
    }
    candidates.sort_unstable_by(|a, b| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });
    for &(_, li, i) in candidates.iter().take(count) {
        mask.layers[li as usize].keep[i as usize] = false;
    }
    PruneOutcome {
        pruned: count,
        alive_before,
        alive_after: alive_before - count,
        collapsed_layers: mask.collapsed_layers(),
    }
}

/// Remove `round(rate * alive)` weights (round half up), globally ranked.
pub fn global_rank_and_prune(mask: &mut Mask, saliency: &Saliency, rate: f64) -> PruneOutcome {
    let count = round_half_up(rate * mask.alive() as f64);
    prune_lowest(mask, saliency, count)
}

// --- schedule -------------------------------------------------------------------

/// Iterative pruning plan: prune after each epoch in `prune_epochs`
/// (1-based), removing `rate` of the surviving weights each time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub rate: f64,
    pub steps: usize,
    pub total_epochs: usize,
    pub prune_epochs: Vec<usize>,
}

/// Sparsity reached after `steps` prune events at `rate`.
pub fn final_sparsity(rate: f64, steps: usize) -> f64 {
    1.0 - (1.0 - rate).powi(steps as i32)
}

/// Evenly spaced schedule: prune events sit `round(total_epochs / (steps + 1))`
/// epochs apart, leaving a recovery tail after the last event.
pub fn make_schedule(total_epochs: usize, steps: usize, rate: f64) -> Result<PruneSchedule> {
    if total_epochs == 0 {
        return Err(Error::Config("schedule needs at least one epoch".into()));
    }
    if steps == 0 {
        return Ok(PruneSchedule {
            rate,
            steps,
            total_epochs,
            prune_epochs: Vec::new(),
        });
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Config(format!(
            "prune rate must lie in (0, 1), got {rate}"
        )));
    }
    let interval = round_half_up(total_epochs as f64 / (steps + 1) as f64);
    if interval < 1 {
        return Err(Error::Config(format!(
            "{total_epochs} epochs cannot fit {steps} prune events"
        )));
    }
    let prune_epochs: Vec<usize> = (1..=steps).map(|k| k * interval).collect();
    if *prune_epochs.last().unwrap() >= total_epochs {
        return Err(Error::Config(format!(
            "{steps} prune events every {interval} epochs do not fit in {total_epochs} epochs"
        )));
    }
    Ok(PruneSchedule {
        rate,
        steps,
        total_epochs,
        prune_epochs,
    })
}

// --- flip bookkeeping -------------------------------------------------------------

/// Per-weight flip counters for one prunable group.
#[derive(Debug, Clone)]
pub struct FlipLayer {
    pub prev_sign: Vec<i8>,
    pub flips: Vec<u64>,
}

/// Sign-flip counters aligned with the layers of a [`Mask`].
#[derive(Debug, Clone)]
pub struct FlipState {
    pub layers: Vec<FlipLayer>,
    pub steps_recorded: u64,
}

impl FlipState {
    /// Start counting from the current weights: their signs are the first
    /// reference the next update compares against.
    pub fn new(params: &ParameterStore, mask: &Mask) -> FlipState {
        let layers = mask
            .layers
            .iter()
            .map(|l| {
                let data = &params.groups[l.group].tensor.data;
                FlipLayer {
                    prev_sign: data.iter().map(|&v| sign8(v)).collect(),
                    flips: vec![0; data.len()],
                }
            })
            .collect();
        FlipState {
            layers,
            steps_recorded: 0,
        }
    }

    /// Record one optimizer step: alive weights whose sign crossed zero gain
    /// a flip. Masked weights are skipped, so their counters and reference
    /// signs stay frozen.
    pub fn record(&mut self, params: &ParameterStore, mask: &Mask) {
        for (fl, ml) in self.layers.iter_mut().zip(&mask.layers) {
            let data = &params.groups[ml.group].tensor.data;
            for (i, &k) in ml.keep.iter().enumerate() {
                if !k {
                    continue;
                }
                let s = sign8(data[i]);
                let p = fl.prev_sign[i];
                if s != 0 && p != 0 && s != p {
                    fl.flips[i] += 1;
                }
                fl.prev_sign[i] = s;
            }
        }
        self.steps_recorded += 1;
    }

    /// (min, median, max) flip count over alive weights. The median of an
    /// even count is the lower middle. Returns zeros when nothing is alive.
    pub fn summary(&self, mask: &Mask) -> (u64, u64, u64) {
        let mut counts: Vec<u64> = Vec::new();
        for (fl, ml) in self.layers.iter().zip(&mask.layers) {
            for (i, &k) in ml.keep.iter().enumerate() {
                if k {
                    counts.push(fl.flips[i]);
                }
            }
        }
        if counts.is_empty() {
            return (0, 0, 0);
        }
        counts.sort_unstable();
        (
            counts[0],
            counts[(counts.len() - 1) / 2],
            counts[counts.len() - 1],
        )
    }
}

// ---------------------------------------------------------------------------
