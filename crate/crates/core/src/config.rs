//! Experiment configuration: TOML sections `model`, `dataset`, `optimizer`,
//! `method`, `schedule`, and `sweep`, with defaults and validation.

use crate::baselines::{MethodKind, MethodSpec};
use crate::data::DIGIT_IMAGE_SIZE;
use crate::error::{Error, Result};
use crate::flipout::ZeroFlipPolicy;
use crate::nn::{LayerSpec, Network};
use crate::optim::OptimizerConfig;
use crate::prune::make_schedule;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Root configuration for `run` and `sweep`.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional prefix for run identifiers.
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    /// Output directory; the CLI `--out` flag overrides it.
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub optimizer: OptimizerConfig,
    pub method: MethodConfig,
    pub schedule: ScheduleConfig,
    /// Optional sweep section; `sweep` falls back to the default
    /// compression curve when absent.
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Conv,
    Mlp,
}

/// Architecture description: a conv stack followed by dense layers, or a
/// plain multilayer perceptron.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Per-sample input shape: [channels, height, width] for conv,
    /// [features] for mlp.
    pub input: Vec<usize>,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub batchnorm: bool,
    /// Hidden widths of the dense head; the class readout is appended.
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Conv,
            input: vec![1, DIGIT_IMAGE_SIZE, DIGIT_IMAGE_SIZE],
            conv_channels: vec![8],
            kernel: 3,
            batchnorm: true,
            hidden: vec![60],
        }
    }
}

impl ModelConfig {
    /// Expand into a validated layer chain ending in `classes` scores.
    pub fn to_network(&self, classes: usize) -> Result<Network> {
        let mut layers = Vec::new();
        match self.kind {
            ModelKind::Conv => {
                if self.input.len() != 3 {
                    return Err(Error::Config(format!(
                        "conv model input must be [channels, height, width], got {:?}",
                        self.input
                    )));
                }
                let (mut c, mut h, mut w) = (self.input[0], self.input[1], self.input[2]);
                for &oc in &self.conv_channels {
                    layers.push(LayerSpec::Conv2d {
                        in_channels: c,
                        out_channels: oc,
                        kernel: self.kernel,
                    });
                    if h < self.kernel || w < self.kernel {
                        return Err(Error::Config(format!(
                            "kernel {} does not fit {h}x{w} feature map",
                            self.kernel
                        )));
                    }
                    c = oc;
                    h = h - self.kernel + 1;
                    w = w - self.kernel + 1;
                    if self.batchnorm {
                        layers.push(LayerSpec::BatchNorm { features: c });
                    }
                    layers.push(LayerSpec::Relu);
                }
                layers.push(LayerSpec::Flatten);
                let mut features = c * h * w;
                for &width in &self.hidden {
                    layers.push(LayerSpec::Dense { in_features: features, out_features: width });
                    if self.batchnorm {
                        layers.push(LayerSpec::BatchNorm { features: width });
                    }
                    layers.push(LayerSpec::Relu);
                    features = width;
                }
                layers.push(LayerSpec::Dense { in_features: features, out_features: classes });
            }
            ModelKind::Mlp => {
                if self.input.len() != 1 {
                    return Err(Error::Config(format!(
                        "mlp model input must be [features], got {:?}",
                        self.input
                    )));
                }
                let mut features = self.input[0];
                for &width in &self.hidden {
                    layers.push(LayerSpec::Dense { in_features: features, out_features: width });
                    if self.batchnorm {
                        layers.push(LayerSpec::BatchNorm { features: width });
                    }
                    layers.push(LayerSpec::Relu);
                    features = width;
                }
                layers.push(LayerSpec::Dense { in_features: features, out_features: classes });
            }
        }
        let net = Network { input_shape: self.input.clone(), layers };
        net.output_shapes()?;
        Ok(net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Digits,
    Blobs,
    Idx,
}

/// Dataset source and preprocessing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub train: usize,
    pub test: usize,
    /// Validation samples split off the training set (0 disables).
    pub val: usize,
    /// Class count for blobs and declared class count for idx files.
    pub classes: usize,
    /// Feature dimensionality for blobs.
    pub dims: usize,
    /// Generator seed, independent of run seeds so all runs share the data.
    pub seed: u64,
    pub normalize: bool,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub augment: AugmentConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Digits,
            train: 10_000,
            test: 2_000,
            val: 0,
            classes: 10,
            dims: 16,
            seed: 7,
            normalize: true,
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
            augment: AugmentConfig::default(),
        }
    }
}

impl DatasetConfig {
    /// Class count implied by the configuration.
    pub fn num_classes(&self) -> usize {
        match self.kind {
            DatasetKind::Digits => 10,
            _ => self.classes,
        }
    }

    /// Per-sample feature shape, when known without reading files.
    pub fn sample_shape(&self) -> Option<Vec<usize>> {
        match self.kind {
            DatasetKind::Digits => Some(vec![1, DIGIT_IMAGE_SIZE, DIGIT_IMAGE_SIZE]),
            DatasetKind::Blobs => Some(vec![self.dims]),
            DatasetKind::Idx => None,
        }
    }
}

/// Train-time image augmentation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub pad_crop: usize,
    pub hflip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { enabled: false, pad_crop: 4, hflip: false }
    }
}

/// Pruning method section; mirrors [`MethodSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    pub lambda: f64,
    pub p: f64,
    pub zero_flip: ZeroFlipPolicy,
    pub alpha: f64,
    pub threshold: f64,
    pub fine_tune_epochs: Option<usize>,
    pub hoyer_global: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            kind: MethodKind::Flipout,
            lambda: 1.0,
            p: 2.0,
            zero_flip: ZeroFlipPolicy::default(),
            alpha: 1e-4,
            threshold: 1e-4,
            fine_tune_epochs: None,
            hoyer_global: false,
        }
    }
}

impl MethodConfig {
    pub fn to_spec(&self) -> MethodSpec {
        MethodSpec {
            kind: self.kind,
            lambda: self.lambda,
            p: self.p,
            zero_flip: self.zero_flip,
            alpha: self.alpha,
            threshold: self.threshold,
            fine_tune_epochs: self.fine_tune_epochs,
            hoyer_global: self.hoyer_global,
        }
    }
}

/// Training length and iterative-pruning plan.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub epochs: usize,
    /// Number of prune events (m).
    pub prune_steps: usize,
    /// Fraction of surviving weights removed per event (r).
    pub rate: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        // 22 epochs is the shortest budget that fits every default
        // compression ratio up to 1024x with a recovery epoch after the
        // final prune event.
        ScheduleConfig { epochs: 22, prune_steps: 4, rate: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    LambdaGrid,
    PGrid,
    #[default]
    CompressionCurve,
    NoiseAblation,
}

/// Multi-run sweep description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    /// Grid override for lambda_grid / p_grid; empty selects the default
    /// grid.
    pub values: Vec<f64>,
    /// Compression ratios for compression_curve; must be powers of two with
    /// rate 0.5.
    pub ratios: Vec<u64>,
    /// Methods traced by compression_curve.
    pub methods: Vec<MethodKind>,
    /// Prune-event counts for grid and ablation sweeps; empty means the
    /// schedule's own prune_steps.
    pub sparsity_steps: Vec<usize>,
    /// Add the unpruned reference point to curve outputs.
    pub include_dense: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            kind: SweepKind::CompressionCurve,
            values: Vec::new(),
            ratios: vec![4, 16, 64, 256, 1024],
            methods: vec![
                MethodKind::Flipout,
                MethodKind::GlobalMagnitude,
                MethodKind::Random,
                MethodKind::Snip,
            ],
            sparsity_steps: Vec::new(),
            include_dense: true,
        }
    }
}

/// Default lambda grid: fifteen values from 0.75 in steps of 0.05.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..15).map(|k| (75 + 5 * k) as f64 / 100.0).collect()
}

/// Default p grid.
pub fn default_p_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0, 4.0]
}

impl ExperimentConfig {
    /// Parse a TOML config file.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        Ok(cfg)
    }

    /// Seeds with the built-in default applied.
    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![0, 1, 2]
        } else {
            self.seeds.clone()
        }
    }

    /// Check every cross-field constraint that does not require reading
    /// dataset files.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.train == 0 || d.test == 0 {
            return Err(Error::Config("dataset needs train > 0 and test > 0".into()));
        }
        if d.val >= d.train {
            return Err(Error::Config(format!(
                "validation split {} must be smaller than the training set {}",
                d.val, d.train
            )));
        }
        match d.kind {
            DatasetKind::Blobs => {
                if d.classes < 2 || d.dims == 0 {
                    return Err(Error::Config(
                        "blobs need classes >= 2 and dims > 0".into(),
                    ));
                }
                if d.augment.enabled {
                    return Err(Error::Config(
                        "augmentation applies to image datasets, not blobs".into(),
                    ));
                }
            }
            DatasetKind::Idx => {
                for (name, p) in [
                    ("dataset.images", &d.images),
                    ("dataset.labels", &d.labels),
                    ("dataset.test_images", &d.test_images),
                    ("dataset.test_labels", &d.test_labels),
                ] {
                    if p.is_none() {
                        return Err(Error::Config(format!("idx dataset requires {name}")));
                    }
                }
            }
            DatasetKind::Digits => {}
        }
        if let Some(shape) = d.sample_shape() {
            if self.model.input != shape {
                return Err(Error::Config(format!(
                    "model input {:?} does not match dataset sample shape {:?}",
                    self.model.input, shape
                )));
            }
        }
        self.model.to_network(d.num_classes())?;

        let o = &self.optimizer;
        if o.learning_rate <= 0.0 || !o.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", o.learning_rate)));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", o.momentum)));
        }
        if o.weight_decay < 0.0 {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", o.weight_decay)));
        }
        if o.lr_decay_factor < 1.0 {
            return Err(Error::Config(format!("lr decay factor must be >= 1, got {}", o.lr_decay_factor)));
        }
        if o.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }

        let m = &self.method;
        if m.lambda < 0.0 || !m.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", m.lambda)));
        }
        if m.p < 0.0 || !m.p.is_finite() {
            return Err(Error::Config(format!("p must be non-negative, got {}", m.p)));
        }
        if m.kind == MethodKind::HoyerSquare && m.alpha <= 0.0 {
            return Err(Error::Config(format!("hoyer alpha must be positive, got {}", m.alpha)));
        }
        if m.threshold < 0.0 {
            return Err(Error::Config(format!("threshold must be non-negative, got {}", m.threshold)));
        }

        let s = &self.schedule;
        if s.epochs == 0 {
            return Err(Error::Config("schedule needs at least one epoch".into()));
        }
        let spec = m.to_spec();
        if spec.is_iterative() {
            make_schedule(s.epochs, s.prune_steps, s.rate)?;
        }
        if spec.kind == MethodKind::Snip {
            let target = crate::prune::final_sparsity(s.rate, s.prune_steps);
            if !(0.0..1.0).contains(&target) || s.prune_steps == 0 {
                return Err(Error::Config(format!(
                    "snip needs a target sparsity in (0, 1); schedule gives {target}"
                )));
            }
        }
        if let Some(sw) = &self.sweep {
            self.validate_sweep(sw)?;
        }
        Ok(())
    }

    /// Sweep section with the default applied.
    pub fn sweep_or_default(&self) -> SweepConfig {
        self.sweep.clone().unwrap_or_default()
    }

    /// Check the sweep section, including that every expanded schedule fits.
    pub fn validate_sweep(&self, sw: &SweepConfig) -> Result<()> {
        match sw.kind {
            SweepKind::CompressionCurve => {
                if (self.schedule.rate - 0.5).abs() > 1e-12 {
                    return Err(Error::Config(
                        "compression_curve requires rate = 0.5 so ratios map to prune counts".into(),
                    ));
                }
                if sw.ratios.is_empty() {
                    return Err(Error::Config("compression_curve needs at least one ratio".into()));
                }
                for &ratio in &sw.ratios {
                    if ratio < 2 || !ratio.is_power_of_two() {
                        return Err(Error::Config(format!(
                            "compression ratio {ratio} is not a power of two >= 2"
                        )));
                    }
                    let steps = ratio.trailing_zeros() as usize;
                    make_schedule(self.schedule.epochs, steps, 0.5).map_err(|e| {
                        Error::Config(format!("ratio {ratio}: {e}"))
                    })?;
                }
                if sw.methods.is_empty() {
                    return Err(Error::Config("compression_curve needs at least one method".into()));
                }
                for mk in &sw.methods {
                    if matches!(mk, MethodKind::HoyerSquare | MethodKind::Dense) {
                        return Err(Error::Config(format!(
                            "{mk} cannot target exact compression ratios; run it separately"
                        )));
                    }
                }
            }
            SweepKind::LambdaGrid | SweepKind::PGrid => {
                for &v in &sw.values {
                    if v < 0.0 || !v.is_finite() {
                        return Err(Error::Config(format!("grid value {v} must be non-negative")));
                    }
                }
                for &steps in self.sweep_sparsity_steps(sw).iter() {
                    make_schedule(self.schedule.epochs, steps, self.schedule.rate)?;
                }
            }
            SweepKind::NoiseAblation => {
                for &steps in self.sweep_sparsity_steps(sw).iter() {
                    make_schedule(self.schedule.epochs, steps, self.schedule.rate)?;
                }
            }
        }
        Ok(())
    }

    /// Prune-step targets for grid and ablation sweeps.
    pub fn sweep_sparsity_steps(&self, sw: &SweepConfig) -> Vec<usize> {
        if sw.sparsity_steps.is_empty() {
            vec![self.schedule.prune_steps]
        } else {
            sw.sparsity_steps.clone()
        }
    }

    /// Grid values for lambda/p sweeps, falling back to the defaults.
    pub fn sweep_values(sw: &SweepConfig) -> Vec<f64> {
        if !sw.values.is_empty() {
            return sw.values.clone();
        }
        match sw.kind {
            SweepKind::LambdaGrid => default_lambda_grid(),
            SweepKind::PGrid => default_p_grid(),
            _ => Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.seeds(), vec![0, 1, 2]);
    }

    #[test]
    fn toml_round_trip_with_partial_sections() {
        let text = r#"
            seeds = [5]

            [model]
            kind = "mlp"
            input = [16]
            hidden = [32, 16]
            batchnorm = false

            [dataset]
            kind = "blobs"
            train = 300
            test = 60
            classes = 4
            dims = 16

            [optimizer]
            learning_rate = 0.05

            [method]
            kind = "global_magnitude"

            [schedule]
            epochs = 10
            prune_steps = 2
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seeds(), vec![5]);
        assert_eq!(cfg.method.kind, MethodKind::GlobalMagnitude);
        assert_eq!(cfg.optimizer.learning_rate, 0.05);
        assert_eq!(cfg.optimizer.momentum, 0.9);
        assert_eq!(cfg.dataset.num_classes(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[model]\nkindd = \"conv\"\n";
        assert!(toml::from_str::<ExperimentConfig>(text).is_err());
        let text = "[mothod]\nkind = \"flipout\"\n";
        assert!(toml::from_str::<ExperimentConfig>(text).is_err());
    }

    #[test]
    fn mismatched_model_and_dataset_shapes_are_caught() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.input = vec![1, 8, 8];
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("sample shape"));
    }

    #[test]
    fn schedule_that_does_not_fit_is_a_config_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.schedule.epochs = 20;
        cfg.schedule.prune_steps = 7;
        assert!(cfg.validate().is_err());
        cfg.method.kind = MethodKind::Dense;
        let mut sw = SweepConfig::default();
        sw.kind = SweepKind::NoiseAblation;
        sw.sparsity_steps = vec![7];
        cfg.sweep = Some(sw);
        assert!(cfg.validate().is_err());
        cfg.sweep.as_mut().unwrap().sparsity_steps = vec![4];
        cfg.validate().unwrap();
    }

    #[test]
    fn curve_sweep_constraints() {
        let mut cfg = ExperimentConfig::default();
        cfg.sweep = Some(SweepConfig::default());
        cfg.validate().unwrap();
        cfg.sweep.as_mut().unwrap().ratios = vec![3];
        assert!(cfg.validate().is_err());
        cfg.sweep.as_mut().unwrap().ratios = vec![4, 16];
        cfg.validate().unwrap();
        cfg.schedule.rate = 0.4;
        assert!(cfg.validate().is_err());
        cfg.schedule.rate = 0.5;
        cfg.sweep.as_mut().unwrap().methods = vec![MethodKind::HoyerSquare];
        assert!(cfg.validate().is_err());
        // A ratio whose prune events cannot fit the epoch budget.
        cfg.sweep.as_mut().unwrap().methods = vec![MethodKind::Flipout];
        cfg.sweep.as_mut().unwrap().ratios = vec![1024];
        cfg.schedule.epochs = 20;
        assert!(cfg.validate().is_err());
        cfg.schedule.epochs = 22;
        cfg.validate().unwrap();
    }

    #[test]
    fn default_grids_match_documented_shapes() {
        let lam = default_lambda_grid();
        assert_eq!(lam.len(), 15);
        assert!((lam[0] - 0.75).abs() < 1e-12);
        assert!((lam[14] - 1.45).abs() < 1e-12);
        assert_eq!(default_p_grid(), vec![0.0, 0.5, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn idx_dataset_requires_all_paths() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.kind = DatasetKind::Idx;
        cfg.model.input = vec![1, 16, 16];
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("dataset.images"));
    }
}
