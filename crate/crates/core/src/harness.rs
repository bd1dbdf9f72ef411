//! Experiment harness: data preparation, the seeded training loop with the
//! prune-method hooks, sweep expansion across seeds and grid values, and
//! aggregation into plot-ready CSV files.
//!
//! Per optimizer step the order of operations is fixed:
//! forward, backward, method noise hook, SGD step, mask re-application,
//! flip recording. Scheduled prune events run at the end of their epoch,
//! before that epoch's evaluation.

use crate::baselines::{self, MethodKind, MethodSpec};
use crate::config::{DatasetKind, ExperimentConfig, SweepConfig, SweepKind};
use crate::data::{self, Augment, Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::flipout::{self, FlipOutConfig};
use crate::metrics::{
    self, EpochRecord, FailureRecord, FinalRecord, FlipSummary, LayerAlive, PruneRecord, Record,
};
use crate::nn::{accuracy, softmax_cross_entropy, Mode, Model};
use crate::optim::Sgd;
use crate::prune::{self, make_schedule, FlipState, Mask, PruneOutcome};
use crate::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

// --- data preparation -------------------------------------------------------

/// Splits ready for training, shared by every run of a sweep.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
    pub augment: Option<Augment>,
}

/// Generate or load the configured dataset, split off validation data,
/// and normalize every split with training-set statistics.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let d = &cfg.dataset;
    let (mut train, mut test) = match d.kind {
        DatasetKind::Digits => (
            data::gen_digits(d.train, d.seed)?,
            data::gen_digits(d.test, d.seed.wrapping_add(1))?,
        ),
        DatasetKind::Blobs => (
            data::gen_blobs(d.train, d.classes, d.dims, d.seed)?,
            data::gen_blobs(d.test, d.classes, d.dims, d.seed.wrapping_add(1))?,
        ),
        DatasetKind::Idx => {
            let train = data::load_idx(
                d.images.as_deref().expect("validated"),
                d.labels.as_deref().expect("validated"),
            )?;
            let test = data::load_idx(
                d.test_images.as_deref().expect("validated"),
                d.test_labels.as_deref().expect("validated"),
            )?;
            (train, test)
        }
    };
    if d.kind == DatasetKind::Idx {
        let classes = d.num_classes();
        if train.num_classes > classes || test.num_classes > classes {
            return Err(Error::Config(format!(
                "idx labels use {} classes but the config declares {}",
                train.num_classes.max(test.num_classes),
                classes
            )));
        }
        train.num_classes = classes;
        test.num_classes = classes;
        if train.sample_shape() != cfg.model.input {
            return Err(Error::Config(format!(
                "model input {:?} does not match idx sample shape {:?}",
                cfg.model.input,
                train.sample_shape()
            )));
        }
    }
    let mut val = None;
    if d.val > 0 {
        let (rest, held_out) = data::split_validation(&train, d.val, d.seed.wrapping_add(2))?;
        train = rest;
        val = Some(held_out);
    }
    if d.normalize {
        let norm = Normalizer::fit(&train);
        norm.apply(&mut train);
        norm.apply(&mut test);
        if let Some(v) = val.as_mut() {
            norm.apply(v);
        }
    }
    let augment = if d.augment.enabled {
        Some(Augment { pad_crop: d.augment.pad_crop, hflip: d.augment.hflip })
    } else {
        None
    };
    Ok(PreparedData { train, val, test, augment })
}

// --- jobs -------------------------------------------------------------------

/// One fully resolved training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    /// Directory-safe name shared by all seeds of one sweep point.
    pub label: String,
    pub seed: u64,
    pub method: MethodSpec,
    pub epochs: usize,
    pub prune_steps: usize,
    pub rate: f64,
    /// Compression-curve coordinate, when part of a curve sweep.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ratio: Option<u64>,
    /// Grid coordinate (lambda or p), when part of a grid sweep.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<f64>,
}

impl Job {
    pub fn run_id(&self) -> String {
        format!("{}_s{}", self.label, self.seed)
    }

    /// Sparsity the schedule targets (0 for dense; data-dependent methods
    /// report their nominal target).
    pub fn target_sparsity(&self) -> f64 {
        match self.method.kind {
            MethodKind::Dense => 0.0,
            MethodKind::HoyerSquare => f64::NAN,
            _ => prune::final_sparsity(self.rate, self.prune_steps),
        }
    }
}

/// Jobs for a plain `run`: the configured method, one job per seed.
pub fn expand_run(cfg: &ExperimentConfig) -> Vec<Job> {
    let label = cfg.name.clone().unwrap_or_else(|| cfg.method.kind.to_string());
    cfg.seeds()
        .iter()
        .map(|&seed| Job {
            label: label.clone(),
            seed,
            method: cfg.method.to_spec(),
            epochs: cfg.schedule.epochs,
            prune_steps: cfg.schedule.prune_steps,
            rate: cfg.schedule.rate,
            ratio: None,
            value: None,
        })
        .collect()
}

/// Format a grid coordinate for labels: shortest round-trip decimal.
fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// Jobs for a sweep, in a deterministic order.
pub fn expand_sweep(cfg: &ExperimentConfig, sw: &SweepConfig) -> Result<Vec<Job>> {
    cfg.validate_sweep(sw)?;
    let seeds = cfg.seeds();
    let mut jobs = Vec::new();
    let mut push = |job: Job| jobs.push(job);
    match sw.kind {
        SweepKind::CompressionCurve => {
            if sw.include_dense {
                for &seed in &seeds {
                    push(Job {
                        label: "dense".into(),
                        seed,
                        method: MethodSpec::new(MethodKind::Dense),
                        epochs: cfg.schedule.epochs,
                        prune_steps: 0,
                        rate: 0.5,
                        ratio: Some(1),
                        value: None,
                    });
                }
            }
            for &kind in &sw.methods {
                for &ratio in &sw.ratios {
                    let steps = ratio.trailing_zeros() as usize;
                    for &seed in &seeds {
                        let mut method = cfg.method.to_spec();
                        method.kind = kind;
                        push(Job {
                            label: format!("{kind}_x{ratio}"),
                            seed,
                            method,
                            epochs: cfg.schedule.epochs,
                            prune_steps: steps,
                            rate: 0.5,
                            ratio: Some(ratio),
                            value: None,
                        });
                    }
                }
            }
        }
        SweepKind::LambdaGrid => {
            for &lambda in &ExperimentConfig::sweep_values(sw) {
                for &steps in &cfg.sweep_sparsity_steps(sw) {
                    for &seed in &seeds {
                        let mut method = cfg.method.to_spec();
                        method.kind = MethodKind::Flipout;
                        method.lambda = lambda;
                        push(Job {
                            label: format!("flipout_lam{}_m{steps}", fmt_value(lambda)),
                            seed,
                            method,
                            epochs: cfg.schedule.epochs,
                            prune_steps: steps,
                            rate: cfg.schedule.rate,
                            ratio: None,
                            value: Some(lambda),
                        });
                    }
                }
            }
        }
        SweepKind::PGrid => {
            for &p in &ExperimentConfig::sweep_values(sw) {
                for &steps in &cfg.sweep_sparsity_steps(sw) {
                    for &seed in &seeds {
                        let mut method = cfg.method.to_spec();
                        method.kind = MethodKind::Flipout;
                        method.p = p;
                        push(Job {
                            label: format!("flipout_p{}_m{steps}", fmt_value(p)),
                            seed,
                            method,
                            epochs: cfg.schedule.epochs,
                            prune_steps: steps,
                            rate: cfg.schedule.rate,
                            ratio: None,
                            value: Some(p),
                        });
                    }
                }
            }
        }
        SweepKind::NoiseAblation => {
            let variants = [
                MethodKind::Flipout,
                MethodKind::FlipoutNoNoise,
                MethodKind::GlobalMagnitude,
                MethodKind::NoisyGlobalMagnitude,
            ];
            for &kind in &variants {
                for &steps in &cfg.sweep_sparsity_steps(sw) {
                    for &seed in &seeds {
                        let mut method = cfg.method.to_spec();
                        method.kind = kind;
                        push(Job {
                            label: format!("{kind}_m{steps}"),
                            seed,
                            method,
                            epochs: cfg.schedule.epochs,
                            prune_steps: steps,
                            rate: cfg.schedule.rate,
                            ratio: None,
                            value: None,
                        });
                    }
                }
            }
        }
    }
    Ok(jobs)
}

// --- single-run execution ----------------------------------------------------

/// In-memory result of one run.
#[derive(Debug)]
pub struct RunResult {
    pub job: Job,
    pub records: Vec<Record>,
    pub mask: prune::MaskArtifact,
    pub final_test_acc: f64,
    pub final_val_acc: Option<f64>,
    pub final_sparsity: f64,
    pub wall_secs: f64,
}

fn epoch_flip_summary(flips: &FlipState, mask: &Mask) -> FlipSummary {
    let (min, median, max) = flips.summary(mask);
    FlipSummary { min, median, max }
}

fn alive_per_layer(mask: &Mask) -> Vec<LayerAlive> {
    mask.per_layer()
        .into_iter()
        .map(|(name, alive, total)| LayerAlive { name, alive, total })
        .collect()
}

fn mean_accuracy(model: &mut Model, ds: &Dataset, batch_size: usize) -> f64 {
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut correct = 0.0;
    for chunk in indices.chunks(batch_size) {
        let (x, y) = ds.batch(chunk);
        let (logits, _) = model.forward(&x, Mode::Eval);
        correct += (accuracy(&logits, &y) * y.len() as f64).round();
    }
    correct / ds.len() as f64
}

/// Execute one job start to finish. Metrics records accumulate in memory and
/// include a failure record if the run aborts; the caller persists them.
pub fn execute_run(cfg: &ExperimentConfig, job: &Job, data: &PreparedData) -> Result<RunResult> {
    let started = Instant::now();
    let run_id = job.run_id();
    let method = &job.method;
    let classes = cfg.dataset.num_classes();

    let net = cfg.model.to_network(classes)?;
    let mut model = net.build(&mut rng::stream(job.seed, rng::STREAM_INIT))?;
    let mut mask = Mask::all_alive(&model.params);
    let mut flips = FlipState::new(&model.params, &mask);
    let mut sgd = Sgd::new(cfg.optimizer.clone(), &model.params);

    let mut shuffle_rng = rng::stream(job.seed, rng::STREAM_SHUFFLE);
    let mut augment_rng = rng::stream(job.seed, rng::STREAM_AUGMENT);
    let mut noise_rng = rng::stream(job.seed, rng::STREAM_NOISE);
    let mut method_rng = rng::stream(job.seed, rng::STREAM_METHOD);

    let schedule = if method.is_iterative() {
        Some(make_schedule(job.epochs, job.prune_steps, job.rate)?)
    } else {
        None
    };
    let flip_cfg = FlipOutConfig {
        p: method.p,
        lambda: method.effective_lambda(),
        zero_flip: method.zero_flip,
    };
    // Hoyer-Square appends a regularizer-free fine-tuning phase after its
    // one-shot threshold prune.
    let fine_tune = if method.kind == MethodKind::HoyerSquare {
        method.fine_tune_epochs.unwrap_or(job.epochs / 2)
    } else {
        0
    };
    let total_epochs = job.epochs + fine_tune;

    let mut records: Vec<Record> = Vec::new();
    let mut step: u64 = 0;
    let mut prune_event = 0usize;

    // SNIP prunes once at initialization from a single mini-batch.
    if method.kind == MethodKind::Snip {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        data::shuffle(&mut order, &mut method_rng);
        let take = cfg.optimizer.batch_size.min(order.len());
        let (x, y) = data.train.batch(&order[..take]);
        let saliency = baselines::snip_saliency(&mut model, &x, &y);
        let target = prune::final_sparsity(job.rate, job.prune_steps);
        let sigma2_before = flipout::noise_report(&model.params, &mask);
        let outcome = baselines::snip_prune(&mut mask, &saliency, target)?;
        mask.apply(&mut model.params, Some(&mut sgd));
        prune_event += 1;
        push_prune_record(
            &mut records,
            &run_id,
            job.seed,
            0,
            step,
            prune_event,
            &outcome,
            sigma2_before,
            &model,
            &mask,
        );
    }

    let batch_size = cfg.optimizer.batch_size;
    let mut result_final: Option<(f64, Option<f64>)> = None;

    'training: for epoch in 1..=total_epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        data::shuffle(&mut order, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let hoyer_active = method.kind == MethodKind::HoyerSquare && epoch <= job.epochs;

        for chunk in order.chunks(batch_size) {
            let (mut x, y) = data.train.batch(chunk);
            if let Some(aug) = &data.augment {
                aug.apply(&mut x, &mut augment_rng);
            }
            let (logits, cache) = model.forward(&x, Mode::Train);
            let (loss, dlogits) = softmax_cross_entropy(&logits, &y);
            if !loss.is_finite() {
                let msg = format!("training loss became non-finite at epoch {epoch}");
                records.push(Record::Failure(FailureRecord {
                    run_id: run_id.clone(),
                    seed: job.seed,
                    epoch,
                    step,
                    message: msg.clone(),
                }));
                finish_artifacts(cfg, job, &records, &mask)?;
                return Err(Error::Run(msg));
            }
            loss_sum += loss * y.len() as f64;
            let cache = cache.expect("train mode caches activations");
            let mut grads = model.backward(&cache, &dlogits);
            if hoyer_active {
                baselines::hoyer_grad(&model.params, method.alpha, method.hoyer_global, &mut grads);
            }
            flipout::inject_noise(
                &mut grads,
                &model.params,
                &mask,
                method.effective_lambda(),
                &mut noise_rng,
            );
            if let Err(e) = sgd.step(&mut model.params, &grads, epoch) {
                let msg = format!("{e}");
                records.push(Record::Failure(FailureRecord {
                    run_id: run_id.clone(),
                    seed: job.seed,
                    epoch,
                    step,
                    message: msg.clone(),
                }));
                finish_artifacts(cfg, job, &records, &mask)?;
                return Err(Error::Run(msg));
            }
            mask.apply(&mut model.params, Some(&mut sgd));
            flips.record(&model.params, &mask);
            step += 1;
        }

        // Scheduled prune events run at the end of the epoch.
        if let Some(sched) = &schedule {
            if sched.prune_epochs.contains(&epoch) {
                let sigma2_before = flipout::noise_report(&model.params, &mask);
                let saliency = match method.kind {
                    MethodKind::Flipout | MethodKind::FlipoutNoNoise => {
                        flipout::saliency(&model.params, &mask, &flips, &flip_cfg)
                    }
                    MethodKind::GlobalMagnitude | MethodKind::NoisyGlobalMagnitude => {
                        baselines::magnitude_saliency(&model.params, &mask)
                    }
                    MethodKind::Random => baselines::random_saliency(&mask, &mut method_rng),
                    _ => unreachable!("only iterative methods have a schedule"),
                };
                let outcome = prune::global_rank_and_prune(&mut mask, &saliency, job.rate);
                mask.apply(&mut model.params, Some(&mut sgd));
                prune_event += 1;
                push_prune_record(
                    &mut records,
                    &run_id,
                    job.seed,
                    epoch,
                    step,
                    prune_event,
                    &outcome,
                    sigma2_before,
                    &model,
                    &mask,
                );
            }
        }

        // Hoyer's one-shot prune closes the regularized phase.
        if method.kind == MethodKind::HoyerSquare && epoch == job.epochs {
            let sigma2_before = flipout::noise_report(&model.params, &mask);
            let outcome = baselines::hoyer_threshold_prune(&model.params, &mut mask, method.threshold);
            mask.apply(&mut model.params, Some(&mut sgd));
            prune_event += 1;
            push_prune_record(
                &mut records,
                &run_id,
                job.seed,
                epoch,
                step,
                prune_event,
                &outcome,
                sigma2_before,
                &model,
                &mask,
            );
        }

        let train_loss = loss_sum / data.train.len() as f64;
        let test_acc = mean_accuracy(&mut model, &data.test, batch_size);
        let val_acc = data.val.as_ref().map(|v| mean_accuracy(&mut model, v, batch_size));
        records.push(Record::Epoch(EpochRecord {
            run_id: run_id.clone(),
            seed: job.seed,
            epoch,
            step,
            train_loss,
            test_acc,
            val_acc,
            sparsity: mask.sparsity(),
            alive_per_layer: alive_per_layer(&mask),
            sigma2_per_layer: flipout::noise_report(&model.params, &mask),
            flips: epoch_flip_summary(&flips, &mask),
        }));
        if epoch == total_epochs {
            result_final = Some((test_acc, val_acc));
            break 'training;
        }
    }

    let (final_test_acc, final_val_acc) = result_final.expect("at least one epoch runs");
    records.push(Record::Final(FinalRecord {
        run_id: run_id.clone(),
        seed: job.seed,
        epochs: total_epochs,
        steps: step,
        final_test_acc,
        final_val_acc,
        final_sparsity: mask.sparsity(),
        alive: mask.alive(),
        total: mask.total(),
    }));

    let artifact = mask.to_artifact();
    finish_artifacts(cfg, job, &records, &mask)?;
    Ok(RunResult {
        job: job.clone(),
        records,
        mask: artifact,
        final_test_acc,
        final_val_acc,
        final_sparsity: mask.sparsity(),
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

#[allow(clippy::too_many_arguments)]
fn push_prune_record(
    records: &mut Vec<Record>,
    run_id: &str,
    seed: u64,
    epoch: usize,
    step: u64,
    event: usize,
    outcome: &PruneOutcome,
    sigma2_before: crate::flipout::NoiseReport,
    model: &Model,
    mask: &Mask,
) {
    let sigma2_after = flipout::noise_report(&model.params, mask);
    let annealing_ok = flipout::annealing_ok(&sigma2_before, &sigma2_after);
    if !outcome.collapsed_layers.is_empty() {
        eprintln!(
            "warning: {run_id}: at least one layer has been entirely pruned: {}",
            outcome.collapsed_layers.join(", ")
        );
    }
    records.push(Record::Prune(PruneRecord {
        run_id: run_id.to_string(),
        seed,
        epoch,
        step,
        event,
        pruned: outcome.pruned,
        alive_before: outcome.alive_before,
        alive_after: outcome.alive_after,
        sparsity_after: mask.sparsity(),
        sigma2_before,
        sigma2_after,
        annealing_ok,
        collapsed_layers: outcome.collapsed_layers.clone(),
    }));
}

// --- artifact persistence -----------------------------------------------------

/// Directory that holds one run's artifacts.
pub fn run_dir(out: &Path, job: &Job) -> PathBuf {
    out.join(&job.label).join(format!("seed{}", job.seed))
}

/// Effective single-run configuration echoed into each run directory.
fn effective_config(cfg: &ExperimentConfig, job: &Job) -> ExperimentConfig {
    let mut echo = cfg.clone();
    echo.name = Some(job.label.clone());
    echo.seeds = vec![job.seed];
    echo.method.kind = job.method.kind;
    echo.method.lambda = job.method.lambda;
    echo.method.p = job.method.p;
    echo.method.zero_flip = job.method.zero_flip;
    echo.method.alpha = job.method.alpha;
    echo.method.threshold = job.method.threshold;
    echo.method.fine_tune_epochs = job.method.fine_tune_epochs;
    echo.method.hoyer_global = job.method.hoyer_global;
    echo.schedule.epochs = job.epochs;
    echo.schedule.prune_steps = job.prune_steps;
    echo.schedule.rate = job.rate;
    echo.sweep = None;
    echo.out = None;
    echo
}

/// Persist metrics and mask for one run, if an output directory is set.
fn finish_artifacts(
    cfg: &ExperimentConfig,
    job: &Job,
    records: &[Record],
    mask: &Mask,
) -> Result<()> {
    let Some(out) = cfg.out.as_deref() else {
        return Ok(());
    };
    let dir = run_dir(out, job);
    std::fs::create_dir_all(&dir)?;
    metrics::write_jsonl(&dir.join("metrics.jsonl"), records)?;
    let mask_json = serde_json::to_string_pretty(&mask.to_artifact())
        .map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(dir.join("mask.json"), mask_json + "\n")?;
    let cfg_json = serde_json::to_string_pretty(&effective_config(cfg, job))
        .map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(dir.join("config.json"), cfg_json + "\n")?;
    Ok(())
}

/// Append the wall-clock sidecar; kept out of metrics.jsonl so reruns stay
/// byte-identical.
fn write_timing(cfg: &ExperimentConfig, job: &Job, wall_secs: f64) -> Result<()> {
    let Some(out) = cfg.out.as_deref() else {
        return Ok(());
    };
    let dir = run_dir(out, job);
    std::fs::create_dir_all(&dir)?;
    let line = serde_json::json!({
        "run_id": job.run_id(),
        "seed": job.seed,
        "wall_secs": wall_secs,
    });
    std::fs::write(dir.join("timings.jsonl"), format!("{line}\n"))?;
    Ok(())
}

// --- sweep execution and aggregation -----------------------------------------

/// Aggregated accuracy for one sweep point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub method: MethodKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ratio: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<f64>,
    pub prune_steps: usize,
    /// Mean realized final sparsity across surviving seeds.
    pub sparsity: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub n_seeds: usize,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
}

/// Sweep output: one row per sweep point, in expansion order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub kind: SweepKind,
    pub rows: Vec<SummaryRow>,
}

/// Outcome of one job inside a sweep.
#[derive(Debug)]
pub struct JobOutcome {
    pub job: Job,
    pub result: Result<RunResult>,
}

/// Run every job (work-stealing across threads; output order is the
/// deterministic expansion order, not completion order).
pub fn execute_jobs(cfg: &ExperimentConfig, jobs: &[Job], data: &PreparedData) -> Vec<JobOutcome> {
    let outcomes: Vec<JobOutcome> = jobs
        .par_iter()
        .map(|job| {
            let result = execute_run(cfg, job, data);
            if let Ok(r) = &result {
                // Timing failures must not fail the run.
                let _ = write_timing(cfg, job, r.wall_secs);
            }
            JobOutcome { job: job.clone(), result }
        })
        .collect();
    outcomes
}

/// Collapse per-seed outcomes into one row per label, preserving label order.
pub fn aggregate(kind: SweepKind, outcomes: &[JobOutcome]) -> SweepSummary {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for outcome in outcomes {
        let job = &outcome.job;
        let row = match rows.iter_mut().find(|r| r.label == job.label) {
            Some(row) => row,
            None => {
                rows.push(SummaryRow {
                    label: job.label.clone(),
                    method: job.method.kind,
                    ratio: job.ratio,
                    value: job.value,
                    prune_steps: job.prune_steps,
                    sparsity: 0.0,
                    mean_acc: 0.0,
                    std_acc: 0.0,
                    n_seeds: 0,
                    seeds: Vec::new(),
                    failed_seeds: Vec::new(),
                });
                rows.last_mut().expect("just pushed")
            }
        };
        match &outcome.result {
            Ok(res) => {
                row.seeds.push(job.seed);
                // Stash sums; normalized below.
                row.mean_acc += res.final_test_acc;
                row.sparsity += res.final_sparsity;
                row.n_seeds += 1;
            }
            Err(_) => row.failed_seeds.push(job.seed),
        }
    }
    // Second pass: exact mean/std from the stored per-seed accuracies.
    for row in rows.iter_mut() {
        let accs: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.job.label == row.label)
            .filter_map(|o| o.result.as_ref().ok().map(|r| r.final_test_acc))
            .collect();
        let (mean, std) = metrics::mean_std(&accs);
        row.mean_acc = mean;
        row.std_acc = std;
        if row.n_seeds > 0 {
            row.sparsity /= row.n_seeds as f64;
        } else {
            row.sparsity = f64::NAN;
        }
    }
    SweepSummary { kind, rows }
}

/// Persist the sweep summary next to the run directories.
pub fn write_summary(out: &Path, summary: &SweepSummary) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(out.join("sweep.json"), json + "\n")?;
    Ok(())
}

pub fn read_summary(out: &Path) -> Result<SweepSummary> {
    let text = std::fs::read_to_string(out.join("sweep.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))
}

// --- plot data ----------------------------------------------------------------

fn fmt_acc(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

/// Emit plot-ready CSV files for a sweep summary; returns the files written.
pub fn emit_plot_data(out: &Path, summary: &SweepSummary) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    match summary.kind {
        SweepKind::CompressionCurve => {
            let mut csv = String::from("method,compression_ratio,sparsity,mean_acc,std_acc,n_seeds\n");
            for row in &summary.rows {
                let ratio = row.ratio.unwrap_or(1);
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.method,
                    ratio,
                    fmt_acc(row.sparsity),
                    fmt_acc(row.mean_acc),
                    fmt_acc(row.std_acc),
                    row.n_seeds
                ));
            }
            let path = out.join("curve.csv");
            std::fs::write(&path, csv)?;
            written.push(path);
        }
        SweepKind::LambdaGrid | SweepKind::PGrid => {
            let (file, column) = if summary.kind == SweepKind::LambdaGrid {
                ("lambda_grid.csv", "lambda")
            } else {
                ("p_grid.csv", "p")
            };
            let mut csv = format!("{column},prune_steps,sparsity,mean_acc,std_acc,n_seeds\n");
            for row in &summary.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    fmt_value(row.value.unwrap_or(f64::NAN)),
                    row.prune_steps,
                    fmt_acc(row.sparsity),
                    fmt_acc(row.mean_acc),
                    fmt_acc(row.std_acc),
                    row.n_seeds
                ));
            }
            let path = out.join(file);
            std::fs::write(&path, csv)?;
            written.push(path);

            // Best grid value per prune-step target, ties to the smaller value.
            let mut steps: Vec<usize> = summary.rows.iter().map(|r| r.prune_steps).collect();
            steps.sort_unstable();
            steps.dedup();
            let mut best_csv = format!("prune_steps,{column}_best,mean_acc,std_acc\n");
            for m in steps {
                let best = summary
                    .rows
                    .iter()
                    .filter(|r| r.prune_steps == m && r.n_seeds > 0)
                    .min_by(|a, b| {
                        b.mean_acc
                            .total_cmp(&a.mean_acc)
                            .then(a.value.unwrap_or(f64::NAN).total_cmp(&b.value.unwrap_or(f64::NAN)))
                    });
                if let Some(row) = best {
                    best_csv.push_str(&format!(
                        "{},{},{},{}\n",
                        m,
                        fmt_value(row.value.unwrap_or(f64::NAN)),
                        fmt_acc(row.mean_acc),
                        fmt_acc(row.std_acc)
                    ));
                }
            }
            let best_path = out.join(if summary.kind == SweepKind::LambdaGrid {
                "lambda_best.csv"
            } else {
                "p_best.csv"
            });
            std::fs::write(&best_path, best_csv)?;
            written.push(best_path);
        }
        SweepKind::NoiseAblation => {
            let mut csv = String::from("method,prune_steps,sparsity,mean_acc,std_acc,n_seeds\n");
            for row in &summary.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.method,
                    row.prune_steps,
                    fmt_acc(row.sparsity),
                    fmt_acc(row.mean_acc),
                    fmt_acc(row.std_acc),
                    row.n_seeds
                ));
            }
            let path = out.join("ablation.csv");
            std::fs::write(&path, csv)?;
            written.push(path);
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelKind, ScheduleConfig};

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seeds = vec![0];
        cfg.model.kind = ModelKind::Mlp;
        cfg.model.input = vec![8];
        cfg.model.hidden = vec![16];
        cfg.model.batchnorm = false;
        cfg.dataset.kind = DatasetKind::Blobs;
        cfg.dataset.train = 120;
        cfg.dataset.test = 40;
        cfg.dataset.classes = 3;
        cfg.dataset.dims = 8;
        cfg.optimizer.batch_size = 32;
        cfg.optimizer.learning_rate = 0.05;
        cfg.schedule = ScheduleConfig { epochs: 5, prune_steps: 2, rate: 0.5 };
        cfg
    }

    #[test]
    fn tiny_flipout_run_prunes_to_schedule() {
        let cfg = tiny_config();
        cfg.validate().unwrap();
        let data = prepare_data(&cfg).unwrap();
        let jobs = expand_run(&cfg);
        assert_eq!(jobs.len(), 1);
        let res = execute_run(&cfg, &jobs[0], &data).unwrap();
        assert!((res.final_sparsity - 0.75).abs() < 1e-2);
        let prunes: Vec<_> = res
            .records
            .iter()
            .filter(|r| matches!(r, Record::Prune(_)))
            .collect();
        assert_eq!(prunes.len(), 2);
        let finals: Vec<_> = res
            .records
            .iter()
            .filter(|r| matches!(r, Record::Final(_)))
            .collect();
        assert_eq!(finals.len(), 1);
    }

    #[test]
    fn same_seed_runs_are_identical_and_seeds_differ() {
        let cfg = tiny_config();
        let data = prepare_data(&cfg).unwrap();
        let job = &expand_run(&cfg)[0];
        let a = execute_run(&cfg, job, &data).unwrap();
        let b = execute_run(&cfg, job, &data).unwrap();
        assert_eq!(
            serde_json::to_string(&a.records).unwrap(),
            serde_json::to_string(&b.records).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&a.mask).unwrap(),
            serde_json::to_string(&b.mask).unwrap()
        );
        let mut other = job.clone();
        other.seed = 1;
        let c = execute_run(&cfg, &other, &data).unwrap();
        assert_ne!(
            serde_json::to_string(&a.records).unwrap(),
            serde_json::to_string(&c.records).unwrap()
        );
    }

    #[test]
    fn lambda_zero_matches_no_noise_variant_exactly() {
        let cfg = tiny_config();
        let data = prepare_data(&cfg).unwrap();
        let mut with_zero = expand_run(&cfg)[0].clone();
        with_zero.method.lambda = 0.0;
        let mut no_noise = with_zero.clone();
        no_noise.method.kind = MethodKind::FlipoutNoNoise;
        no_noise.label = with_zero.label.clone();
        let a = execute_run(&cfg, &with_zero, &data).unwrap();
        let b = execute_run(&cfg, &no_noise, &data).unwrap();
        assert_eq!(
            serde_json::to_string(&a.records).unwrap(),
            serde_json::to_string(&b.records).unwrap()
        );
    }

    #[test]
    fn sweep_expansion_orders_and_labels() {
        let mut cfg = tiny_config();
        cfg.seeds = vec![0, 1];
        cfg.schedule.epochs = 10;
        let mut sw = SweepConfig::default();
        sw.ratios = vec![4, 16];
        sw.methods = vec![MethodKind::Flipout, MethodKind::Random];
        cfg.sweep = Some(sw.clone());
        let jobs = expand_sweep(&cfg, &sw).unwrap();
        // dense(2 seeds) + 2 methods x 2 ratios x 2 seeds
        assert_eq!(jobs.len(), 2 + 8);
        assert_eq!(jobs[0].label, "dense");
        assert_eq!(jobs[2].label, "flipout_x4");
        assert_eq!(jobs[4].label, "flipout_x16");
        assert_eq!(jobs[4].prune_steps, 4);
        assert_eq!(jobs[6].label, "random_x4");

        let sw = SweepConfig { kind: SweepKind::LambdaGrid, values: vec![0.8, 1.0], ..Default::default() };
        cfg.sweep = Some(sw.clone());
        let jobs = expand_sweep(&cfg, &sw).unwrap();
        assert_eq!(jobs.len(), 4);
        assert_eq!(jobs[0].label, "flipout_lam0.8_m2");
        assert_eq!(jobs[0].method.lambda, 0.8);
    }

    #[test]
    fn aggregate_and_curve_csv_shape() {
        let mut cfg = tiny_config();
        cfg.seeds = vec![0, 1];
        cfg.schedule.epochs = 4;
        cfg.schedule.prune_steps = 2;
        let sw = SweepConfig {
            ratios: vec![4],
            methods: vec![MethodKind::GlobalMagnitude],
            ..Default::default()
        };
        cfg.sweep = Some(sw.clone());
        let data = prepare_data(&cfg).unwrap();
        let jobs = expand_sweep(&cfg, &sw).unwrap();
        let outcomes = execute_jobs(&cfg, &jobs, &data);
        let summary = aggregate(SweepKind::CompressionCurve, &outcomes);
        assert_eq!(summary.rows.len(), 2); // dense + magnitude x4
        assert_eq!(summary.rows[0].label, "dense");
        assert_eq!(summary.rows[0].n_seeds, 2);
        assert!(summary.rows[1].sparsity > 0.74 && summary.rows[1].sparsity < 0.76);

        let dir = std::env::temp_dir().join(format!("sparselab-test-{}", std::process::id()));
        let files = emit_plot_data(&dir, &summary).unwrap();
        let text = std::fs::read_to_string(&files[0]).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,compression_ratio,sparsity,mean_acc,std_acc,n_seeds"
        );
        let dense = lines.next().unwrap();
        assert!(dense.starts_with("dense,1,0.000000,"));
        let mag = lines.next().unwrap();
        assert!(mag.starts_with("global_magnitude,4,0.75"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_summary_emits_header_only() {
        let summary = SweepSummary { kind: SweepKind::CompressionCurve, rows: Vec::new() };
        let dir = std::env::temp_dir().join(format!("sparselab-empty-{}", std::process::id()));
        let files = emit_plot_data(&dir, &summary).unwrap();
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text, "method,compression_ratio,sparsity,mean_acc,std_acc,n_seeds\n");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn snip_and_hoyer_runs_complete() {
        let mut cfg = tiny_config();
        cfg.schedule.epochs = 4;
        let data = prepare_data(&cfg).unwrap();
        let mut job = expand_run(&cfg)[0].clone();
        job.method = MethodSpec::new(MethodKind::Snip);
        job.label = "snip".into();
        let res = execute_run(&cfg, &job, &data).unwrap();
        // One-shot prune at init: sparsity fixed from the first record on.
        assert!((res.final_sparsity - 0.75).abs() < 1e-2);
        match &res.records[0] {
            Record::Prune(p) => {
                assert_eq!(p.epoch, 0);
                assert_eq!(p.event, 1);
            }
            other => panic!("expected a prune record first, got {other:?}"),
        }

        let mut job = expand_run(&cfg)[0].clone();
        job.method = MethodSpec::new(MethodKind::HoyerSquare);
        job.method.alpha = 1e-3;
        job.label = "hoyer".into();
        let res = execute_run(&cfg, &job, &data).unwrap();
        // Regularized epochs plus the fine-tune tail.
        let epochs = res
            .records
            .iter()
            .filter(|r| matches!(r, Record::Epoch(_)))
            .count();
        assert_eq!(epochs, 4 + 2);
        assert!(res.final_sparsity >= 0.0);
    }
}
