//! Command-line entry point: single runs, multi-seed sweeps, plot-data
//! regeneration, config validation, and numeric self-checks.
//!
//! Exit codes: 0 success, 1 configuration or argument error, 2 run failure.

use clap::{Parser, Subcommand};
use rand::Rng;
use rand_distr::StandardNormal;
use sparselab::baselines::{hoyer_grad, hoyer_penalty};
use sparselab::config::ExperimentConfig;
use sparselab::error::{Error, Result};
use sparselab::flipout;
use sparselab::harness;
use sparselab::nn::{LayerSpec, Network};
use sparselab::oracle;
use sparselab::params::{Grads, ParamGroup, ParamRole, ParameterStore};
use sparselab::prune::{FlipState, Mask};
use sparselab::rng;
use sparselab::tensor::Tensor;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "sparselab",
    version,
    about = "Sparse-training laboratory: flip-counting pruning with noise injection, plus magnitude, random, SNIP, and Hoyer-Square baselines."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the configured method for every seed and report final accuracy.
    Run {
        /// TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write metrics.jsonl, mask.json, config.json per run under this
        /// directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand the config's sweep, run every job, and emit summary + CSVs.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's `out`, else `runs`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild plot CSVs from an existing sweep.json.
    PlotData {
        /// Directory containing sweep.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and cross-check a config file without running anything.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Self-check gradients, flip counting, and noise statistics against
    /// independent oracles.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Run { config, seed, out } => cmd_run(config, seed, out),
        Cmd::Sweep { config, out } => cmd_sweep(config, out),
        Cmd::PlotData { out } => cmd_plot_data(out),
        Cmd::ValidateConfig { config } => cmd_validate(config),
        Cmd::Oracle { seed } => cmd_oracle(seed),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let code = match e {
            Error::Config(_) | Error::Parse { .. } => 1,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn cmd_run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = out {
        cfg.out = Some(o);
    }
    cfg.validate()?;
    let data = harness::prepare_data(&cfg)?;
    let jobs = harness::expand_run(&cfg);
    let outcomes = harness::execute_jobs(&cfg, &jobs, &data);
    let mut failed = 0usize;
    for o in &outcomes {
        match &o.result {
            Ok(r) => println!(
                "{}: test_acc {:.4}  sparsity {:.4}  alive {}/{}  ({:.1}s)",
                o.job.run_id(),
                r.final_test_acc,
                r.final_sparsity,
                r.mask.alive,
                r.mask.total,
                r.wall_secs
            ),
            Err(e) => {
                failed += 1;
                eprintln!("{}: failed: {e}", o.job.run_id());
            }
        }
    }
    if let Some(dir) = &cfg.out {
        println!("artifacts under {}", dir.display());
    }
    if failed > 0 {
        return Err(Error::Run(format!("{failed} of {} runs failed", outcomes.len())));
    }
    Ok(())
}

fn cmd_sweep(config: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(o) = out {
        cfg.out = Some(o);
    }
    if cfg.out.is_none() {
        cfg.out = Some(PathBuf::from("runs"));
    }
    cfg.validate()?;
    let sweep = cfg.sweep_or_default();
    let jobs = harness::expand_sweep(&cfg, &sweep)?;
    println!("sweep: {} jobs", jobs.len());
    let data = harness::prepare_data(&cfg)?;
    let outcomes = harness::execute_jobs(&cfg, &jobs, &data);
    let summary = harness::aggregate(sweep.kind, &outcomes);
    let out_dir = cfg.out.as_deref().expect("set above");
    harness::write_summary(out_dir, &summary)?;
    let files = harness::emit_plot_data(out_dir, &summary)?;
    for row in &summary.rows {
        println!(
            "{}: mean_acc {:.4}  std {:.4}  sparsity {:.4}  seeds {}{}",
            row.label,
            row.mean_acc,
            row.std_acc,
            row.sparsity,
            row.n_seeds,
            if row.failed_seeds.is_empty() {
                String::new()
            } else {
                format!("  FAILED: {:?}", row.failed_seeds)
            }
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    let failed: usize = summary.rows.iter().map(|r| r.failed_seeds.len()).sum();
    if failed > 0 {
        return Err(Error::Run(format!("{failed} runs failed; see metrics for details")));
    }
    Ok(())
}

fn cmd_plot_data(out: PathBuf) -> Result<()> {
    let summary = harness::read_summary(&out)?;
    let files = harness::emit_plot_data(&out, &summary)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_validate(config: PathBuf) -> Result<()> {
    let cfg = ExperimentConfig::load(&config)?;
    cfg.validate()?;
    println!("config ok: {}", config.display());
    Ok(())
}

// --- oracle self-checks -------------------------------------------------------

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(checks: &[Check]) -> Result<()> {
    let mut failed = 0;
    for c in checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::Run(format!("{failed} oracle checks failed")));
    }
    println!("all {} oracle checks passed", checks.len());
    Ok(())
}

fn cmd_oracle(seed: u64) -> Result<()> {
    let mut checks = Vec::new();
    checks.extend(gradient_checks(seed)?);
    checks.push(hoyer_gradient_check(seed));
    checks.push(flip_recount_check(seed));
    checks.extend(noise_checks(seed));
    report(&checks)
}

fn random_batch(shape: &[usize], n: usize, classes: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let mut full = vec![n];
    full.extend_from_slice(shape);
    let numel: usize = full.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    (Tensor::from_vec(&full, data), labels)
}

fn gradient_checks(seed: u64) -> Result<Vec<Check>> {
    let scenarios: Vec<(&'static str, Network)> = vec![
        (
            "gradcheck/mlp+batchnorm",
            Network {
                input_shape: vec![10],
                layers: vec![
                    LayerSpec::Dense { in_features: 10, out_features: 12 },
                    LayerSpec::BatchNorm { features: 12 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { in_features: 12, out_features: 4 },
                ],
            },
        ),
        (
            "gradcheck/conv+batchnorm",
            Network {
                input_shape: vec![2, 6, 6],
                layers: vec![
                    LayerSpec::Conv2d { in_channels: 2, out_channels: 3, kernel: 3 },
                    LayerSpec::BatchNorm { features: 3 },
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    LayerSpec::Dense { in_features: 48, out_features: 4 },
                ],
            },
        ),
    ];
    let mut checks = Vec::new();
    for (name, net) in scenarios {
        let model = net.build(&mut rng::stream(seed, rng::STREAM_INIT))?;
        let (x, y) = random_batch(&net.input_shape, 5, 4, seed ^ 0x5eed);
        let rep = oracle::gradcheck(&model, &x, &y, 1e-5);
        checks.push(Check {
            name,
            passed: rep.max_rel_err <= 1e-5,
            detail: format!(
                "max rel err {:.3e} over {} entries (worst {})",
                rep.max_rel_err, rep.checked, rep.worst
            ),
        });
    }
    Ok(checks)
}

fn hoyer_gradient_check(seed: u64) -> Check {
    let mut rng = rng::stream(seed, rng::STREAM_METHOD);
    let groups = vec![
        ParamGroup {
            name: "l0.dense.weight".into(),
            role: ParamRole::Weight,
            layer: 0,
            prunable: true,
            tensor: Tensor::from_vec(
                &[24],
                (0..24).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            ),
        },
        ParamGroup {
            name: "l1.dense.weight".into(),
            role: ParamRole::Weight,
            layer: 1,
            prunable: true,
            tensor: Tensor::from_vec(
                &[16],
                (0..16).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            ),
        },
    ];
    let mut params = ParameterStore { groups };
    let mut worst = 0.0f64;
    for global in [false, true] {
        let mut grads = Grads::zeros_like(&params);
        hoyer_grad(&params, 1.0, global, &mut grads);
        let h = 1e-6;
        for gi in 0..params.groups.len() {
            for i in 0..params.groups[gi].tensor.numel() {
                let orig = params.groups[gi].tensor.data[i];
                params.groups[gi].tensor.data[i] = orig + h;
                let plus = hoyer_penalty(&params, global);
                params.groups[gi].tensor.data[i] = orig - h;
                let minus = hoyer_penalty(&params, global);
                params.groups[gi].tensor.data[i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                worst = worst.max(oracle::relative_error(numeric, grads.tensors[gi].data[i]));
            }
        }
    }
    Check {
        name: "gradcheck/hoyer-penalty",
        passed: worst <= 1e-6,
        detail: format!("max rel err {worst:.3e} (per-layer and global)"),
    }
}

fn flip_recount_check(seed: u64) -> Check {
    const TRAJECTORIES: usize = 1_000;
    const STEPS: usize = 1_000;
    let mut rng = rng::stream(seed, rng::STREAM_NOISE);
    let mut params = ParameterStore {
        groups: vec![ParamGroup {
            name: "l0.dense.weight".into(),
            role: ParamRole::Weight,
            layer: 0,
            prunable: true,
            tensor: Tensor::zeros(&[TRAJECTORIES]),
        }],
    };
    // Initial values are part of each trajectory: flips are counted against
    // the starting signs.
    for v in params.groups[0].tensor.data.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let mask = Mask::all_alive(&params);
    let mut flips = FlipState::new(&params, &mask);
    let mut trajectories: Vec<Vec<f64>> =
        params.groups[0].tensor.data.iter().map(|&v| vec![v]).collect();
    for _ in 0..STEPS {
        for (t, v) in params.groups[0].tensor.data.iter_mut().enumerate() {
            let next: f64 = if rng.gen_bool(0.02) { 0.0 } else { rng.sample(StandardNormal) };
            *v = next;
            trajectories[t].push(next);
        }
        flips.record(&params, &mask);
    }
    let mut mismatches = 0usize;
    for (t, traj) in trajectories.iter().enumerate() {
        if oracle::recount_flips(traj) != flips.layers[0].flips[t] {
            mismatches += 1;
        }
    }
    Check {
        name: "flips/recount",
        passed: mismatches == 0,
        detail: format!("{mismatches} mismatches over {TRAJECTORIES} trajectories x {STEPS} steps"),
    }
}

fn noise_checks(seed: u64) -> Vec<Check> {
    const WIDTH: usize = 4_096;
    let mut rng = rng::stream(seed, rng::STREAM_INIT);
    let params = ParameterStore {
        groups: vec![ParamGroup {
            name: "l0.dense.weight".into(),
            role: ParamRole::Weight,
            layer: 0,
            prunable: true,
            tensor: Tensor::from_vec(
                &[WIDTH],
                (0..WIDTH).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            ),
        }],
    };
    let mask = Mask::all_alive(&params);
    let report_ = flipout::noise_report(&params, &mask);
    let sigma2 = report_.layers[0].sigma2;

    // Empirical variance of ~10^6 injected noise samples at lambda = 1.
    let mut noise_rng = rng::stream(seed, rng::STREAM_NOISE);
    let rounds = 1_000_000usize.div_ceil(WIDTH);
    let mut samples = Vec::with_capacity(rounds * WIDTH);
    for _ in 0..rounds {
        let mut grads = Grads::zeros_like(&params);
        flipout::inject_noise(&mut grads, &params, &mask, 1.0, &mut noise_rng);
        samples.extend_from_slice(&grads.tensors[0].data);
    }
    let (_, var) = oracle::moments(&samples);
    let rel = (var - sigma2).abs() / sigma2;

    // Bit-identical gradients at lambda = 0.
    let mut grads = Grads::zeros_like(&params);
    for g in grads.tensors[0].data.iter_mut() {
        *g = noise_rng.sample::<f64, _>(StandardNormal);
    }
    let before = grads.tensors[0].data.clone();
    flipout::inject_noise(&mut grads, &params, &mask, 0.0, &mut noise_rng);
    let identical = before
        .iter()
        .zip(&grads.tensors[0].data)
        .all(|(a, b)| a.to_bits() == b.to_bits());

    vec![
        Check {
            name: "noise/variance",
            passed: rel <= 0.01,
            detail: format!(
                "empirical var {var:.6} vs sigma2 {sigma2:.6} ({} samples, rel err {rel:.4})",
                samples.len()
            ),
        },
        Check {
            name: "noise/lambda-zero",
            passed: identical,
            detail: "gradients bit-identical with injection disabled".into(),
        },
    ]
}
