//! Metrics records: JSON-lines per run, plus the aggregation helpers the
//! sweep summaries are built from.
//!
//! Serialized records carry no wall-clock fields, so two runs of the same
//! seeded config produce byte-identical files; timings are written to a
//! sidecar instead.

use crate::error::Result;
use crate::flipout::NoiseReport;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Alive counts for one prunable layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAlive {
    pub name: String,
    pub alive: usize,
    pub total: usize,
}

/// Flip-count spread over alive weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipSummary {
    pub min: u64,
    pub median: u64,
    pub max: u64,
}

/// One record per completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub run_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub test_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_acc: Option<f64>,
    pub sparsity: f64,
    pub alive_per_layer: Vec<LayerAlive>,
    pub sigma2_per_layer: NoiseReport,
    pub flips: FlipSummary,
}

/// One record per prune event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub run_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
    pub event: usize,
    pub pruned: usize,
    pub alive_before: usize,
    pub alive_after: usize,
    pub sparsity_after: f64,
    pub sigma2_before: NoiseReport,
    pub sigma2_after: NoiseReport,
    pub annealing_ok: bool,
    pub collapsed_layers: Vec<String>,
}

/// Emitted when a run aborts; later seeds still run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub run_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
    pub message: String,
}

/// Closing record of a successful run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub run_id: String,
    pub seed: u64,
    pub epochs: usize,
    pub steps: u64,
    pub final_test_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_val_acc: Option<f64>,
    pub final_sparsity: f64,
    pub alive: usize,
    pub total: usize,
}

/// A metrics stream entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Epoch(EpochRecord),
    Prune(PruneRecord),
    Failure(FailureRecord),
    Final(FinalRecord),
}

/// Write records as JSON lines.
pub fn write_jsonl(path: &Path, records: &[Record]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read back a JSON-lines metrics file.
pub fn read_jsonl(path: &Path) -> Result<Vec<Record>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Mean and population standard deviation; a single value has deviation 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
