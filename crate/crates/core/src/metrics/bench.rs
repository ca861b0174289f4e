//! Benchmark over annotated examples grouped by target count.

use super::si_snr;
use crate::audio::{resample, Waveform, MODEL_RATE};
use crate::datagen::ShardExample;
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::fusion::fuse_embeddings;
use crate::suppressor::{SuppressorModel, Workspace};
use std::fmt::Write as _;

/// Scores of one evaluated example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRecord {
    pub targets: usize,
    pub index: usize,
    pub input_db: f64,
    pub output_db: f64,
    pub improvement_db: f64,
}

/// Means over the examples of one target count.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    pub targets: usize,
    pub count: usize,
    pub mean_input_db: f64,
    pub mean_output_db: f64,
    /// mean of per-example improvements
    pub mean_improvement_db: f64,
    /// mean output minus mean input
    pub improvement_of_means_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub seed: u64,
    pub model_id: String,
    pub rows: Vec<ConditionRow>,
    pub records: Vec<ExampleRecord>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl BenchReport {
    /// Aggregates records into one row per condition, in condition order.
    pub fn from_records(seed: u64, model_id: impl Into<String>, conditions: &[usize], records: Vec<ExampleRecord>) -> Self {
        let rows = conditions
            .iter()
            .map(|&c| {
                let sel: Vec<&ExampleRecord> = records.iter().filter(|r| r.targets == c).collect();
                let mi = mean(sel.iter().map(|r| r.input_db));
                let mo = mean(sel.iter().map(|r| r.output_db));
                ConditionRow {
                    targets: c,
                    count: sel.len(),
                    mean_input_db: mi,
                    mean_output_db: mo,
                    mean_improvement_db: mean(sel.iter().map(|r| r.improvement_db)),
                    improvement_of_means_db: mo - mi,
                }
            })
            .collect();
        BenchReport { seed, model_id: model_id.into(), rows, records }
    }

    pub fn row(&self, targets: usize) -> Option<&ConditionRow> {
        self.rows.iter().find(|r| r.targets == targets)
    }

    /// Three-column text table, one row per condition.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>14} {:>15} {:>9} {:>6}", "Targets", "Input SI-SNR", "Output SI-SNR", "SI-SNRi", "N");
        for r in &self.rows {
            let _ = writeln!(s, "{:<8} {:>14.2} {:>15.2} {:>9.2} {:>6}", r.targets, r.mean_input_db, r.mean_output_db, r.mean_improvement_db, r.count);
        }
        s
    }

    /// Line-delimited `key=value` records: one `row` line per condition and
    /// one `example` line per evaluated example.
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "kind=row seed={} model={} targets={} count={} input_db={} output_db={} si_snri_db={} diff_of_means_db={}",
                self.seed, self.model_id, r.targets, r.count, r.mean_input_db, r.mean_output_db, r.mean_improvement_db, r.improvement_of_means_db
            );
        }
        for e in &self.records {
            let _ = writeln!(
                s,
                "kind=example targets={} index={} input_db={} output_db={} si_snri_db={}",
                e.targets, e.index, e.input_db, e.output_db, e.improvement_db
            );
        }
        s
    }
}

fn at_model_rate(w: &Waveform) -> Result<std::borrow::Cow<'_, Waveform>> {
    Ok(if w.sample_rate == MODEL_RATE { std::borrow::Cow::Borrowed(w) } else { std::borrow::Cow::Owned(resample(w, MODEL_RATE)?) })
}

fn score(ex: &ShardExample, i: usize, estimate: &Waveform) -> Result<ExampleRecord> {
    let mix = at_model_rate(&ex.mixture)?;
    let res = at_model_rate(&ex.residual)?;
    let out = at_model_rate(estimate)?;
    if mix.len() != res.len() {
        return Err(Error::LengthMismatch(mix.len(), res.len()));
    }
    let input_db = si_snr(&res, &mix)?;
    let output_db = si_snr(&res, &out)?;
    let n = ex.target_ids.len();
    Ok(ExampleRecord { targets: n, index: if ex.index == 0 { i } else { ex.index }, input_db, output_db, improvement_db: output_db - input_db })
}

/// Suppresses each example's annotated targets and scores the output
/// against its residual. Examples are visited in order; those whose target
/// count is not in `conditions` are skipped.
pub fn run_benchmark(model: &SuppressorModel<f32>, store: &EmbeddingStore, examples: &[ShardExample], conditions: &[usize], seed: u64) -> Result<BenchReport> {
    let fusion = model.fusion()?;
    let mut ws = Workspace::new(&model.config)?;
    let mut records = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        if !conditions.contains(&ex.target_ids.len()) {
            continue;
        }
        let embs = ex.target_ids.iter().map(|id| store.embedding(id).map(|e| e.as_slice())).collect::<Result<Vec<_>>>()?;
        let fused = fuse_embeddings(&embs, &fusion)?;
        let mix = at_model_rate(&ex.mixture)?;
        let out = model.suppress_with(&mut ws, &mix, &fused)?;
        records.push(score(ex, i, &out)?);
    }
    Ok(BenchReport::from_records(seed, model_id(model), conditions, records))
}

/// Scores precomputed outputs, `estimates[i]` belonging to `examples[i]`,
/// exactly as [`run_benchmark`] scores its own.
pub fn score_estimates(examples: &[ShardExample], estimates: &[Waveform], conditions: &[usize], seed: u64, model_id: &str) -> Result<BenchReport> {
    if examples.len() != estimates.len() {
        return Err(Error::LengthMismatch(examples.len(), estimates.len()));
    }
    let mut records = Vec::new();
    for (i, (ex, est)) in examples.iter().zip(estimates).enumerate() {
        if conditions.contains(&ex.target_ids.len()) {
            records.push(score(ex, i, est)?);
        }
    }
    Ok(BenchReport::from_records(seed, model_id, conditions, records))
}

/// Short identifier of a parameter set used in reports.
pub fn model_id(model: &SuppressorModel<f32>) -> String {
    model.param_hash().chars().take(12).collect()
}
