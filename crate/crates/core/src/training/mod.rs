//! Negative SI-SNR training of the suppressor together with the fusion
//! weights, with class embeddings refreshed from the current encoder.

use crate::audio::{Waveform, MODEL_RATE};
use crate::datagen::{example_rng, make_eval_example, make_example, LoadedCatalog, ShardExample};
use crate::embeddings::{build_class_embedding, EmbeddingExtractor, EmbeddingStore, Provenance, StatNorm, MIN_RECORDING_SECS};
use crate::error::{Error, Result};
use crate::fusion::{fuse_backward, fuse_forward, FusionCache, FusionGrads, B1, B2, W1, W2};
use crate::metrics::{run_benchmark, si_snr_with_grad, BenchReport};
use crate::nn::{AdamW, AdamWConfig, LrSchedule};
use crate::scalar::Scalar;
use crate::suppressor::{SuppressorModel, Workspace};
use rand::Rng;
use std::fmt::Write as _;
use std::path::PathBuf;

/// Stream offset separating validation examples from training examples.
const VALIDATION_STREAM: u64 = 0x7a11_da7e;

/// `-SI-SNR(reference, estimate)` in dB.
pub fn neg_si_snr_loss(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    neg_si_snr_loss_with_grad::<f32>(&estimate.samples, &reference.samples, None)
}

/// Loss plus its gradient with respect to `estimate`. A zero-power
/// reference yields [`Error::DegenerateLoss`].
pub fn neg_si_snr_loss_with_grad<T: Scalar>(estimate: &[T], reference: &[T], grad: Option<&mut [T]>) -> Result<f64> {
    let has_grad = grad.is_some();
    let mut grad = grad;
    let v = si_snr_with_grad(reference, estimate, grad.as_deref_mut()).map_err(|e| match e {
        Error::ZeroReference => Error::DegenerateLoss("reference has zero power".into()),
        e => e,
    })?;
    if has_grad {
        for g in grad.unwrap().iter_mut() {
            *g = -*g;
        }
    }
    Ok(-v)
}

/// Where training mixtures come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// fresh examples drawn per step from the catalog
    OnTheFly,
    /// pre-built examples, cycled in index order
    Shards(Vec<ShardExample>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// length of the random training crop taken from each 4 s example
    pub crop_secs: f64,
    /// steps per epoch; class embeddings are rebuilt at every epoch start
    pub epoch_steps: u64,
    /// recordings per class used to build class embeddings
    pub embed_recordings: usize,
    /// validation examples per target-count condition; 0 skips validation
    pub val_examples: usize,
    pub val_conditions: Vec<usize>,
    /// intermediate validation cadence in steps; 0 validates only at the end
    pub validate_every: u64,
    /// checkpoint cadence in steps; 0 writes only the final checkpoint
    pub checkpoint_every: u64,
    pub out_dir: Option<PathBuf>,
    pub data: DataSource,
    /// fixed class embeddings; when set the encoder-derived refresh is off
    pub fixed_embeddings: Option<EmbeddingStore>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 4,
            lr: 1e-3,
            weight_decay: 1e-2,
            clip_norm: 5.0,
            seed: 7,
            crop_secs: 1.0,
            epoch_steps: 250,
            embed_recordings: 4,
            val_examples: 20,
            val_conditions: vec![1, 2, 3],
            validate_every: 0,
            checkpoint_every: 500,
            out_dir: None,
            data: DataSource::OnTheFly,
            fixed_embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epoch_steps == 0 || self.embed_recordings == 0 {
            return Err(Error::Config("batch, epoch_steps and embed_recordings must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 || !self.clip_norm.is_finite() {
            return Err(Error::Config(format!("invalid optimiser settings lr={} weight_decay={} clip_norm={}", self.lr, self.weight_decay, self.clip_norm)));
        }
        let crop = (self.crop_secs * MODEL_RATE as f64).round() as usize;
        if crop < crate::audio::WINDOW_SIZE || crop > crate::datagen::SEGMENT_LEN {
            return Err(Error::Config(format!("crop_secs {} outside [window, 4 s]", self.crop_secs)));
        }
        if self.val_conditions.iter().any(|&c| c == 0) {
            return Err(Error::Config("validation conditions must be positive".into()));
        }
        if let DataSource::Shards(s) = &self.data {
            if s.is_empty() {
                return Err(Error::Config("empty shard list".into()));
            }
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {k}")))
        }
        match key {
            "steps" => self.steps = p(key, value)?,
            "batch" => self.batch = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "clip_norm" => self.clip_norm = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "crop_secs" => self.crop_secs = p(key, value)?,
            "epoch_steps" => self.epoch_steps = p(key, value)?,
            "embed_recordings" => self.embed_recordings = p(key, value)?,
            "val_examples" => self.val_examples = p(key, value)?,
            "validate_every" => self.validate_every = p(key, value)?,
            "checkpoint_every" => self.checkpoint_every = p(key, value)?,
            "val_conditions" => {
                self.val_conditions = value.split(',').filter(|s| !s.is_empty()).map(|s| p(key, s)).collect::<Result<_>>()?;
            }
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown training key {key}"))),
        }
        Ok(())
    }
}

/// One optimiser step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// mean loss over the usable examples of the batch
    pub loss: f64,
    pub lr: f64,
    /// pre-clip global gradient norm
    pub grad_norm: f64,
    /// examples dropped for a zero-power residual crop
    pub skipped: usize,
}

impl StepRecord {
    pub fn to_line(&self) -> String {
        format!("step={} loss={} lr={} grad_norm={} skipped={}", self.step, self.loss, self.lr, self.grad_norm, self.skipped)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub step: u64,
    pub report: BenchReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SuppressorModel<f32>,
    pub store: EmbeddingStore,
    pub log: Vec<StepRecord>,
    /// score of the model before any update
    pub baseline: Option<BenchReport>,
    pub validations: Vec<Validation>,
}

impl TrainOutcome {
    pub fn final_validation(&self) -> Option<&BenchReport> {
        self.validations.last().map(|v| &v.report)
    }

    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for r in &self.log {
            let _ = writeln!(s, "{}", r.to_line());
        }
        s
    }
}

/// Refits the pooled-statistics standardisation on the catalog recordings
/// with the current encoder, then rebuilds and upserts every class embedding.
pub fn refresh_class_embeddings(model: &mut SuppressorModel<f32>, catalog: &LoadedCatalog, recordings: usize, store: &mut EmbeddingStore) -> Result<()> {
    let per_class: Vec<Vec<Waveform>> = catalog
        .clips
        .iter()
        .map(|clips| clips.iter().filter(|c| c.duration_secs() >= MIN_RECORDING_SECS).take(recordings).map(|c| (**c).clone()).collect())
        .collect();
    let mut ex = EmbeddingExtractor::new(model)?;
    let mut stats = Vec::new();
    for w in per_class.iter().flatten() {
        stats.push(ex.pooled_stats(model, w)?);
    }
    model.embed_norm = Some(StatNorm::fit(&stats)?);
    let mut ex = EmbeddingExtractor::new(model)?;
    for (id, recs) in catalog.ids.iter().zip(&per_class) {
        let e = build_class_embedding(recs, model, &mut ex)?;
        store.upsert(id, e, Provenance::Builtin, recs.len() as u32)?;
    }
    Ok(())
}

/// Held-out examples for each condition the catalog can support.
pub fn validation_set(catalog: &LoadedCatalog, conditions: &[usize], per_condition: usize, seed: u64) -> Result<Vec<ShardExample>> {
    let mut out = Vec::new();
    for &n in conditions {
        if n + 1 > catalog.len() {
            continue;
        }
        for i in 0..per_condition {
            let mut rng = example_rng(seed ^ VALIDATION_STREAM, ((n as u64) << 32) | i as u64);
            let mut ex: ShardExample = (&make_eval_example(catalog, n, &mut rng)?).into();
            ex.index = out.len();
            out.push(ex);
        }
    }
    Ok(out)
}

struct Crop {
    mixture: Vec<f32>,
    residual: Vec<f32>,
    target_ids: Vec<String>,
}

fn crop(mixture: &Waveform, residual: &Waveform, target_ids: &[String], len: usize, rng: &mut impl Rng) -> Crop {
    let n = mixture.len().min(residual.len());
    let start = if n > len { rng.gen_range(0..=n - len) } else { 0 };
    let end = (start + len).min(n);
    Crop { mixture: mixture.samples[start..end].to_vec(), residual: residual.samples[start..end].to_vec(), target_ids: target_ids.to_vec() }
}

fn draw_crop(cfg: &TrainConfig, catalog: &LoadedCatalog, step: u64, b: usize) -> Result<Crop> {
    let len = (cfg.crop_secs * MODEL_RATE as f64).round() as usize;
    let mut rng = example_rng(cfg.seed, step * cfg.batch as u64 + b as u64);
    match &cfg.data {
        DataSource::OnTheFly => {
            let ex = make_example(catalog, &mut rng)?;
            Ok(crop(&ex.mixture, &ex.residual, &ex.target_ids, len, &mut rng))
        }
        DataSource::Shards(shards) => {
            let ex = &shards[((step * cfg.batch as u64 + b as u64) % shards.len() as u64) as usize];
            if ex.mixture.sample_rate != MODEL_RATE || ex.residual.sample_rate != MODEL_RATE {
                return Err(Error::InvalidRate(ex.mixture.sample_rate));
            }
            Ok(crop(&ex.mixture, &ex.residual, &ex.target_ids, len, &mut rng))
        }
    }
}

fn write_text(path: &std::path::Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains `model` in place on examples from `catalog` (or the configured
/// shards). `on_step` sees every log record as it is produced.
pub fn train_with(
    mut model: SuppressorModel<f32>,
    catalog: &LoadedCatalog,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let refresh = cfg.fixed_embeddings.is_none();
    let mut store = cfg.fixed_embeddings.clone().unwrap_or_default();
    if refresh {
        // without steps the returned model must equal the input
        let mut fitted = model.clone();
        refresh_class_embeddings(&mut fitted, catalog, cfg.embed_recordings, &mut store)?;
        if cfg.steps > 0 {
            model = fitted;
        }
    }
    let val = if cfg.val_examples > 0 { validation_set(catalog, &cfg.val_conditions, cfg.val_examples, cfg.seed)? } else { Vec::new() };
    let baseline = if val.is_empty() { None } else { Some(run_benchmark(&model, &store, &val, &cfg.val_conditions, cfg.seed)?) };

    let opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, clip_norm: cfg.clip_norm, ..AdamWConfig::default() });
    let sched = LrSchedule::new(cfg.lr, cfg.steps);
    let mut ws = Workspace::new(&model.config)?;
    let mut grads = model.params.zero_grads();
    let mut cache = FusionCache::default();
    let (mut fused, mut grad_e, mut grad_out) = (Vec::new(), Vec::new(), Vec::new());
    let mut log = Vec::with_capacity(cfg.steps as usize);
    let mut validations = Vec::new();

    for step in 0..cfg.steps {
        if refresh && step > 0 && step % cfg.epoch_steps == 0 {
            refresh_class_embeddings(&mut model, catalog, cfg.embed_recordings, &mut store)?;
        }
        let fusion = model.fusion()?;
        grads.zero();
        let (mut loss_sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
        for b in 0..cfg.batch {
            let c = draw_crop(cfg, catalog, step, b)?;
            let embs = c.target_ids.iter().map(|id| store.embedding(id).map(|e| e.as_slice())).collect::<Result<Vec<_>>>()?;
            fuse_forward(&embs, &fusion, &mut cache, &mut fused)?;
            model.run(&mut ws, &c.mixture, MODEL_RATE, &fused, None)?;
            grad_out.clear();
            grad_out.resize(ws.output.len(), 0.0f32);
            let loss = match neg_si_snr_loss_with_grad(&ws.output, &c.residual, Some(&mut grad_out)) {
                Ok(l) => l,
                Err(Error::DegenerateLoss(_)) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {step}")));
            }
            model.backward(&mut ws, &fused, &grad_out, &mut grads, &mut grad_e)?;
            let (mut w1, mut b1, mut w2, mut b2) = (grads.take(W1), grads.take(B1), grads.take(W2), grads.take(B2));
            fuse_backward(&embs, &fusion, &cache, &grad_e, FusionGrads { w1: &mut w1, b1: &mut b1, w2: &mut w2, b2: &mut b2 }, None);
            grads.put(W1, w1);
            grads.put(B1, b1);
            grads.put(W2, w2);
            grads.put(B2, b2);
            loss_sum += loss;
            used += 1;
        }
        let lr = sched.lr_at(step);
        let (loss, grad_norm) = if used == 0 {
            (f64::NAN, 0.0)
        } else {
            grads.scale(1.0 / used as f32);
            (loss_sum / used as f64, opt.step(&mut model.params, &grads, lr)?)
        };
        let rec = StepRecord { step, loss, lr, grad_norm, skipped };
        on_step(&rec);
        log.push(rec);

        let done = step + 1;
        if let Some(dir) = &cfg.out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
                model.save(dir.join(format!("step_{done:06}.ckpt")))?;
            }
        }
        if !val.is_empty() && cfg.validate_every > 0 && done % cfg.validate_every == 0 && done < cfg.steps {
            validations.push(Validation { step: done, report: run_benchmark(&model, &store, &val, &cfg.val_conditions, cfg.seed)? });
        }
    }

    if refresh && cfg.steps > 0 {
        refresh_class_embeddings(&mut model, catalog, cfg.embed_recordings, &mut store)?;
    }
    if !val.is_empty() {
        validations.push(Validation { step: cfg.steps, report: run_benchmark(&model, &store, &val, &cfg.val_conditions, cfg.seed)? });
    }
    let outcome = TrainOutcome { model, store, log, baseline, validations };
    if let Some(dir) = &cfg.out_dir {
        outcome.model.save(dir.join("model.ckpt"))?;
        outcome.store.save(dir.join("embeddings.bin"))?;
        write_text(&dir.join("train.log"), &outcome.log_text())?;
        if let Some(r) = outcome.final_validation() {
            write_text(&dir.join("validation.txt"), &r.to_records())?;
        }
    }
    Ok(outcome)
}

pub fn train(model: SuppressorModel<f32>, catalog: &LoadedCatalog, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, catalog, cfg, |_| {})
}

#[cfg(test)]
mod tests;
