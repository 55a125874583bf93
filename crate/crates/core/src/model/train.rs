use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{Batch, LossWeights};
use super::{Model, ModelError, GEO_CLASSES, GEO_POSITIONS};
use crate::config::kv_config;
use crate::dgg::ALPHABET;
use crate::masker::MaskedExample;
use crate::numerics::{AdamConfig, Checkpoint, Graph, LinearDecay, NumError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: u64,
    /// Documents per step.
    pub batch_docs: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub mlm_weight: f64,
    pub geo_weight: f64,
    pub geocoding: bool,
    /// Invoke the checkpoint callback every this many steps; 0 disables.
    pub checkpoint_every: u64,
    pub seed: u64,
}

kv_config!(PretrainConfig { steps, batch_docs, lr, warmup_steps, mlm_weight, geo_weight, geocoding, checkpoint_every, seed });

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_docs: 8,
            lr: 5e-5,
            warmup_steps: 0,
            mlm_weight: 1.0,
            geo_weight: 1.0,
            geocoding: true,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { mlm: self.mlm_weight, geo: self.geo_weight, geocoding: self.geocoding }
    }

    pub fn schedule(&self) -> LinearDecay {
        LinearDecay { base: self.lr, warmup_steps: self.warmup_steps, total_steps: self.steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub mlm: Option<f64>,
    pub geo: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub logs: Vec<StepLog>,
}

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    /// Carries the parameters and optimizer state from before the failing
    /// step.
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String, last_good: Box<Checkpoint> },
    #[error("checkpoint callback failed: {0}")]
    Callback(String),
    #[error("empty corpus")]
    EmptyCorpus,
}

/// Document indices of the batch used at `step`: each epoch visits every
/// document once in an order shuffled by `(seed, epoch)`.
pub fn batch_indices(seed: u64, step: u64, docs: usize, batch_docs: usize) -> Vec<usize> {
    let per_epoch = docs.div_ceil(batch_docs) as u64;
    let (epoch, k) = (step / per_epoch, (step % per_epoch) as usize);
    let mut order: Vec<usize> = (0..docs).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    order[k * batch_docs..((k + 1) * batch_docs).min(docs)].to_vec()
}

/// Trains from the store's current Adam step up to `cfg.steps`, so a
/// model restored from a checkpoint continues the same trace.
pub fn pretrain<F>(model: &mut Model, corpus: &[MaskedExample], cfg: &PretrainConfig, on_checkpoint: F) -> Result<PretrainReport, PretrainError>
where
    F: FnMut(u64, &Model) -> Result<(), String>,
{
    pretrain_until(model, corpus, cfg, cfg.steps, on_checkpoint)
}

/// [`pretrain`] that returns once `stop` steps are done; the learning-rate
/// schedule still spans `cfg.steps`.
pub fn pretrain_until<F>(model: &mut Model, corpus: &[MaskedExample], cfg: &PretrainConfig, stop: u64, mut on_checkpoint: F) -> Result<PretrainReport, PretrainError>
where
    F: FnMut(u64, &Model) -> Result<(), String>,
{
    if corpus.is_empty() {
        return Err(PretrainError::EmptyCorpus);
    }
    let weights = cfg.weights();
    let schedule = cfg.schedule();
    let adam = AdamConfig::default();
    let mut report = PretrainReport::default();
    for step in model.store.step()..stop.min(cfg.steps) {
        let picked: Vec<MaskedExample> = batch_indices(cfg.seed, step, corpus.len(), cfg.batch_docs.max(1)).into_iter().map(|i| corpus[i].clone()).collect();
        let batch = Batch::new(&picked, &model.config, cfg.geocoding)?;
        let mut g = Graph::new();
        let f = model.forward(&model.store, &mut g, &batch, &weights)?;
        let loss = g.scalar(f.loss);
        let diverged = |reason: String, model: &Model| PretrainError::Diverged { step, reason, last_good: Box::new(model.to_checkpoint(true, &[])) };
        if !loss.is_finite() {
            return Err(diverged(format!("loss {loss}"), model));
        }
        model.store.zero_grad();
        g.backward(f.loss).accumulate_into(&mut model.store);
        let lr = schedule.at(step);
        match model.store.adam_step(&adam, lr) {
            Ok(()) => {}
            Err(e @ NumError::NonFiniteGradient { .. }) => return Err(diverged(e.to_string(), model)),
            Err(e) => return Err(ModelError::from(e).into()),
        }
        let log = StepLog { step, lr, loss, mlm: f.mlm_loss.map(|v| g.scalar(v)), geo: f.geo_loss.map(|v| g.scalar(v)) };
        log::debug!("step {step} loss {loss:.6}");
        report.logs.push(log);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(step + 1, model).map_err(PretrainError::Callback)?;
        }
    }
    Ok(report)
}

/// Losses over a whole corpus: MLM averaged over every masked position,
/// geocoding averaged over every POI node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mlm: f64,
    pub geo: Option<f64>,
    pub mlm_positions: usize,
    pub geo_nodes: usize,
}

pub fn evaluate(model: &Model, corpus: &[MaskedExample], weights: &LossWeights, chunk: usize) -> Result<LossBreakdown, ModelError> {
    let (mut mlm_sum, mut geo_sum) = (0.0, 0.0);
    let mut out = LossBreakdown::default();
    for part in corpus.chunks(chunk.max(1)) {
        let batch = Batch::new(part, &model.config, weights.geocoding)?;
        let mut g = Graph::new();
        let f = model.forward(&model.store, &mut g, &batch, weights)?;
        if let Some(l) = f.mlm_loss {
            mlm_sum += g.scalar(l) * batch.mlm_rows.len() as f64;
            out.mlm_positions += batch.mlm_rows.len();
        }
        if let Some(l) = f.geo_loss {
            geo_sum += g.scalar(l) * batch.geo_nodes.len() as f64;
            out.geo_nodes += batch.geo_nodes.len();
        }
    }
    out.mlm = if out.mlm_positions > 0 { mlm_sum / out.mlm_positions as f64 } else { 0.0 };
    out.geo = (weights.geocoding && out.geo_nodes > 0).then(|| geo_sum / out.geo_nodes as f64);
    out.total = weights.mlm * out.mlm + out.geo.map_or(0.0, |g| weights.geo * g);
    Ok(out)
}

/// Argmax geocodes of every POI node occurrence in `corpus`, in graph mode,
/// paired with the gold code.
pub fn geocode_accuracy(model: &Model, corpus: &[MaskedExample], chunk: usize) -> Result<Vec<(String, String)>, ModelError> {
    let mut out = Vec::new();
    for part in corpus.chunks(chunk.max(1)) {
        let batch = Batch::new(part, &model.config, true)?;
        if batch.geo_nodes.is_empty() {
            continue;
        }
        let mut g = Graph::new();
        let f = model.forward(&model.store, &mut g, &batch, &LossWeights::default())?;
        let logits = g.value(f.geo_logits.expect("geo nodes present"));
        for (p, _) in batch.geo_nodes.iter().enumerate() {
            let mut pred = String::with_capacity(GEO_POSITIONS);
            let mut gold = String::with_capacity(GEO_POSITIONS);
            for k in 0..GEO_POSITIONS {
                let row = logits.row(p * GEO_POSITIONS + k);
                let best = (0..GEO_CLASSES).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                pred.push(ALPHABET[best] as char);
                gold.push(ALPHABET[batch.geo_labels[p * GEO_POSITIONS + k].expect("geocode present")] as char);
            }
            out.push((pred, gold));
        }
    }
    Ok(out)
}
