//! Contrastive encoder for binned propagation counts.

pub mod augment;
pub mod encoder;
pub mod losses;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::{bin_propagation, EmbeddingTable, NewsRecord};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, OptimConfig, Optimizer, ParamStore, Tape, Tensor};
use crate::rng::{stream, Rng};

pub use augment::{strong_augment, strong_augment_with, weak_augment};
pub use encoder::{PropForward, PropNet};
pub use losses::{contextual_contrast_loss, temporal_contrast_loss, ContextNegatives};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropEmbedConfig {
    /// Bin width in seconds.
    pub delta: u64,
    /// Index of the last bin; series have `horizon_bins + 1` entries.
    pub horizon_bins: usize,
    pub dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub weak_sigma: f64,
    pub segments_min: usize,
    pub segments_max: usize,
    pub strong_sigma: f64,
    pub temperature: f64,
    /// Future-prediction horizon of the temporal loss.
    pub predict_steps: usize,
    pub negatives: ContextNegatives,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PropEmbedConfig {
    fn default() -> Self {
        PropEmbedConfig {
            delta: 3600,
            horizon_bins: 48,
            dim: 16,
            hidden: 16,
            heads: 2,
            weak_sigma: 0.05,
            segments_min: 4,
            segments_max: 8,
            strong_sigma: 0.1,
            temperature: 0.2,
            predict_steps: 3,
            negatives: ContextNegatives::CrossView,
            epochs: 20,
            batch_size: 32,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

impl PropEmbedConfig {
    pub fn seq_len(&self) -> usize {
        self.horizon_bins + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta == 0 {
            return Err(Error::Config("propagation bin width must be > 0".into()));
        }
        if self.segments_min < 2 || self.segments_max < self.segments_min {
            return Err(Error::Config(format!(
                "segment range [{}, {}] must satisfy 2 <= min <= max",
                self.segments_min, self.segments_max
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if self.predict_steps == 0 || self.predict_steps >= self.seq_len() {
            return Err(Error::Config(format!(
                "prediction horizon {} must lie in 1..{}",
                self.predict_steps,
                self.seq_len()
            )));
        }
        if self.dim == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("prop dim, hidden and batch_size must be > 0".into()));
        }
        if !self.hidden.is_multiple_of(self.heads.max(1)) || self.heads == 0 {
            return Err(Error::Config(format!("hidden {} is not divisible by {} heads", self.hidden, self.heads)));
        }
        if self.weak_sigma < 0.0 || self.strong_sigma < 0.0 {
            return Err(Error::Config("noise scales must be >= 0".into()));
        }
        OptimConfig::adam(self.learning_rate).validate()
    }

    fn net(&self) -> PropNet {
        PropNet {
            seq_len: self.seq_len(),
            hidden: self.hidden,
            heads: self.heads,
            dim: self.dim,
            horizon: self.predict_steps,
        }
    }
}

/// `ln(1 + count)` per bin.
pub fn log_series(counts: &[u64]) -> Vec<f64> {
    counts.iter().map(|&c| (c as f64).ln_1p()).collect()
}

/// Binned counts of every record, one row per record id.
pub fn series_table(records: &[NewsRecord], delta: u64, horizon_bins: usize) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(horizon_bins + 1);
    for r in records {
        let counts = bin_propagation(&sorted_events(r), delta, horizon_bins)?;
        table.push(r.id.clone(), counts.iter().map(|&c| c as f64).collect())?;
    }
    Ok(table)
}

fn sorted_events(r: &NewsRecord) -> Vec<crate::datamodel::EngagementEvent> {
    let mut ev = r.engagements.clone();
    ev.sort_by_key(|e| e.timestamp);
    ev
}

#[derive(Clone, Debug)]
pub struct PropEncoder {
    pub cfg: PropEmbedConfig,
    pub params: ParamStore,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PropMeta {
    cfg: PropEmbedConfig,
    epoch_losses: Vec<f64>,
}

impl PropEncoder {
    pub fn new(cfg: &PropEmbedConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        cfg.net().init(&mut params, &mut stream(cfg.seed, 0x90))?;
        Ok(PropEncoder {
            cfg: cfg.clone(),
            params,
            epoch_losses: Vec::new(),
        })
    }

    /// Summaries of already transformed series (one per row).
    pub fn encode_series(&self, series: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if series.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(series)?);
        let out = self.cfg.net().forward(&mut tape, &self.params, x)?;
        let z = tape.value(out.summary);
        Ok((0..z.rows()).map(|r| z.row_vec(r)).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(&self.params, dir)?;
        let meta = PropMeta {
            cfg: self.cfg.clone(),
            epoch_losses: self.epoch_losses.clone(),
        };
        let p = dir.join("prop.json");
        std::fs::write(&p, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("prop.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: PropMeta = serde_json::from_str(&text).map_err(|e| Error::parse(p.display().to_string(), e))?;
        Ok(PropEncoder {
            cfg: meta.cfg,
            params: checkpoint::load(dir)?,
            epoch_losses: meta.epoch_losses,
        })
    }
}

/// Loss of one batch of (already log-transformed) series on `tape`.
fn batch_loss(
    tape: &mut Tape,
    enc: &PropEncoder,
    batch: &[&Vec<f64>],
    rng: &mut Rng,
) -> Result<crate::nn::Var> {
    let cfg = &enc.cfg;
    let net = cfg.net();
    let mut strong = Vec::with_capacity(batch.len());
    let mut weak = Vec::with_capacity(batch.len());
    for s in batch {
        strong.push(strong_augment(s, cfg.segments_min, cfg.segments_max, cfg.strong_sigma, rng)?);
        weak.push(weak_augment(s, cfg.weak_sigma, rng));
    }
    let xs = tape.constant(Tensor::from_rows(&strong)?);
    let xw = tape.constant(Tensor::from_rows(&weak)?);
    let fs = net.forward(tape, &enc.params, xs)?;
    let fw = net.forward(tape, &enc.params, xw)?;
    let l = cfg.seq_len();
    let t = rng.random_range(0..l - cfg.predict_steps);
    let a = temporal_contrast_loss(tape, &enc.params, fs.contexts, fw.latents, l, t, cfg.predict_steps)?;
    let b = temporal_contrast_loss(tape, &enc.params, fw.contexts, fs.latents, l, t, cfg.predict_steps)?;
    let temporal = tape.add(a, b);
    let temporal = tape.scale(temporal, 0.5);
    let contextual = contextual_contrast_loss(tape, fs.summary, fw.summary, cfg.temperature, cfg.negatives)?;
    Ok(tape.add(temporal, contextual))
}

/// Trains on log-transformed series. Batches with fewer than two series
/// are skipped since the contextual loss needs negatives.
pub fn train_prop_encoder(series: &[Vec<f64>], cfg: &PropEmbedConfig) -> Result<PropEncoder> {
    if series.len() < 2 {
        return Err(Error::Config(format!("need at least 2 series, got {}", series.len())));
    }
    if let Some(s) = series.iter().find(|s| s.len() != cfg.seq_len()) {
        return Err(Error::Dimension(format!("series of length {}, expected {}", s.len(), cfg.seq_len())));
    }
    let mut enc = PropEncoder::new(cfg)?;
    let mut opt = Optimizer::new(OptimConfig {
        seed: cfg.seed,
        ..OptimConfig::adam(cfg.learning_rate)
    })?;
    let mut rng = stream(cfg.seed, 0x91);
    let mut order: Vec<usize> = (0..series.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&Vec<f64>> = chunk.iter().map(|&i| &series[i]).collect();
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, &enc, &batch, &mut rng)?;
            total += tape.value(loss).item();
            batches += 1;
            let grads = tape.backward(loss);
            enc.params.zero_grad();
            enc.params.accumulate(&tape, &grads)?;
            enc.params.fill_missing_grads();
            opt.step(&mut enc.params)?;
        }
        let mean = if batches == 0 { f64::NAN } else { total / batches as f64 };
        log::debug!("prop epoch {epoch}: loss {mean:.5}");
        enc.epoch_losses.push(mean);
    }
    Ok(enc)
}

/// Bins the record's engagements, applies `ln(1 + x)` and encodes.
pub fn encode_propagation(record: &NewsRecord, enc: &PropEncoder) -> Result<Vec<f64>> {
    let counts = bin_propagation(&sorted_events(record), enc.cfg.delta, enc.cfg.horizon_bins)?;
    Ok(enc.encode_series(&[log_series(&counts)])?.remove(0))
}

/// Trains the encoder on all records and returns one embedding row per record.
pub fn pretrain_prop(records: &[NewsRecord], cfg: &PropEmbedConfig) -> Result<(PropEncoder, EmbeddingTable)> {
    cfg.validate()?;
    let counts = series_table(records, cfg.delta, cfg.horizon_bins)?;
    let series: Vec<Vec<f64>> = counts
        .rows
        .iter()
        .map(|r| r.iter().map(|c| c.ln_1p()).collect())
        .collect();
    let enc = train_prop_encoder(&series, cfg)?;
    let mut table = EmbeddingTable::new(cfg.dim);
    for chunk in records.iter().zip(&series).collect::<Vec<_>>().chunks(256) {
        let rows: Vec<Vec<f64>> = chunk.iter().map(|(_, s)| (*s).clone()).collect();
        for ((r, _), z) in chunk.iter().zip(enc.encode_series(&rows)?) {
            table.push(r.id.clone(), z)?;
        }
    }
    Ok((enc, table))
}
