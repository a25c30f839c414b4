use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datamodel::{EmbeddingSet, Modality, ModalityMask};
use crate::error::{Error, Result};
use crate::eval::kmeans;
use crate::nn::{checkpoint, OptimConfig, Optimizer, ParamStore, Tape, Tensor};
use crate::rng::stream;
use crate::umd2::gmu::{gmu_forward_tape, head_logits, modality_means, no_centers, prepare_centered, Centers, GmuBatch, NetNames};
use crate::umd2::losses::{argmax_rows, peer_loss, rince_loss, select_confident};
use crate::umd2::schedule::{ema_update, gamma_schedule, pool_size, sample_mask_with};

pub const TEACHER: &str = "teacher";
pub const STUDENT: &str = "student";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Umd2Config {
    pub clusters: usize,
    pub fused_dim: usize,
    pub q: f64,
    pub lambda: f64,
    pub gamma0: f64,
    pub gamma_n: f64,
    /// Steps of the EMA ramp; `None` means 10% of all training steps.
    pub warmup_steps: Option<u64>,
    pub batch_size: usize,
    pub pool_start: f64,
    pub pool_step: f64,
    pub keep_prob: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Scale of the initial cluster-head logits relative to the mean squared
    /// distance to the nearest initial centroid.
    pub head_sharpness: f64,
    /// Subtract each modality's training mean before normalizing inputs.
    pub center_inputs: bool,
    /// Leading epochs trained on the contrastive loss alone; the cluster
    /// heads are initialized when they end and the pool schedule starts.
    pub contrastive_epochs: usize,
    /// Cosine decay of the learning rate down to this fraction of it over
    /// all steps; `None` keeps it constant.
    pub cosine_floor: Option<f64>,
    pub seed: u64,
}

impl Default for Umd2Config {
    fn default() -> Self {
        Umd2Config {
            clusters: 2,
            fused_dim: 16,
            q: 0.5,
            lambda: 0.5,
            gamma0: 0.99,
            gamma_n: 0.999,
            warmup_steps: None,
            batch_size: 64,
            pool_start: 0.10,
            pool_step: 0.05,
            keep_prob: 0.5,
            epochs: 20,
            learning_rate: 1e-3,
            head_sharpness: 2.0,
            center_inputs: true,
            contrastive_epochs: 0,
            cosine_floor: None,
            seed: 0,
        }
    }
}

impl Umd2Config {
    pub fn validate(&self) -> Result<()> {
        if self.clusters < 2 {
            return Err(Error::Config(format!("need at least 2 clusters, got {}", self.clusters)));
        }
        if !(self.gamma0 > 0.0 && self.gamma0 <= self.gamma_n && self.gamma_n < 1.0) {
            return Err(Error::Config(format!(
                "EMA rates must satisfy 0 < gamma0 <= gamma_n < 1, got {} and {}",
                self.gamma0, self.gamma_n
            )));
        }
        if !(self.q > 0.0 && self.q <= 1.0) || !(self.lambda > 0.0) {
            return Err(Error::Config("q must lie in (0, 1] and lambda must be > 0".into()));
        }
        for (name, f) in [("pool_start", self.pool_start), ("pool_step", self.pool_step), ("keep_prob", self.keep_prob)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} = {f} outside (0, 1]")));
            }
        }
        if self.batch_size < 2 || self.fused_dim == 0 {
            return Err(Error::Config("batch_size must be >= 2 and fused_dim > 0".into()));
        }
        if !(self.head_sharpness > 0.0) {
            return Err(Error::Config("head_sharpness must be > 0".into()));
        }
        if self.contrastive_epochs > 0 && self.contrastive_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "contrastive_epochs = {} leaves no clustering epochs out of {}",
                self.contrastive_epochs, self.epochs
            )));
        }
        if let Some(f) = self.cosine_floor {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("cosine_floor = {f} outside (0, 1]")));
            }
        }
        OptimConfig::adam(self.learning_rate).validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub pool_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub epoch: usize,
    /// Epochs since the clustering loss was switched on; drives the pool
    /// size.
    pub pool_epoch: usize,
    pub step: u64,
    pub batch: usize,
    pub pool: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub pools: Vec<PoolRecord>,
    /// Every parameter name the optimizer stepped.
    pub optimizer_updates: BTreeSet<String>,
    pub gammas: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Umd2Model {
    pub cfg: Umd2Config,
    /// Width of every modality embedding.
    pub dim: usize,
    /// Input offsets shared by both networks.
    pub centers: Centers,
    pub teacher: ParamStore,
    pub student: ParamStore,
    pub state: TrainState,
    pub log: TrainLog,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    cfg: Umd2Config,
    dim: usize,
    centers: Centers,
    state: TrainState,
    log: TrainLog,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Network {
    Teacher,
    Student,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub cluster: usize,
    pub probs: Vec<f64>,
}

fn renamed(store: &ParamStore, from: &str, to: &str) -> Result<ParamStore> {
    let mut out = ParamStore::new();
    for (name, t) in store.iter() {
        let rest = name.strip_prefix(from).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        out.insert(format!("{to}{rest}"), t.clone())?;
    }
    Ok(out)
}

impl Umd2Model {
    pub fn new(cfg: &Umd2Config, dim: usize) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 {
            return Err(Error::Config("embedding dim must be > 0".into()));
        }
        let mut student = ParamStore::new();
        NetNames::new(STUDENT).init(&mut student, dim, cfg.fused_dim, cfg.clusters, &mut stream(cfg.seed, 0xb0))?;
        let teacher = renamed(&student, STUDENT, TEACHER)?;
        Ok(Umd2Model {
            cfg: cfg.clone(),
            dim,
            centers: no_centers(),
            teacher,
            student,
            state: TrainState {
                seed: cfg.seed,
                pool_fraction: cfg.pool_start,
                ..TrainState::default()
            },
            log: TrainLog::default(),
        })
    }

    fn store(&self, net: Network) -> (&ParamStore, NetNames) {
        match net {
            Network::Teacher => (&self.teacher, NetNames::new(TEACHER)),
            Network::Student => (&self.student, NetNames::new(STUDENT)),
        }
    }

    /// Fused vectors and cluster probabilities for a prepared batch.
    pub fn forward(&self, net: Network, batch: &GmuBatch) -> Result<(Tensor, Tensor)> {
        let (store, names) = self.store(net);
        let mut tape = Tape::new();
        let (z, _) = gmu_forward_tape(&mut tape, store, &names, batch)?;
        let y = head_logits(&mut tape, store, &names, z)?;
        let p = tape.softmax_rows(y);
        Ok((tape.value(z).clone(), tape.value(p).clone()))
    }

    /// Fusion inputs under this model's centering.
    pub fn batch(&self, sets: &[&EmbeddingSet], masks: &[ModalityMask]) -> Result<GmuBatch> {
        prepare_centered(sets, masks, self.dim, &self.centers)
    }

    /// Copies the teacher parameters into the student.
    pub fn sync_student_to_teacher(&mut self) -> Result<()> {
        self.student = renamed(&self.teacher, TEACHER, STUDENT)?;
        Ok(())
    }

    /// Initializes both cluster heads from k-means on the teacher's fused
    /// outputs: head row `k` scores `-a |z - c_k|^2` up to a shared term.
    fn init_heads(&mut self, sets: &[EmbeddingSet], masks: &[ModalityMask]) -> Result<()> {
        let mut fused = Vec::with_capacity(sets.len());
        for (chunk, mchunk) in sets.chunks(512).zip(masks.chunks(512)) {
            let refs: Vec<&EmbeddingSet> = chunk.iter().collect();
            let batch = self.batch(&refs, mchunk)?;
            let (z, _) = self.forward(Network::Teacher, &batch)?;
            fused.extend((0..z.rows()).map(|r| z.row_vec(r)));
        }
        let km = kmeans(&fused, self.cfg.clusters, 5, self.cfg.seed)?;
        let mean_d2 = km.inertia / fused.len() as f64;
        let a = self.cfg.head_sharpness / mean_d2.max(1e-12);
        let k = self.cfg.clusters;
        let mut w = Tensor::zeros(&[k, self.cfg.fused_dim]);
        let mut b = Tensor::zeros(&[1, k]);
        for (j, c) in km.centroids.iter().enumerate() {
            for (col, v) in c.iter().enumerate() {
                w.set(j, col, 2.0 * a * v);
            }
            b.set(0, j, -a * c.iter().map(|v| v * v).sum::<f64>());
        }
        for (store, prefix) in [(&mut self.teacher, TEACHER), (&mut self.student, STUDENT)] {
            let names = NetNames::new(prefix);
            *store.get_mut(&names.head_weight())? = w.clone();
            *store.get_mut(&names.head_bias())? = b.clone();
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut all = self.teacher.clone();
        for (name, t) in self.student.iter() {
            all.insert(name, t.clone())?;
        }
        checkpoint::save(&all, dir)?;
        let meta = ModelMeta {
            cfg: self.cfg.clone(),
            dim: self.dim,
            centers: self.centers.clone(),
            state: self.state.clone(),
            log: self.log.clone(),
        };
        let p = dir.join("umd2.json");
        std::fs::write(&p, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("umd2.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::parse(p.display().to_string(), e))?;
        let all = checkpoint::load(dir)?;
        let (mut teacher, mut student) = (ParamStore::new(), ParamStore::new());
        for (name, t) in all.iter() {
            if name.starts_with(&format!("{TEACHER}.")) {
                teacher.insert(name, t.clone())?;
            } else if name.starts_with(&format!("{STUDENT}.")) {
                student.insert(name, t.clone())?;
            } else {
                return Err(Error::UnknownParameter(name.to_string()));
            }
        }
        Ok(Umd2Model {
            cfg: meta.cfg,
            dim: meta.dim,
            centers: meta.centers,
            teacher,
            student,
            state: meta.state,
            log: meta.log,
        })
    }
}

/// Common embedding width of a dataset; every record needs at least one
/// modality.
pub fn dataset_dim(sets: &[EmbeddingSet]) -> Result<usize> {
    let mut dim = None;
    for (i, s) in sets.iter().enumerate() {
        match (s.dim()?, dim) {
            (None, _) => return Err(Error::MissingModality(format!("record {i} has no embeddings"))),
            (Some(d), None) => dim = Some(d),
            (Some(d), Some(e)) if d != e => {
                return Err(Error::Dimension(format!("record {i} has width {d}, others {e}")));
            }
            _ => {}
        }
    }
    dim.ok_or_else(|| Error::Config("no records to train on".into()))
}

fn intersect(a: &ModalityMask, b: &ModalityMask) -> Option<ModalityMask> {
    let w: [f64; 4] = std::array::from_fn(|k| a.weights()[k] * b.weights()[k]);
    ModalityMask::new(w).ok()
}

/// Learning rate at `step` of `total` under the configured schedule.
fn learning_rate_at(cfg: &Umd2Config, step: u64, total: u64) -> f64 {
    match cfg.cosine_floor {
        None => cfg.learning_rate,
        Some(floor) => {
            let t = if total == 0 { 0.0 } else { step as f64 / total as f64 };
            cfg.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
        }
    }
}

/// Teacher sees every available modality; the student sees a random subset
/// of them. Loss is RINCE between student and teacher fused vectors plus,
/// after the contrastive-only epochs, PEER on the teacher's most confident
/// records.
pub fn train_umd2(sets: &[EmbeddingSet], cfg: &Umd2Config) -> Result<Umd2Model> {
    cfg.validate()?;
    let dim = dataset_dim(sets)?;
    if sets.len() < 2 {
        return Err(Error::BatchSize("need at least 2 records".into()));
    }
    let avail: Vec<ModalityMask> = sets.iter().map(EmbeddingSet::availability_mask).collect::<Result<_>>()?;
    let mut model = Umd2Model::new(cfg, dim)?;
    if cfg.center_inputs {
        model.centers = modality_means(sets, dim);
    }
    model.init_heads(sets, &avail)?;

    let batches_per_epoch = sets.len().div_ceil(cfg.batch_size) - usize::from(sets.len() % cfg.batch_size == 1);
    let total_steps = (batches_per_epoch * cfg.epochs) as u64;
    let warmup = cfg.warmup_steps.unwrap_or((total_steps as f64 * 0.1).ceil() as u64);
    let mut opt = Optimizer::new(OptimConfig {
        seed: cfg.seed,
        ..OptimConfig::adam(cfg.learning_rate)
    })?;
    let mut order_rng = stream(cfg.seed, 0xb1);
    let mut peer_rng = stream(cfg.seed, 0xb2);
    let student_names = NetNames::new(STUDENT);
    let mut order: Vec<usize> = (0..sets.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let clustering = epoch >= cfg.contrastive_epochs;
        if clustering && epoch > 0 && epoch == cfg.contrastive_epochs {
            model.init_heads(sets, &avail)?;
        }
        let pool_epoch = epoch.saturating_sub(cfg.contrastive_epochs);
        model.state.epoch = epoch;
        model.state.pool_fraction = (cfg.pool_start + cfg.pool_step * pool_epoch as f64).min(1.0);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let refs: Vec<&EmbeddingSet> = chunk.iter().map(|&i| &sets[i]).collect();
            let full: Vec<ModalityMask> = chunk.iter().map(|&i| avail[i]).collect();
            let teacher_batch = model.batch(&refs, &full)?;
            let (zt, pt) = model.forward(Network::Teacher, &teacher_batch)?;

            let mut mask_rng = stream(cfg.seed ^ 0x6d61_736b, model.state.step);
            let mut masks = Vec::with_capacity(chunk.len());
            for a in &full {
                let mut m = None;
                for _ in 0..64 {
                    if let Some(x) = intersect(&sample_mask_with(cfg.keep_prob, &mut mask_rng)?, a) {
                        m = Some(x);
                        break;
                    }
                }
                masks.push(m.unwrap_or(*a));
            }
            let student_batch = model.batch(&refs, &masks)?;

            let mut tape = Tape::new();
            let (zs, _) = gmu_forward_tape(&mut tape, &model.student, &student_names, &student_batch)?;
            let zt_var = tape.constant(zt);
            let contrast = rince_loss(&mut tape, zs, zt_var, cfg.q, cfg.lambda)?;
            let mut pool_len = None;
            let loss = if clustering {
                let logits = head_logits(&mut tape, &model.student, &student_names, zs)?;
                let log_probs = tape.log_softmax_rows(logits);
                let k = pool_size(chunk.len(), pool_epoch, cfg.pool_start, cfg.pool_step);
                let pool = select_confident(&pt, k);
                pool_len = Some(pool.len());
                let peer = peer_loss(&mut tape, log_probs, &argmax_rows(&pt), &pool, &mut peer_rng)?;
                tape.add(contrast, peer)
            } else {
                contrast
            };
            total += tape.value(loss).item();
            count += 1;

            let grads = tape.backward(loss);
            model.student.zero_grad();
            model.student.accumulate(&tape, &grads)?;
            model.student.fill_missing_grads();
            opt.set_learning_rate(learning_rate_at(cfg, model.state.step, total_steps))?;
            let updated = opt.step(&mut model.student)?;
            model.log.optimizer_updates.extend(updated);

            let gamma = gamma_schedule(model.state.step, cfg.gamma0, cfg.gamma_n, warmup);
            ema_update(&mut model.teacher, &model.student, gamma)?;
            model.log.gammas.push(gamma);
            if let Some(pool) = pool_len {
                model.log.pools.push(PoolRecord {
                    epoch,
                    pool_epoch,
                    step: model.state.step,
                    batch: chunk.len(),
                    pool,
                });
            }
            model.state.step += 1;
        }
        let mean = if count == 0 { f64::NAN } else { total / count as f64 };
        log::debug!("umd2 epoch {epoch}: loss {mean:.5}");
        model.log.epoch_losses.push(mean);
    }
    model.state.epoch = cfg.epochs;
    Ok(model)
}

/// Batched inference through either network.
pub fn predict(model: &Umd2Model, sets: &[&EmbeddingSet], masks: &[ModalityMask], net: Network) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(sets.len());
    for (chunk, mchunk) in sets.chunks(512).zip(masks.chunks(512)) {
        let batch = model.batch(chunk, mchunk)?;
        let (_, p) = model.forward(net, &batch)?;
        for (r, cluster) in argmax_rows(&p).into_iter().enumerate() {
            out.push(Prediction {
                cluster,
                probs: p.row_vec(r),
            });
        }
    }
    Ok(out)
}

/// Teacher inference; every modality must be present.
pub fn infer_teacher(set: &EmbeddingSet, model: &Umd2Model) -> Result<Prediction> {
    if let Some(m) = Modality::ALL.iter().find(|m| set.get(**m).is_none()) {
        return Err(Error::MissingModality(format!(
            "modality {} is missing; use the student network with a mask",
            m.short()
        )));
    }
    Ok(predict(model, &[set], &[ModalityMask::ones()], Network::Teacher)?.remove(0))
}

/// Student inference under `mask`; every unmasked modality must be present.
pub fn infer_student(set: &EmbeddingSet, mask: &ModalityMask, model: &Umd2Model) -> Result<Prediction> {
    Ok(predict(model, &[set], std::slice::from_ref(mask), Network::Student)?.remove(0))
}

/// Majority gold label of every non-empty cluster (ties to the lower label).
pub fn majority_oracle(clusters: &[usize], gold: &[usize]) -> BTreeMap<usize, usize> {
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &g) in clusters.iter().zip(gold) {
        *counts.entry(c).or_default().entry(g).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(c, by_label)| {
            let best = by_label.iter().fold((0, 0), |best, (&l, &n)| if n > best.1 { (l, n) } else { best });
            (c, best.0)
        })
        .collect()
}

/// Gives every record its cluster's oracle label. Empty clusters need no
/// oracle entry.
pub fn kshot_assign(clusters: &[usize], oracle: &BTreeMap<usize, usize>) -> Result<Vec<usize>> {
    clusters
        .iter()
        .map(|c| {
            oracle
                .get(c)
                .copied()
                .ok_or_else(|| Error::Validation(format!("oracle has no label for non-empty cluster {c}")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub record_id: String,
    pub cluster: usize,
    pub probs: Vec<f64>,
    pub label: Option<usize>,
}

/// `record_id,cluster,prob_0..prob_{k-1},label`; the label column is empty
/// when no cluster-to-label mapping is known.
pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let k = rows.first().map_or(0, |r| r.probs.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let mut header = vec!["record_id".to_string(), "cluster".to_string()];
    header.extend((0..k).map(|j| format!("prob_{j}")));
    header.push("label".into());
    let csv_err = |e: csv::Error| Error::parse(path.display().to_string(), e);
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        if r.probs.len() != k {
            return Err(Error::Dimension(format!("record `{}` has {} probabilities, expected {k}", r.record_id, r.probs.len())));
        }
        let mut rec = vec![r.record_id.clone(), r.cluster.to_string()];
        rec.extend(r.probs.iter().map(|p| p.to_string()));
        rec.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let loc = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&loc, e))?;
    let k = r.headers().map_err(|e| Error::parse(&loc, e))?.iter().filter(|h| h.starts_with("prob_")).count();
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(&loc, e))?;
        let at = |j: usize| rec.get(j).unwrap_or("");
        let bad = |what: &str| Error::parse(format!("{loc}:{}", i + 2), format!("invalid {what}"));
        let cluster = at(1).parse().map_err(|_| bad("cluster"))?;
        let probs = (0..k).map(|j| at(2 + j).parse().map_err(|_| bad("probability"))).collect::<Result<_>>()?;
        let label = match at(2 + k) {
            "" => None,
            s => Some(s.parse().map_err(|_| bad("label"))?),
        };
        out.push(PredictionRow {
            record_id: at(0).to_string(),
            cluster,
            probs,
            label,
        });
    }
    Ok(out)
}
