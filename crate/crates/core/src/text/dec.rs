use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::kmeans;
use crate::nn::{checkpoint, Activation, Mlp, OptimConfig, Optimizer, ParamStore, Tape, Tensor, Var};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextAeConfig {
    pub hidden: Vec<usize>,
    pub dim: usize,
    pub clusters: usize,
    pub recon_weight: f64,
    pub cluster_weight: f64,
    /// Reconstruction-only epochs before the centroids are initialized.
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TextAeConfig {
    fn default() -> Self {
        TextAeConfig {
            hidden: vec![32],
            dim: 16,
            clusters: 2,
            recon_weight: 1.0,
            cluster_weight: 0.1,
            pretrain_epochs: 20,
            epochs: 20,
            batch_size: 64,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

impl TextAeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters != 2 {
            return Err(Error::Config("the text autoencoder uses exactly 2 clusters".into()));
        }
        if self.dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("text dim and batch_size must be > 0".into()));
        }
        if self.recon_weight < 0.0 || self.cluster_weight < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        OptimConfig::adam(self.learning_rate).validate()
    }
}

/// Sharpened target: `p_ij = (q_ij^2 / f_j) / sum_k (q_ik^2 / f_k)` with
/// `f_j = sum_i q_ij`.
pub fn target_distribution(q: &Tensor) -> Tensor {
    let (n, k) = (q.rows(), q.cols());
    let f: Vec<f64> = (0..k).map(|j| (0..n).map(|i| q.at(i, j)).sum()).collect();
    let mut p = Tensor::zeros(&[n, k]);
    for i in 0..n {
        let w: Vec<f64> = (0..k).map(|j| q.at(i, j) * q.at(i, j) / f[j]).collect();
        let total: f64 = w.iter().sum();
        for j in 0..k {
            p.set(i, j, w[j] / total);
        }
    }
    p
}

/// Mean over rows of `KL(p_i || q_i)`.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> f64 {
    let mut total = 0.0;
    for (a, b) in p.data().iter().zip(q.data()) {
        if *a > 0.0 {
            total += a * (a / b).ln();
        }
    }
    total / p.rows() as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AeHistory {
    /// Reconstruction MSE over all rows before training.
    pub initial_mse: f64,
    /// Reconstruction MSE over all rows after each epoch (both phases).
    pub mse: Vec<f64>,
    /// Clustering KL after each joint epoch.
    pub kl: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TextAutoencoder {
    pub cfg: TextAeConfig,
    pub input_dim: usize,
    pub params: ParamStore,
    pub history: AeHistory,
}

#[derive(Serialize, Deserialize)]
struct AeMeta {
    cfg: TextAeConfig,
    input_dim: usize,
    history: AeHistory,
}

pub const CENTROIDS: &str = "dec.centroids";

impl TextAutoencoder {
    fn encoder(cfg: &TextAeConfig, input: usize) -> Mlp {
        let widths: Vec<usize> = std::iter::once(input).chain(cfg.hidden.iter().copied()).chain([cfg.dim]).collect();
        Mlp::new("enc", &widths, Activation::Tanh, Activation::None)
    }

    fn decoder(cfg: &TextAeConfig, input: usize) -> Mlp {
        let widths: Vec<usize> = std::iter::once(cfg.dim)
            .chain(cfg.hidden.iter().rev().copied())
            .chain([input])
            .collect();
        Mlp::new("dec", &widths, Activation::Tanh, Activation::Sigmoid)
    }

    fn new(cfg: &TextAeConfig, input_dim: usize) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = stream(cfg.seed, 0x7e);
        Self::encoder(cfg, input_dim).init(&mut params, &mut rng)?;
        Self::decoder(cfg, input_dim).init(&mut params, &mut rng)?;
        Ok(TextAutoencoder {
            cfg: cfg.clone(),
            input_dim,
            params,
            history: AeHistory::default(),
        })
    }

    fn check_rows(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.input_dim) {
            return Err(Error::Dimension(format!(
                "text features have {} values, encoder expects {}",
                r.len(),
                self.input_dim
            )));
        }
        if rows.is_empty() {
            return Ok(Tensor::zeros(&[0, self.input_dim]));
        }
        Tensor::from_rows(rows)
    }

    pub fn latent_var(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        Self::encoder(&self.cfg, self.input_dim).forward(tape, &self.params, x)
    }

    /// Latent vectors of `rows`.
    pub fn encode(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let x = self.check_rows(rows)?;
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let z = self.latent_var(&mut tape, xv)?;
        let t = tape.value(z);
        Ok((0..t.rows()).map(|r| t.row_vec(r)).collect())
    }

    pub fn reconstruction_mse(&self, rows: &[Vec<f64>]) -> Result<f64> {
        let x = self.check_rows(rows)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let z = self.latent_var(&mut tape, xv)?;
        let y = Self::decoder(&self.cfg, self.input_dim).forward(&mut tape, &self.params, z)?;
        let diff = tape.sub(y, xv);
        let sq = tape.square(diff);
        let m = tape.mean(sq);
        Ok(tape.value(m).item())
    }

    /// Student-t soft assignments to the centroids.
    pub fn soft_assign(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        let x = self.check_rows(rows)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let z = self.latent_var(&mut tape, xv)?;
        let c = tape.frozen(&self.params, CENTROIDS)?;
        let q = tape.student_t(z, c);
        Ok(tape.value(q).clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(&self.params, dir)?;
        let meta = AeMeta {
            cfg: self.cfg.clone(),
            input_dim: self.input_dim,
            history: self.history.clone(),
        };
        let p = dir.join("text_ae.json");
        std::fs::write(&p, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("text_ae.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: AeMeta = serde_json::from_str(&text).map_err(|e| Error::parse(p.display().to_string(), e))?;
        Ok(TextAutoencoder {
            cfg: meta.cfg,
            input_dim: meta.input_dim,
            params: checkpoint::load(dir)?,
            history: meta.history,
        })
    }
}

/// Reconstruction pre-training, 2-means centroid initialization on the
/// latents, then joint reconstruction + clustering-KL training with the
/// target distribution refreshed at the start of every epoch.
pub fn train_text_autoencoder(features: &[Vec<f64>], cfg: &TextAeConfig) -> Result<TextAutoencoder> {
    cfg.validate()?;
    if features.len() < 2 * cfg.clusters {
        return Err(Error::Config(format!(
            "need at least {} rows to train the text autoencoder, got {}",
            2 * cfg.clusters,
            features.len()
        )));
    }
    let input_dim = features[0].len();
    let mut ae = TextAutoencoder::new(cfg, input_dim)?;
    let x_all = ae.check_rows(features)?;
    ae.history.initial_mse = ae.reconstruction_mse(features)?;
    let mut opt = Optimizer::new(OptimConfig {
        seed: cfg.seed,
        ..OptimConfig::adam(cfg.learning_rate)
    })?;
    let mut rng = stream(cfg.seed, 0x7f);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let encoder = TextAutoencoder::encoder(cfg, input_dim);
    let decoder = TextAutoencoder::decoder(cfg, input_dim);

    let mut run_epoch = |ae: &mut TextAutoencoder, target: Option<&Tensor>| -> Result<()> {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let x = {
                let rows: Vec<Vec<f64>> = batch.iter().map(|&i| x_all.row_vec(i)).collect();
                tape.constant(Tensor::from_rows(&rows)?)
            };
            let z = encoder.forward(&mut tape, &ae.params, x)?;
            let y = decoder.forward(&mut tape, &ae.params, z)?;
            let diff = tape.sub(y, x);
            let sq = tape.square(diff);
            let mse = tape.mean(sq);
            let mut loss = tape.scale(mse, cfg.recon_weight);
            if let Some(p) = target {
                let c = tape.param(&ae.params, CENTROIDS)?;
                let q = tape.student_t(z, c);
                let lq = tape.ln(q);
                let rows: Vec<Vec<f64>> = batch.iter().map(|&i| p.row_vec(i)).collect();
                let pb = tape.constant(Tensor::from_rows(&rows)?);
                // KL(P||Q) up to the constant sum P ln P
                let cross = tape.mul(pb, lq);
                let s = tape.sum(cross);
                let kl = tape.scale(s, -cfg.cluster_weight / batch.len() as f64);
                loss = tape.add(loss, kl);
            }
            let grads = tape.backward(loss);
            ae.params.accumulate(&tape, &grads)?;
            ae.params.fill_missing_grads();
            opt.step(&mut ae.params)?;
        }
        Ok(())
    };

    for _ in 0..cfg.pretrain_epochs {
        run_epoch(&mut ae, None)?;
        let mse = ae.reconstruction_mse(features)?;
        ae.history.mse.push(mse);
    }
    let latents = ae.encode(features)?;
    let km = kmeans(&latents, cfg.clusters, 5, cfg.seed)?;
    ae.params.insert(CENTROIDS, Tensor::from_rows(&km.centroids)?)?;
    for _ in 0..cfg.epochs {
        let q = ae.soft_assign(features)?;
        let p = target_distribution(&q);
        run_epoch(&mut ae, Some(&p))?;
        let q = ae.soft_assign(features)?;
        ae.history.kl.push(kl_divergence(&target_distribution(&q), &q));
        ae.history.mse.push(ae.reconstruction_mse(features)?);
    }
    log::info!(
        "text autoencoder: mse {:.5} -> {:.5}",
        ae.history.initial_mse,
        ae.history.mse.last().copied().unwrap_or(f64::NAN)
    );
    Ok(ae)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_sample_target_equals_q() {
        let q = Tensor::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let p = target_distribution(&q);
        for (a, b) in p.data().iter().zip(q.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_q_has_zero_kl() {
        let q = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let p = target_distribution(&q);
        assert_eq!(p, q);
        assert_eq!(kl_divergence(&p, &q), 0.0);
    }

    #[test]
    fn target_rows_are_simplex_points_and_kl_non_negative() {
        let mut rng = crate::rng::seeded(4);
        let u = Tensor::uniform(&[20, 2], 1.0, &mut rng).map(|x| x.abs() + 0.01);
        let mut q = u.clone();
        for r in 0..20 {
            let s = u.at(r, 0) + u.at(r, 1);
            q.set(r, 0, u.at(r, 0) / s);
            q.set(r, 1, u.at(r, 1) / s);
        }
        let p = target_distribution(&q);
        for r in 0..20 {
            assert!((p.at(r, 0) + p.at(r, 1) - 1.0).abs() < 1e-12);
        }
        assert!(kl_divergence(&p, &q) >= 0.0);
    }

    fn blobs(n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = crate::rng::seeded(11);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut rows = Vec::new();
        let mut gold = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let row = (0..10)
                .map(|j| {
                    let centre: f64 = if (j < 5) == (c == 0) { 0.75 } else { 0.25 };
                    (centre + noise.sample(&mut rng)).clamp(0.0, 1.0)
                })
                .collect();
            rows.push(row);
            gold.push(c);
        }
        (rows, gold)
    }

    #[test]
    fn separates_blobs_and_improves_reconstruction() {
        let (rows, gold) = blobs(120);
        let cfg = TextAeConfig {
            dim: 4,
            pretrain_epochs: 15,
            epochs: 10,
            batch_size: 32,
            seed: 2,
            ..Default::default()
        };
        let ae = train_text_autoencoder(&rows, &cfg).unwrap();
        let z = ae.encode(&rows).unwrap();
        assert!(z.iter().all(|r| r.len() == 4));
        let km = kmeans(&z, 2, 3, 0).unwrap();
        let acc = crate::eval::map_clusters(&km.assignments, &gold).unwrap().accuracy(&gold);
        assert!(acc >= 0.95, "accuracy {acc}");
        assert!(*ae.history.mse.last().unwrap() < ae.history.initial_mse);
        assert_eq!(ae.encode(&rows).unwrap(), z);

        let dir = tempfile::tempdir().unwrap();
        ae.save(dir.path()).unwrap();
        let back = TextAutoencoder::load(dir.path()).unwrap();
        assert_eq!(back.input_dim, 10);
        assert!(ae.params.distance(&back.params).unwrap() < 1e-5);
        assert!(matches!(ae.encode(&[vec![0.0; 3]]), Err(Error::Dimension(_))));
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            train_text_autoencoder(&vec![vec![0.0; 3]; 3], &TextAeConfig::default()),
            Err(Error::Config(_))
        ));
    }
}
