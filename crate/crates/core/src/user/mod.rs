//! User-engagement graphs encoded with a graph-attention network trained by
//! a graph-infomax objective against feature-inverted corruptions.

pub mod graph;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datamodel::{EmbeddingTable, HeteroGraph, NewsRecord, UserProfile};
use crate::error::{Error, Result};
use crate::nn::{attention_support, checkpoint, Activation, GatLayer, OptimConfig, Optimizer, ParamStore, Tape, Tensor, Var};
use crate::rng::stream;

pub use graph::{build_engagement_graph, corrupt_graph, raw_user_features, UserFeatureManifest, USER_FEATURES};

/// Denominator of the per-graph objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgiNormalizer {
    /// `|V| - 2`.
    #[default]
    Literal,
    /// `|V| - 1`, the number of non-star nodes.
    TermCount,
}

impl DgiNormalizer {
    pub fn denominator(self, nodes: usize) -> f64 {
        match self {
            DgiNormalizer::Literal => nodes as f64 - 2.0,
            DgiNormalizer::TermCount => nodes as f64 - 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgiConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Fraction of non-star nodes whose features are inverted.
    pub corruption: f64,
    pub normalizer: DgiNormalizer,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DgiConfig {
    fn default() -> Self {
        DgiConfig {
            dim: 16,
            layers: 2,
            heads: 2,
            corruption: 0.5,
            normalizer: DgiNormalizer::Literal,
            epochs: 10,
            learning_rate: 5e-3,
            seed: 0,
        }
    }
}

impl DgiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.corruption > 0.0 && self.corruption <= 1.0) {
            return Err(Error::Config(format!("corruption fraction {} outside (0, 1]", self.corruption)));
        }
        if self.layers == 0 || self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "user dim {} must be a positive multiple of {} heads with >= 1 layer",
                self.dim, self.heads
            )));
        }
        OptimConfig::adam(self.learning_rate).validate()
    }

    fn layers(&self, input: usize) -> Vec<GatLayer> {
        (0..self.layers)
            .map(|i| {
                let inp = if i == 0 { input } else { self.dim };
                GatLayer::new(format!("gat.{i}"), inp, self.dim / self.heads, self.heads, Activation::Tanh)
            })
            .collect()
    }
}

pub const DISCRIMINATOR: &str = "dgi.discriminator";

/// Node features (missing ones as zeros) and the attention support of `g`.
pub fn graph_tensors(g: &HeteroGraph, width: usize) -> Result<(Tensor, Tensor)> {
    let rows: Vec<Vec<f64>> = g
        .nodes()
        .iter()
        .map(|n| n.features.clone().unwrap_or_else(|| vec![0.0; width]))
        .collect();
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::Dimension(format!("node features of width {}, expected {width}", r.len())));
    }
    Ok((Tensor::from_rows(&rows)?, attention_support(g.node_count(), g.edges())))
}

/// Discriminator logits `z_i^T W_d z_star` for every row of `z` (`N x 1`).
pub fn discriminator_logits(tape: &mut Tape, z: Var, z_star: Var, w_d: Var) -> Var {
    let zw = tape.matmul(z, w_d);
    tape.matmul_nt(zw, z_star)
}

/// `[sum_{i != star} ln d(z_i, z_star) + ln(1 - d(z~_i, z_star))] / denom`.
/// `z` and `z_tilde` are the clean and corrupted node representations.
pub fn dgi_objective(
    tape: &mut Tape,
    z: Var,
    z_tilde: Var,
    star: usize,
    w_d: Var,
    normalizer: DgiNormalizer,
) -> Result<Var> {
    let n = tape.value(z).rows();
    if n < 3 {
        return Err(Error::EmptyGraph(format!("objective needs at least 3 nodes, got {n}")));
    }
    let z_star = tape.slice_rows(z, star, star + 1);
    let pos = discriminator_logits(tape, z, z_star, w_d);
    let neg = discriminator_logits(tape, z_tilde, z_star, w_d);
    let neg = tape.scale(neg, -1.0);
    let lp = tape.log_sigmoid(pos);
    let ln = tape.log_sigmoid(neg);
    let both = tape.add(lp, ln);
    let w = 1.0 / normalizer.denominator(n);
    let entries: Vec<(usize, usize, f64)> = (0..n).filter(|&i| i != star).map(|i| (i, 0, w)).collect();
    Ok(tape.pick(both, &entries))
}

#[derive(Clone, Debug)]
pub struct UserEncoder {
    pub cfg: DgiConfig,
    pub manifest: UserFeatureManifest,
    pub params: ParamStore,
    /// Mean objective (to maximize) per epoch over admissible graphs.
    pub epoch_objectives: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct UserMeta {
    cfg: DgiConfig,
    manifest: UserFeatureManifest,
    epoch_objectives: Vec<f64>,
}

impl UserEncoder {
    pub fn new(cfg: &DgiConfig, manifest: UserFeatureManifest) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = stream(cfg.seed, 0xa0);
        for l in cfg.layers(manifest.dim()) {
            l.init(&mut params, &mut rng)?;
        }
        params.insert(DISCRIMINATOR, Tensor::xavier(cfg.dim, cfg.dim, &mut rng))?;
        Ok(UserEncoder {
            cfg: cfg.clone(),
            manifest,
            params,
            epoch_objectives: Vec::new(),
        })
    }

    /// Node representations of `g` on `tape`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, g: &HeteroGraph) -> Result<Var> {
        let (x, support) = graph_tensors(g, self.manifest.dim())?;
        let mut h = tape.constant(x);
        for l in self.cfg.layers(self.manifest.dim()) {
            h = l.forward(tape, store, h, &support)?;
        }
        Ok(h)
    }

    pub fn node_representations(&self, g: &HeteroGraph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let h = self.forward(&mut tape, &self.params, g)?;
        Ok(tape.value(h).clone())
    }

    pub fn encode_graph(&self, g: &HeteroGraph) -> Result<Vec<f64>> {
        let star = g.star().ok_or_else(|| Error::Validation("engagement graph has no star node".into()))?;
        Ok(self.node_representations(g)?.row_vec(star))
    }

    /// `d(z_i, z_star)` for every non-star node of the clean and the
    /// corrupted graph.
    pub fn discriminate(&self, g: &HeteroGraph, corrupted: &HeteroGraph) -> Result<(Vec<f64>, Vec<f64>)> {
        let star = g.star().ok_or_else(|| Error::Validation("engagement graph has no star node".into()))?;
        let mut tape = Tape::new();
        let z = self.forward(&mut tape, &self.params, g)?;
        let zt = self.forward(&mut tape, &self.params, corrupted)?;
        let w = tape.constant(self.params.get(DISCRIMINATOR)?.clone());
        let zs = tape.slice_rows(z, star, star + 1);
        let pos = discriminator_logits(&mut tape, z, zs, w);
        let neg = discriminator_logits(&mut tape, zt, zs, w);
        let sig = |v: &Tensor| -> Vec<f64> {
            (0..v.rows()).filter(|&i| i != star).map(|i| 1.0 / (1.0 + (-v.at(i, 0)).exp())).collect()
        };
        Ok((sig(tape.value(pos)), sig(tape.value(neg))))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(&self.params, dir)?;
        let meta = UserMeta {
            cfg: self.cfg.clone(),
            manifest: self.manifest.clone(),
            epoch_objectives: self.epoch_objectives.clone(),
        };
        let p = dir.join("user.json");
        std::fs::write(&p, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("user.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: UserMeta = serde_json::from_str(&text).map_err(|e| Error::parse(p.display().to_string(), e))?;
        Ok(UserEncoder {
            cfg: meta.cfg,
            manifest: meta.manifest,
            params: checkpoint::load(dir)?,
            epoch_objectives: meta.epoch_objectives,
        })
    }
}

/// Maximizes the objective one graph at a time. Graphs with fewer than
/// three nodes are skipped.
pub fn train_user_encoder(graphs: &[HeteroGraph], manifest: &UserFeatureManifest, cfg: &DgiConfig) -> Result<UserEncoder> {
    let admissible: Vec<&HeteroGraph> = graphs
        .iter()
        .filter(|g| {
            let ok = g.node_count() >= 3 && g.star().is_some();
            if !ok {
                log::warn!("skipping engagement graph with {} nodes", g.node_count());
            }
            ok
        })
        .collect();
    if admissible.is_empty() {
        return Err(Error::Config("no engagement graph has 3 or more nodes".into()));
    }
    let mut enc = UserEncoder::new(cfg, manifest.clone())?;
    let mut opt = Optimizer::new(OptimConfig {
        seed: cfg.seed,
        ..OptimConfig::adam(cfg.learning_rate)
    })?;
    let mut rng = stream(cfg.seed, 0xa1);
    let mut order: Vec<usize> = (0..admissible.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let g = admissible[i];
            let corrupted = corrupt_graph(g, cfg.corruption, &mut rng)?;
            let mut tape = Tape::new();
            let z = enc.forward(&mut tape, &enc.params, g)?;
            let zt = enc.forward(&mut tape, &enc.params, &corrupted)?;
            let w = tape.param(&enc.params, DISCRIMINATOR)?;
            let obj = dgi_objective(&mut tape, z, zt, g.star().expect("admissible"), w, cfg.normalizer)?;
            total += tape.value(obj).item();
            let loss = tape.scale(obj, -1.0);
            let grads = tape.backward(loss);
            enc.params.zero_grad();
            enc.params.accumulate(&tape, &grads)?;
            enc.params.fill_missing_grads();
            opt.step(&mut enc.params)?;
        }
        let mean = total / admissible.len() as f64;
        log::debug!("user epoch {epoch}: objective {mean:.5}");
        enc.epoch_objectives.push(mean);
    }
    Ok(enc)
}

/// Star representation of the record's engagement graph. Records without
/// engagements have no user embedding.
pub fn encode_users(record: &NewsRecord, profiles: &BTreeMap<String, UserProfile>, enc: &UserEncoder) -> Result<Vec<f64>> {
    let g = build_engagement_graph(record, profiles, &enc.manifest).map_err(|e| match e {
        Error::EmptyGraph(_) => Error::MissingEmbedding(format!("record `{}` has no user graph", record.id)),
        other => other,
    })?;
    enc.encode_graph(&g)
}

/// Fits the feature manifest on `profiles`, trains on every record's graph
/// and embeds every record that has engagements.
pub fn pretrain_user(
    records: &[NewsRecord],
    profiles: &[UserProfile],
    cfg: &DgiConfig,
) -> Result<(UserEncoder, EmbeddingTable)> {
    cfg.validate()?;
    let manifest = UserFeatureManifest::fit(profiles);
    let by_id: BTreeMap<String, UserProfile> = profiles.iter().map(|p| (p.user_id.clone(), p.clone())).collect();
    let mut ids = Vec::new();
    let mut graphs = Vec::new();
    for r in records {
        match build_engagement_graph(r, &by_id, &manifest) {
            Ok(g) => {
                ids.push(r.id.clone());
                graphs.push(g);
            }
            Err(Error::EmptyGraph(_)) => log::info!("record `{}` has no engagements, no user embedding", r.id),
            Err(e) => return Err(e),
        }
    }
    let enc = train_user_encoder(&graphs, &manifest, cfg)?;
    let mut table = EmbeddingTable::new(cfg.dim);
    for (id, g) in ids.into_iter().zip(&graphs) {
        table.push(id, enc.encode_graph(g)?)?;
    }
    Ok((enc, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::rng::seeded;
    use rand::Rng as _;

    /// Star plus `n` users whose features are `base` plus small noise.
    fn synthetic_graph(n: usize, base: [f64; 5], seed: u64) -> HeteroGraph {
        let mut rng = seeded(seed);
        let mut g = HeteroGraph::new();
        let s = g.add_node("news:s", "news", Some(vec![0.0; 5])).unwrap();
        g.set_star(s).unwrap();
        for i in 0..n {
            let f: Vec<f64> = base.iter().map(|b| (b + rng.random_range(-0.05..0.05f64)).clamp(0.0, 1.0)).collect();
            let v = g.add_node(format!("user:{i}"), "user", Some(f)).unwrap();
            if i < 2 || rng.random_bool(0.5) {
                g.add_edge(v, s);
            } else {
                let p = rng.random_range(1..v);
                g.add_edge(v, p);
            }
        }
        g
    }

    fn manifest() -> UserFeatureManifest {
        UserFeatureManifest {
            features: USER_FEATURES
                .iter()
                .map(|n| graph::FeatureRange {
                    name: n.to_string(),
                    min: 0.0,
                    max: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn uniform_discriminator_gives_minus_four_ln_two() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::uniform(&[3, 4], 1.0, &mut seeded(1)));
        let zt = tape.constant(Tensor::uniform(&[3, 4], 1.0, &mut seeded(2)));
        let w = tape.constant(Tensor::zeros(&[4, 4]));
        let v = dgi_objective(&mut tape, z, zt, 0, w, DgiNormalizer::Literal).unwrap();
        assert!((tape.value(v).item() + 4.0 * 2f64.ln()).abs() < 1e-12);
        let v = dgi_objective(&mut tape, z, zt, 0, w, DgiNormalizer::TermCount).unwrap();
        assert!((tape.value(v).item() + 2.0 * 2f64.ln()).abs() < 1e-12);
        let small = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(dgi_objective(&mut tape, small, small, 0, w, DgiNormalizer::Literal).is_err());
    }

    #[test]
    fn perfect_discrimination_approaches_zero() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::filled(&[4, 2], 10.0));
        let zt = tape.constant(Tensor::filled(&[4, 2], -10.0));
        let w = tape.constant(Tensor::identity(2));
        let v = dgi_objective(&mut tape, z, zt, 0, w, DgiNormalizer::Literal).unwrap();
        let v = tape.value(v).item();
        assert!(v <= 0.0 && v > -1e-12, "{v}");
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        store.insert(DISCRIMINATOR, Tensor::xavier(3, 3, &mut seeded(4))).unwrap();
        let mut rng = seeded(5);
        let inputs = [Tensor::uniform(&[5, 3], 1.0, &mut rng), Tensor::uniform(&[5, 3], 1.0, &mut rng)];
        let r = gradcheck::check(&store, &inputs, 1e-5, |tape, s, xs| {
            let w = tape.param(s, DISCRIMINATOR)?;
            dgi_objective(tape, xs[0], xs[1], 2, w, DgiNormalizer::Literal)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{}", r.worst);
    }

    #[test]
    fn full_encoder_gradient() {
        let cfg = DgiConfig { dim: 4, ..DgiConfig::default() };
        let enc = UserEncoder::new(&cfg, manifest()).unwrap();
        let g = synthetic_graph(4, [0.3, 0.6, 0.0, 0.5, 0.4], 1);
        let c = corrupt_graph(&g, 0.5, &mut seeded(2)).unwrap();
        let r = gradcheck::check(&enc.params, &[], 1e-5, |tape, s, _| {
            let z = enc.forward(tape, s, &g)?;
            let zt = enc.forward(tape, s, &c)?;
            let w = tape.param(s, DISCRIMINATOR)?;
            dgi_objective(tape, z, zt, 0, w, DgiNormalizer::Literal)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{}", r.worst);
    }

    fn corpus(n: usize, seed: u64) -> Vec<HeteroGraph> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|i| {
                let base = [0.1, 0.7, 0.0, 0.8, 0.2].map(|b: f64| (b + rng.random_range(-0.1..0.1f64)).clamp(0.0, 1.0));
                synthetic_graph(4 + i % 5, base, seed * 1000 + i as u64)
            })
            .collect()
    }

    #[test]
    fn training_improves_and_discriminates() {
        let cfg = DgiConfig { dim: 8, epochs: 6, seed: 2, ..DgiConfig::default() };
        let enc = train_user_encoder(&corpus(40, 1), &manifest(), &cfg).unwrap();
        assert!(enc.epoch_objectives[3] > enc.epoch_objectives[0], "{:?}", enc.epoch_objectives);
        let again = train_user_encoder(&corpus(40, 1), &manifest(), &cfg).unwrap();
        assert_eq!(enc.params.flatten(), again.params.flatten());

        let mut rng = seeded(77);
        let (mut wins, mut total) = (0usize, 0usize);
        for g in corpus(20, 9) {
            let c = corrupt_graph(&g, cfg.corruption, &mut rng).unwrap();
            let (pos, neg) = enc.discriminate(&g, &c).unwrap();
            for p in &pos {
                for q in &neg {
                    total += 1;
                    wins += usize::from(p > q);
                }
            }
        }
        let rate = wins as f64 / total as f64;
        assert!(rate >= 0.8, "discrimination rate {rate}");
    }

    #[test]
    fn star_invariant_to_user_order() {
        let cfg = DgiConfig { dim: 4, ..DgiConfig::default() };
        let enc = UserEncoder::new(&cfg, manifest()).unwrap();
        let g = synthetic_graph(6, [0.3, 0.6, 1.0, 0.5, 0.4], 3);
        let mut perm: Vec<usize> = (1..g.node_count()).collect();
        perm.reverse();
        let mut h = HeteroGraph::new();
        let s = h.add_node("news:s", "news", g.node(0).features.clone()).unwrap();
        h.set_star(s).unwrap();
        let mut map = vec![0usize; g.node_count()];
        for &old in &perm {
            let n = g.node(old);
            map[old] = h.add_node(n.id.clone(), n.kind.clone(), n.features.clone()).unwrap();
        }
        for (a, b) in g.edges() {
            h.add_edge(map[a], map[b]);
        }
        let (za, zb) = (enc.encode_graph(&g).unwrap(), enc.encode_graph(&h).unwrap());
        assert_eq!(za.len(), 4);
        assert!(za.iter().zip(&zb).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn records_without_engagements_have_no_embedding() {
        let enc = UserEncoder::new(&DgiConfig::default(), manifest()).unwrap();
        let r = NewsRecord {
            id: "x".into(),
            source_domain: "a.com".into(),
            title: "t".into(),
            body: String::new(),
            engagements: vec![],
            label: None,
            first_seen: 0,
        };
        assert!(matches!(encode_users(&r, &BTreeMap::new(), &enc), Err(Error::MissingEmbedding(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let enc = UserEncoder::new(&DgiConfig::default(), manifest()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        enc.save(dir.path()).unwrap();
        let back = UserEncoder::load(dir.path()).unwrap();
        assert_eq!(back.manifest, enc.manifest);
        assert!(back.params.distance(&enc.params).unwrap() < 1e-6);
    }
}
