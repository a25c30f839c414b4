use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::HeteroGraph;
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceEmbedConfig {
    pub dim: usize,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub learning_rate: f64,
    pub cosine_threshold: f64,
    pub seed: u64,
}

impl Default for SourceEmbedConfig {
    fn default() -> Self {
        SourceEmbedConfig {
            dim: 16,
            epochs: 30,
            negatives_per_positive: 5,
            learning_rate: 0.05,
            cosine_threshold: 0.85,
            seed: 0,
        }
    }
}

impl SourceEmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config("source embedding dim must be >= 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("source learning_rate must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.cosine_threshold) {
            return Err(Error::Config("cosine_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-ln(sigmoid(x))`, stable for large `|x|`.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Negative-sampling loss of one (node, neighbour, non-neighbour) triple
/// given the two dot products.
pub fn triple_loss(pos_dot: f64, neg_dot: f64) -> f64 {
    neg_log_sigmoid(pos_dot) + neg_log_sigmoid(-neg_dot)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings {
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub dim: usize,
    /// Mean per-update loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Running mean loss sampled at ten evenly spaced points of epoch 0.
    pub first_epoch_trace: Vec<f64>,
}

impl NodeEmbeddings {
    pub fn get(&self, node_id: &str) -> Result<&[f64]> {
        self.vectors
            .get(node_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(node_id.to_string()))
    }
}

/// SGD over every directed edge per epoch; each positive is paired with
/// `negatives_per_positive` nodes drawn uniformly from the non-neighbours
/// (resampled on collision). Nodes adjacent to every other node get no
/// negatives; isolated nodes keep their initial vector.
pub fn train_node_embeddings(g: &HeteroGraph, cfg: &SourceEmbedConfig) -> Result<NodeEmbeddings> {
    cfg.validate()?;
    if g.edge_count() == 0 {
        return Err(Error::EmptyGraph("source graph has no edges".into()));
    }
    let n = g.node_count();
    let d = cfg.dim;
    let mut rng: Rng = stream(cfg.seed, 0x5e);
    let init = Normal::new(0.0, 0.1).expect("valid normal");
    let mut z: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| init.sample(&mut rng)).collect()).collect();
    let mut directed: Vec<(usize, usize)> = Vec::with_capacity(2 * g.edge_count());
    for (a, b) in g.edges() {
        directed.push((a, b));
        directed.push((b, a));
    }

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut first_epoch_trace = Vec::new();
    let checkpoint = (directed.len() / 10).max(1);
    let lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        directed.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for (step, &(u, v)) in directed.iter().enumerate() {
            let can_negative = g.degree(u) + 1 < n;
            let mut grad_u = vec![0.0; d];
            let s = dot(&z[u], &z[v]);
            let gp = sigmoid(s) - 1.0;
            let mut loss = neg_log_sigmoid(s);
            for k in 0..d {
                grad_u[k] += gp * z[v][k];
            }
            let zu_old = z[u].clone();
            for k in 0..d {
                z[v][k] -= lr * gp * zu_old[k];
            }
            if can_negative {
                for _ in 0..cfg.negatives_per_positive {
                    let w = loop {
                        let w = rng.random_range(0..n);
                        if w != u && !g.has_edge(u, w) {
                            break w;
                        }
                    };
                    let s = dot(&zu_old, &z[w]);
                    let gn = sigmoid(s);
                    loss += neg_log_sigmoid(-s);
                    for k in 0..d {
                        grad_u[k] += gn * z[w][k];
                        z[w][k] -= lr * gn * zu_old[k];
                    }
                }
            }
            for k in 0..d {
                z[u][k] -= lr * grad_u[k];
            }
            total += loss;
            count += 1;
            if epoch == 0 && (step + 1) % checkpoint == 0 {
                first_epoch_trace.push(total / count as f64);
            }
        }
        epoch_losses.push(total / count as f64);
    }
    let vectors = (0..n).map(|i| (g.node(i).id.clone(), z[i].clone())).collect();
    Ok(NodeEmbeddings {
        vectors,
        dim: d,
        epoch_losses,
        first_epoch_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
    }

    #[test]
    fn triple_loss_values() {
        assert!((triple_loss(0.0, 0.0) - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(triple_loss(50.0, -50.0) < 1e-20);
        assert!(triple_loss(800.0, -800.0).is_finite());
        for (p, q) in [(-2.0, 1.0), (0.3, 0.1), (4.0, -3.0)] {
            let base = triple_loss(p, q);
            assert!(base >= 0.0);
            assert!(triple_loss(p + 1e-3, q) < base);
            assert!(triple_loss(p, q + 1e-3) > base);
        }
    }

    fn two_cliques() -> HeteroGraph {
        let mut g = HeteroGraph::new();
        for i in 0..10 {
            g.add_node(format!("n{i}"), "domain", None).unwrap();
        }
        for c in [0, 5] {
            for i in c..c + 5 {
                for j in i + 1..c + 5 {
                    g.add_edge(i, j);
                }
            }
        }
        g
    }

    #[test]
    fn cliques_separate() {
        let g = two_cliques();
        let cfg = SourceEmbedConfig {
            seed: 3,
            ..Default::default()
        };
        let emb = train_node_embeddings(&g, &cfg).unwrap();
        let v = |i: usize| emb.get(&format!("n{i}")).unwrap().to_vec();
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for i in 0..10 {
            for j in i + 1..10 {
                let c = cosine(&v(i), &v(j));
                if (i < 5) == (j < 5) {
                    intra += c;
                    ni += 1;
                } else {
                    inter += c;
                    nx += 1;
                }
            }
        }
        assert!(intra / ni as f64 > inter / nx as f64 + 0.5);
        let trace = &emb.first_epoch_trace;
        assert!(trace.last().unwrap() < trace.first().unwrap());
        assert_eq!(emb, train_node_embeddings(&g, &cfg).unwrap());
    }

    #[test]
    fn edgeless_graph_is_rejected() {
        let mut g = HeteroGraph::new();
        g.add_node("a", "domain", None).unwrap();
        assert!(matches!(
            train_node_embeddings(&g, &SourceEmbedConfig::default()),
            Err(Error::EmptyGraph(_))
        ));
    }
}
