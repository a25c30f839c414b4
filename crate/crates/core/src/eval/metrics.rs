use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::hungarian::hungarian;

/// Cluster x label count matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionTable {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionTable {
    pub fn new(clusters: &[usize], labels: &[usize], n_clusters: usize, n_labels: usize) -> Result<Self> {
        if clusters.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} predictions vs {} labels",
                clusters.len(),
                labels.len()
            )));
        }
        let mut counts = vec![vec![0u64; n_labels]; n_clusters];
        for (&c, &l) in clusters.iter().zip(labels) {
            if c >= n_clusters || l >= n_labels {
                return Err(Error::Validation(format!("cluster {c} / label {l} out of range")));
            }
            counts[c][l] += 1;
        }
        Ok(ConfusionTable { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterMapping {
    /// Label assigned to each cluster id.
    pub mapping: BTreeMap<usize, usize>,
    /// Mapped label per record.
    pub labels: Vec<usize>,
}

impl ClusterMapping {
    pub fn accuracy(&self, gold: &[usize]) -> f64 {
        if gold.is_empty() {
            return 0.0;
        }
        let hits = self.labels.iter().zip(gold).filter(|(a, b)| a == b).count();
        hits as f64 / gold.len() as f64
    }
}

/// Maps clusters to labels maximizing the matched record count; clusters
/// left over when there are more clusters than labels take their majority
/// label (ties to the lower label).
pub fn map_clusters(pred: &[usize], gold: &[usize]) -> Result<ClusterMapping> {
    let n_clusters = pred.iter().max().map_or(0, |m| m + 1);
    let n_labels = gold.iter().max().map_or(0, |m| m + 1).max(2);
    let table = ConfusionTable::new(pred, gold, n_clusters, n_labels)?;
    // Only non-empty clusters take part, in an order that depends on their
    // counts rather than their ids, so relabelling cannot change ties.
    let mut rows: Vec<usize> = (0..n_clusters)
        .filter(|&c| table.counts[c].iter().any(|&x| x > 0))
        .collect();
    rows.sort_by(|&a, &b| table.counts[b].cmp(&table.counts[a]).then(a.cmp(&b)));
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|&c| table.counts[c].iter().map(|&x| -(x as f64)).collect())
        .collect();
    let assignment = hungarian(&cost);
    let mut mapping = BTreeMap::new();
    for (&c, label) in rows.iter().zip(&assignment.row_to_col) {
        let label = label.unwrap_or_else(|| {
            let row = &table.counts[c];
            (0..n_labels).max_by_key(|&l| (row[l], std::cmp::Reverse(l))).unwrap_or(0)
        });
        mapping.insert(c, label);
    }
    let labels = pred.iter().map(|c| mapping[c]).collect();
    Ok(ClusterMapping { mapping, labels })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Fake (label 1) is the positive class.
    #[default]
    Binary,
    /// Unweighted mean of the per-class scores.
    Macro,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64, what: &str) -> f64 {
    if den == 0 {
        log::warn!("{what} has zero denominator, reported as 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn class_scores(pred: &[usize], gold: &[usize], positive: usize) -> (f64, f64, f64) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fnn = 0;
    for (&p, &g) in pred.iter().zip(gold) {
        match (p == positive, g == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    let precision = ratio(tp, tp + fp, "precision");
    let recall = ratio(tp, tp + fnn, "recall");
    (precision, recall, f1(precision, recall))
}

pub fn metrics(pred: &[usize], gold: &[usize], averaging: Averaging) -> Result<Metrics> {
    if pred.len() != gold.len() {
        return Err(Error::Dimension(format!("{} predictions vs {} labels", pred.len(), gold.len())));
    }
    if pred.iter().chain(gold).any(|&l| l > 1) {
        return Err(Error::Validation("metrics expect binary labels 0/1".into()));
    }
    let hits = pred.iter().zip(gold).filter(|(a, b)| a == b).count() as u64;
    let accuracy = ratio(hits, pred.len() as u64, "accuracy");
    let (precision, recall, f1) = match averaging {
        Averaging::Binary => class_scores(pred, gold, 1),
        Averaging::Macro => {
            let (p0, r0, f0) = class_scores(pred, gold, 0);
            let (p1, r1, f1) = class_scores(pred, gold, 1);
            ((p0 + p1) / 2.0, (r0 + r1) / 2.0, (f0 + f1) / 2.0)
        }
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
    })
}

/// JSON report written by the evaluation command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mapping: BTreeMap<String, usize>,
}

/// Maps clusters to gold labels and scores the mapped predictions.
pub fn evaluate_clusters(dataset: &str, pred: &[usize], gold: &[usize], averaging: Averaging) -> Result<MetricsReport> {
    let mapped = map_clusters(pred, gold)?;
    let m = metrics(&mapped.labels, gold, averaging)?;
    Ok(MetricsReport {
        dataset: dataset.to_string(),
        n: gold.len(),
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        mapping: mapped.mapping.iter().map(|(c, l)| (c.to_string(), *l)).collect(),
    })
}
