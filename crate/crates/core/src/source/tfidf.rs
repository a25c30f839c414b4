use std::collections::{BTreeMap, BTreeSet};

use crate::datamodel::HeteroGraph;
use crate::error::{Error, Result};

/// Lowercase alphanumeric runs of length >= 2.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

/// Sparse row: `(term index, weight)` sorted by term index.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Clone, Debug, PartialEq)]
pub struct TfIdf {
    pub vocab: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub rows: Vec<SparseRow>,
}

/// Raw-count tf, smoothed idf `ln((1+N)/(1+df)) + 1`, L2-normalized rows.
/// Documents without tokens yield empty rows.
pub fn tfidf_vectors(corpus: &[String]) -> Result<TfIdf> {
    if corpus.is_empty() {
        return Err(Error::Validation("tf-idf needs a non-empty corpus".into()));
    }
    let docs: Vec<Vec<String>> = corpus.iter().map(|d| tokenize(d)).collect();
    let terms: BTreeSet<&str> = docs.iter().flatten().map(String::as_str).collect();
    let vocab: BTreeMap<String, usize> = terms.into_iter().enumerate().map(|(i, t)| (t.to_string(), i)).collect();
    let mut df = vec![0usize; vocab.len()];
    let mut counts: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(docs.len());
    for doc in &docs {
        let mut c = BTreeMap::new();
        for t in doc {
            *c.entry(vocab[t]).or_insert(0) += 1;
        }
        for &t in c.keys() {
            df[t] += 1;
        }
        counts.push(c);
    }
    let n = corpus.len() as f64;
    let idf: Vec<f64> = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
    let rows = counts
        .into_iter()
        .map(|c| {
            let mut row: SparseRow = c.into_iter().map(|(t, k)| (t, k as f64 * idf[t])).collect();
            let norm = row.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|(_, w)| *w /= norm);
            }
            row
        })
        .collect();
    Ok(TfIdf { vocab, idf, rows })
}

/// Dot product of two sorted sparse rows (the cosine, for normalized rows).
pub fn sparse_dot(a: &SparseRow, b: &SparseRow) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Pairs `(i, j)`, `i < j`, whose cosine is at least `threshold`, by
/// exhaustive comparison.
pub fn similar_pairs_brute_force(rows: &[SparseRow], threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if sparse_dot(&rows[i], &rows[j]) >= threshold {
                out.push((i, j));
            }
        }
    }
    out
}

/// Same result as [`similar_pairs_brute_force`], comparing only documents
/// that share a term. Pairs sharing no term have cosine 0, so this is exact
/// whenever `threshold > 0`; otherwise it falls back to the exhaustive scan.
pub fn similar_pairs(rows: &[SparseRow], threshold: f64) -> Vec<(usize, usize)> {
    if threshold <= 0.0 {
        return similar_pairs_brute_force(rows, threshold);
    }
    let mut postings: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (d, row) in rows.iter().enumerate() {
        for &(t, _) in row {
            postings.entry(t).or_default().push(d);
        }
    }
    let mut out = Vec::new();
    let mut seen = vec![usize::MAX; rows.len()];
    for (i, row) in rows.iter().enumerate() {
        let mut candidates = Vec::new();
        for &(t, _) in row {
            for &j in &postings[&t] {
                if j > i && seen[j] != i {
                    seen[j] = i;
                    candidates.push(j);
                }
            }
        }
        candidates.sort_unstable();
        for j in candidates {
            if sparse_dot(row, &rows[j]) >= threshold {
                out.push((i, j));
            }
        }
    }
    out
}

/// Article node ids are prefixed so they never collide with domain nodes.
pub fn article_node_id(record_id: &str) -> String {
    format!("article:{record_id}")
}

/// One `article` node per document, connected when the tf-idf cosine is at
/// least `threshold`.
pub fn build_article_graph(ids: &[String], corpus: &[String], threshold: f64) -> Result<HeteroGraph> {
    if ids.len() != corpus.len() {
        return Err(Error::Dimension(format!("{} ids for {} documents", ids.len(), corpus.len())));
    }
    let mut g = HeteroGraph::new();
    for id in ids {
        g.add_node(article_node_id(id), "article", None)?;
    }
    if corpus.is_empty() {
        return Ok(g);
    }
    let tfidf = tfidf_vectors(corpus)?;
    for (i, j) in similar_pairs(&tfidf.rows, threshold) {
        g.add_edge(i, j);
    }
    Ok(g)
}
