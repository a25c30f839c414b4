//! Canonical record types, graphs, and their on-disk formats.
//!
//! Records and user profiles are JSON Lines. Embedding matrices use the
//! `EMB1` binary layout: the magic bytes `EMB1`, little-endian `u32` row and
//! column counts, then row-major little-endian `f32` values; row ids live in
//! a sidecar `<path>.ids` text file, one per line.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum VeracityLabel {
    Real = 0,
    Fake = 1,
}

impl VeracityLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(VeracityLabel::Real),
            1 => Some(VeracityLabel::Fake),
            _ => None,
        }
    }
}

impl TryFrom<u8> for VeracityLabel {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        VeracityLabel::from_index(v as usize).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

impl From<VeracityLabel> for u8 {
    fn from(l: VeracityLabel) -> u8 {
        l as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngagementKind {
    Tweet,
    Retweet,
    Reply,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngagementEvent {
    pub user_id: String,
    /// Seconds after the record's first engagement.
    pub timestamp: u64,
    pub kind: EngagementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    /// Identifier of the engagement itself; retweets and replies point at it
    /// through `parent_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<String>,
}

impl EngagementEvent {
    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.parent_id) {
            (EngagementKind::Tweet, Some(_)) => Err(Error::Validation(format!(
                "tweet by `{}` must not have a parent",
                self.user_id
            ))),
            (EngagementKind::Retweet | EngagementKind::Reply, None) => Err(Error::Validation(
                format!("{:?} by `{}` needs a parent_id", self.kind, self.user_id),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewsRecord {
    pub id: String,
    pub source_domain: String,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub engagements: Vec<EngagementEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<VeracityLabel>,
    /// Absolute time of the first engagement, seconds since the dataset epoch.
    #[serde(default)]
    pub first_seen: u64,
}

impl NewsRecord {
    pub fn text(&self) -> String {
        if self.title.is_empty() {
            self.body.clone()
        } else if self.body.is_empty() {
            self.title.clone()
        } else {
            format!("{}. {}", self.title.trim_end_matches('.'), self.body)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("record id is empty".into()));
        }
        let d = &self.source_domain;
        if d.is_empty() || d.contains("://") || d.contains('/') || d.chars().any(char::is_uppercase) {
            return Err(Error::Validation(format!(
                "record `{}`: source_domain `{d}` must be a bare lowercase hostname",
                self.id
            )));
        }
        for e in &self.engagements {
            e.validate()?;
        }
        if self.engagements.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
            return Err(Error::Validation(format!(
                "record `{}`: engagements not sorted by timestamp",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProfile {
    pub user_id: String,
    pub followers: u64,
    pub following: u64,
    pub verified: bool,
    pub account_age_days: u64,
    pub statuses: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Source,
    Text,
    Propagation,
    User,
}

impl Modality {
    /// Fixed concatenation order used for masks and fusion weights.
    pub const ALL: [Modality; 4] = [
        Modality::Source,
        Modality::Text,
        Modality::Propagation,
        Modality::User,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short(self) -> &'static str {
        match self {
            Modality::Source => "s",
            Modality::Text => "t",
            Modality::Propagation => "p",
            Modality::User => "u",
        }
    }
}

/// The four modality embeddings of one record; absent entries are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingSet {
    pub z: [Option<Vec<f64>>; 4],
}

impl EmbeddingSet {
    pub fn new(z: [Option<Vec<f64>>; 4]) -> Result<Self> {
        let set = EmbeddingSet { z };
        set.dim()?;
        Ok(set)
    }

    pub fn full(zs: Vec<f64>, zt: Vec<f64>, zp: Vec<f64>, zu: Vec<f64>) -> Result<Self> {
        Self::new([Some(zs), Some(zt), Some(zp), Some(zu)])
    }

    pub fn get(&self, m: Modality) -> Option<&[f64]> {
        self.z[m.index()].as_deref()
    }

    /// Shared dimension of the present vectors (`None` when all are absent).
    pub fn dim(&self) -> Result<Option<usize>> {
        let mut dim = None;
        for v in self.z.iter().flatten() {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Dimension(format!(
                        "embedding dimensions differ: {d} vs {}",
                        v.len()
                    )))
                }
                _ => {}
            }
        }
        Ok(dim)
    }

    /// Mask with weight 1 for every present modality and 0 otherwise.
    pub fn availability_mask(&self) -> Result<ModalityMask> {
        ModalityMask::new(self.z.each_ref().map(|z| if z.is_some() { 1.0 } else { 0.0 }))
    }
}

/// Non-negative per-modality informativeness weights in `[s, t, p, u]` order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityMask {
    weights: [f64; 4],
}

impl ModalityMask {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMask(format!(
                "weights must be finite and >= 0, got {weights:?}"
            )));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidMask("at least one modality must be kept".into()));
        }
        Ok(ModalityMask { weights })
    }

    pub fn ones() -> Self {
        ModalityMask { weights: [1.0; 4] }
    }

    pub fn weights(&self) -> [f64; 4] {
        self.weights
    }

    pub fn weight(&self, m: Modality) -> f64 {
        self.weights[m.index()]
    }

    pub fn is_kept(&self, m: Modality) -> bool {
        self.weights[m.index()] > 0.0
    }

    pub fn is_all_ones(&self) -> bool {
        self.weights == [1.0; 4]
    }

    /// Parses `"1,1,0,0"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::InvalidMask(format!("expected 4 comma-separated weights, got `{s}`")));
        }
        let mut w = [0.0; 4];
        for (slot, p) in w.iter_mut().zip(parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::InvalidMask(format!("`{p}` is not a number")))?;
        }
        ModalityMask::new(w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

/// Undirected graph with typed nodes, optional node features and an
/// optional designated article ("star") node. No self loops.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeteroGraph {
    nodes: Vec<GraphNode>,
    index: BTreeMap<String, usize>,
    neighbours: Vec<BTreeSet<usize>>,
    star: Option<usize>,
}

impl HeteroGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>, kind: impl Into<String>, features: Option<Vec<f64>>) -> Result<usize> {
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(Error::Validation(format!("duplicate node id `{id}`")));
        }
        let idx = self.nodes.len();
        self.index.insert(id.clone(), idx);
        self.nodes.push(GraphNode {
            id,
            kind: kind.into(),
            features,
        });
        self.neighbours.push(BTreeSet::new());
        Ok(idx)
    }

    /// Adds the undirected edge `a - b`; self loops are ignored. Returns
    /// whether the edge is new.
    pub fn add_edge(&mut self, a: usize, b: usize) -> bool {
        if a == b {
            return false;
        }
        let new = self.neighbours[a].insert(b);
        self.neighbours[b].insert(a);
        new
    }

    pub fn set_star(&mut self, idx: usize) -> Result<()> {
        if idx >= self.nodes.len() {
            return Err(Error::Validation(format!("star index {idx} out of range")));
        }
        self.star = Some(idx);
        Ok(())
    }

    pub fn star(&self) -> Option<usize> {
        self.star
    }

    pub fn star_id(&self) -> Option<&str> {
        self.star.map(|i| self.nodes[i].id.as_str())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &GraphNode {
        &self.nodes[idx]
    }

    pub fn node_mut(&mut self, idx: usize) -> &mut GraphNode {
        &mut self.nodes[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn neighbours(&self, idx: usize) -> &BTreeSet<usize> {
        &self.neighbours[idx]
    }

    pub fn degree(&self, idx: usize) -> usize {
        self.neighbours[idx].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbours[a].contains(&b)
    }

    pub fn edge_count(&self) -> usize {
        self.neighbours.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Edges as `(i, j)` with `i < j`, in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, ns) in self.neighbours.iter().enumerate() {
            for &j in ns.range(i + 1..) {
                out.push((i, j));
            }
        }
        out
    }

    /// Edges as id pairs, each pair ordered lexicographically; handy for
    /// comparing graphs built in different node orders.
    pub fn edge_ids(&self) -> BTreeSet<(String, String)> {
        self.edges()
            .into_iter()
            .map(|(a, b)| {
                let (x, y) = (self.nodes[a].id.clone(), self.nodes[b].id.clone());
                if x <= y {
                    (x, y)
                } else {
                    (y, x)
                }
            })
            .collect()
    }

    /// Adjacency as `(row, col, 1)` triplets in both directions.
    pub fn triplets(&self) -> Vec<(usize, usize, u8)> {
        let mut out = Vec::new();
        for (i, ns) in self.neighbours.iter().enumerate() {
            out.extend(ns.iter().map(|&j| (i, j, 1)));
        }
        out
    }

    /// Writes the adjacency triplet list (`row col value` per line) to `path`
    /// and the node table to `<path>.nodes.jsonl`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, j, v) in self.triplets() {
            out.push_str(&format!("{i} {j} {v}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let npath = sidecar(path, "nodes.jsonl");
        let mut nodes = String::new();
        for n in &self.nodes {
            nodes.push_str(&serde_json::to_string(n).expect("node serializes"));
            nodes.push('\n');
        }
        fs::write(&npath, nodes).map_err(|e| Error::io(&npath, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let npath = sidecar(path, "nodes.jsonl");
        let mut g = HeteroGraph::new();
        for (n, line) in read_lines(&npath)? {
            let node: GraphNode = serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("{}:{n}", npath.display()), e))?;
            g.add_node(node.id, node.kind, node.features)?;
        }
        for (n, line) in read_lines(path)? {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::parse(format!("{}:{n}", path.display()), "expected `row col value`");
            if parts.len() != 3 {
                return Err(bad());
            }
            let i: usize = parts[0].parse().map_err(|_| bad())?;
            let j: usize = parts[1].parse().map_err(|_| bad())?;
            if i >= g.node_count() || j >= g.node_count() {
                return Err(bad());
            }
            g.add_edge(i, j);
        }
        Ok(g)
    }
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            serde_json::from_str(&line).map_err(|e| Error::parse(format!("{}:{n}", path.display()), e))
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::Validation(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads and validates `records.jsonl`; ids must be unique.
pub fn load_records(path: &Path) -> Result<Vec<NewsRecord>> {
    let records: Vec<NewsRecord> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for r in &records {
        r.validate()?;
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Validation(format!("duplicate record id `{}`", r.id)));
        }
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[NewsRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn load_profiles(path: &Path) -> Result<Vec<UserProfile>> {
    let profiles: Vec<UserProfile> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for p in &profiles {
        if !seen.insert(p.user_id.as_str()) {
            return Err(Error::Validation(format!("duplicate user id `{}`", p.user_id)));
        }
    }
    Ok(profiles)
}

pub fn write_profiles(path: &Path, profiles: &[UserProfile]) -> Result<()> {
    write_jsonl(path, profiles)
}

/// Counts events per time bin: entry `t` holds the events with
/// `t*delta <= timestamp < (t+1)*delta`, for `t` in `0..=horizon`; later
/// events are dropped.
pub fn bin_propagation(events: &[EngagementEvent], delta: u64, horizon: usize) -> Result<Vec<u64>> {
    if delta == 0 {
        return Err(Error::Config("bin width must be > 0".into()));
    }
    if events.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
        return Err(Error::Validation("engagement events are not sorted".into()));
    }
    let mut bins = vec![0u64; horizon + 1];
    for e in events {
        let t = (e.timestamp / delta) as usize;
        if t > horizon {
            break;
        }
        bins[t] += 1;
    }
    Ok(bins)
}

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";

/// Writes a raw EMB1 matrix (no id sidecar).
pub fn write_matrix(path: &Path, rows: &[Vec<f64>], cols: usize) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + rows.len() * cols * 4);
    buf.extend_from_slice(EMB_MAGIC);
    buf.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(Error::Dimension(format!("row {i} has {} values, expected {cols}", r.len())));
        }
        for v in r {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a raw EMB1 matrix, returning rows and column count.
pub fn read_matrix(path: &Path) -> Result<(Vec<Vec<f64>>, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let loc = path.display().to_string();
    if bytes.len() < 12 || &bytes[..4] != EMB_MAGIC {
        return Err(Error::parse(loc, "missing EMB1 header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + rows * cols * 4 {
        return Err(Error::parse(
            loc,
            format!("{rows}x{cols} matrix needs {} bytes, file has {}", 12 + rows * cols * 4, bytes.len()),
        ));
    }
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = (0..cols)
            .map(|c| {
                let o = 12 + (r * cols + c) * 4;
                f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64
            })
            .collect();
        out.push(row);
    }
    Ok((out, cols))
}

/// Row-labelled embedding matrix as stored in an EMB1 file plus `.ids`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            ids: Vec::new(),
            rows: Vec::new(),
            dim,
        }
    }

    pub fn push(&mut self, id: impl Into<String>, row: Vec<f64>) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Dimension(format!("row of {} values, table dim {}", row.len(), self.dim)));
        }
        self.ids.push(id.into());
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn lookup(&self) -> BTreeMap<&str, &[f64]> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.rows.iter().map(Vec::as_slice))
            .collect()
    }

    pub fn ids_path(path: &Path) -> PathBuf {
        sidecar(path, "ids")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_matrix(path, &self.rows, self.dim)?;
        let ids = Self::ids_path(path);
        let mut text = self.ids.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(&ids, text).map_err(|e| Error::io(&ids, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (rows, dim) = read_matrix(path)?;
        let ids_path = Self::ids_path(path);
        let text = fs::read_to_string(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
        let ids: Vec<String> = text.lines().map(str::to_string).collect();
        if ids.len() != rows.len() {
            return Err(Error::Validation(format!(
                "{} has {} ids for {} rows",
                ids_path.display(),
                ids.len(),
                rows.len()
            )));
        }
        Ok(EmbeddingTable { ids, rows, dim })
    }
}
