//! Source-credibility embeddings: a graph joining outlets with equal
//! credibility labels, near-duplicate articles and article-outlet links,
//! embedded with negative sampling.

pub mod embed;
pub mod tfidf;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{EmbeddingTable, HeteroGraph, NewsRecord};
use crate::error::{Error, Result};

pub use embed::{train_node_embeddings, triple_loss, NodeEmbeddings, SourceEmbedConfig};
pub use tfidf::{article_node_id, build_article_graph, tfidf_vectors, tokenize, TfIdf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Credibility {
    Reliable,
    Unreliable,
    Mixed,
}

impl std::str::FromStr for Credibility {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reliable" => Ok(Credibility::Reliable),
            "unreliable" => Ok(Credibility::Unreliable),
            "mixed" => Ok(Credibility::Mixed),
            other => Err(Error::Validation(format!("unknown credibility label `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CredibilityDb {
    labels: BTreeMap<String, Credibility>,
}

impl CredibilityDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, domain: &str, label: Credibility) -> Result<()> {
        let domain = domain.trim().to_lowercase();
        if domain.is_empty() {
            return Err(Error::Validation("empty domain in credibility db".into()));
        }
        if self.labels.insert(domain.clone(), label).is_some() {
            return Err(Error::Validation(format!("domain `{domain}` listed twice")));
        }
        Ok(())
    }

    pub fn get(&self, domain: &str) -> Option<Credibility> {
        self.labels.get(domain).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Credibility)> {
        self.labels.iter().map(|(d, l)| (d.as_str(), *l))
    }

    /// Reads `domain,label` rows; a leading `domain,label` header is skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        let mut db = CredibilityDb::new();
        for (i, row) in reader.records().enumerate() {
            let loc = format!("{}:{}", path.display(), i + 1);
            let row = row.map_err(|e| Error::parse(&loc, e))?;
            if row.len() != 2 {
                return Err(Error::parse(loc, "expected `domain,label`"));
            }
            if i == 0 && row[0].eq_ignore_ascii_case("domain") {
                continue;
            }
            db.insert(&row[0], row[1].parse()?)?;
        }
        Ok(db)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let io = |e: csv::Error| Error::parse(path.display().to_string(), e);
        w.write_record(["domain", "label"]).map_err(io)?;
        for (d, l) in self.iter() {
            let label = match l {
                Credibility::Reliable => "reliable",
                Credibility::Unreliable => "unreliable",
                Credibility::Mixed => "mixed",
            };
            w.write_record([d, label]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn domain_node_id(domain: &str) -> String {
    format!("domain:{domain}")
}

/// One node per listed domain; domains sharing a label form a clique.
pub fn build_domain_graph(db: &CredibilityDb) -> Result<HeteroGraph> {
    let mut g = HeteroGraph::new();
    let mut groups: BTreeMap<Credibility, Vec<usize>> = BTreeMap::new();
    for (domain, label) in db.iter() {
        let idx = g.add_node(domain_node_id(domain), "domain", None)?;
        groups.entry(label).or_default().push(idx);
    }
    for members in groups.values() {
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                g.add_edge(a, b);
            }
        }
    }
    Ok(g)
}

/// Union of the domain and article graphs plus one article-domain edge per
/// record; domains missing from the domain graph become new isolated
/// domain nodes before being linked.
pub fn merge_graphs(domains: &HeteroGraph, articles: &HeteroGraph, records: &[NewsRecord]) -> Result<HeteroGraph> {
    let mut g = HeteroGraph::new();
    for src in [domains, articles] {
        let offset = g.node_count();
        for node in src.nodes() {
            g.add_node(node.id.clone(), node.kind.clone(), node.features.clone())?;
        }
        for (a, b) in src.edges() {
            g.add_edge(offset + a, offset + b);
        }
    }
    for r in records {
        let article = g
            .index_of(&article_node_id(&r.id))
            .ok_or_else(|| Error::Validation(format!("record `{}` has no article node", r.id)))?;
        let did = domain_node_id(&r.source_domain);
        let domain = match g.index_of(&did) {
            Some(i) => i,
            None => g.add_node(did, "domain", None)?,
        };
        g.add_edge(article, domain);
    }
    Ok(g)
}

pub fn source_embedding(record: &NewsRecord, trained: &NodeEmbeddings) -> Result<Vec<f64>> {
    trained
        .get(&article_node_id(&record.id))
        .map(<[f64]>::to_vec)
        .map_err(|_| Error::MissingEmbedding(record.id.clone()))
}

#[derive(Clone, Debug)]
pub struct SourcePretrained {
    pub graph: HeteroGraph,
    pub nodes: NodeEmbeddings,
    pub embeddings: EmbeddingTable,
}

/// Builds the merged graph for `records`, trains node embeddings and
/// returns one row per record.
pub fn pretrain_source(records: &[NewsRecord], db: &CredibilityDb, cfg: &SourceEmbedConfig) -> Result<SourcePretrained> {
    cfg.validate()?;
    let gd = build_domain_graph(db)?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let corpus: Vec<String> = records.iter().map(NewsRecord::text).collect();
    let ga = build_article_graph(&ids, &corpus, cfg.cosine_threshold)?;
    let graph = merge_graphs(&gd, &ga, records)?;
    log::info!(
        "source graph: {} nodes, {} edges ({} domain, {} article-article)",
        graph.node_count(),
        graph.edge_count(),
        gd.edge_count(),
        ga.edge_count()
    );
    let nodes = train_node_embeddings(&graph, cfg)?;
    let mut embeddings = EmbeddingTable::new(cfg.dim);
    for r in records {
        embeddings.push(r.id.clone(), source_embedding(r, &nodes)?)?;
    }
    Ok(SourcePretrained {
        graph,
        nodes,
        embeddings,
    })
}
