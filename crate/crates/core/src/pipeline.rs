//! Pre-trains the four modality encoders on one record set and joins their
//! embeddings into per-record sets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datamodel::{EmbeddingSet, EmbeddingTable, Modality, NewsRecord, UserProfile};
use crate::error::{Error, Result};
use crate::prop::{pretrain_prop, PropEmbedConfig, PropEncoder};
use crate::source::{pretrain_source, CredibilityDb, SourceEmbedConfig, SourcePretrained};
use crate::text::{pretrain_text, FeatureManifest, LexiconSet, TextAeConfig, TextEncoder};
use crate::user::{pretrain_user, DgiConfig, UserEncoder};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub source: SourceEmbedConfig,
    pub text: TextAeConfig,
    pub prop: PropEmbedConfig,
    pub user: DgiConfig,
}

impl PretrainConfig {
    /// Same configuration with every encoder seeded from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.source.seed = seed;
        c.text.seed = seed.wrapping_add(1);
        c.prop.seed = seed.wrapping_add(2);
        c.user.seed = seed.wrapping_add(3);
        c
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.source.dim, self.text.dim, self.prop.dim, self.user.dim]
    }
}

pub struct Pretrained {
    pub source: SourcePretrained,
    pub text: TextEncoder,
    pub prop: PropEncoder,
    pub user: UserEncoder,
    /// One table per modality in `[s, t, p, u]` order.
    pub tables: [EmbeddingTable; 4],
}

pub fn pretrain_all(
    records: &[NewsRecord],
    profiles: &[UserProfile],
    db: &CredibilityDb,
    cfg: &PretrainConfig,
) -> Result<Pretrained> {
    let lex = LexiconSet::builtin();
    let manifest = FeatureManifest::for_lexicons(&lex);
    log::info!("pre-training source encoder on {} records", records.len());
    let source = pretrain_source(records, db, &cfg.source)?;
    log::info!("pre-training text encoder");
    let (text, t_table) = pretrain_text(records, &lex, &manifest, &cfg.text)?;
    log::info!("pre-training propagation encoder");
    let (prop, p_table) = pretrain_prop(records, &cfg.prop)?;
    log::info!("pre-training user encoder");
    let (user, u_table) = pretrain_user(records, profiles, &cfg.user)?;
    let tables = [source.embeddings.clone(), t_table, p_table, u_table];
    Ok(Pretrained {
        source,
        text,
        prop,
        user,
        tables,
    })
}

/// Joins modality tables by record id, in the row order of the source
/// table. Rows missing from a table leave that modality absent; ids that
/// are duplicated or unknown to the source table are rejected.
pub fn assemble_sets(tables: [&EmbeddingTable; 4]) -> Result<(Vec<String>, Vec<EmbeddingSet>)> {
    assemble_partial(tables.map(Some))
}

/// Like `assemble_sets`, with whole modalities possibly absent. The first
/// present table fixes the row order and the id universe.
pub fn assemble_partial(tables: [Option<&EmbeddingTable>; 4]) -> Result<(Vec<String>, Vec<EmbeddingSet>)> {
    let Some(k0) = tables.iter().position(Option::is_some) else {
        return Err(Error::MissingModality("no embedding table given".into()));
    };
    let mut lookups = Vec::with_capacity(4);
    for (m, t) in Modality::ALL.iter().zip(tables) {
        let Some(t) = t else {
            lookups.push(None);
            continue;
        };
        let mut seen = BTreeSet::new();
        let dups: Vec<&str> = t.ids.iter().filter(|id| !seen.insert(id.as_str())).map(String::as_str).collect();
        if !dups.is_empty() {
            return Err(Error::Validation(format!("duplicate {} ids: {}", m.short(), offenders(&dups))));
        }
        lookups.push(Some(t.lookup()));
    }
    let reference_table = tables[k0].expect("present");
    let reference: BTreeSet<&str> = reference_table.ids.iter().map(String::as_str).collect();
    for (m, t) in Modality::ALL.iter().zip(tables).skip(k0 + 1) {
        let Some(t) = t else { continue };
        let unknown: Vec<&str> = t.ids.iter().map(String::as_str).filter(|id| !reference.contains(id)).collect();
        if !unknown.is_empty() {
            return Err(Error::Validation(format!(
                "{} embeddings for ids absent from the {} table: {}",
                m.short(),
                Modality::ALL[k0].short(),
                offenders(&unknown)
            )));
        }
    }
    let sets = reference_table
        .ids
        .iter()
        .map(|id| {
            let z = std::array::from_fn(|k| {
                lookups[k].as_ref().and_then(|l| l.get(id.as_str()).map(|r: &&[f64]| r.to_vec()))
            });
            EmbeddingSet::new(z)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((reference_table.ids.clone(), sets))
}

fn offenders(ids: &[&str]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids.iter().take(SHOWN).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(" and {} more", ids.len() - SHOWN));
    }
    s
}

/// Gold labels aligned to `ids`.
pub fn align_labels<L: Copy>(ids: &[String], labels: &BTreeMap<String, L>) -> Result<Vec<L>> {
    ids.iter()
        .map(|id| labels.get(id).copied().ok_or_else(|| Error::MissingEmbedding(format!("no gold label for `{id}`"))))
        .collect()
}
