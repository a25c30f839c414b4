//! Affective text features compressed by a clustering autoencoder.

pub mod dec;
pub mod features;
pub mod lexicon;

use std::path::Path;

use crate::datamodel::{EmbeddingTable, NewsRecord};
use crate::error::{Error, Result};

pub use dec::{kl_divergence, target_distribution, train_text_autoencoder, TextAeConfig, TextAutoencoder};
pub use features::{extract_features, normalize_features, smog, smog_grade, MinMax};
pub use lexicon::{FeatureManifest, FeatureSpec, LexiconSet};

/// Everything needed to encode new records the same way as the training set.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub lexicons: LexiconSet,
    pub manifest: FeatureManifest,
    pub scaling: MinMax,
    pub model: TextAutoencoder,
}

impl TextEncoder {
    pub fn features(&self, record: &NewsRecord) -> Result<Vec<f64>> {
        let raw = extract_features(&record.text(), &self.lexicons, &self.manifest)?;
        self.scaling.apply(&raw)
    }

    pub fn encode(&self, record: &NewsRecord) -> Result<Vec<f64>> {
        let f = self.features(record)?;
        Ok(self.model.encode(&[f])?.remove(0))
    }

    /// Writes the autoencoder checkpoint plus `features.json` and
    /// `scaling.json`. Lexicons are not written; pass them back to `load`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(dir)?;
        self.manifest.write(&dir.join("features.json"))?;
        let p = dir.join("scaling.json");
        let json = serde_json::to_string_pretty(&self.scaling).expect("scaling serializes");
        std::fs::write(&p, json).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path, lexicons: LexiconSet) -> Result<Self> {
        let manifest = FeatureManifest::load(&dir.join("features.json"))?;
        manifest.validate(&lexicons)?;
        let p = dir.join("scaling.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let scaling = serde_json::from_str(&text).map_err(|e| Error::parse(p.display().to_string(), e))?;
        Ok(TextEncoder {
            lexicons,
            manifest,
            scaling,
            model: TextAutoencoder::load(dir)?,
        })
    }
}

pub fn encode_text(record: &NewsRecord, encoder: &TextEncoder) -> Result<Vec<f64>> {
    encoder.encode(record)
}

/// Extracts and normalizes features for `records`, trains the autoencoder
/// and returns the encoder with one embedding row per record.
pub fn pretrain_text(
    records: &[NewsRecord],
    lexicons: &LexiconSet,
    manifest: &FeatureManifest,
    cfg: &TextAeConfig,
) -> Result<(TextEncoder, EmbeddingTable)> {
    manifest.validate(lexicons)?;
    let raw: Vec<Vec<f64>> = records
        .iter()
        .map(|r| extract_features(&r.text(), lexicons, manifest))
        .collect::<Result<_>>()?;
    let (rows, scaling) = normalize_features(&raw)?;
    let model = train_text_autoencoder(&rows, cfg)?;
    let latents = model.encode(&rows)?;
    let mut table = EmbeddingTable::new(cfg.dim);
    for (r, z) in records.iter().zip(latents) {
        table.push(r.id.clone(), z)?;
    }
    Ok((
        TextEncoder {
            lexicons: lexicons.clone(),
            manifest: manifest.clone(),
            scaling,
            model,
        },
        table,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{EngagementEvent, EngagementKind};

    fn record(id: &str, body: &str) -> NewsRecord {
        NewsRecord {
            id: id.into(),
            source_domain: "outlet.example".into(),
            title: "Officials warn".into(),
            body: body.into(),
            engagements: vec![EngagementEvent {
                user_id: "u".into(),
                timestamp: 0,
                kind: EngagementKind::Tweet,
                parent_id: None,
                event_id: None,
            }],
            label: None,
            first_seen: 0,
        }
    }

    #[test]
    fn saved_encoder_reproduces_embeddings_to_f32_precision() {
        let bodies = ["shocking terrible lies spread fast", "the report was calm and measured", "great news, we are happy", "they said nothing new today"];
        let records: Vec<NewsRecord> = bodies.iter().enumerate().map(|(i, b)| record(&format!("r{i}"), b)).collect();
        let lex = LexiconSet::builtin();
        let manifest = FeatureManifest::for_lexicons(&lex);
        let cfg = TextAeConfig {
            dim: 3,
            pretrain_epochs: 2,
            epochs: 2,
            batch_size: 2,
            ..Default::default()
        };
        let (enc, table) = pretrain_text(&records, &lex, &manifest, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        enc.save(dir.path()).unwrap();
        let back = TextEncoder::load(dir.path(), lex).unwrap();
        for (r, row) in records.iter().zip(&table.rows) {
            let again = back.encode(r).unwrap();
            assert!(again.iter().zip(row).all(|(a, b)| (a - b).abs() < 1e-5), "{again:?} vs {row:?}");
        }
    }
}
