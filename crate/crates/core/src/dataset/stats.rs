use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{NewsRecord, VeracityLabel};
use crate::error::{Error, Result};
use crate::source::{Credibility, CredibilityDb};

pub const DAY: u64 = 86_400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub articles: u64,
    pub tweets: u64,
    /// Rounded to one decimal; `None` when there are no articles.
    pub tweets_per_article: Option<f64>,
}

impl DatasetStats {
    pub fn from_counts(articles: u64, tweets: u64) -> Self {
        let tweets_per_article = (articles > 0).then(|| (tweets as f64 / articles as f64 * 10.0).round() / 10.0);
        DatasetStats {
            articles,
            tweets,
            tweets_per_article,
        }
    }
}

/// Every engagement counts as a tweet.
pub fn dataset_stats(records: &[NewsRecord]) -> DatasetStats {
    let tweets = records.iter().map(|r| r.engagements.len() as u64).sum();
    DatasetStats::from_counts(records.len() as u64, tweets)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalHistogram {
    /// Day index (`first_seen / bin`) of the first bin.
    pub start: u64,
    pub bin: u64,
    pub fake: Vec<u64>,
    pub real: Vec<u64>,
}

impl TemporalHistogram {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::parse(path.display().to_string(), e);
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["bin", "fake", "real"]).map_err(io)?;
        for (i, (f, r)) in self.fake.iter().zip(&self.real).enumerate() {
            w.write_record([(self.start + i as u64).to_string(), f.to_string(), r.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Per-bin fake and real counts over the span of all records; unlabelled
/// records only widen the span.
pub fn temporal_distribution(records: &[NewsRecord], labels: &[Option<VeracityLabel>], bin: u64) -> Result<TemporalHistogram> {
    if records.len() != labels.len() {
        return Err(Error::Dimension(format!("{} records but {} labels", records.len(), labels.len())));
    }
    if bin == 0 {
        return Err(Error::Config("histogram bin must be > 0".into()));
    }
    let days: Vec<u64> = records.iter().map(|r| r.first_seen / bin).collect();
    let (Some(&lo), Some(&hi)) = (days.iter().min(), days.iter().max()) else {
        return Ok(TemporalHistogram {
            start: 0,
            bin,
            fake: Vec::new(),
            real: Vec::new(),
        });
    };
    let width = (hi - lo + 1) as usize;
    let mut h = TemporalHistogram {
        start: lo,
        bin,
        fake: vec![0; width],
        real: vec![0; width],
    };
    for (d, l) in days.iter().zip(labels) {
        let slot = (d - lo) as usize;
        match l {
            Some(VeracityLabel::Fake) => h.fake[slot] += 1,
            Some(VeracityLabel::Real) => h.real[slot] += 1,
            None => {}
        }
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainCoverage {
    pub n_domains: usize,
    pub articles_per_domain: f64,
    /// Distinct domains divided by the number of days spanned; each domain
    /// counts once, on the day it first appears.
    pub domains_per_day: f64,
}

pub fn domain_coverage(records: &[NewsRecord]) -> DomainCoverage {
    let domains: BTreeSet<&str> = records.iter().map(|r| r.source_domain.as_str()).collect();
    let days: Vec<u64> = records.iter().map(|r| r.first_seen / DAY).collect();
    let span = match (days.iter().min(), days.iter().max()) {
        (Some(lo), Some(hi)) => hi - lo + 1,
        _ => 0,
    };
    let n = domains.len();
    DomainCoverage {
        n_domains: n,
        articles_per_domain: if n == 0 { 0.0 } else { records.len() as f64 / n as f64 },
        domains_per_day: if span == 0 { 0.0 } else { n as f64 / span as f64 },
    }
}

/// Unreliable outlets give fake, reliable ones real; anything else is
/// unlabelled.
pub fn weak_label(record: &NewsRecord, db: &CredibilityDb) -> Option<VeracityLabel> {
    match db.get(&record.source_domain)? {
        Credibility::Unreliable => Some(VeracityLabel::Fake),
        Credibility::Reliable => Some(VeracityLabel::Real),
        Credibility::Mixed => None,
    }
}

/// Label counts per class; `None` counts the unlabelled records.
pub fn label_counts(labels: &[Option<VeracityLabel>]) -> BTreeMap<Option<VeracityLabel>, usize> {
    let mut out = BTreeMap::new();
    for l in labels {
        *out.entry(*l).or_default() += 1;
    }
    out
}
