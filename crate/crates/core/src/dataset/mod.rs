//! Offline dataset construction from social-media dumps, dataset
//! statistics, weak source labels and a ground-truthed synthetic generator.

pub mod harvest;
pub mod stats;
pub mod synth;

pub use harvest::{
    assemble_records, build_dataset, canonical_url, classify_news_url, filter_by_engagement, filter_keyword_matches,
    filter_keyword_tweets, filter_news_tweets, index_articles, matches_keywords, read_articles, read_dump, url_domain, Article,
    Assembled, HarvestConfig, StageReport, TweetDumpEntry, UrlClass, UrlRules,
};
pub use stats::{
    dataset_stats, domain_coverage, label_counts, temporal_distribution, weak_label, DatasetStats, DomainCoverage,
    TemporalHistogram, DAY,
};
pub use synth::{read_gold, synth_generate, write_gold, SyntheticDataset, SyntheticSpec};
