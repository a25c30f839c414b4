use std::path::PathBuf;

use umd2_core::datamodel::EngagementKind;
use umd2_core::dataset::{
    build_dataset, classify_news_url, read_articles, read_dump, HarvestConfig, StageReport, UrlClass, UrlRules,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/harvest").join(name)
}

#[test]
fn fixture_dump_stage_counts() {
    let (dump, malformed) = read_dump(&fixture("dump.jsonl")).unwrap();
    let articles = read_articles(&fixture("articles.jsonl")).unwrap();
    let cfg = HarvestConfig::load(&fixture("config.json")).unwrap();
    let (records, report) = build_dataset(&dump, malformed, &articles, &cfg).unwrap();
    assert_eq!(
        report,
        StageReport {
            entries: 20,
            malformed: 0,
            step1_keyword_matches: 11,
            step2_tweets: 10,
            step3_news_tweets: 8,
            step4_records: 4,
            step4_engagements: 24,
            step4_missing_articles: 1,
            step5_records: 1,
        }
    );
    assert_eq!(records.len(), 1);
    let kept = &records[0];
    assert_eq!(kept.id, "https://healthnews.example/2020/03/15/outbreak");
    assert_eq!(kept.source_domain, "healthnews.example");
    assert_eq!(kept.engagements.len(), 11);
    assert_eq!(kept.first_seen, 1000);
    assert_eq!(kept.title, "Outbreak reported");
    let kinds = |k: EngagementKind| kept.engagements.iter().filter(|e| e.kind == k).count();
    assert_eq!((kinds(EngagementKind::Tweet), kinds(EngagementKind::Retweet), kinds(EngagementKind::Reply)), (6, 3, 2));
    assert!(kept.engagements.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
}

#[test]
fn threshold_boundary_on_fixture() {
    let (dump, _) = read_dump(&fixture("dump.jsonl")).unwrap();
    let articles = read_articles(&fixture("articles.jsonl")).unwrap();
    let cfg = HarvestConfig::load(&fixture("config.json")).unwrap();
    let lower = HarvestConfig { threshold: 9, ..cfg };
    let (records, report) = build_dataset(&dump, 0, &articles, &lower).unwrap();
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(report.step5_records, 2);
    assert!(ids.contains(&"https://dailyreport.example/news/lockdown"));
}

#[test]
fn url_classification_fixture() {
    let rules = UrlRules::default();
    let mut r = csv::Reader::from_path(fixture("urls.csv")).unwrap();
    let mut n = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let want = match &rec[1] {
            "news" => UrlClass::News,
            "non-news" => UrlClass::NonNews,
            other => panic!("bad label {other}"),
        };
        assert_eq!(classify_news_url(&rec[0], &rules), want, "{}", &rec[0]);
        n += 1;
    }
    assert_eq!(n, 30);
}
