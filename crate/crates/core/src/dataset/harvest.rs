use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::datamodel::{EngagementEvent, EngagementKind, NewsRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TweetDumpEntry {
    pub tweet_id: String,
    pub user_id: String,
    pub timestamp: u64,
    pub text: String,
    #[serde(default)]
    pub urls: Vec<String>,
    #[serde(default)]
    pub is_retweet: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
}

/// Reads a JSONL dump; unparseable lines are skipped and counted.
pub fn read_dump(path: &Path) -> Result<(Vec<TweetDumpEntry>, usize)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut malformed = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TweetDumpEntry>(line) {
            Ok(e) => entries.push(e),
            Err(e) => {
                log::warn!("{}:{}: skipping malformed entry: {e}", path.display(), i + 1);
                malformed += 1;
            }
        }
    }
    Ok((entries, malformed))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UrlRules {
    /// Social platforms, shorteners and shops.
    pub deny: Vec<String>,
    pub allow: Vec<String>,
}

impl Default for UrlRules {
    fn default() -> Self {
        let list = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        UrlRules {
            deny: list(&[
                "twitter.com",
                "x.com",
                "t.co",
                "facebook.com",
                "fb.me",
                "instagram.com",
                "youtube.com",
                "youtu.be",
                "tiktok.com",
                "reddit.com",
                "linkedin.com",
                "pinterest.com",
                "bit.ly",
                "tinyurl.com",
                "goo.gl",
                "ow.ly",
                "buff.ly",
                "amazon.com",
                "ebay.com",
                "etsy.com",
                "aliexpress.com",
            ]),
            allow: list(&[
                "reuters.com",
                "apnews.com",
                "bbc.co.uk",
                "bbc.com",
                "nytimes.com",
                "theguardian.com",
                "washingtonpost.com",
                "cnn.com",
                "npr.org",
                "aljazeera.com",
            ]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UrlClass {
    News,
    NonNews,
}

fn host_matches(host: &str, domain: &str) -> bool {
    let domain = domain.trim().to_ascii_lowercase();
    host == domain || host.strip_suffix(&domain).is_some_and(|rest| rest.ends_with('.'))
}

fn is_date_path(segments: &[&str]) -> bool {
    let year = |s: &str| s.len() == 4 && s.parse::<u32>().is_ok_and(|y| (1990..=2100).contains(&y));
    let two = |s: &str, hi: u32| s.len() == 2 && s.parse::<u32>().is_ok_and(|v| (1..=hi).contains(&v));
    let slash_date = segments.windows(2).any(|w| year(w[0]) && two(w[1], 12));
    let dashed = segments.iter().any(|s| {
        let p: Vec<&str> = s.splitn(4, '-').collect();
        p.len() >= 3 && year(p[0]) && two(p[1], 12) && two(&p[2][..p[2].len().min(2)], 31)
    });
    slash_date || dashed
}

/// Deny list, then allow list, then a path heuristic (a date segment or a
/// `/news`, `/article` or `/story` path).
pub fn classify_news_url(raw: &str, rules: &UrlRules) -> UrlClass {
    let url = match Url::parse(raw.trim()) {
        Ok(u) if u.host_str().is_some() => u,
        _ => {
            log::warn!("unparseable url `{raw}` treated as non-news");
            return UrlClass::NonNews;
        }
    };
    let host = url.host_str().unwrap_or_default().to_ascii_lowercase();
    if rules.deny.iter().any(|d| host_matches(&host, d)) {
        return UrlClass::NonNews;
    }
    if rules.allow.iter().any(|d| host_matches(&host, d)) {
        return UrlClass::News;
    }
    let path = url.path().to_ascii_lowercase();
    let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    let keyword = ["/news", "/article", "/story"].iter().any(|k| path.contains(k));
    if keyword || is_date_path(&segments) {
        UrlClass::News
    } else {
        UrlClass::NonNews
    }
}

fn is_tracking_param(key: &str) -> bool {
    let k = key.to_ascii_lowercase();
    k.starts_with("utm_")
        || matches!(
            k.as_str(),
            "fbclid" | "gclid" | "dclid" | "msclkid" | "igshid" | "mc_cid" | "mc_eid" | "ref_src" | "ref_url" | "cmpid"
        )
}

/// Lowercase host, no tracking query parameters, no fragment and no
/// trailing slash.
pub fn canonical_url(raw: &str) -> Result<String> {
    let mut url = Url::parse(raw.trim()).map_err(|e| Error::parse(raw, e))?;
    if url.host_str().is_none() {
        return Err(Error::parse(raw, "url has no host"));
    }
    let kept: Vec<(String, String)> = url
        .query_pairs()
        .filter(|(k, _)| !is_tracking_param(k))
        .map(|(k, v)| (k.into_owned(), v.into_owned()))
        .collect();
    if kept.is_empty() {
        url.set_query(None);
    } else {
        url.query_pairs_mut().clear().extend_pairs(kept);
    }
    url.set_fragment(None);
    let mut s = url.to_string();
    if url.query().is_none() {
        while s.ends_with('/') && s.len() > url.scheme().len() + 3 {
            s.pop();
        }
    } else if let Some(q) = s.find('?') {
        let (head, tail) = s.split_at(q);
        s = format!("{}{tail}", head.trim_end_matches('/'));
    }
    Ok(s)
}

/// Outlet of a canonical URL: the host without a leading `www.`.
pub fn url_domain(canonical: &str) -> Result<String> {
    let url = Url::parse(canonical).map_err(|e| Error::parse(canonical, e))?;
    let host = url.host_str().ok_or_else(|| Error::parse(canonical, "url has no host"))?;
    Ok(host.trim_start_matches("www.").to_ascii_lowercase())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvestConfig {
    /// Lowercase keywords; a tweet matches when one of its tokens contains a
    /// keyword.
    pub keywords: Vec<String>,
    pub window_start: u64,
    pub window_end: u64,
    /// Records with this many engagements or fewer are dropped.
    pub threshold: usize,
    pub rules: UrlRules,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            keywords: Vec::new(),
            window_start: 0,
            window_end: u64::MAX,
            threshold: 10,
            rules: UrlRules::default(),
        }
    }
}

impl HarvestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_start >= self.window_end {
            return Err(Error::Config(format!(
                "harvest window start {} is not before end {}",
                self.window_start, self.window_end
            )));
        }
        if self.keywords.is_empty() || self.keywords.iter().any(|k| k.trim().is_empty()) {
            return Err(Error::Config("harvest needs at least one non-empty keyword".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '#' || c == '_' || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn matches_keywords(text: &str, keywords: &[String]) -> bool {
    let toks = tokens(text);
    keywords
        .iter()
        .map(|k| k.to_lowercase())
        .any(|k| toks.iter().any(|t| t.contains(&k)))
}

/// In-window entries with a URL and a keyword, retweets included.
pub fn filter_keyword_matches(dump: &[TweetDumpEntry], cfg: &HarvestConfig) -> Vec<TweetDumpEntry> {
    dump.iter()
        .filter(|e| (cfg.window_start..=cfg.window_end).contains(&e.timestamp))
        .filter(|e| !e.urls.is_empty() && matches_keywords(&e.text, &cfg.keywords))
        .cloned()
        .collect()
}

/// Keyword matches that are not retweets.
pub fn filter_keyword_tweets(dump: &[TweetDumpEntry], cfg: &HarvestConfig) -> Vec<TweetDumpEntry> {
    filter_keyword_matches(dump, cfg).into_iter().filter(|e| !e.is_retweet).collect()
}

/// Tweets with at least one news URL.
pub fn filter_news_tweets(tweets: &[TweetDumpEntry], rules: &UrlRules) -> Vec<TweetDumpEntry> {
    tweets
        .iter()
        .filter(|t| t.urls.iter().any(|u| classify_news_url(u, rules) == UrlClass::News))
        .cloned()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Article {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body: String,
}

/// Reads articles from JSONL, one object per line.
pub fn read_articles(path: &Path) -> Result<Vec<Article>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}

/// Article store keyed by canonical URL.
pub fn index_articles(articles: &[Article]) -> Result<BTreeMap<String, Article>> {
    let mut out = BTreeMap::new();
    for a in articles {
        out.insert(canonical_url(&a.url)?, a.clone());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assembled {
    pub records: Vec<NewsRecord>,
    /// Canonical URLs without a stored article; their records have an empty
    /// body.
    pub missing_articles: Vec<String>,
}

/// One record per canonical news URL. Each kept tweet is an engagement of
/// every news URL it carries; retweets and replies whose parent chain
/// reaches a kept tweet are added to the same records.
pub fn assemble_records(
    tweets: &[TweetDumpEntry],
    articles: &BTreeMap<String, Article>,
    retweets: &[TweetDumpEntry],
    rules: &UrlRules,
) -> Result<Assembled> {
    let mut urls_of: HashMap<&str, Vec<String>> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut events: BTreeMap<String, Vec<(u64, EngagementEvent)>> = BTreeMap::new();
    for t in tweets {
        let mut urls = BTreeSet::new();
        for u in &t.urls {
            if classify_news_url(u, rules) == UrlClass::News {
                match canonical_url(u) {
                    Ok(c) => {
                        urls.insert(c);
                    }
                    Err(e) => log::warn!("tweet {}: {e}", t.tweet_id),
                }
            }
        }
        for c in &urls {
            if !events.contains_key(c) {
                order.push(c.clone());
            }
            let kind = if t.parent_id.is_some() { EngagementKind::Reply } else { EngagementKind::Tweet };
            events.entry(c.clone()).or_default().push((t.timestamp, event(t, kind)));
        }
        urls_of.insert(t.tweet_id.as_str(), urls.into_iter().collect());
    }

    let by_id: HashMap<&str, &TweetDumpEntry> = retweets.iter().map(|r| (r.tweet_id.as_str(), r)).collect();
    for r in retweets {
        if urls_of.contains_key(r.tweet_id.as_str()) || r.parent_id.is_none() {
            continue;
        }
        let mut seen = BTreeSet::new();
        let mut cur = r.parent_id.as_deref();
        let mut root = None;
        while let Some(p) = cur {
            if !seen.insert(p) {
                break;
            }
            if let Some(urls) = urls_of.get(p) {
                root = Some(urls);
                break;
            }
            cur = by_id.get(p).and_then(|e| e.parent_id.as_deref());
        }
        let Some(urls) = root else { continue };
        let kind = if r.is_retweet { EngagementKind::Retweet } else { EngagementKind::Reply };
        for c in urls {
            events.get_mut(c).expect("kept url").push((r.timestamp, event(r, kind)));
        }
    }

    let mut records = Vec::with_capacity(order.len());
    let mut missing_articles = Vec::new();
    for c in order {
        let mut ev = events.remove(&c).unwrap_or_default();
        ev.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.event_id.cmp(&b.1.event_id)));
        let first = ev.first().map_or(0, |e| e.0);
        let engagements = ev
            .into_iter()
            .map(|(ts, mut e)| {
                e.timestamp = ts - first;
                e
            })
            .collect();
        let (title, body) = match articles.get(&c) {
            Some(a) => (a.title.clone(), a.body.clone()),
            None => {
                log::warn!("no stored article for {c}");
                missing_articles.push(c.clone());
                (String::new(), String::new())
            }
        };
        records.push(NewsRecord {
            source_domain: url_domain(&c)?,
            id: c,
            title,
            body,
            engagements,
            label: None,
            first_seen: first,
        });
    }
    Ok(Assembled {
        records,
        missing_articles,
    })
}

fn event(t: &TweetDumpEntry, kind: EngagementKind) -> EngagementEvent {
    EngagementEvent {
        user_id: t.user_id.clone(),
        timestamp: 0,
        kind,
        parent_id: if kind == EngagementKind::Tweet { None } else { t.parent_id.clone() },
        event_id: Some(t.tweet_id.clone()),
    }
}

/// Keeps records with strictly more than `threshold` engagements.
pub fn filter_by_engagement(records: &[NewsRecord], threshold: usize) -> Vec<NewsRecord> {
    records.iter().filter(|r| r.engagements.len() > threshold).cloned().collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub entries: usize,
    pub malformed: usize,
    /// In-window entries with a URL and a keyword.
    pub step1_keyword_matches: usize,
    /// Of those, the non-retweets.
    pub step2_tweets: usize,
    pub step3_news_tweets: usize,
    pub step4_records: usize,
    pub step4_engagements: usize,
    pub step4_missing_articles: usize,
    pub step5_records: usize,
}

/// Runs the five construction steps over an offline dump.
pub fn build_dataset(
    dump: &[TweetDumpEntry],
    malformed: usize,
    articles: &[Article],
    cfg: &HarvestConfig,
) -> Result<(Vec<NewsRecord>, StageReport)> {
    cfg.validate()?;
    let step1 = filter_keyword_matches(dump, cfg);
    let step2: Vec<TweetDumpEntry> = step1.iter().filter(|e| !e.is_retweet).cloned().collect();
    let step3 = filter_news_tweets(&step2, &cfg.rules);
    let store = index_articles(articles)?;
    let replies: Vec<TweetDumpEntry> = dump.iter().filter(|e| e.parent_id.is_some()).cloned().collect();
    let assembled = assemble_records(&step3, &store, &replies, &cfg.rules)?;
    let kept = filter_by_engagement(&assembled.records, cfg.threshold);
    let report = StageReport {
        entries: dump.len(),
        malformed,
        step1_keyword_matches: step1.len(),
        step2_tweets: step2.len(),
        step3_news_tweets: step3.len(),
        step4_records: assembled.records.len(),
        step4_engagements: assembled.records.iter().map(|r| r.engagements.len()).sum(),
        step4_missing_articles: assembled.missing_articles.len(),
        step5_records: kept.len(),
    };
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, ts: u64, text: &str, urls: &[&str]) -> TweetDumpEntry {
        TweetDumpEntry {
            tweet_id: id.into(),
            user_id: format!("u{id}"),
            timestamp: ts,
            text: text.into(),
            urls: urls.iter().map(|s| s.to_string()).collect(),
            is_retweet: false,
            parent_id: None,
        }
    }

    fn cfg() -> HarvestConfig {
        HarvestConfig {
            keywords: vec!["covid".into()],
            window_start: 0,
            window_end: 100,
            ..Default::default()
        }
    }

    #[test]
    fn keyword_url_window_and_retweets() {
        let kept = entry("1", 5, "Covid news", &["https://a.example/news/x"]);
        let mut rt = kept.clone();
        rt.tweet_id = "2".into();
        rt.is_retweet = true;
        rt.parent_id = Some("1".into());
        let late = entry("3", 500, "covid", &["https://a.example/news/x"]);
        let bare = entry("4", 5, "covid", &[]);
        let hashtag = entry("5", 5, "#COVID19 cases", &["https://a.example/news/y"]);
        let dump = vec![kept, rt, late, bare, hashtag];
        let ids: Vec<String> = filter_keyword_tweets(&dump, &cfg()).into_iter().map(|e| e.tweet_id).collect();
        assert_eq!(ids, vec!["1", "5"]);
    }

    #[test]
    fn url_rules() {
        let r = UrlRules::default();
        assert_eq!(classify_news_url("https://twitter.com/a/status/1", &r), UrlClass::NonNews);
        assert_eq!(classify_news_url("https://mobile.twitter.com/a", &r), UrlClass::NonNews);
        assert_eq!(classify_news_url("https://example-news.com/2020/03/14/story-slug", &r), UrlClass::News);
        assert_eq!(classify_news_url("https://www.reuters.com/", &r), UrlClass::News);
        assert_eq!(classify_news_url("https://notreuters.com/about", &r), UrlClass::NonNews);
        assert_eq!(classify_news_url("not a url", &r), UrlClass::NonNews);
    }

    #[test]
    fn canonicalization() {
        let a = canonical_url("https://WWW.Example.com/a/b/?utm_source=tw&id=3#top").unwrap();
        let b = canonical_url("https://www.example.com/a/b?id=3&utm_medium=social").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, "https://www.example.com/a/b?id=3");
        assert_eq!(canonical_url("https://example.com/x/").unwrap(), "https://example.com/x");
        assert_eq!(canonical_url("https://example.com").unwrap(), "https://example.com");
        assert_eq!(url_domain("https://www.example.com/a").unwrap(), "example.com");
    }

    #[test]
    fn tracking_variants_collapse_into_one_record() {
        let t = vec![
            entry("1", 10, "covid", &["https://n.example/news/a?utm_source=x"]),
            entry("2", 20, "covid", &["https://n.example/news/a?utm_campaign=y"]),
        ];
        let store = index_articles(&[Article {
            url: "https://N.example/news/a/".into(),
            title: "T".into(),
            body: "B".into(),
        }])
        .unwrap();
        let a = assemble_records(&t, &store, &[], &UrlRules::default()).unwrap();
        assert_eq!(a.records.len(), 1);
        let r = &a.records[0];
        assert_eq!(r.engagements.len(), 2);
        assert_eq!((r.title.as_str(), r.body.as_str()), ("T", "B"));
        assert_eq!(r.first_seen, 10);
        assert_eq!(r.engagements[1].timestamp, 10);
        assert!(a.missing_articles.is_empty());
        r.validate().unwrap();
    }

    #[test]
    fn engagement_boundary_is_strict() {
        let rec = |n: usize| NewsRecord {
            id: format!("r{n}"),
            source_domain: "a.example".into(),
            title: String::new(),
            body: String::new(),
            engagements: (0..n)
                .map(|i| EngagementEvent {
                    user_id: format!("u{i}"),
                    timestamp: i as u64,
                    kind: EngagementKind::Tweet,
                    parent_id: None,
                    event_id: None,
                })
                .collect(),
            label: None,
            first_seen: 0,
        };
        let kept = filter_by_engagement(&[rec(10), rec(11)], 10);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "r11");
    }

    proptest! {
        #[test]
        fn engagement_counts_match_recount(
            picks in proptest::collection::vec((0usize..4, 0usize..3, any::<bool>()), 1..40),
        ) {
            // each pick is (url, tracking variant, is reply to the first tweet of that url)
            let mut tweets = Vec::new();
            let mut replies = Vec::new();
            let mut first_of: BTreeMap<usize, String> = BTreeMap::new();
            for (i, &(u, v, reply)) in picks.iter().enumerate() {
                let url = format!("https://n{u}.example/news/a?utm_source=v{v}");
                match first_of.get(&u) {
                    Some(parent) if reply => {
                        let mut e = entry(&i.to_string(), i as u64, "no keyword", &[]);
                        e.parent_id = Some(parent.clone());
                        e.is_retweet = i % 2 == 0;
                        replies.push(e);
                    }
                    _ => {
                        first_of.entry(u).or_insert(i.to_string());
                        tweets.push(entry(&i.to_string(), i as u64, "covid", &[url.as_str()]));
                    }
                }
            }
            let a = assemble_records(&tweets, &BTreeMap::new(), &replies, &UrlRules::default()).unwrap();
            let mut recount: BTreeMap<String, usize> = BTreeMap::new();
            for &(u, _, _) in &picks {
                *recount.entry(format!("https://n{u}.example/news/a")).or_default() += 1;
            }
            let got: BTreeMap<String, usize> = a.records.iter().map(|r| (r.id.clone(), r.engagements.len())).collect();
            prop_assert_eq!(&got, &recount);
            prop_assert_eq!(a.missing_articles.len(), a.records.len());
            for c in 0..15 {
                let want = recount.values().filter(|&&n| n > c).count();
                prop_assert_eq!(filter_by_engagement(&a.records, c).len(), want);
            }
            for r in &a.records {
                r.validate().unwrap();
            }
        }
    }
}
