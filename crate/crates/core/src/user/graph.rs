use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::datamodel::{EngagementKind, HeteroGraph, NewsRecord, UserProfile};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const USER_FEATURES: [&str; 5] = ["followers", "following", "verified", "account_age_days", "statuses"];

/// Unscaled feature vector; counts are log-compressed.
pub fn raw_user_features(p: &UserProfile) -> [f64; 5] {
    [
        (p.followers as f64).ln_1p(),
        (p.following as f64).ln_1p(),
        if p.verified { 1.0 } else { 0.0 },
        (p.account_age_days as f64).ln_1p(),
        (p.statuses as f64).ln_1p(),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Ordered user features with min-max ranges fitted on a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserFeatureManifest {
    pub features: Vec<FeatureRange>,
}

impl UserFeatureManifest {
    pub fn fit<'a>(profiles: impl IntoIterator<Item = &'a UserProfile>) -> Self {
        let mut min = [f64::INFINITY; 5];
        let mut max = [f64::NEG_INFINITY; 5];
        for p in profiles {
            for (i, v) in raw_user_features(p).into_iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        let features = USER_FEATURES
            .iter()
            .enumerate()
            .map(|(i, name)| FeatureRange {
                name: name.to_string(),
                min: if min[i].is_finite() { min[i] } else { 0.0 },
                max: if max[i].is_finite() { max[i] } else { 0.0 },
            })
            .collect();
        UserFeatureManifest { features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Normalized features clipped to `[0, 1]`; constant columns map to 0.
    pub fn apply(&self, p: &UserProfile) -> Vec<f64> {
        raw_user_features(p)
            .iter()
            .zip(&self.features)
            .map(|(v, r)| {
                if r.max > r.min {
                    ((v - r.min) / (r.max - r.min)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

pub fn user_node_id(user: &str) -> String {
    format!("user:{user}")
}

pub fn star_node_id(record: &str) -> String {
    format!("news:{record}")
}

/// Star node for the article plus one node per distinct engaging user.
/// Tweets link their author to the star; retweets and replies link their
/// author to the author of the parent engagement. A parent that names
/// neither an event nor an engaging user falls back to the star.
pub fn build_engagement_graph(
    record: &NewsRecord,
    profiles: &BTreeMap<String, UserProfile>,
    manifest: &UserFeatureManifest,
) -> Result<HeteroGraph> {
    if record.engagements.is_empty() {
        return Err(Error::EmptyGraph(format!("record `{}` has no engagements", record.id)));
    }
    let mut g = HeteroGraph::new();
    let star = g.add_node(star_node_id(&record.id), "news", Some(vec![0.0; manifest.dim()]))?;
    g.set_star(star)?;
    let mut user_idx: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &record.engagements {
        if user_idx.contains_key(e.user_id.as_str()) {
            continue;
        }
        let features = match profiles.get(&e.user_id) {
            Some(p) => manifest.apply(p),
            None => {
                log::warn!("record `{}`: no profile for user `{}`, using zero features", record.id, e.user_id);
                vec![0.0; manifest.dim()]
            }
        };
        let idx = g.add_node(user_node_id(&e.user_id), "user", Some(features))?;
        user_idx.insert(&e.user_id, idx);
    }
    let authors: BTreeMap<&str, &str> = record
        .engagements
        .iter()
        .filter_map(|e| e.event_id.as_deref().map(|id| (id, e.user_id.as_str())))
        .collect();
    for e in &record.engagements {
        let me = user_idx[e.user_id.as_str()];
        match (e.kind, e.parent_id.as_deref()) {
            (EngagementKind::Tweet, _) | (_, None) => {
                g.add_edge(me, star);
            }
            (EngagementKind::Retweet | EngagementKind::Reply, Some(parent)) => {
                let author = authors.get(parent).copied().or_else(|| user_idx.contains_key(parent).then_some(parent));
                match author {
                    Some(a) => {
                        g.add_edge(me, user_idx[a]);
                    }
                    None => {
                        log::warn!("record `{}`: unresolved parent `{parent}`, linking to the article", record.id);
                        g.add_edge(me, star);
                    }
                }
            }
        }
    }
    Ok(g)
}

/// Inverts (`x -> 1 - x`) the features of `ceil(rho * (|V| - 1))` randomly
/// chosen non-star nodes. Topology is untouched.
pub fn corrupt_graph(g: &HeteroGraph, rho: f64, rng: &mut Rng) -> Result<HeteroGraph> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("corruption fraction {rho} outside (0, 1]")));
    }
    let star = g.star();
    let candidates: Vec<usize> = (0..g.node_count()).filter(|&i| Some(i) != star).collect();
    if candidates.len() < 2 {
        return Err(Error::Corruption(format!(
            "graph has {} non-star nodes, need at least 2",
            candidates.len()
        )));
    }
    let k = ((rho * candidates.len() as f64).ceil() as usize).min(candidates.len());
    let mut out = g.clone();
    for pick in index::sample(rng, candidates.len(), k) {
        let node = out.node_mut(candidates[pick]);
        if let Some(f) = node.features.as_mut() {
            f.iter_mut().for_each(|x| *x = 1.0 - *x);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::EngagementEvent;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn event(user: &str, t: u64, kind: EngagementKind, id: Option<&str>, parent: Option<&str>) -> EngagementEvent {
        EngagementEvent {
            user_id: user.into(),
            timestamp: t,
            kind,
            parent_id: parent.map(String::from),
            event_id: id.map(String::from),
        }
    }

    fn record(engagements: Vec<EngagementEvent>) -> NewsRecord {
        NewsRecord {
            id: "n1".into(),
            source_domain: "a.com".into(),
            title: "t".into(),
            body: String::new(),
            engagements,
            label: None,
            first_seen: 0,
        }
    }

    fn profile(user: &str, followers: u64) -> UserProfile {
        UserProfile {
            user_id: user.into(),
            followers,
            following: 10,
            verified: followers > 100,
            account_age_days: 300,
            statuses: followers * 2,
        }
    }

    fn ids(g: &HeteroGraph) -> BTreeSet<(String, String)> {
        g.edge_ids()
    }

    fn pair(a: &str, b: &str) -> (String, String) {
        if a < b { (a.into(), b.into()) } else { (b.into(), a.into()) }
    }

    #[test]
    fn tweet_and_retweet() {
        let r = record(vec![
            event("u1", 0, EngagementKind::Tweet, Some("e1"), None),
            event("u2", 5, EngagementKind::Retweet, None, Some("e1")),
        ]);
        let m = UserFeatureManifest::fit(&[profile("u1", 5), profile("u2", 500)]);
        let profiles: BTreeMap<_, _> = [profile("u1", 5), profile("u2", 500)].into_iter().map(|p| (p.user_id.clone(), p)).collect();
        let g = build_engagement_graph(&r, &profiles, &m).unwrap();
        assert_eq!(g.node_count(), 3);
        let want: BTreeSet<_> = [pair("user:u1", "news:n1"), pair("user:u2", "user:u1")].into_iter().collect();
        assert_eq!(ids(&g), want);
        assert_eq!(g.node(g.star().unwrap()).features.as_deref(), Some(&[0.0; 5][..]));
        for n in g.nodes() {
            assert!(n.features.as_ref().unwrap().iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn independent_tweets_form_a_star() {
        let r = record((0..3).map(|i| event(&format!("u{i}"), i, EngagementKind::Tweet, None, None)).collect());
        let m = UserFeatureManifest::fit(&[]);
        let g = build_engagement_graph(&r, &BTreeMap::new(), &m).unwrap();
        assert_eq!(g.degree(g.star().unwrap()), 3);
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn empty_record_is_an_error() {
        let m = UserFeatureManifest::fit(&[]);
        assert!(matches!(build_engagement_graph(&record(vec![]), &BTreeMap::new(), &m), Err(Error::EmptyGraph(_))));
    }

    #[test]
    fn random_cascade_matches_recount() {
        let mut rng = seeded(8);
        use rand::Rng as _;
        let mut events = Vec::new();
        for i in 0..40u64 {
            let user = format!("u{}", rng.random_range(0..15));
            if i == 0 || rng.random_bool(0.3) {
                events.push(event(&user, i, EngagementKind::Tweet, Some(&format!("e{i}")), None));
            } else {
                let p = rng.random_range(0..i);
                let kind = if rng.random_bool(0.5) { EngagementKind::Retweet } else { EngagementKind::Reply };
                events.push(event(&user, i, kind, Some(&format!("e{i}")), Some(&format!("e{p}"))));
            }
        }
        let r = record(events.clone());
        let g = build_engagement_graph(&r, &BTreeMap::new(), &UserFeatureManifest::fit(&[])).unwrap();
        let mut want = BTreeSet::new();
        for e in &events {
            let me = user_node_id(&e.user_id);
            let other = match &e.parent_id {
                None => "news:n1".to_string(),
                Some(p) => user_node_id(&events[p[1..].parse::<usize>().unwrap()].user_id),
            };
            if me != other {
                want.insert(pair(&me, &other));
            }
        }
        assert_eq!(ids(&g), want);
    }

    fn graph_with(features: Vec<Vec<f64>>) -> HeteroGraph {
        let mut g = HeteroGraph::new();
        let s = g.add_node("news:x", "news", Some(vec![0.0; features[0].len()])).unwrap();
        g.set_star(s).unwrap();
        for (i, f) in features.into_iter().enumerate() {
            let n = g.add_node(format!("user:{i}"), "user", Some(f)).unwrap();
            g.add_edge(n, s);
        }
        g
    }

    #[test]
    fn corruption_inverts_and_fixed_point() {
        let g = graph_with(vec![vec![0.2], vec![0.2]]);
        let c = corrupt_graph(&g, 1.0, &mut seeded(0)).unwrap();
        assert!((c.node(1).features.as_ref().unwrap()[0] - 0.8).abs() < 1e-15);
        let half = graph_with(vec![vec![0.5, 0.5]; 4]);
        assert_eq!(corrupt_graph(&half, 1.0, &mut seeded(0)).unwrap(), half);
        let tiny = graph_with(vec![vec![0.1]]);
        assert!(matches!(corrupt_graph(&tiny, 0.5, &mut seeded(0)), Err(Error::Corruption(_))));
    }

    proptest! {
        #[test]
        fn corruption_preserves_topology(n in 2usize..12, rho in 0.05f64..1.0, seed in 0u64..500) {
            let g = graph_with((0..n).map(|i| vec![i as f64 / n as f64, 0.3]).collect());
            let c = corrupt_graph(&g, rho, &mut seeded(seed)).unwrap();
            prop_assert_eq!(c.edges(), g.edges());
            prop_assert_eq!(c.star(), g.star());
            prop_assert_eq!(c.node(0), g.node(0));
            let changed = (1..=n).filter(|&i| c.node(i) != g.node(i)).count();
            prop_assert_eq!(changed, (rho * n as f64).ceil() as usize);
        }
    }
}
