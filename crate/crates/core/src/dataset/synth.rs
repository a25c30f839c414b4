use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    write_profiles, write_records, EngagementEvent, EngagementKind, Modality, NewsRecord, UserProfile, VeracityLabel,
};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::source::{Credibility, CredibilityDb};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub fake_fraction: f64,
    /// Per-modality probability, in `[s, t, p, u]` order, that a record's raw
    /// signal follows its class; otherwise the signal follows a coin flip.
    pub informativeness: [f64; 4],
    /// Share of corrupted outlets, tokens, engagement times and engagers.
    pub noise: f64,
    pub n_domains: usize,
    /// Strength of the latent-domain shifts of the feature means.
    pub domain_shift: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 1000,
            fake_fraction: 0.01,
            informativeness: [0.9, 0.7, 0.8, 0.5],
            noise: 0.2,
            n_domains: 1,
            domain_shift: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.fake_fraction) || !unit(self.noise) || !self.informativeness.iter().all(|&x| unit(x)) {
            return Err(Error::Config("synthetic fractions must lie in [0, 1]".into()));
        }
        if self.n == 0 || self.n_domains == 0 {
            return Err(Error::Config("synthetic n and n_domains must be > 0".into()));
        }
        if !(self.domain_shift >= 0.0) {
            return Err(Error::Config("domain_shift must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub records: Vec<NewsRecord>,
    pub profiles: Vec<UserProfile>,
    pub credibility: CredibilityDb,
    pub gold: Vec<VeracityLabel>,
    pub domains: Vec<usize>,
    /// Per modality, a low-dimensional summary of each record's raw signal.
    pub signals: [Vec<Vec<f64>>; 4],
}

impl SyntheticDataset {
    pub fn gold_indices(&self) -> Vec<usize> {
        self.gold.iter().map(|l| l.index()).collect()
    }

    /// Writes `records.jsonl`, `profiles.jsonl`, `credibility.csv` and
    /// `gold.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_records(&dir.join("records.jsonl"), &self.records)?;
        write_profiles(&dir.join("profiles.jsonl"), &self.profiles)?;
        self.credibility.write(&dir.join("credibility.csv"))?;
        write_gold(&dir.join("gold.csv"), &self.records, &self.gold, &self.domains)
    }
}

pub fn write_gold(path: &Path, records: &[NewsRecord], gold: &[VeracityLabel], domains: &[usize]) -> Result<()> {
    let io = |e: csv::Error| Error::parse(path.display().to_string(), e);
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["record_id", "label", "domain"]).map_err(io)?;
    for ((r, l), d) in records.iter().zip(gold).zip(domains) {
        w.write_record([r.id.clone(), l.index().to_string(), d.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `record_id,label[,...]` rows into `(id, label)` pairs.
pub fn read_gold(path: &Path) -> Result<Vec<(String, VeracityLabel)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let loc = format!("{}:{}", path.display(), i + 2);
        let row = row.map_err(|e| Error::parse(&loc, e))?;
        let label = row
            .get(1)
            .and_then(|s| s.trim().parse::<usize>().ok())
            .and_then(VeracityLabel::from_index)
            .ok_or_else(|| Error::parse(&loc, "label must be 0 or 1"))?;
        out.push((row[0].to_string(), label));
    }
    Ok(out)
}

const FAKE_WORDS: &[&str] = &[
    "shocking", "unbelievable", "bombshell", "exposed", "secret", "outrage", "furious", "hate", "fear", "panic",
    "danger", "deadly", "threat", "evil", "corrupt", "lies", "terrible", "definitely", "always", "never",
    "everyone", "traitor", "betrayed", "disgusting", "massive", "insane", "destroys", "horrible",
];

const REAL_WORDS: &[&str] = &[
    "confirmed", "official", "reliable", "trust", "maybe", "perhaps", "might", "suggests", "estimated", "because",
    "reason", "think", "know", "good", "improve", "effective", "safe", "recovery", "calm", "care", "protect", "fair",
    "justice", "law", "plan", "expect",
];

/// Lexicon words whose rate depends only on the latent domain.
const DOMAIN_TONES: &[&[&str]] = &[
    &["sad", "grief", "loss", "mourn"],
    &["soon", "plan", "expect", "hope"],
    &["shock", "sudden", "unexpected"],
    &["happy", "celebrate", "joy"],
];

const TOPICS: &[&[&str]] = &[
    &["hospital", "patients", "doctors", "clinic", "study", "virus", "health", "treatment", "cases", "ward"],
    &["senate", "election", "minister", "policy", "vote", "parliament", "campaign", "party", "bill", "council"],
    &["market", "prices", "shares", "trade", "bank", "inflation", "jobs", "budget", "company", "growth"],
    &["school", "teachers", "students", "exam", "campus", "classes", "university", "pupils", "term", "grades"],
];

const FILLER: &[&str] = &[
    "the", "a", "of", "in", "on", "with", "report", "said", "new", "city", "week", "today", "after", "over",
    "local", "about", "from", "statement", "media", "officials",
];

const OUTLETS_PER_CLASS: usize = 12;
/// Chance that a record republishes a recent story of its kind, and how
/// often one story may be republished.
const SYNDICATION: f64 = 0.3;
const MAX_COPIES: usize = 3;
const USERS_PER_POOL: usize = 80;
const HOUR: f64 = 3600.0;

fn frac(g: usize, domains: usize) -> f64 {
    if domains > 1 {
        g as f64 / (domains - 1) as f64
    } else {
        0.0
    }
}

fn class_signal(y: usize, info: f64, rng: &mut Rng) -> usize {
    if rng.random_bool(info) {
        y
    } else {
        rng.random_range(0..2)
    }
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    outlets: Vec<[Vec<String>; 2]>,
    outlet_labels: Vec<(String, Credibility)>,
    pools: Vec<[Vec<UserProfile>; 2]>,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a SyntheticSpec, rng: &mut Rng) -> Self {
        let mut outlets = Vec::new();
        let mut outlet_labels = Vec::new();
        let mut pools = Vec::new();
        for g in 0..spec.n_domains {
            let mut pair: [Vec<String>; 2] = Default::default();
            for (c, slot) in pair.iter_mut().enumerate() {
                for j in 0..OUTLETS_PER_CLASS {
                    let name = format!("outlet{:03}.example", (g * 2 + c) * OUTLETS_PER_CLASS + j);
                    let label = if rng.random_bool(spec.noise) {
                        Credibility::Mixed
                    } else if c == 1 {
                        Credibility::Unreliable
                    } else {
                        Credibility::Reliable
                    };
                    outlet_labels.push((name.clone(), label));
                    slot.push(name);
                }
            }
            outlets.push(pair);
            let shift = 0.8 * spec.domain_shift * frac(g, spec.n_domains);
            let mut users: [Vec<UserProfile>; 2] = Default::default();
            for (c, slot) in users.iter_mut().enumerate() {
                for j in 0..USERS_PER_POOL {
                    slot.push(user_profile(format!("d{g}c{c}u{j:03}"), c, shift, rng));
                }
            }
            pools.push(users);
        }
        Generator {
            spec,
            outlets,
            outlet_labels,
            pools,
        }
    }
}

fn user_profile(user_id: String, class: usize, shift: f64, rng: &mut Rng) -> UserProfile {
    let logn = |mu: f64, sd: f64, rng: &mut Rng| Normal::new(mu, sd).expect("valid normal").sample(rng).exp().round() as u64;
    if class == 0 {
        UserProfile {
            user_id,
            followers: logn(7.0 + shift, 1.0, rng),
            following: logn(6.0, 0.8, rng),
            verified: rng.random_bool(0.3),
            account_age_days: rng.random_range(1500..4000),
            statuses: logn(7.0, 1.0, rng),
        }
    } else {
        UserProfile {
            user_id,
            followers: logn(4.0 + shift, 1.0, rng),
            following: logn(6.5, 0.8, rng),
            verified: rng.random_bool(0.01),
            account_age_days: rng.random_range(10..600),
            statuses: logn(9.0, 1.0, rng),
        }
    }
}

type Story = (String, String, Vec<f64>);

/// Recent stories per (domain, source signal, text signal) with their
/// remaining republication count.
#[derive(Default)]
struct Stories {
    recent: std::collections::BTreeMap<(usize, usize, usize), (Story, usize)>,
}

impl Stories {
    fn take(&mut self, key: (usize, usize, usize), rng: &mut Rng) -> Option<Story> {
        let roll = rng.random_bool(SYNDICATION);
        let (story, left) = self.recent.get_mut(&key)?;
        if !roll || *left == 0 {
            return None;
        }
        *left -= 1;
        Some(story.clone())
    }

    fn publish(&mut self, key: (usize, usize, usize), story: Story) {
        self.recent.insert(key, (story, MAX_COPIES));
    }
}

struct Drawn {
    record: NewsRecord,
    signals: [Vec<f64>; 4],
}

impl Generator<'_> {
    fn draw(&self, i: usize, y: usize, g: usize, stories: &mut Stories, rng: &mut Rng) -> Drawn {
        let spec = self.spec;
        let sig: [usize; 4] = std::array::from_fn(|k| class_signal(y, spec.informativeness[k], rng));
        let gf = frac(g, spec.n_domains);
        let id = format!("syn{i:05}");

        let outlet = self.outlets[g][sig[Modality::Source.index()]].choose(rng).expect("outlets").clone();
        let cred = self.outlet_labels.iter().find(|(d, _)| *d == outlet).map(|x| x.1).expect("listed");
        let s_signal = vec![match cred {
            Credibility::Unreliable => 1.0,
            Credibility::Reliable => 0.0,
            Credibility::Mixed => 0.5,
        }];

        let key = (g, sig[Modality::Source.index()], sig[Modality::Text.index()]);
        let (title, body, t_signal) = match stories.take(key, rng) {
            Some(story) => story,
            None => {
                let story = self.text(sig[Modality::Text.index()], g, rng);
                stories.publish(key, story.clone());
                story
            }
        };

        let volume = 1.0 + 0.5 * spec.domain_shift * gf;
        let m = (rng.random_range(14.0..30.0) * volume).round() as usize;
        let burst = Exp::new(1.0 / (1.5 * HOUR)).expect("positive rate");
        let mut times: Vec<u64> = (0..m)
            .map(|_| {
                let bursty = (sig[Modality::Propagation.index()] == 1) != rng.random_bool(spec.noise);
                let t = if bursty {
                    burst.sample(rng).min(47.0 * HOUR)
                } else {
                    rng.random_range(0.0..40.0 * HOUR)
                };
                (t * (1.0 + 0.2 * spec.domain_shift * gf)) as u64
            })
            .collect();
        times.sort_unstable();
        let t0 = times[0];
        let early = times.iter().filter(|&&t| t - t0 < (6.0 * HOUR) as u64).count() as f64 / m as f64;
        let p_signal = vec![early, (m as f64).ln_1p() / 5.0];

        let mut engagements: Vec<EngagementEvent> = Vec::with_capacity(m);
        let mut users = Vec::with_capacity(m);
        for (j, &t) in times.iter().enumerate() {
            let class = if rng.random_bool(spec.noise) { 1 - sig[3] } else { sig[3] };
            let user = self.pools[g][class].choose(rng).expect("users");
            users.push(user);
            let roll: f64 = rng.random();
            let (kind, parent_id) = if j == 0 || roll >= 0.5 {
                (EngagementKind::Tweet, None)
            } else {
                let p = rng.random_range(0..j);
                let kind = if roll < 0.4 { EngagementKind::Retweet } else { EngagementKind::Reply };
                (kind, Some(format!("{id}-e{p:03}")))
            };
            engagements.push(EngagementEvent {
                user_id: user.user_id.clone(),
                timestamp: t - t0,
                kind,
                parent_id,
                event_id: Some(format!("{id}-e{j:03}")),
            });
        }
        let mean = |f: &dyn Fn(&UserProfile) -> f64| users.iter().map(|u| f(u)).sum::<f64>() / m as f64;
        let u_signal = vec![
            mean(&|u| (u.followers as f64).ln_1p() / 10.0),
            mean(&|u| f64::from(u8::from(u.verified))),
            mean(&|u| (u.account_age_days as f64).ln_1p() / 8.0),
        ];

        let day = rng.random_range(0..60u64);
        let record = NewsRecord {
            id,
            source_domain: outlet,
            title,
            body,
            engagements,
            label: VeracityLabel::from_index(y),
            first_seen: day * 86_400 + rng.random_range(0..86_400),
        };
        Drawn {
            record,
            signals: [s_signal, t_signal, p_signal, u_signal],
        }
    }

    fn text(&self, class: usize, g: usize, rng: &mut Rng) -> (String, String, Vec<f64>) {
        let spec = self.spec;
        let gf = frac(g, spec.n_domains);
        let signal_rate = 0.25 * (1.0 + 0.4 * spec.domain_shift * (gf - 0.5));
        let tone_rate = 0.08 * spec.domain_shift;
        let topic = TOPICS[g % TOPICS.len()];
        let tone = DOMAIN_TONES[g % DOMAIN_TONES.len()];
        let mut hits = [0usize; 2];
        let mut word = |rng: &mut Rng| -> &'static str {
            let u: f64 = rng.random();
            if u < signal_rate {
                let c = if rng.random_bool(spec.noise) { 1 - class } else { class };
                hits[c] += 1;
                let pool = if c == 1 { FAKE_WORDS } else { REAL_WORDS };
                pool.choose(rng).expect("words")
            } else if u < signal_rate + tone_rate {
                tone.choose(rng).expect("words")
            } else if u < 0.7 {
                topic.choose(rng).expect("words")
            } else {
                FILLER.choose(rng).expect("words")
            }
        };
        let title: Vec<&str> = (0..6).map(|_| word(rng)).collect();
        let len = rng.random_range(30..60);
        let mut body = String::new();
        let mut since = 0;
        for k in 0..len {
            if k > 0 {
                body.push(' ');
            }
            body.push_str(word(rng));
            since += 1;
            if since >= 8 && (rng.random_bool(0.3) || k + 1 == len) {
                body.push('.');
                since = 0;
            }
        }
        if !body.ends_with('.') {
            body.push('.');
        }
        let total = (len + 6) as f64;
        let signal = vec![hits[1] as f64 / total, hits[0] as f64 / total];
        (title.join(" "), body, signal)
    }
}

/// Draws a ground-truthed dataset whose four raw signals carry class
/// information in proportion to their informativeness. Deterministic per
/// seed.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut setup = stream(spec.seed, 0x73796e);
    let gen = Generator::new(spec, &mut setup);
    let mut records = Vec::with_capacity(spec.n);
    let mut gold = Vec::with_capacity(spec.n);
    let mut domains = Vec::with_capacity(spec.n);
    let mut signals: [Vec<Vec<f64>>; 4] = Default::default();
    let mut stories = Stories::default();
    for i in 0..spec.n {
        let mut rng = stream(spec.seed, 1 + i as u64);
        let y = usize::from(rng.random_bool(spec.fake_fraction));
        let g = rng.random_range(0..spec.n_domains);
        let d = gen.draw(i, y, g, &mut stories, &mut rng);
        for (k, s) in d.signals.into_iter().enumerate() {
            signals[k].push(s);
        }
        records.push(d.record);
        gold.push(VeracityLabel::from_index(y).expect("binary"));
        domains.push(g);
    }
    let mut credibility = CredibilityDb::new();
    for (d, l) in &gen.outlet_labels {
        credibility.insert(d, *l)?;
    }
    let profiles = gen.pools.into_iter().flat_map(|[a, b]| a.into_iter().chain(b)).collect();
    Ok(SyntheticDataset {
        records,
        profiles,
        credibility,
        gold,
        domains,
        signals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{kmeans, map_clusters};

    fn best_signal_accuracy(d: &SyntheticDataset, k: usize) -> f64 {
        let km = kmeans(&d.signals[k], 2, 5, 1).unwrap();
        map_clusters(&km.assignments, &d.gold_indices()).unwrap().accuracy(&d.gold_indices())
    }

    #[test]
    fn records_are_valid_and_deterministic() {
        let spec = SyntheticSpec {
            n: 60,
            fake_fraction: 0.5,
            n_domains: 3,
            ..Default::default()
        };
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a, b);
        for r in &a.records {
            r.validate().unwrap();
            assert!(r.engagements.len() >= 14);
            assert_eq!(r.engagements[0].timestamp, 0);
            assert!(a.credibility.get(&r.source_domain).is_some());
        }
        let known: std::collections::BTreeSet<&str> = a.profiles.iter().map(|p| p.user_id.as_str()).collect();
        assert!(a.records.iter().flat_map(|r| &r.engagements).all(|e| known.contains(e.user_id.as_str())));
        let other = synth_generate(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn fully_informative_signals_separate() {
        let spec = SyntheticSpec {
            n: 400,
            fake_fraction: 0.5,
            informativeness: [1.0; 4],
            noise: 0.0,
            seed: 3,
            ..Default::default()
        };
        let d = synth_generate(&spec).unwrap();
        for k in 0..4 {
            let acc = best_signal_accuracy(&d, k);
            assert!(acc >= 0.99, "modality {k}: {acc}");
        }
    }

    #[test]
    fn uninformative_signals_reach_only_the_prior() {
        let spec = SyntheticSpec {
            n: 2000,
            fake_fraction: 0.3,
            informativeness: [0.0; 4],
            seed: 4,
            ..Default::default()
        };
        let d = synth_generate(&spec).unwrap();
        let prior = d.gold.iter().filter(|&&l| l == VeracityLabel::Real).count() as f64 / 2000.0;
        let all: Vec<Vec<f64>> = (0..2000).map(|i| (0..4).flat_map(|k| d.signals[k][i].clone()).collect()).collect();
        let km = kmeans(&all, 2, 5, 1).unwrap();
        let acc = map_clusters(&km.assignments, &d.gold_indices()).unwrap().accuracy(&d.gold_indices());
        assert!(acc <= prior + 0.03, "{acc} vs prior {prior}");
        for k in 0..4 {
            assert!(best_signal_accuracy(&d, k) <= prior + 0.03);
        }
    }

    #[test]
    fn fake_count_is_binomial() {
        let d = synth_generate(&SyntheticSpec {
            n: 10_000,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let fakes = d.gold.iter().filter(|&&l| l == VeracityLabel::Fake).count() as f64;
        let sd = (10_000.0f64 * 0.01 * 0.99).sqrt();
        assert!((fakes - 100.0).abs() <= 3.0 * sd, "{fakes}");
    }

    #[test]
    fn gold_file_round_trip() {
        let d = synth_generate(&SyntheticSpec { n: 20, fake_fraction: 0.5, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        let back = read_gold(&dir.path().join("gold.csv")).unwrap();
        assert_eq!(back.len(), 20);
        assert!(back.iter().zip(&d.records).zip(&d.gold).all(|((b, r), g)| b.0 == r.id && b.1 == *g));
        assert_eq!(crate::datamodel::load_records(&dir.path().join("records.jsonl")).unwrap(), d.records);
        assert_eq!(CredibilityDb::load(&dir.path().join("credibility.csv")).unwrap(), d.credibility);
    }
}
