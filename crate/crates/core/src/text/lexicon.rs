use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Term -> categories, with optional trailing-`*` prefix entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CategoryLexicon {
    exact: BTreeMap<String, BTreeSet<String>>,
    prefixes: Vec<(String, BTreeSet<String>)>,
    categories: BTreeSet<String>,
}

impl CategoryLexicon {
    pub fn insert(&mut self, term: &str, category: &str) {
        let term = term.trim().to_lowercase();
        let category = category.trim().to_lowercase();
        self.categories.insert(category.clone());
        if let Some(prefix) = term.strip_suffix('*') {
            match self.prefixes.iter_mut().find(|(p, _)| p == prefix) {
                Some((_, cats)) => {
                    cats.insert(category);
                }
                None => self.prefixes.push((prefix.to_string(), BTreeSet::from([category]))),
            }
        } else {
            self.exact.entry(term).or_default().insert(category);
        }
    }

    pub fn categories(&self) -> &BTreeSet<String> {
        &self.categories
    }

    /// Categories of `token` (already lowercase): exact entries plus every
    /// matching prefix entry.
    pub fn lookup(&self, token: &str) -> BTreeSet<&str> {
        let mut out: BTreeSet<&str> = self
            .exact
            .get(token)
            .into_iter()
            .flatten()
            .map(String::as_str)
            .collect();
        for (p, cats) in &self.prefixes {
            if token.starts_with(p.as_str()) {
                out.extend(cats.iter().map(String::as_str));
            }
        }
        out
    }

    /// All exact terms and prefixes of `category`.
    pub fn terms_of(&self, category: &str) -> Vec<String> {
        let mut out: Vec<String> = self
            .exact
            .iter()
            .filter(|(_, c)| c.contains(category))
            .map(|(t, _)| t.clone())
            .collect();
        out.extend(self.prefixes.iter().filter(|(_, c)| c.contains(category)).map(|(p, _)| p.clone()));
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LexiconSet {
    /// Term -> polarity in [-1, 1].
    pub sentiment: BTreeMap<String, f64>,
    pub emotion: CategoryLexicon,
    pub psycholinguistic: CategoryLexicon,
    pub morality: CategoryLexicon,
    pub hyperbolic: CategoryLexicon,
}

pub const LEXICON_FILES: [&str; 5] = [
    "sentiment.csv",
    "emotion.csv",
    "psycholinguistic.csv",
    "morality.csv",
    "hyperbolic.csv",
];

const BUILTIN: [&str; 5] = [
    include_str!("../../lexicons/sentiment.csv"),
    include_str!("../../lexicons/emotion.csv"),
    include_str!("../../lexicons/psycholinguistic.csv"),
    include_str!("../../lexicons/morality.csv"),
    include_str!("../../lexicons/hyperbolic.csv"),
];

/// Rows of `term,category[,weight]`; a header row starting with `term` is
/// skipped.
fn parse_rows(text: &str, origin: &str) -> Result<Vec<(String, String, Option<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let loc = format!("{origin}:{}", i + 1);
        let row = row.map_err(|e| Error::parse(&loc, e))?;
        if row.len() < 2 || row.len() > 3 || row[0].is_empty() {
            return Err(Error::parse(loc, "expected `term,category[,weight]`"));
        }
        if i == 0 && row[0].eq_ignore_ascii_case("term") {
            continue;
        }
        let weight = match row.get(2) {
            Some(w) => Some(w.parse::<f64>().map_err(|e| Error::parse(&loc, e))?),
            None => None,
        };
        out.push((row[0].to_lowercase(), row[1].to_lowercase(), weight));
    }
    Ok(out)
}

impl LexiconSet {
    fn from_texts(texts: [&str; 5], origins: [String; 5]) -> Result<Self> {
        let mut lex = LexiconSet::default();
        for (term, _, weight) in parse_rows(texts[0], &origins[0])? {
            let w = weight.ok_or_else(|| Error::parse(&origins[0], format!("sentiment term `{term}` needs a weight")))?;
            if !(-1.0..=1.0).contains(&w) {
                return Err(Error::Validation(format!("polarity of `{term}` outside [-1, 1]")));
            }
            lex.sentiment.insert(term, w);
        }
        let targets = [
            &mut lex.emotion,
            &mut lex.psycholinguistic,
            &mut lex.morality,
            &mut lex.hyperbolic,
        ];
        for (k, target) in targets.into_iter().enumerate() {
            for (term, cat, _) in parse_rows(texts[k + 1], &origins[k + 1])? {
                target.insert(&term, &cat);
            }
        }
        Ok(lex)
    }

    /// The small open lexicons shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_texts(BUILTIN, LEXICON_FILES.map(|f| format!("builtin/{f}"))).expect("builtin lexicons parse")
    }

    /// Loads the five lexicon files from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut texts = Vec::new();
        for f in LEXICON_FILES {
            let p = dir.join(f);
            texts.push(std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?);
        }
        let refs: [&str; 5] = std::array::from_fn(|i| texts[i].as_str());
        Self::from_texts(refs, LEXICON_FILES.map(|f| dir.join(f).display().to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub category: String,
}

/// Ordered feature list; fixes the layout of every feature vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureManifest {
    pub features: Vec<FeatureSpec>,
}

pub const CATEGORIES: [&str; 6] = [
    "sentiment",
    "emotion",
    "psycholinguistic",
    "readability",
    "morality",
    "hyperbolic",
];

impl FeatureManifest {
    /// Every category of every lexicon, in the fixed category order.
    pub fn for_lexicons(lex: &LexiconSet) -> Self {
        let mut features = vec![FeatureSpec {
            name: "polarity".into(),
            category: "sentiment".into(),
        }];
        let groups = [
            ("emotion", &lex.emotion),
            ("psycholinguistic", &lex.psycholinguistic),
        ];
        for (cat, l) in groups {
            features.extend(l.categories().iter().map(|c| FeatureSpec {
                name: c.clone(),
                category: cat.into(),
            }));
        }
        features.push(FeatureSpec {
            name: "smog".into(),
            category: "readability".into(),
        });
        for (cat, l) in [("morality", &lex.morality), ("hyperbolic", &lex.hyperbolic)] {
            features.extend(l.categories().iter().map(|c| FeatureSpec {
                name: c.clone(),
                category: cat.into(),
            }));
        }
        FeatureManifest { features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Checks every feature against the lexicon category universes.
    pub fn validate(&self, lex: &LexiconSet) -> Result<()> {
        for f in &self.features {
            let ok = match f.category.as_str() {
                "sentiment" => f.name == "polarity",
                "readability" => f.name == "smog",
                "emotion" => lex.emotion.categories().contains(&f.name),
                "psycholinguistic" => lex.psycholinguistic.categories().contains(&f.name),
                "morality" => lex.morality.categories().contains(&f.name),
                "hyperbolic" => lex.hyperbolic.categories().contains(&f.name),
                _ => false,
            };
            if !ok {
                return Err(Error::Validation(format!(
                    "manifest feature `{}` ({}) is not provided by the lexicons",
                    f.name, f.category
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}
