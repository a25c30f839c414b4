use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::lexicon::{FeatureManifest, LexiconSet};

pub const SMOG_SLOPE: f64 = 1.0430;
pub const SMOG_INTERCEPT: f64 = 3.1291;

/// Lowercase word tokens: runs of letters, digits and apostrophes that
/// contain at least one letter.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| w.chars().any(char::is_alphabetic))
        .map(str::to_lowercase)
        .collect()
}

/// Sentences end at `.`, `!` or `?` followed by whitespace or the end of the
/// text; segments without words are not counted.
pub fn count_sentences(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let mut count = 0;
    let mut start = 0;
    for i in 0..chars.len() {
        let boundary = matches!(chars[i], '.' | '!' | '?') && chars.get(i + 1).is_none_or(|c| c.is_whitespace());
        if boundary || i + 1 == chars.len() {
            let seg: String = chars[start..=i].iter().collect();
            if !words(&seg).is_empty() {
                count += 1;
            }
            start = i + 1;
        }
    }
    count
}

/// Vowel-group count with a silent trailing `e` (not after `l`), minimum 1.
pub fn syllables(word: &str) -> usize {
    let w: Vec<char> = word.to_lowercase().chars().filter(|c| c.is_alphabetic()).collect();
    if w.is_empty() {
        return 0;
    }
    let vowel = |c: char| "aeiouy".contains(c);
    let mut groups = 0;
    let mut prev = false;
    for &c in &w {
        let v = vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    let n = w.len();
    if groups > 1 && w[n - 1] == 'e' && !(n >= 2 && w[n - 2] == 'l') {
        groups -= 1;
    }
    groups.max(1)
}

pub fn smog(sentences: usize, polysyllables: usize) -> f64 {
    if sentences == 0 {
        return SMOG_INTERCEPT;
    }
    SMOG_SLOPE * (polysyllables as f64 * 30.0 / sentences as f64).sqrt() + SMOG_INTERCEPT
}

pub fn smog_grade(text: &str) -> f64 {
    let poly = words(text).iter().filter(|w| syllables(w) >= 3).count();
    smog(count_sentences(text), poly)
}

/// Feature vector in manifest order. Lexical features are per-token
/// proportions; polarity is the mean token polarity (0 for tokens outside
/// the sentiment lexicon).
pub fn extract_features(text: &str, lex: &LexiconSet, manifest: &FeatureManifest) -> Result<Vec<f64>> {
    let tokens = words(text);
    let n = tokens.len() as f64;
    let proportion = |hits: usize| if tokens.is_empty() { 0.0 } else { hits as f64 / n };
    let mut out = Vec::with_capacity(manifest.dim());
    for f in &manifest.features {
        let v = match f.category.as_str() {
            "sentiment" => {
                if tokens.is_empty() {
                    0.0
                } else {
                    tokens.iter().filter_map(|t| lex.sentiment.get(t)).sum::<f64>() / n
                }
            }
            "readability" => smog_grade(text),
            cat => {
                let l = match cat {
                    "emotion" => &lex.emotion,
                    "psycholinguistic" => &lex.psycholinguistic,
                    "morality" => &lex.morality,
                    "hyperbolic" => &lex.hyperbolic,
                    other => return Err(Error::Validation(format!("unknown feature category `{other}`"))),
                };
                proportion(tokens.iter().filter(|t| l.lookup(t).contains(f.name.as_str())).count())
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Column-wise min-max scaling learned on a training matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::Validation("min-max needs at least one row".into()))?;
        let d = first.len();
        let mut min = first.clone();
        let mut max = first.clone();
        for r in rows {
            if r.len() != d {
                return Err(Error::Dimension(format!("row of {} values, expected {d}", r.len())));
            }
            for j in 0..d {
                min[j] = min[j].min(r[j]);
                max[j] = max[j].max(r[j]);
            }
        }
        Ok(MinMax { min, max })
    }

    /// Scales into [0, 1] with clipping; constant columns map to 0.
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.min.len() {
            return Err(Error::Dimension(format!("row of {} values, expected {}", row.len(), self.min.len())));
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    ((x - self.min[j]) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect())
    }
}

pub fn normalize_features(rows: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, MinMax)> {
    let mm = MinMax::fit(rows)?;
    let out = rows.iter().map(|r| mm.apply(r)).collect::<Result<_>>()?;
    Ok((out, mm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn syllable_heuristic() {
        assert_eq!(syllables("cat"), 1);
        assert_eq!(syllables("make"), 1);
        assert_eq!(syllables("table"), 2);
        assert_eq!(syllables("beautiful"), 3);
        assert_eq!(syllables("the"), 1);
        assert_eq!(syllables("unbelievable"), 5);
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(count_sentences("One. Two! Three? Four"), 4);
        assert_eq!(count_sentences("Version 2.5 is out. Really."), 2);
        assert_eq!(count_sentences(""), 0);
        assert_eq!(count_sentences("..."), 0);
    }

    #[test]
    fn smog_on_thirty_sentences_with_thirty_polysyllables() {
        let text = "Remarkable outcome today. ".repeat(30);
        assert_eq!(count_sentences(&text), 30);
        let expected = 1.0430 * 30f64.sqrt() + 3.1291;
        assert!((smog_grade(&text) - expected).abs() < 1e-12);
        assert!((smog_grade(&text) - 8.8424).abs() < 1e-3);
        assert_eq!(smog_grade(""), 3.1291);
    }

    #[test]
    fn no_lexicon_hits_gives_zero_lexical_features() {
        let lex = LexiconSet::builtin();
        let m = FeatureManifest::for_lexicons(&lex);
        let f = extract_features("Xylophone zebra quartz.", &lex, &m).unwrap();
        for (spec, v) in m.features.iter().zip(&f) {
            if spec.category != "readability" {
                assert_eq!(*v, 0.0, "{}", spec.name);
            }
        }
        let empty = extract_features("", &lex, &m).unwrap();
        assert_eq!(empty.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn min_max_examples() {
        let rows = vec![vec![0.0, 3.0], vec![5.0, 3.0], vec![10.0, 3.0]];
        let (out, mm) = normalize_features(&rows).unwrap();
        assert_eq!(out.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert!(out.iter().all(|r| r[1] == 0.0));
        assert_eq!(mm.apply(&[20.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(mm.apply(&[2.5, 3.0]).unwrap(), vec![0.25, 0.0]);
    }

    proptest! {
        #[test]
        fn proportions_invariant_to_self_concatenation(idx in proptest::collection::vec(0usize..40, 1..30)) {
            let lex = LexiconSet::builtin();
            let m = FeatureManifest::for_lexicons(&lex);
            let vocab = ["fear", "good", "certainly", "people", "shocking", "law", "the", "news", "terrible", "maybe",
                "joy", "harm", "not", "huge", "report", "city", "loyal", "perhaps", "sacred", "deadly"];
            let text: String = idx.iter().map(|i| vocab[i % vocab.len()]).collect::<Vec<_>>().join(" ");
            let a = extract_features(&text, &lex, &m).unwrap();
            let b = extract_features(&format!("{text} {text}"), &lex, &m).unwrap();
            for ((spec, x), y) in m.features.iter().zip(&a).zip(&b) {
                if spec.category != "readability" {
                    prop_assert!((x - y).abs() < 1e-12);
                    if spec.category != "sentiment" {
                        prop_assert!((0.0..=1.0).contains(x));
                    }
                } else {
                    prop_assert!(*x >= 3.1291);
                }
            }
        }

        #[test]
        fn replay_matches_recomputation(rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..10), probe in proptest::collection::vec(-8.0f64..8.0, 3)) {
            let mm = MinMax::fit(&rows).unwrap();
            let out = mm.apply(&probe).unwrap();
            for j in 0..3 {
                let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                let expected = if hi > lo { ((probe[j] - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
                prop_assert_eq!(out[j], expected);
            }
        }
    }
}
