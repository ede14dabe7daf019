//! Versioned category lexicons and neologism detection over corpus windows.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSnapshot;
use crate::embedding::{cosine, EmbeddingModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Seed,
    Enriched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub term: String,
    pub weight: f64,
    #[serde(default = "seed_provenance")]
    pub provenance: Provenance,
}

fn seed_provenance() -> Provenance {
    Provenance::Seed
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lexicon {
    pub version: u64,
    /// BTreeMap keeps category iteration order stable for serialization.
    pub categories: BTreeMap<String, Vec<LexiconEntry>>,
}

impl Lexicon {
    pub fn new(version: u64, categories: BTreeMap<String, Vec<LexiconEntry>>) -> Result<Lexicon> {
        let lex = Lexicon { version, categories };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::Invalid("lexicon must name at least one category".into()));
        }
        for (cat, entries) in &self.categories {
            let mut seen = HashSet::new();
            for e in entries {
                if e.term != e.term.to_lowercase() {
                    return Err(Error::Invalid(format!(
                        "lexicon term not lowercase: '{}' in {cat}",
                        e.term
                    )));
                }
                if !(e.weight > 0.0 && e.weight <= 1.0) {
                    return Err(Error::Invalid(format!(
                        "weight {} for '{}' in {cat} outside (0,1]",
                        e.weight, e.term
                    )));
                }
                if !seen.insert(e.term.as_str()) {
                    return Err(Error::Invalid(format!(
                        "duplicate term '{}' in category {cat}",
                        e.term
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, term: &str) -> bool {
        self.categories.values().any(|es| es.iter().any(|e| e.term == term))
    }

    pub fn category(&self, name: &str) -> Option<&[LexiconEntry]> {
        self.categories.get(name).map(|v| v.as_slice())
    }

    pub fn category_names(&self) -> Vec<&str> {
        self.categories.keys().map(|s| s.as_str()).collect()
    }

    /// All (term, weight) pairs across categories.
    pub fn all_terms(&self) -> Vec<(&str, f64)> {
        self.categories
            .values()
            .flat_map(|es| es.iter().map(|e| (e.term.as_str(), e.weight)))
            .collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("serializable"))
            .map_err(|e| Error::io(path, e))
    }
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lex: Lexicon =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    lex.validate()?;
    Ok(lex)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeologismCandidate {
    pub term: String,
    /// Occurrences per 1000 posts in the detection window.
    pub window_per_capita: f64,
    pub baseline_per_capita: f64,
    pub best_category: String,
    /// Max cosine to the best category's seed-term vectors.
    pub similarity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeologismConfig {
    /// Minimum window rate, per 1000 posts.
    pub min_rate: f64,
    /// Required ratio of window rate to baseline rate.
    pub growth: f64,
}

impl Default for NeologismConfig {
    fn default() -> Self {
        NeologismConfig { min_rate: 0.5, growth: 3.0 }
    }
}

fn per_capita_counts(snapshot: &CorpusSnapshot) -> HashMap<&str, f64> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in &snapshot.documents {
        for g in &doc.ngrams {
            *counts.entry(g.as_str()).or_insert(0) += 1;
        }
    }
    let n_docs = snapshot.len().max(1) as f64;
    counts.into_iter().map(|(t, c)| (t, 1000.0 * c as f64 / n_docs)).collect()
}

/// Emerging-term detection: a term is a candidate when it is absent from the
/// lexicon, frequent enough in the window (per 1000 posts), growing against
/// the baseline window, and embeddable. Each candidate attaches to the
/// category whose seed-term vectors it is closest to.
pub fn detect_neologisms(
    window: &CorpusSnapshot,
    baseline: Option<&CorpusSnapshot>,
    lex: &Lexicon,
    em: &EmbeddingModel,
    cfg: &NeologismConfig,
) -> Result<Vec<NeologismCandidate>> {
    if window.is_empty() {
        return Err(Error::Invalid("empty detection window".into()));
    }
    let window_rates = per_capita_counts(window);
    let baseline_rates = baseline.map(per_capita_counts).unwrap_or_default();

    let mut out = Vec::new();
    let mut terms: Vec<&&str> = window_rates.keys().collect();
    terms.sort();
    for &&term in &terms {
        let rate = window_rates[term];
        if lex.contains(term) || rate < cfg.min_rate {
            continue;
        }
        let base = baseline_rates.get(term).copied().unwrap_or(0.0);
        if base > 0.0 && rate < cfg.growth * base {
            continue;
        }
        let Some(v) = em.vector(term) else { continue };

        let mut best: Option<(&str, f64)> = None;
        for (cat, entries) in &lex.categories {
            let mut cat_sim = f64::NEG_INFINITY;
            for e in entries {
                if let Some(tv) = em.vector(&e.term) {
                    cat_sim = cat_sim.max(cosine(v, tv)?);
                }
            }
            if cat_sim.is_finite() && best.map_or(true, |(_, s)| cat_sim > s) {
                best = Some((cat, cat_sim));
            }
        }
        if let Some((cat, sim)) = best {
            out.push(NeologismCandidate {
                term: term.to_string(),
                window_per_capita: rate,
                baseline_per_capita: base,
                best_category: cat.to_string(),
                similarity: sim,
            });
        }
    }
    Ok(out)
}

/// Appends sufficiently similar candidates to their best category, bumping
/// the lexicon version. The input lexicon is left untouched.
pub fn enrich(lex: &Lexicon, candidates: &[NeologismCandidate], tau_sim: f64) -> Lexicon {
    let mut categories = lex.categories.clone();
    for c in candidates {
        if c.similarity < tau_sim {
            continue;
        }
        let entries = categories.entry(c.best_category.clone()).or_default();
        if entries.iter().any(|e| e.term == c.term) {
            continue;
        }
        entries.push(LexiconEntry {
            term: c.term.clone(),
            weight: c.similarity.clamp(f64::MIN_POSITIVE, 1.0),
            provenance: Provenance::Enriched,
        });
    }
    Lexicon { version: lex.version + 1, categories }
}
