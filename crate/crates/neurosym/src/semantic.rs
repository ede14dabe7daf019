//! Semantic filtering against lexicons, percentile thresholding, and
//! metadata extraction (gazetteer locations, key phrases).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSnapshot, RawDocument, TokenizedDocument};
use crate::embedding::{cosine, EmbeddingModel};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::par;
use crate::topic::TopicModel;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub doc_id: String,
    pub score: f64,
    pub matched_term: Option<String>,
    /// Set when no lexicon term was in the embedding vocabulary.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_lexicon_vector: bool,
}

/// Max cosine between the document embedding and any lexicon term vector,
/// across all categories.
pub fn relevance(doc: &TokenizedDocument, lex: &Lexicon, em: &EmbeddingModel) -> Result<RelevanceScore> {
    let (doc_vec, _) = em.doc_embedding(&doc.tokens);
    let mut best: Option<(&str, f64)> = None;
    let mut any_vector = false;
    for (term, _) in lex.all_terms() {
        let Some(v) = em.vector(term) else { continue };
        any_vector = true;
        let s = cosine(&doc_vec, v)?;
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((term, s));
        }
    }
    Ok(match best {
        Some((term, score)) => RelevanceScore {
            doc_id: doc.id.clone(),
            score,
            matched_term: Some(term.to_string()),
            no_lexicon_vector: false,
        },
        None => RelevanceScore {
            doc_id: doc.id.clone(),
            score: 0.0,
            matched_term: None,
            no_lexicon_vector: !any_vector,
        },
    })
}

pub fn relevance_batch(
    corpus: &CorpusSnapshot,
    lex: &Lexicon,
    em: &EmbeddingModel,
) -> Result<Vec<RelevanceScore>> {
    par::map_slice(&corpus.documents, |d| relevance(d, lex, em)).into_iter().collect()
}

/// Nearest-rank percentile: sort ascending, take index ceil(p/100 * n) - 1.
pub fn compute_threshold(scores: &[f64], percentile: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Invalid("cannot take percentile of empty scores".into()));
    }
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::Invalid("percentile must be in (0,100)".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let idx = ((percentile / 100.0 * n as f64).ceil() as usize).max(1) - 1;
    Ok(sorted[idx.min(n - 1)])
}

/// Retains exactly the documents with relevance score strictly above tau.
pub fn filter(
    corpus: &CorpusSnapshot,
    lex: &Lexicon,
    em: &EmbeddingModel,
    tau: f64,
) -> Result<(CorpusSnapshot, usize)> {
    let scores = relevance_batch(corpus, lex, em)?;
    let documents: Vec<TokenizedDocument> = corpus
        .documents
        .iter()
        .zip(&scores)
        .filter(|(_, s)| s.score > tau)
        .map(|(d, _)| d.clone())
        .collect();
    let retained = documents.len();
    log::info!("filter: retained {retained}/{} documents at tau {tau}", corpus.len());
    Ok((
        CorpusSnapshot {
            documents,
            created_from: corpus.created_from.clone(),
            preprocess_config: corpus.preprocess_config.clone(),
        },
        retained,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub name: String,
    pub admin1: String,
    pub country: String,
    pub lat: f64,
    pub lon: f64,
}

/// Exact longest-match location index over lowercase names of up to three
/// tokens. Ties on equal-length matches resolve to the first gazetteer row.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    /// space-joined lowercase name -> index of first entry with that name
    by_name: HashMap<String, usize>,
    max_tokens: usize,
}

impl Gazetteer {
    pub fn new(entries: Vec<GazetteerEntry>) -> Result<Gazetteer> {
        let mut by_name = HashMap::new();
        let mut max_tokens = 1;
        let mut seen = std::collections::HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.name != e.name.to_lowercase() {
                return Err(Error::Invalid(format!("gazetteer name not lowercase: {}", e.name)));
            }
            if !seen.insert((e.name.clone(), e.admin1.clone(), e.country.clone())) {
                return Err(Error::Invalid(format!("duplicate gazetteer row: {}", e.name)));
            }
            max_tokens = max_tokens.max(e.name.split_whitespace().count());
            by_name.entry(e.name.clone()).or_insert(i);
        }
        Ok(Gazetteer { entries, by_name, max_tokens: max_tokens.min(3) })
    }

    /// Loads a TSV snapshot: name, admin1, country, lat, lon with a header row.
    pub fn load_tsv(path: &Path) -> Result<Gazetteer> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(path, "empty gazetteer"))?;
        if !header.to_lowercase().starts_with("name\t") {
            return Err(Error::parse(path, "missing header row (expected name\\tadmin1\\t...)"));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::parse(path, format!("line {}: expected 5 columns", i + 2)));
            }
            entries.push(GazetteerEntry {
                name: cols[0].to_lowercase(),
                admin1: cols[1].to_string(),
                country: cols[2].to_string(),
                lat: cols[3].parse().map_err(|_| Error::parse(path, format!("line {}: bad lat", i + 2)))?,
                lon: cols[4].parse().map_err(|_| Error::parse(path, format!("line {}: bad lon", i + 2)))?,
            });
        }
        Gazetteer::new(entries)
    }

    pub fn lookup(&self, name: &str) -> Option<&GazetteerEntry> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }
}

/// Longest-match scan over token windows (up to 3 tokens), plus the raw
/// document's location hint. Overlapping shorter matches are consumed by the
/// longer one.
pub fn extract_locations(
    raw: &RawDocument,
    doc: &TokenizedDocument,
    gaz: &Gazetteer,
) -> Vec<GazetteerEntry> {
    let mut found = Vec::new();
    let toks = &doc.tokens;
    let mut i = 0;
    while i < toks.len() {
        let mut matched = None;
        for n in (1..=gaz.max_tokens.min(toks.len() - i)).rev() {
            let candidate = toks[i..i + n].join(" ");
            if let Some(e) = gaz.lookup(&candidate) {
                matched = Some((e.clone(), n));
                break;
            }
        }
        if let Some((e, n)) = matched {
            if !found.contains(&e) {
                found.push(e);
            }
            i += n;
        } else {
            i += 1;
        }
    }
    if let Some(hint) = &raw.location_hint {
        if let Some(e) = gaz.lookup(&hint.to_lowercase()) {
            if !found.contains(e) {
                found.push(e.clone());
            }
        }
    }
    found
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyPhrase {
    pub phrase: String,
    pub similarity: f64,
}

/// Key-phrase extraction: document n-grams with n >= 2 plus hashtags, kept
/// when their max cosine to any lexicon term vector reaches tau_kp. The
/// n-gram topic model defines the candidate inventory the same way training
/// did; here candidates come straight from the document's n-gram stream.
pub fn extract_keyphrases(
    doc: &TokenizedDocument,
    _tm_ngram: &TopicModel,
    lex: &Lexicon,
    em: &EmbeddingModel,
    tau_kp: f64,
) -> Result<Vec<KeyPhrase>> {
    let mut lex_vectors: Vec<&[f64]> = Vec::new();
    for (term, _) in lex.all_terms() {
        if let Some(v) = em.vector(term) {
            lex_vectors.push(v);
        }
    }
    let mut out: Vec<KeyPhrase> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let candidates = doc
        .ngrams
        .iter()
        .filter(|g| g.contains('_'))
        .chain(doc.hashtags.iter());
    for cand in candidates {
        if !seen.insert(cand.as_str()) {
            continue;
        }
        let Some(v) = em.vector(cand) else {
            log::debug!("keyphrase candidate '{cand}' out of embedding vocabulary");
            continue;
        };
        let mut best = f64::NEG_INFINITY;
        for lv in &lex_vectors {
            best = best.max(cosine(v, lv)?);
        }
        if best.is_finite() && best >= tau_kp {
            out.push(KeyPhrase { phrase: cand.clone(), similarity: best });
        }
    }
    out.sort_by(|a, b| {
        b.similarity.partial_cmp(&a.similarity).unwrap().then_with(|| a.phrase.cmp(&b.phrase))
    });
    Ok(out)
}
