//! Corpus ingestion and preprocessing: JSONL loading, tokenization,
//! suffix-rule lemmatization, hashtag extraction, and n-gram generation.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::par;

pub const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Twitter,
    Reddit,
    News,
    Other,
}

impl Default for Source {
    fn default() -> Self {
        Source::Other
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub timestamp: String,
    #[serde(default)]
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_hint: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub id: String,
    pub tokens: Vec<String>,
    pub ngrams: Vec<String>,
    pub hashtags: Vec<String>,
}

/// Preprocessing knobs. The stopword list travels separately (a versioned
/// text file); the config only pins its digest so snapshots are reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub n_max: usize,
    pub stopwords_digest: String,
    pub strip_urls: bool,
    #[serde(skip)]
    pub stopwords: BTreeSet<String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            n_max: 3,
            stopwords_digest: String::new(),
            strip_urls: true,
            stopwords: BTreeSet::new(),
        }
    }
}

impl PreprocessConfig {
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stopwords = words.into_iter().map(|w| w.into().to_lowercase()).collect();
        self.stopwords_digest = digest_stopwords(&self.stopwords);
        self
    }

    /// Loads the stopword list from a one-term-per-line text file and records
    /// its digest.
    pub fn load_stopwords(mut self, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.stopwords = text
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        self.stopwords_digest = digest_stopwords(&self.stopwords);
        Ok(self)
    }
}

fn digest_stopwords(words: &BTreeSet<String>) -> String {
    let mut hasher = Sha256::new();
    for w in words {
        hasher.update(w.as_bytes());
        hasher.update(b"\n");
    }
    hex_digest(&hasher.finalize())
}

pub fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex_digest(&Sha256::digest(&data)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSnapshot {
    pub documents: Vec<TokenizedDocument>,
    pub created_from: String,
    pub preprocess_config: PreprocessConfig,
}

impl CorpusSnapshot {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[derive(Debug)]
pub struct IngestResult {
    pub documents: Vec<RawDocument>,
    pub skipped: usize,
    /// Line numbers (1-based) of the first few malformed lines.
    pub first_failures: Vec<usize>,
}

/// Reads a JSONL corpus, skipping malformed lines. More than 50% malformed
/// lines is treated as a broken file rather than noise.
pub fn ingest_jsonl(path: &Path) -> Result<IngestResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut documents = Vec::new();
    let mut skipped = 0usize;
    let mut first_failures = Vec::new();
    let mut total = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match serde_json::from_str::<RawDocument>(line) {
            Ok(doc) if !doc.id.is_empty() && !doc.text.trim().is_empty() => {
                documents.push(doc);
            }
            _ => {
                skipped += 1;
                if first_failures.len() < 10 {
                    first_failures.push(lineno + 1);
                }
            }
        }
    }
    if total == 0 {
        log::warn!("{}: empty corpus file", path.display());
    } else if skipped * 2 > total {
        return Err(Error::parse(
            path,
            format!(
                "{skipped}/{total} malformed lines; first failures at lines {first_failures:?}"
            ),
        ));
    }
    Ok(IngestResult { documents, skipped, first_failures })
}

/// Single-suffix lemmatizer: -ing / -ed / -s with vowel guards and
/// double-consonant collapse ("running" -> "run").
pub fn lemmatize(word: &str) -> String {
    fn has_vowel(s: &str) -> bool {
        s.chars().any(|c| VOWELS.contains(&c))
    }
    fn collapse_double(s: &str) -> String {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() >= 2 {
            let last = chars[chars.len() - 1];
            if last == chars[chars.len() - 2]
                && !VOWELS.contains(&last)
                && !matches!(last, 'l' | 's' | 'z')
            {
                return chars[..chars.len() - 1].iter().collect();
            }
        }
        s.to_string()
    }

    if let Some(stem) = word.strip_suffix("ing") {
        if stem.chars().count() >= 3 && has_vowel(stem) {
            return collapse_double(stem);
        }
    }
    if let Some(stem) = word.strip_suffix("ed") {
        if stem.chars().count() >= 3 && has_vowel(stem) {
            return collapse_double(stem);
        }
    }
    if word.len() >= 3
        && word.ends_with('s')
        && !word.ends_with("ss")
        && !word.ends_with("us")
        && !word.ends_with("is")
    {
        let stem = &word[..word.len() - 1];
        if has_vowel(stem) {
            return stem.to_string();
        }
    }
    word.to_string()
}

fn is_url_or_mention(tok: &str) -> bool {
    tok.starts_with("http://")
        || tok.starts_with("https://")
        || tok.starts_with("www.")
        || tok.starts_with('@')
}

/// Tokenizes one raw document: hashtags pulled out first, then URL/mention
/// stripping, lowercasing, punctuation splitting, lemmatization, stopword
/// removal, and n-gram generation.
pub fn preprocess(doc: &RawDocument, cfg: &PreprocessConfig) -> TokenizedDocument {
    let mut hashtags = Vec::new();
    let mut tokens = Vec::new();

    for raw_tok in doc.text.split_whitespace() {
        if let Some(tag) = raw_tok.strip_prefix('#') {
            let tag: String = tag
                .chars()
                .take_while(|c| c.is_alphanumeric() || *c == '_')
                .collect::<String>()
                .to_lowercase();
            if !tag.is_empty() {
                hashtags.push(tag);
            }
            continue;
        }
        if cfg.strip_urls && is_url_or_mention(raw_tok) {
            continue;
        }
        // Split on punctuation, keeping alphanumerics and underscores.
        let lowered = raw_tok.to_lowercase();
        for piece in lowered.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
            if piece.is_empty() || cfg.stopwords.contains(piece) {
                continue;
            }
            let lemma = lemmatize(piece);
            if lemma.is_empty() || cfg.stopwords.contains(&lemma) {
                continue;
            }
            tokens.push(lemma);
        }
    }

    let ngrams = generate_ngrams(&tokens, cfg.n_max.max(1));
    TokenizedDocument { id: doc.id.clone(), tokens, ngrams, hashtags }
}

/// Contiguous n-grams joined by '_' for each n in 1..=n_max, grouped by n
/// and in document order within each group.
pub fn generate_ngrams(tokens: &[String], n_max: usize) -> Vec<String> {
    let mut out = Vec::new();
    for n in 1..=n_max {
        if tokens.len() < n {
            break;
        }
        for window in tokens.windows(n) {
            out.push(window.join("_"));
        }
    }
    out
}

/// Preprocesses all documents (document-parallel) and seals the snapshot.
pub fn preprocess_corpus(
    docs: &[RawDocument],
    cfg: &PreprocessConfig,
    created_from: &str,
) -> Result<CorpusSnapshot> {
    let mut seen = BTreeSet::new();
    for d in docs {
        if !seen.insert(&d.id) {
            return Err(Error::Invalid(format!("duplicate document id: {}", d.id)));
        }
    }
    let documents = par::map_slice(docs, |d| preprocess(d, cfg));
    Ok(CorpusSnapshot {
        documents,
        created_from: created_from.to_string(),
        preprocess_config: cfg.clone(),
    })
}
