//! Topic modeling via collapsed Gibbs sampling, in a unigram (LDA) and an
//! n-gram (nLDA) variant. phi/theta are estimated from post-burn-in counts
//! with Dirichlet smoothing.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{hex_digest, CorpusSnapshot, TokenizedDocument};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    UnigramLda,
    NgramNlda,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicConfig {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iters: usize,
    pub burn_in: usize,
    pub fold_in_sweeps: usize,
    pub seed: u64,
}

impl Default for TopicConfig {
    fn default() -> Self {
        let k = 20;
        TopicConfig {
            k,
            alpha: 50.0 / k as f64,
            beta: 0.01,
            iters: 1000,
            burn_in: 200,
            fold_in_sweeps: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub variant: Variant,
    pub seed: u64,
    pub fold_in_sweeps: usize,
    /// Model vocabulary (distinct stream terms, sorted).
    pub vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// K x |V| topic-word distributions, one row per topic.
    pub phi: Vec<Vec<f64>>,
    /// |D| x K document-topic distributions, training-corpus order.
    pub theta: Vec<Vec<f64>>,
    pub doc_ids: Vec<String>,
}

impl TopicModel {
    pub fn rebuild_index(&mut self) {
        self.index = self.vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn vocab_digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.vocab {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex_digest(&h.finalize())
    }

    fn stream_of<'a>(&self, doc: &'a TokenizedDocument) -> Vec<&'a str> {
        match self.variant {
            Variant::UnigramLda => doc.tokens.iter().map(|s| s.as_str()).collect(),
            Variant::NgramNlda => doc.ngrams.iter().map(|s| s.as_str()).collect(),
        }
    }

    /// Gibbs fold-in for an unseen document, holding phi fixed. Returns the
    /// normalized topic distribution and a flag set when no stream term was
    /// in the model vocabulary.
    pub fn doc_topics(&self, doc: &TokenizedDocument) -> (Vec<f64>, bool) {
        let words: Vec<usize> =
            self.stream_of(doc).iter().filter_map(|t| self.term_index(t)).collect();
        if words.is_empty() {
            return (vec![1.0 / self.k as f64; self.k], true);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ id_hash(&doc.id));
        let mut z: Vec<usize> = Vec::with_capacity(words.len());
        let mut n_k = vec![0usize; self.k];
        for _ in &words {
            let t = rng.gen_range(0..self.k);
            z.push(t);
            n_k[t] += 1;
        }
        let mut probs = vec![0.0; self.k];
        for _ in 0..self.fold_in_sweeps {
            for (i, &w) in words.iter().enumerate() {
                n_k[z[i]] -= 1;
                let mut acc = 0.0;
                for k in 0..self.k {
                    acc += (n_k[k] as f64 + self.alpha) * self.phi[k][w];
                    probs[k] = acc;
                }
                let x = rng.gen::<f64>() * acc;
                let t = probs.partition_point(|&c| c < x).min(self.k - 1);
                z[i] = t;
                n_k[t] += 1;
            }
        }
        let denom = words.len() as f64 + self.k as f64 * self.alpha;
        let theta = (0..self.k).map(|k| (n_k[k] as f64 + self.alpha) / denom).collect();
        (theta, false)
    }

    /// Per-topic embedding: phi-weighted mean over the top_k most probable
    /// terms that are in the embedding vocabulary, weights renormalized.
    /// Returns one (vector, no-in-vocab-term flag) per topic.
    pub fn topic_embeddings(&self, em: &EmbeddingModel, top_k: usize) -> Vec<(Vec<f64>, bool)> {
        (0..self.k)
            .map(|k| {
                let mut idx: Vec<usize> = (0..self.vocab.len()).collect();
                idx.sort_by(|&a, &b| {
                    self.phi[k][b]
                        .partial_cmp(&self.phi[k][a])
                        .unwrap()
                        .then_with(|| self.vocab[a].cmp(&self.vocab[b]))
                });
                let mut acc = vec![0.0; em.dim];
                let mut wsum = 0.0;
                for &w in idx.iter().take(top_k) {
                    if let Some(v) = em.vector(&self.vocab[w]) {
                        let p = self.phi[k][w];
                        for (a, x) in acc.iter_mut().zip(v) {
                            *a += p * x;
                        }
                        wsum += p;
                    }
                }
                if wsum == 0.0 {
                    (acc, true)
                } else {
                    for a in &mut acc {
                        *a /= wsum;
                    }
                    (acc, false)
                }
            })
            .collect()
    }

    pub fn save_json(&self, path: &Path, persist_theta: bool) -> Result<()> {
        let mut value = serde_json::to_value(self).expect("serializable");
        if !persist_theta {
            value["theta"] = serde_json::Value::Array(vec![]);
            value["doc_ids"] = serde_json::Value::Array(vec![]);
        }
        value["vocab_digest"] = serde_json::Value::String(self.vocab_digest());
        fs::write(path, serde_json::to_string(&value).expect("serializable"))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<TopicModel> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut model: TopicModel =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        model.rebuild_index();
        Ok(model)
    }
}

fn id_hash(id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

struct GibbsState {
    k: usize,
    vocab_size: usize,
    /// per-document topic counts
    n_dk: Vec<Vec<usize>>,
    /// per-topic word counts
    n_kw: Vec<Vec<usize>>,
    n_k: Vec<usize>,
    /// token streams as vocab indices
    docs: Vec<Vec<usize>>,
    /// topic assignments, parallel to docs
    z: Vec<Vec<usize>>,
}

impl GibbsState {
    fn counts_consistent(&self) -> bool {
        for (d, doc) in self.docs.iter().enumerate() {
            if self.n_dk[d].iter().sum::<usize>() != doc.len() {
                return false;
            }
        }
        let total_dk: usize = self.n_dk.iter().flatten().sum();
        let total_kw: usize = self.n_kw.iter().flatten().sum();
        let total_k: usize = self.n_k.iter().sum();
        total_dk == total_kw && total_kw == total_k
    }

    fn sweep(&mut self, alpha: f64, beta: f64, rng: &mut impl Rng) {
        let vb = self.vocab_size as f64 * beta;
        let mut probs = vec![0.0; self.k];
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i];
                let old = self.z[d][i];
                self.n_dk[d][old] -= 1;
                self.n_kw[old][w] -= 1;
                self.n_k[old] -= 1;
                let mut acc = 0.0;
                for k in 0..self.k {
                    let p = (self.n_dk[d][k] as f64 + alpha)
                        * (self.n_kw[k][w] as f64 + beta)
                        / (self.n_k[k] as f64 + vb);
                    acc += p;
                    probs[k] = acc;
                }
                let x = rng.gen::<f64>() * acc;
                let t = probs.partition_point(|&c| c < x).min(self.k - 1);
                self.z[d][i] = t;
                self.n_dk[d][t] += 1;
                self.n_kw[t][w] += 1;
                self.n_k[t] += 1;
            }
        }
    }
}

/// Model vocabulary (distinct stream terms, sorted for determinism) and the
/// documents as index streams over it.
fn stream_index(
    corpus: &CorpusSnapshot,
    variant: Variant,
) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let stream_of = |doc: &TokenizedDocument| -> Vec<String> {
        match variant {
            Variant::UnigramLda => doc.tokens.clone(),
            Variant::NgramNlda => doc.ngrams.clone(),
        }
    };
    let mut seen = std::collections::BTreeSet::new();
    for doc in &corpus.documents {
        seen.extend(stream_of(doc));
    }
    let vocab: Vec<String> = seen.into_iter().collect();
    if vocab.is_empty() {
        return Err(Error::Invalid("empty topic-model vocabulary".into()));
    }
    let index: HashMap<&str, usize> =
        vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let docs = corpus
        .documents
        .iter()
        .map(|doc| stream_of(doc).iter().filter_map(|t| index.get(t.as_str()).copied()).collect())
        .collect();
    Ok((vocab, docs))
}

fn init_state(docs: Vec<Vec<usize>>, k: usize, v: usize, rng: &mut impl Rng) -> GibbsState {
    let mut state = GibbsState {
        k,
        vocab_size: v,
        n_dk: vec![vec![0; k]; docs.len()],
        n_kw: vec![vec![0; v]; k],
        n_k: vec![0; k],
        z: docs.iter().map(|d| Vec::with_capacity(d.len())).collect(),
        docs,
    };
    for d in 0..state.docs.len() {
        for i in 0..state.docs[d].len() {
            let w = state.docs[d][i];
            let t = rng.gen_range(0..k);
            state.z[d].push(t);
            state.n_dk[d][t] += 1;
            state.n_kw[t][w] += 1;
            state.n_k[t] += 1;
        }
    }
    state
}

/// Audit hook: runs the sampler for `sweeps` sweeps and checks the
/// count-conservation invariants after initialization and after every
/// sweep, independent of the debug assertions inside training.
pub fn audit_count_conservation(
    corpus: &CorpusSnapshot,
    variant: Variant,
    cfg: &TopicConfig,
    sweeps: usize,
) -> Result<bool> {
    let (vocab, docs) = stream_index(corpus, variant)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut state = init_state(docs, cfg.k, vocab.len(), &mut rng);
    if !state.counts_consistent() {
        return Ok(false);
    }
    for _ in 0..sweeps {
        state.sweep(cfg.alpha, cfg.beta, &mut rng);
        if !state.counts_consistent() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Collapsed Gibbs LDA over the corpus token stream (unigram variant) or
/// n-gram stream (nLDA variant).
pub fn train_lda(
    corpus: &CorpusSnapshot,
    variant: Variant,
    cfg: &TopicConfig,
) -> Result<TopicModel> {
    if corpus.is_empty() {
        return Err(Error::Invalid("empty corpus".into()));
    }
    if cfg.k < 2 {
        return Err(Error::Invalid("need K >= 2".into()));
    }
    if cfg.iters <= cfg.burn_in {
        return Err(Error::Invalid("need iters > burn_in".into()));
    }

    let (vocab, docs) = stream_index(corpus, variant)?;
    let k = cfg.k;
    let v = vocab.len();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut state = init_state(docs, k, v, &mut rng);
    debug_assert!(state.counts_consistent());

    // post-burn-in count accumulators
    let mut acc_kw = vec![vec![0u64; v]; k];
    let mut acc_dk = vec![vec![0u64; k]; state.docs.len()];
    let mut samples = 0u64;
    for iter in 0..cfg.iters {
        state.sweep(cfg.alpha, cfg.beta, &mut rng);
        debug_assert!(state.counts_consistent(), "count conservation broken at sweep {iter}");
        if iter >= cfg.burn_in {
            for kk in 0..k {
                for ww in 0..v {
                    acc_kw[kk][ww] += state.n_kw[kk][ww] as u64;
                }
            }
            for d in 0..state.docs.len() {
                for kk in 0..k {
                    acc_dk[d][kk] += state.n_dk[d][kk] as u64;
                }
            }
            samples += 1;
        }
    }
    let samples = samples.max(1) as f64;

    let phi: Vec<Vec<f64>> = (0..k)
        .map(|kk| {
            let n_k: f64 = acc_kw[kk].iter().map(|&c| c as f64 / samples).sum();
            (0..v)
                .map(|ww| (acc_kw[kk][ww] as f64 / samples + cfg.beta) / (n_k + v as f64 * cfg.beta))
                .collect()
        })
        .collect();
    let theta: Vec<Vec<f64>> = (0..state.docs.len())
        .map(|d| {
            let n_d = state.docs[d].len() as f64;
            (0..k)
                .map(|kk| {
                    (acc_dk[d][kk] as f64 / samples + cfg.alpha) / (n_d + k as f64 * cfg.alpha)
                })
                .collect()
        })
        .collect();

    let mut model = TopicModel {
        k,
        alpha: cfg.alpha,
        beta: cfg.beta,
        variant,
        seed: cfg.seed,
        fold_in_sweeps: cfg.fold_in_sweeps,
        vocab,
        index: HashMap::new(),
        phi,
        theta,
        doc_ids: corpus.documents.iter().map(|d| d.id.clone()).collect(),
    };
    model.rebuild_index();
    Ok(model)
}

/// Fold-in inference for many documents against an immutable model
/// (document-parallel).
pub fn doc_topics_batch(model: &TopicModel, docs: &[TokenizedDocument]) -> Vec<(Vec<f64>, bool)> {
    par::map_slice(docs, |d| model.doc_topics(d))
}
