//! Skip-gram word embeddings with negative sampling, trained over the
//! corpus n-gram stream. Single-worker training is deterministic for a given
//! seed; the optional multi-worker mode trades determinism for speed.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSnapshot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    terms: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub min_count: u64,
}

impl Vocab {
    pub fn from_counts(mut pairs: Vec<(String, u64)>, min_count: u64) -> Result<Vocab> {
        pairs.retain(|(_, c)| *c >= min_count);
        // stable ordering: frequency desc, term asc
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if pairs.is_empty() {
            return Err(Error::Invalid("empty vocabulary".into()));
        }
        let terms: Vec<String> = pairs.iter().map(|(t, _)| t.clone()).collect();
        let counts: Vec<u64> = pairs.iter().map(|(_, c)| *c).collect();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocab { terms, counts, index, min_count })
    }

    pub fn rebuild_index(&mut self) {
        self.index = self.terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

/// Vocabulary over the corpus n-gram stream (unigrams included).
pub fn build_vocab(corpus: &CorpusSnapshot, min_count: u64) -> Result<Vocab> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in &corpus.documents {
        for g in &doc.ngrams {
            *counts.entry(g.as_str()).or_insert(0) += 1;
        }
    }
    Vocab::from_counts(counts.into_iter().map(|(t, c)| (t.to_string(), c)).collect(), min_count)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub subsample_t: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            subsample_t: 1e-5,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub vocab: Vocab,
    pub dim: usize,
    /// Row-major |V| x dim input (center-word) vectors.
    pub input_vectors: Vec<f64>,
    /// Row-major |V| x dim output (context-word) vectors.
    pub output_vectors: Vec<f64>,
    pub train_config: TrainConfig,
}

impl EmbeddingModel {
    pub fn vector(&self, term: &str) -> Option<&[f64]> {
        self.vocab.get(term).map(|i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.input_vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn output_row(&self, i: usize) -> &[f64] {
        &self.output_vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Builds a model directly from term/vector pairs. Counts default to 1.
    pub fn from_vectors(pairs: Vec<(String, Vec<f64>)>) -> Result<EmbeddingModel> {
        if pairs.is_empty() {
            return Err(Error::Invalid("no vectors".into()));
        }
        let dim = pairs[0].1.len();
        if dim < 1 {
            return Err(Error::Invalid("zero-dimensional vectors".into()));
        }
        let vocab =
            Vocab::from_counts(pairs.iter().map(|(t, _)| (t.clone(), 1)).collect(), 1)?;
        let mut input_vectors = vec![0.0; vocab.len() * dim];
        for (term, v) in &pairs {
            if v.len() != dim {
                return Err(Error::DimMismatch { expected: dim, got: v.len() });
            }
            let i = vocab.get(term).expect("term in vocab");
            input_vectors[i * dim..(i + 1) * dim].copy_from_slice(v);
        }
        Ok(EmbeddingModel {
            output_vectors: vec![0.0; vocab.len() * dim],
            vocab,
            dim,
            input_vectors,
            train_config: TrainConfig { dim, ..TrainConfig::default() },
        })
    }

    /// Mean of in-vocabulary token input vectors. The flag is set when every
    /// token was out of vocabulary.
    pub fn doc_embedding(&self, tokens: &[String]) -> (Vec<f64>, bool) {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for t in tokens {
            if let Some(v) = self.vector(t) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
                n += 1;
            }
        }
        if n == 0 {
            return (acc, true);
        }
        for a in &mut acc {
            *a /= n as f64;
        }
        (acc, false)
    }

    /// word2vec text format: "<vocab_size> <dim>" header, one term per line.
    pub fn save_text(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("{} {}\n", self.vocab.len(), self.dim));
        for i in 0..self.vocab.len() {
            out.push_str(self.vocab.term(i));
            for x in self.row(i) {
                out.push(' ');
                out.push_str(&format!("{x}"));
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_text(path: &Path) -> Result<EmbeddingModel> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(path, "empty file"))?;
        let mut parts = header.split_whitespace();
        let n: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, "bad header"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, "bad header"))?;
        let mut pairs = Vec::with_capacity(n);
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let term = it.next().ok_or_else(|| Error::parse(path, "missing term"))?;
            let v: Vec<f64> = it
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, format!("bad float: {e}")))?;
            if v.len() != dim {
                return Err(Error::parse(path, format!("expected {dim} floats for {term}")));
            }
            pairs.push((term.to_string(), v));
        }
        if pairs.len() != n {
            return Err(Error::parse(path, format!("expected {n} rows, got {}", pairs.len())));
        }
        EmbeddingModel::from_vectors(pairs)
    }
}

/// Cosine similarity with the zero-norm convention cosine(0, x) = 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), got: b.len() });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Negative-sampling objective for one (center, context, negatives) triple:
/// log sigma(u_ctx . v_cen) + sum_i log sigma(-u_neg_i . v_cen).
pub fn ns_pair_objective(v_cen: &[f64], u_ctx: &[f64], u_negs: &[&[f64]]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut obj = sigmoid(dot(u_ctx, v_cen)).ln();
    for u in u_negs {
        obj += sigmoid(-dot(u, v_cen)).ln();
    }
    obj
}

/// Analytic gradients of [`ns_pair_objective`] with respect to the center
/// vector, the context vector, and each negative vector.
pub fn ns_pair_gradient(
    v_cen: &[f64],
    u_ctx: &[f64],
    u_negs: &[&[f64]],
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let dim = v_cen.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let g_pos = 1.0 - sigmoid(dot(u_ctx, v_cen));
    let mut grad_v = vec![0.0; dim];
    let mut grad_ctx = vec![0.0; dim];
    for d in 0..dim {
        grad_v[d] += g_pos * u_ctx[d];
        grad_ctx[d] = g_pos * v_cen[d];
    }
    let mut grad_negs = Vec::with_capacity(u_negs.len());
    for u in u_negs {
        let g = sigmoid(dot(u, v_cen));
        let mut gn = vec![0.0; dim];
        for d in 0..dim {
            grad_v[d] -= g * u[d];
            gn[d] = -g * v_cen[d];
        }
        grad_negs.push(gn);
    }
    (grad_v, grad_ctx, grad_negs)
}

/// Cumulative unigram^0.75 table for negative sampling.
struct NegativeTable {
    cdf: Vec<f64>,
}

impl NegativeTable {
    fn new(vocab: &Vocab) -> NegativeTable {
        let mut cdf = Vec::with_capacity(vocab.len());
        let mut acc = 0.0;
        for i in 0..vocab.len() {
            acc += (vocab.count(i) as f64).powf(0.75);
            cdf.push(acc);
        }
        NegativeTable { cdf }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cdf.last().unwrap();
        let x = rng.gen::<f64>() * total;
        self.cdf.partition_point(|&c| c < x).min(self.cdf.len() - 1)
    }
}

struct TrainState<'a> {
    vocab: &'a Vocab,
    cfg: &'a TrainConfig,
    neg: NegativeTable,
    total_count: u64,
    total_positions: u64,
}

impl TrainState<'_> {
    fn keep_prob(&self, word: usize) -> f64 {
        if !self.cfg.subsample_t.is_finite() {
            return 1.0;
        }
        let f = self.vocab.count(word) as f64 / self.total_count as f64;
        (self.cfg.subsample_t / f).sqrt().min(1.0)
    }

    fn lr_at(&self, processed: u64) -> f64 {
        let frac = processed as f64 / self.total_positions.max(1) as f64;
        (self.cfg.learning_rate * (1.0 - frac)).max(self.cfg.learning_rate * 1e-4)
    }
}

fn train_window(
    stream: &[usize],
    pos: usize,
    input: &mut [f64],
    output: &mut [f64],
    state: &TrainState,
    lr: f64,
    rng: &mut impl Rng,
) {
    let dim = state.cfg.dim;
    let center = stream[pos];
    let b = rng.gen_range(1..=state.cfg.window);
    let lo = pos.saturating_sub(b);
    let hi = (pos + b).min(stream.len() - 1);
    for j in lo..=hi {
        if j == pos {
            continue;
        }
        let ctx = stream[j];
        // positive pair plus k negatives, standard SGNS update
        let mut grad_v = vec![0.0; dim];
        {
            let vc = &input[center * dim..(center + 1) * dim];
            let uo = &output[ctx * dim..(ctx + 1) * dim];
            let s = sigmoid(vc.iter().zip(uo).map(|(x, y)| x * y).sum());
            let g = (1.0 - s) * lr;
            for d in 0..dim {
                grad_v[d] += g * uo[d];
            }
            let vc_copy: Vec<f64> = vc.to_vec();
            let uo_mut = &mut output[ctx * dim..(ctx + 1) * dim];
            for d in 0..dim {
                uo_mut[d] += g * vc_copy[d];
            }
        }
        for _ in 0..state.cfg.negatives {
            let negi = state.neg.sample(rng);
            if negi == ctx {
                continue;
            }
            let vc: Vec<f64> = input[center * dim..(center + 1) * dim].to_vec();
            let un = &output[negi * dim..(negi + 1) * dim];
            let s = sigmoid(vc.iter().zip(un).map(|(x, y)| x * y).sum());
            let g = -s * lr;
            for d in 0..dim {
                grad_v[d] += g * un[d];
            }
            let un_mut = &mut output[negi * dim..(negi + 1) * dim];
            for d in 0..dim {
                un_mut[d] += g * vc[d];
            }
        }
        let vc_mut = &mut input[center * dim..(center + 1) * dim];
        for d in 0..dim {
            vc_mut[d] += grad_v[d];
        }
    }
}

/// Trains skip-gram with negative sampling over the corpus n-gram stream.
///
/// Training is sequential and a deterministic function of the seed.
/// `cfg.workers` is accepted for config compatibility but ignored:
/// unsynchronized multi-worker updates would make results
/// schedule-dependent, which conflicts with reproducible artifacts.
pub fn train_skipgram(
    corpus: &CorpusSnapshot,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<EmbeddingModel> {
    if vocab.is_empty() {
        return Err(Error::Invalid("empty vocabulary".into()));
    }
    if cfg.negatives < 1 || cfg.window < 1 || cfg.dim < 2 {
        return Err(Error::Invalid("need negatives >= 1, window >= 1, dim >= 2".into()));
    }

    let dim = cfg.dim;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut input: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| (rng.gen::<f64>() - 0.5) / dim as f64)
        .collect();
    let mut output = vec![0.0; vocab.len() * dim];

    // index streams, one per document
    let streams: Vec<Vec<usize>> = corpus
        .documents
        .iter()
        .map(|d| d.ngrams.iter().filter_map(|g| vocab.get(g)).collect())
        .collect();

    let total_count: u64 = (0..vocab.len()).map(|i| vocab.count(i)).sum();
    let total_positions: u64 =
        cfg.epochs as u64 * streams.iter().map(|s| s.len() as u64).sum::<u64>();
    let state = TrainState {
        vocab,
        cfg,
        neg: NegativeTable::new(vocab),
        total_count: total_count.max(1),
        total_positions: total_positions.max(1),
    };

    let mut processed: u64 = 0;
    for epoch in 0..cfg.epochs {
        for stream in &streams {
            // frequent-word subsampling, then SGD over surviving positions
            let kept: Vec<usize> = stream
                .iter()
                .copied()
                .filter(|&w| rng.gen::<f64>() < state.keep_prob(w))
                .collect();
            for pos in 0..kept.len() {
                let lr = state.lr_at(processed);
                train_window(&kept, pos, &mut input, &mut output, &state, lr, &mut rng);
                processed += 1;
            }
            processed += (stream.len() - kept.len()) as u64;
        }
        if input.iter().chain(output.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite embedding value after epoch {epoch} (step {processed})"
            )));
        }
    }

    Ok(EmbeddingModel {
        vocab: vocab.clone(),
        dim,
        input_vectors: input,
        output_vectors: output,
        train_config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{preprocess_corpus, PreprocessConfig, RawDocument, Source};

    fn snap(texts: &[&str]) -> CorpusSnapshot {
        let docs: Vec<RawDocument> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| RawDocument {
                id: format!("d{i}"),
                text: (*t).into(),
                timestamp: String::new(),
                source: Source::Other,
                location_hint: None,
            })
            .collect();
        let cfg = PreprocessConfig { n_max: 1, ..PreprocessConfig::default() };
        preprocess_corpus(&docs, &cfg, "test").unwrap()
    }

    #[test]
    fn vocab_threshold_and_order() {
        let c = snap(&["covid covid covid covid covid zzz", "covid covid"]);
        let v = build_vocab(&c, 2).unwrap();
        assert!(v.get("covid").is_some());
        assert!(v.get("zzz").is_none());
        let v1 = build_vocab(&c, 1).unwrap();
        assert_eq!(v1.len(), 2);
    }

    #[test]
    fn vocab_tie_break_alphabetical() {
        let c = snap(&["beta alpha", "alpha beta"]);
        let v = build_vocab(&c, 1).unwrap();
        assert_eq!(v.term(0), "alpha");
        assert_eq!(v.term(1), "beta");
    }

    #[test]
    fn vocab_empty_is_fatal() {
        let c = snap(&["onlyonce"]);
        assert!(build_vocab(&c, 5).is_err());
    }

    #[test]
    fn zero_epochs_leaves_initialization() {
        let c = snap(&["alpha beta gamma", "beta gamma alpha"]);
        let v = build_vocab(&c, 1).unwrap();
        let cfg = TrainConfig { dim: 4, epochs: 0, seed: 7, ..TrainConfig::default() };
        let m = train_skipgram(&c, &v, &cfg).unwrap();
        // output vectors start at zero; input at the seeded init
        assert!(m.output_vectors.iter().all(|&x| x == 0.0));
        let m2 = train_skipgram(&c, &v, &cfg).unwrap();
        assert_eq!(m.input_vectors, m2.input_vectors);
    }

    #[test]
    fn same_seed_bit_identical() {
        let c = snap(&["alpha beta gamma delta", "beta gamma alpha delta", "gamma alpha beta"]);
        let v = build_vocab(&c, 1).unwrap();
        let cfg = TrainConfig {
            dim: 8,
            epochs: 3,
            seed: 42,
            subsample_t: f64::INFINITY,
            ..TrainConfig::default()
        };
        let a = train_skipgram(&c, &v, &cfg).unwrap();
        let b = train_skipgram(&c, &v, &cfg).unwrap();
        assert_eq!(a.input_vectors, b.input_vectors);
        assert_eq!(a.output_vectors, b.output_vectors);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // 3-word vocab, dim 2
        let v_cen = vec![0.3, -0.2];
        let u_ctx = vec![0.1, 0.4];
        let neg1 = vec![-0.25, 0.15];
        let neg2 = vec![0.05, -0.35];
        let negs: Vec<&[f64]> = vec![&neg1, &neg2];
        let (gv, gc, gn) = ns_pair_gradient(&v_cen, &u_ctx, &negs);
        let h = 1e-7;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * h);
            let rel = (analytic - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-6, "analytic {analytic} vs fd {fd}");
        };
        for d in 0..2 {
            let mut vp = v_cen.clone();
            let mut vm = v_cen.clone();
            vp[d] += h;
            vm[d] -= h;
            check(
                gv[d],
                ns_pair_objective(&vp, &u_ctx, &negs),
                ns_pair_objective(&vm, &u_ctx, &negs),
            );
            let mut cp = u_ctx.clone();
            let mut cm = u_ctx.clone();
            cp[d] += h;
            cm[d] -= h;
            check(
                gc[d],
                ns_pair_objective(&v_cen, &cp, &negs),
                ns_pair_objective(&v_cen, &cm, &negs),
            );
            let mut np = neg1.clone();
            let mut nm = neg1.clone();
            np[d] += h;
            nm[d] -= h;
            check(
                gn[0][d],
                ns_pair_objective(&v_cen, &u_ctx, &[&np, &neg2]),
                ns_pair_objective(&v_cen, &u_ctx, &[&nm, &neg2]),
            );
        }
    }

    #[test]
    fn subsampling_disabled_keeps_everything() {
        let c = snap(&["high high high high rare"]);
        let v = build_vocab(&c, 1).unwrap();
        let cfg = TrainConfig { subsample_t: f64::INFINITY, ..TrainConfig::default() };
        let state = TrainState {
            vocab: &v,
            cfg: &cfg,
            neg: NegativeTable::new(&v),
            total_count: 5,
            total_positions: 5,
        };
        assert_eq!(state.keep_prob(v.get("high").unwrap()), 1.0);
        let tight = TrainConfig { subsample_t: 1e-9, ..cfg };
        let state2 = TrainState {
            vocab: &v,
            cfg: &tight,
            neg: NegativeTable::new(&v),
            total_count: 5,
            total_positions: 5,
        };
        assert!(state2.keep_prob(v.get("high").unwrap()) < 0.8);
    }

    #[test]
    fn doc_embedding_mean_and_oov() {
        let m = EmbeddingModel::from_vectors(vec![
            ("a".into(), vec![1.0, 0.0]),
            ("b".into(), vec![0.0, 1.0]),
        ])
        .unwrap();
        let (v, flag) = m.doc_embedding(&["a".into()]);
        assert_eq!(v, vec![1.0, 0.0]);
        assert!(!flag);
        let (v, _) = m.doc_embedding(&["a".into(), "b".into()]);
        assert_eq!(v, vec![0.5, 0.5]);
        let (v, flag) = m.doc_embedding(&["zzz".into()]);
        assert_eq!(v, vec![0.0, 0.0]);
        assert!(flag);
    }

    #[test]
    fn cosine_basics() {
        let v = vec![0.3, -0.7, 0.2];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cosine_scale_invariant() {
        let a = vec![0.2, 0.5, -0.1];
        let b = vec![-0.4, 0.9, 0.3];
        let a2: Vec<f64> = a.iter().map(|x| x * 7.5).collect();
        assert!((cosine(&a, &b).unwrap() - cosine(&a2, &b).unwrap()).abs() < 1e-12);
        assert!((cosine(&a, &b).unwrap() - cosine(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn text_format_round_trip() {
        let m = EmbeddingModel::from_vectors(vec![
            ("alpha".into(), vec![0.123456789012345, -1.5e-7]),
            ("beta".into(), vec![2.0, 3.25]),
        ])
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save_text(f.path()).unwrap();
        let m2 = EmbeddingModel::load_text(f.path()).unwrap();
        assert_eq!(m2.dim, 2);
        assert_eq!(m2.vector("alpha").unwrap(), m.vector("alpha").unwrap());
        assert_eq!(m2.vector("beta").unwrap(), m.vector("beta").unwrap());
    }
}
