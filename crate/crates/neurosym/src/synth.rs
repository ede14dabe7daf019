//! Deterministic synthetic corpora and embedding spaces used by the bundled
//! benchmarks, the evaluation harness, and tests.
//!
//! The planted classification benchmark builds two embedding spaces over the
//! same latent vectors: the KB space keeps the axis-aligned category
//! structure, while the source ("tweet") space applies a random rotation
//! that spreads the discriminative directions across all coordinates.
//! Alignment learned from lexicon anchors recovers the axis-aligned
//! structure, which is what the with/without comparison measures.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::{CorpusSnapshot, PreprocessConfig, RawDocument, Source, TokenizedDocument};
use crate::embedding::EmbeddingModel;
use crate::lexicon::{Lexicon, LexiconEntry, Provenance};

fn tokdoc(id: String, tokens: Vec<String>) -> TokenizedDocument {
    TokenizedDocument { id, ngrams: tokens.clone(), tokens, hashtags: vec![] }
}

fn snapshot(documents: Vec<TokenizedDocument>, tag: &str) -> CorpusSnapshot {
    CorpusSnapshot {
        documents,
        created_from: format!("synth:{tag}"),
        preprocess_config: PreprocessConfig { n_max: 1, ..PreprocessConfig::default() },
    }
}

/// Two planted topics: {flu, fever, cough} and {loan, debt, bank}. Each
/// document draws 20 tokens uniformly from a single topic's terms.
pub fn planted_two_topic_corpus(n_docs: usize, seed: u64) -> CorpusSnapshot {
    let topics: [&[&str]; 2] = [&["flu", "fever", "cough"], &["loan", "debt", "bank"]];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let documents = (0..n_docs)
        .map(|i| {
            let terms = topics[i % 2];
            let tokens: Vec<String> =
                (0..20).map(|_| terms[rng.gen_range(0..terms.len())].to_string()).collect();
            tokdoc(format!("doc{i:04}"), tokens)
        })
        .collect();
    snapshot(documents, "two-topic")
}

/// Two disjoint co-occurrence clusters {a1..a5} and {b1..b5}; each document
/// samples 8 tokens from one cluster.
pub fn two_cluster_corpus(n_docs: usize, seed: u64) -> CorpusSnapshot {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let cluster = |prefix: char| -> Vec<String> {
        (1..=5).map(|i| format!("{prefix}{i}")).collect()
    };
    let clusters = [cluster('a'), cluster('b')];
    let documents = (0..n_docs)
        .map(|i| {
            let terms = &clusters[i % 2];
            let tokens: Vec<String> =
                (0..8).map(|_| terms[rng.gen_range(0..terms.len())].clone()).collect();
            tokdoc(format!("doc{i:04}"), tokens)
        })
        .collect();
    snapshot(documents, "two-cluster")
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim).map(|_| sigma * gaussian(rng)).collect()
}

fn random_rotation(rng: &mut impl Rng, dim: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| gaussian(rng));
    g.qr().q()
}

pub const BENCH_CATEGORIES: [&str; 3] = ["addiction", "anxiety", "depression"];
pub const BENCH_DIM: usize = 24;
const TERMS_PER_CATEGORY: usize = 20;
const NOISE_TERMS: usize = 150;
const CAT_TOKENS_PER_DOC: usize = 4;
const NOISE_TOKENS_PER_DOC: usize = 12;
const DOMAIN_LEXICON_COVERAGE: usize = 12;
const GENERAL_LEXICON_COVERAGE: usize = 3;

/// The planted multi-category benchmark: documents with gold category
/// labels, a KB embedding space with axis-aligned category clusters, a
/// rotated tweet embedding space over the same latent vectors, and seed
/// lexicons for anchoring.
pub struct PlantedBenchmark {
    pub raw: Vec<RawDocument>,
    pub corpus: CorpusSnapshot,
    /// category -> per-document binary gold labels, corpus order.
    pub gold: BTreeMap<String, Vec<u8>>,
    pub timestamps: Vec<String>,
    pub em_tweet: EmbeddingModel,
    pub em_kb: EmbeddingModel,
    pub domain_lexicon: Lexicon,
    pub general_lexicon: Lexicon,
}

fn cat_terms(cat: &str) -> Vec<String> {
    (0..TERMS_PER_CATEGORY).map(|i| format!("{cat}{i:02}")).collect()
}

fn noise_terms() -> Vec<String> {
    (0..NOISE_TERMS).map(|i| format!("noise{i:03}")).collect()
}

fn lexicon_of(coverage: usize) -> Lexicon {
    let categories: BTreeMap<String, Vec<LexiconEntry>> = BENCH_CATEGORIES
        .iter()
        .map(|cat| {
            (
                cat.to_string(),
                cat_terms(cat)
                    .into_iter()
                    .take(coverage)
                    .map(|term| LexiconEntry { term, weight: 1.0, provenance: Provenance::Seed })
                    .collect(),
            )
        })
        .collect();
    Lexicon { version: 1, categories }
}

struct LatentSpace {
    terms: Vec<String>,
    latents: Vec<Vec<f64>>,
}

fn latent_space(rng: &mut impl Rng, separation: f64, sigma_term: f64, sigma_noise: f64, term_prefix_suffix: Option<&str>) -> LatentSpace {
    let mut terms = Vec::new();
    let mut latents = Vec::new();
    for (axis, cat) in BENCH_CATEGORIES.iter().enumerate() {
        for (i, term) in cat_terms(cat).into_iter().enumerate() {
            let term = match term_prefix_suffix {
                Some(sfx) => format!("{cat}{sfx}{i:02}"),
                None => term,
            };
            let mut v = gaussian_vec(rng, BENCH_DIM, sigma_term);
            v[axis] += separation;
            terms.push(term);
            latents.push(v);
        }
    }
    for term in noise_terms() {
        terms.push(term);
        latents.push(gaussian_vec(rng, BENCH_DIM, sigma_noise));
    }
    LatentSpace { terms, latents }
}

fn embed_space(
    space: &LatentSpace,
    rotation: Option<&DMatrix<f64>>,
    rng: &mut impl Rng,
    sigma_obs: f64,
) -> EmbeddingModel {
    let pairs: Vec<(String, Vec<f64>)> = space
        .terms
        .iter()
        .zip(&space.latents)
        .map(|(t, l)| {
            let mut v: Vec<f64> =
                l.iter().zip(gaussian_vec(rng, BENCH_DIM, sigma_obs)).map(|(a, b)| a + b).collect();
            if let Some(r) = rotation {
                let x = r * nalgebra::DVector::from_column_slice(&v);
                v = x.as_slice().to_vec();
            }
            (t.clone(), v)
        })
        .collect();
    EmbeddingModel::from_vectors(pairs).expect("nonempty synthetic space")
}

fn make_docs(
    rng: &mut impl Rng,
    docs_per_category: usize,
    term_of_cat: &dyn Fn(&str, usize) -> String,
) -> (Vec<RawDocument>, Vec<TokenizedDocument>, BTreeMap<String, Vec<u8>>, Vec<String>) {
    let noise = noise_terms();
    let mut raw = Vec::new();
    let mut docs = Vec::new();
    let mut timestamps = Vec::new();
    let mut gold: BTreeMap<String, Vec<u8>> =
        BENCH_CATEGORIES.iter().map(|c| (c.to_string(), Vec::new())).collect();
    // round-robin over categories keeps the chronological split balanced
    for i in 0..docs_per_category * BENCH_CATEGORIES.len() {
        let cat = BENCH_CATEGORIES[i % BENCH_CATEGORIES.len()];
        let mut tokens: Vec<String> = (0..CAT_TOKENS_PER_DOC)
            .map(|_| term_of_cat(cat, rng.gen_range(0..TERMS_PER_CATEGORY)))
            .collect();
        tokens.extend((0..NOISE_TOKENS_PER_DOC).map(|_| noise[rng.gen_range(0..noise.len())].clone()));
        tokens.shuffle(rng);
        let id = format!("{cat}-{i:05}");
        let timestamp = format!("2020-06-01T{:02}:{:02}:{:02}Z", i / 3600, (i / 60) % 60, i % 60);
        raw.push(RawDocument {
            id: id.clone(),
            text: tokens.join(" "),
            timestamp: timestamp.clone(),
            source: Source::Twitter,
            location_hint: None,
        });
        docs.push(tokdoc(id, tokens));
        timestamps.push(timestamp);
        for c in BENCH_CATEGORIES {
            gold.get_mut(c).unwrap().push(u8::from(c == cat));
        }
    }
    (raw, docs, gold, timestamps)
}

pub fn planted_benchmark(docs_per_category: usize, seed: u64) -> PlantedBenchmark {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let space = latent_space(&mut rng, 2.0, 0.3, 1.0, None);
    let rotation = random_rotation(&mut rng, BENCH_DIM);
    let em_kb = embed_space(&space, None, &mut rng, 0.1);
    let em_tweet = embed_space(&space, Some(&rotation), &mut rng, 0.1);
    let (raw, docs, gold, timestamps) =
        make_docs(&mut rng, docs_per_category, &|cat, i| format!("{cat}{i:02}"));
    PlantedBenchmark {
        raw,
        corpus: snapshot(docs, "planted-benchmark"),
        gold,
        timestamps,
        em_tweet,
        em_kb,
        domain_lexicon: lexicon_of(DOMAIN_LEXICON_COVERAGE),
        general_lexicon: lexicon_of(GENERAL_LEXICON_COVERAGE),
    }
}

/// A vocabulary-shifted external benchmark: new category terms, a different
/// source-space rotation (a new "platform"), and the same KB construction.
/// A pretrained alignment mismatches the new rotation; fine-tuning on the
/// external anchors recovers it.
pub struct ShiftedBenchmark {
    pub corpus: CorpusSnapshot,
    pub gold: BTreeMap<String, Vec<u8>>,
    pub timestamps: Vec<String>,
    pub em_tweet: EmbeddingModel,
    pub em_kb: EmbeddingModel,
    pub lexicon: Lexicon,
}

pub fn shifted_benchmark(docs_per_category: usize, seed: u64) -> ShiftedBenchmark {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let space = latent_space(&mut rng, 2.0, 0.3, 1.0, Some("x"));
    let rotation = random_rotation(&mut rng, BENCH_DIM);
    let em_kb = embed_space(&space, None, &mut rng, 0.1);
    let em_tweet = embed_space(&space, Some(&rotation), &mut rng, 0.1);
    let (_, docs, gold, timestamps) =
        make_docs(&mut rng, docs_per_category, &|cat, i| format!("{cat}x{i:02}"));
    let categories: BTreeMap<String, Vec<LexiconEntry>> = BENCH_CATEGORIES
        .iter()
        .map(|cat| {
            (
                cat.to_string(),
                (0..DOMAIN_LEXICON_COVERAGE)
                    .map(|i| LexiconEntry {
                        term: format!("{cat}x{i:02}"),
                        weight: 1.0,
                        provenance: Provenance::Seed,
                    })
                    .collect(),
            )
        })
        .collect();
    ShiftedBenchmark {
        corpus: snapshot(docs, "shifted-benchmark"),
        gold,
        timestamps,
        em_tweet,
        em_kb,
        lexicon: Lexicon { version: 1, categories },
    }
}

/// Textual corpus for the end-to-end CLI path: sentences mixing category
/// terms, shared noise words, hashtags, and occasional locations.
pub fn textual_corpus(docs_per_category: usize, seed: u64) -> Vec<RawDocument> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noise = noise_terms();
    let mut out = Vec::new();
    for i in 0..docs_per_category * BENCH_CATEGORIES.len() {
        let cat = BENCH_CATEGORIES[i % BENCH_CATEGORIES.len()];
        let terms = cat_terms(cat);
        let mut words: Vec<String> =
            (0..4).map(|_| terms[rng.gen_range(0..terms.len())].clone()).collect();
        words.extend((0..8).map(|_| noise[rng.gen_range(0..noise.len())].clone()));
        words.shuffle(&mut rng);
        if i % 7 == 0 {
            words.push("#pandemiclife".to_string());
        }
        if i % 11 == 0 {
            words.push("new".to_string());
            words.push("york".to_string());
        }
        out.push(RawDocument {
            id: format!("t{i:05}"),
            text: words.join(" "),
            timestamp: format!("2020-06-01T{:02}:{:02}:{:02}Z", i / 3600, (i / 60) % 60, i % 60),
            source: Source::Twitter,
            location_hint: None,
        });
    }
    out
}

/// KB-style corpus: clean per-category documents used to train the KB-space
/// embedding in the CLI path.
pub fn kb_corpus(docs_per_category: usize, seed: u64) -> Vec<RawDocument> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
    let mut out = Vec::new();
    for i in 0..docs_per_category * BENCH_CATEGORIES.len() {
        let cat = BENCH_CATEGORIES[i % BENCH_CATEGORIES.len()];
        let terms = cat_terms(cat);
        let words: Vec<String> =
            (0..10).map(|_| terms[rng.gen_range(0..terms.len())].clone()).collect();
        out.push(RawDocument {
            id: format!("kb{i:05}"),
            text: words.join(" "),
            timestamp: format!("2019-01-01T{:02}:{:02}:{:02}Z", i / 3600, (i / 60) % 60, i % 60),
            source: Source::Reddit,
            location_hint: None,
        });
    }
    out
}

pub fn bundled_stopwords() -> Vec<&'static str> {
    vec![
        "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have",
        "i", "in", "is", "it", "my", "of", "on", "or", "so", "that", "the", "this", "to", "was",
        "we", "with", "you",
    ]
}

pub fn bundled_gazetteer_tsv() -> String {
    let mut s = String::from("name\tadmin1\tcountry\tlat\tlon\n");
    for (name, admin1, country, lat, lon) in [
        ("new york", "NY", "US", 40.7128, -74.0060),
        ("south carolina", "SC", "US", 33.8361, -81.1637),
        ("carolina", "PR", "US", 18.3808, -65.9574),
        ("london", "ENG", "GB", 51.5074, -0.1278),
        ("paris", "IDF", "FR", 48.8566, 2.3522),
        ("chicago", "IL", "US", 41.8781, -87.6298),
    ] {
        s.push_str(&format!("{name}\t{admin1}\t{country}\t{lat}\t{lon}\n"));
    }
    s
}

/// Writes the bundled synthetic corpora, lexicons, gazetteer, stopwords and
/// a ready-to-run pipeline config into `dir`; returns the config path.
pub fn write_bundled_data(
    dir: &std::path::Path,
    seed: u64,
    docs_per_category: usize,
) -> crate::error::Result<std::path::PathBuf> {
    use crate::error::Error;
    use std::fmt::Write as _;

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, content: &str| -> crate::error::Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))
    };
    let jsonl = |docs: &[RawDocument]| {
        let mut s = String::new();
        for d in docs {
            writeln!(s, "{}", serde_json::to_string(d).expect("serializable")).unwrap();
        }
        s
    };
    write("documents.jsonl", &jsonl(&textual_corpus(docs_per_category, seed)))?;
    write("kb.jsonl", &jsonl(&kb_corpus(docs_per_category, seed)))?;
    write("external.jsonl", &jsonl(&textual_corpus(docs_per_category, seed.wrapping_add(1000))))?;
    let bench = planted_benchmark(1, seed);
    bench.domain_lexicon.save_json(&dir.join("lexicon.json"))?;
    bench.general_lexicon.save_json(&dir.join("general_lexicon.json"))?;
    write("gazetteer.tsv", &bundled_gazetteer_tsv())?;
    write("stopwords.txt", &(bundled_stopwords().join("\n") + "\n"))?;

    let config = serde_json::json!({
        "seed": seed,
        "paths": {
            "corpus": dir.join("documents.jsonl"),
            "kb_corpus": dir.join("kb.jsonl"),
            "external_corpus": dir.join("external.jsonl"),
            "lexicon": dir.join("lexicon.json"),
            "general_lexicon": dir.join("general_lexicon.json"),
            "gazetteer": dir.join("gazetteer.tsv"),
            "stopwords": dir.join("stopwords.txt"),
            "out_dir": dir.join("out"),
        },
        "embedding": { "dim": 16, "epochs": 3, "min_count": 2 },
        "topic": { "k": 6, "iters": 120, "burn_in": 40, "fold_in_sweeps": 20 },
        "filter": { "percentile": 25.0 },
        // index scores on this small corpus are compressed toward the top;
        // a higher label threshold keeps both classes present per category
        "scoring": { "tau_label": 0.72 },
        "clf": { "n_trees": 30 },
    });
    write("config.json", &(serde_json::to_string_pretty(&config).expect("serializable") + "\n"))?;
    Ok(dir.join("config.json"))
}
