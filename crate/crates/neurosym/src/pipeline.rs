//! Config-driven orchestration: each subcommand reads its upstream
//! artifacts, writes its own, and appends a manifest line with
//! content digests so a run can be audited and reproduced.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::classify::{self, ClassifierConfig, VariantKind};
use crate::corpus::{self, CorpusSnapshot, PreprocessConfig, RawDocument};
use crate::embedding::{self, EmbeddingModel, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{self, SplitMode};
use crate::lexicon::{self, Lexicon, NeologismConfig};
use crate::scoring::{self, ScoringModels};
use crate::sedo::{self, FineTuneMode, SedoAlignment};
use crate::semantic::{self, Gazetteer};
use crate::topic::{self, TopicConfig, TopicModel, Variant};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: PathBuf,
    pub kb_corpus: PathBuf,
    pub external_corpus: Option<PathBuf>,
    pub lexicon: PathBuf,
    pub general_lexicon: PathBuf,
    pub gazetteer: PathBuf,
    pub stopwords: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: PathBuf::new(),
            kb_corpus: PathBuf::new(),
            external_corpus: None,
            lexicon: PathBuf::new(),
            general_lexicon: PathBuf::new(),
            gazetteer: PathBuf::new(),
            stopwords: PathBuf::new(),
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessStage {
    pub n_max: usize,
    pub strip_urls: bool,
}

impl Default for PreprocessStage {
    fn default() -> Self {
        PreprocessStage { n_max: 3, strip_urls: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedStage {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub subsample_t: f64,
    pub min_count: u64,
    pub workers: usize,
}

impl Default for EmbedStage {
    fn default() -> Self {
        let t = TrainConfig::default();
        EmbedStage {
            dim: t.dim,
            window: t.window,
            negatives: t.negatives,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            subsample_t: t.subsample_t,
            min_count: 5,
            workers: t.workers,
        }
    }
}

impl EmbedStage {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            subsample_t: self.subsample_t,
            seed,
            workers: self.workers,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicStage {
    pub k: usize,
    /// None means 50/K.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iters: usize,
    pub burn_in: usize,
    pub fold_in_sweeps: usize,
    pub top_k: usize,
}

impl Default for TopicStage {
    fn default() -> Self {
        TopicStage {
            k: 20,
            alpha: None,
            beta: 0.01,
            iters: 1000,
            burn_in: 200,
            fold_in_sweeps: 50,
            top_k: 10,
        }
    }
}

impl TopicStage {
    fn topic_config(&self, seed: u64) -> TopicConfig {
        TopicConfig {
            k: self.k,
            alpha: self.alpha.unwrap_or(50.0 / self.k as f64),
            beta: self.beta,
            iters: self.iters,
            burn_in: self.burn_in,
            fold_in_sweeps: self.fold_in_sweeps,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NeologismStage {
    pub min_rate: f64,
    pub growth: f64,
    pub tau_sim: f64,
    /// Chronological fraction of the corpus used as the baseline window.
    pub baseline_frac: f64,
}

impl Default for NeologismStage {
    fn default() -> Self {
        let c = NeologismConfig::default();
        NeologismStage { min_rate: c.min_rate, growth: c.growth, tau_sim: 0.6, baseline_frac: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterStage {
    pub percentile: f64,
    pub sample_size: usize,
    pub fallback_tau: f64,
    pub min_docs_for_threshold: usize,
}

impl Default for FilterStage {
    fn default() -> Self {
        FilterStage {
            percentile: 75.0,
            sample_size: 10_000,
            fallback_tau: 0.6,
            min_docs_for_threshold: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringStage {
    pub tau_label: f64,
    pub top_k: usize,
    pub tau_kp: f64,
}

impl Default for ScoringStage {
    fn default() -> Self {
        ScoringStage { tau_label: 0.5, top_k: 10, tau_kp: 0.6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SedoStage {
    pub delta: f64,
    pub epsilon_ridge: Option<f64>,
}

impl Default for SedoStage {
    fn default() -> Self {
        SedoStage { delta: 1.0, epsilon_ridge: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClfStage {
    pub variant: String,
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub feature_subsample: Option<usize>,
}

impl Default for ClfStage {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        ClfStage {
            variant: "brf".to_string(),
            n_trees: c.n_trees,
            max_depth: c.max_depth,
            min_leaf: c.min_leaf,
            feature_subsample: c.feature_subsample,
        }
    }
}

impl ClfStage {
    fn classifier_config(&self, seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            feature_subsample: self.feature_subsample,
            seed,
        }
    }

    fn variant_kind(&self) -> Result<VariantKind> {
        self.variant.parse()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalStage {
    pub split: SplitMode,
    pub train_frac: f64,
    pub variants: Vec<String>,
    /// "replace" or "union".
    pub fine_tune_mode: String,
}

impl Default for EvalStage {
    fn default() -> Self {
        EvalStage {
            split: SplitMode::Chronological,
            train_frac: 0.8,
            variants: vec!["nb".into(), "rf".into(), "brf".into(), "bsrf".into()],
            fine_tune_mode: "replace".to_string(),
        }
    }
}

impl EvalStage {
    fn variant_kinds(&self) -> Result<Vec<VariantKind>> {
        self.variants.iter().map(|v| v.parse()).collect()
    }

    fn mode(&self) -> Result<FineTuneMode> {
        match self.fine_tune_mode.as_str() {
            "replace" => Ok(FineTuneMode::Replace),
            "union" => Ok(FineTuneMode::Union),
            other => Err(Error::Invalid(format!("unknown fine-tune mode: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub seed: u64,
    pub preprocess: PreprocessStage,
    pub embedding: EmbedStage,
    pub topic: TopicStage,
    pub neologism: NeologismStage,
    pub filter: FilterStage,
    pub scoring: ScoringStage,
    pub sedo: SedoStage,
    pub clf: ClfStage,
    pub eval: EvalStage,
}

impl PipelineConfig {
    /// Digest over the stage parameters and seed only: input paths are
    /// digested per-artifact in the manifest, and the output directory must
    /// not affect the results.
    pub fn digest(&self) -> String {
        let mut params = self.clone();
        params.paths = Paths::default();
        let json = serde_json::to_string(&params).expect("serializable");
        corpus::hex_digest(&Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Dotted-path assignments like ("filter.percentile", "75").
    pub set: Vec<(String, String)>,
}

/// Loads the config file and applies overrides: dotted-path `--set` values
/// first, then `--seed` and `--out`, so flags always win over the file.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    for (key, raw) in &overrides.set {
        apply_set(&mut value, key, raw)?;
    }
    let mut cfg: PipelineConfig =
        serde_json::from_value(value).map_err(|e| Error::parse(path, e.to_string()))?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.paths.out_dir = out.clone();
    }
    Ok(cfg)
}

fn apply_set(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parsed: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::Invalid(format!("override {key}: {part} is not an object")))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    stage: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    seed: u64,
}

/// Exclusive hold on the output directory for the lifetime of a run.
struct Lock {
    path: PathBuf,
}

impl Lock {
    fn acquire(out_dir: &Path) -> Result<Lock> {
        let path = out_dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Invalid(
                format!("output directory locked by another run: {}", path.display()),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub struct Runner {
    pub cfg: PipelineConfig,
    out: PathBuf,
}

const STAGE_ORDER: &[&str] = &[
    "ingest",
    "train-embed",
    "train-topics",
    "detect-neologisms",
    "enrich-lexicon",
    "filter",
    "extract-meta",
    "score",
    "sedo-fit",
    "train-clf",
    "evaluate",
    "ablate",
    "sedo-finetune",
    "triangulate",
];

pub fn run(subcommand: &str, cfg: PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.paths.out_dir)
        .map_err(|e| Error::io(&cfg.paths.out_dir, e))?;
    let _lock = Lock::acquire(&cfg.paths.out_dir)?;
    let runner = Runner { out: cfg.paths.out_dir.clone(), cfg };
    match subcommand {
        "pipeline" => {
            // fresh manifest for a full run
            let manifest = runner.out.join("manifest.jsonl");
            if manifest.exists() {
                fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
            }
            for stage in STAGE_ORDER {
                runner.run_stage(stage)?;
            }
            Ok(())
        }
        stage => runner.run_stage(stage),
    }
}

impl Runner {
    fn run_stage(&self, stage: &str) -> Result<()> {
        log::info!("stage {stage} starting");
        match stage {
            "ingest" => self.ingest(),
            "train-embed" => self.train_embed(),
            "train-topics" => self.train_topics(),
            "detect-neologisms" => self.detect_neologisms(),
            "enrich-lexicon" => self.enrich_lexicon(),
            "filter" => self.filter(),
            "extract-meta" => self.extract_meta(),
            "score" => self.score(),
            "sedo-fit" => self.sedo_fit(),
            "train-clf" => self.train_clf(),
            "evaluate" => self.evaluate(),
            "ablate" => self.ablate(),
            "sedo-finetune" => self.sedo_finetune(),
            "triangulate" => self.triangulate(),
            other => Err(Error::Invalid(format!("unknown subcommand: {other}"))),
        }
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, what: &str, producer: &str) -> Result<PathBuf> {
        let path = self.artifact(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact(format!("{what} (run `{producer}` first)")))
        }
    }

    fn manifest_line(
        &self,
        stage: &str,
        inputs: &[(&str, &Path)],
        outputs: &[&Path],
    ) -> Result<()> {
        let digest_of = |p: &Path| -> Result<(String, String)> {
            Ok((
                p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()),
                corpus::file_digest(p)?,
            ))
        };
        let line = ManifestLine {
            stage: stage.to_string(),
            inputs: inputs
                .iter()
                .map(|(label, p)| Ok((label.to_string(), corpus::file_digest(p)?)))
                .collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| digest_of(p)).collect::<Result<_>>()?,
            seed: self.cfg.seed,
        };
        let path = self.artifact("manifest.jsonl");
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(file, "{}", serde_json::to_string(&line).expect("serializable"))
            .map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.artifact(name);
        let mut text = serde_json::to_string(value).expect("serializable");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, path: &Path) -> Result<T> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    fn preprocess_config(&self) -> Result<PreprocessConfig> {
        let cfg = PreprocessConfig {
            n_max: self.cfg.preprocess.n_max,
            strip_urls: self.cfg.preprocess.strip_urls,
            ..PreprocessConfig::default()
        };
        cfg.load_stopwords(&self.cfg.paths.stopwords)
    }

    fn ingest_one(&self, source: &Path, corpus_name: &str, ts_name: &str) -> Result<Vec<PathBuf>> {
        let result = corpus::ingest_jsonl(source)?;
        if result.skipped > 0 {
            log::warn!(
                "{}: skipped {} malformed lines (first: {:?})",
                source.display(),
                result.skipped,
                result.first_failures
            );
        }
        let pcfg = self.preprocess_config()?;
        let snapshot = corpus::preprocess_corpus(&result.documents, &pcfg, &corpus::file_digest(source)?)?;
        let timestamps: BTreeMap<String, String> =
            result.documents.iter().map(|d| (d.id.clone(), d.timestamp.clone())).collect();
        let raw: BTreeMap<String, RawDocument> =
            result.documents.into_iter().map(|d| (d.id.clone(), d)).collect();
        let p1 = self.write_json(corpus_name, &snapshot)?;
        let p2 = self.write_json(ts_name, &timestamps)?;
        let p3 = self.write_json(&format!("raw_{corpus_name}"), &raw)?;
        Ok(vec![p1, p2, p3])
    }

    fn ingest(&self) -> Result<()> {
        let mut outputs = self.ingest_one(&self.cfg.paths.corpus, "corpus.json", "timestamps.json")?;
        outputs.extend(self.ingest_one(
            &self.cfg.paths.kb_corpus,
            "kb_corpus.json",
            "kb_timestamps.json",
        )?);
        let out_refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
        self.manifest_line(
            "ingest",
            &[
                ("corpus", self.cfg.paths.corpus.as_path()),
                ("kb_corpus", self.cfg.paths.kb_corpus.as_path()),
                ("stopwords", self.cfg.paths.stopwords.as_path()),
            ],
            &out_refs,
        )
    }

    fn load_snapshot(&self, name: &str, what: &str, producer: &str) -> Result<CorpusSnapshot> {
        let path = self.require(name, what, producer)?;
        self.read_json(&path)
    }

    fn train_embed(&self) -> Result<()> {
        let mut outputs = Vec::new();
        for (snap_name, out_name) in
            [("corpus.json", "embeddings.txt"), ("kb_corpus.json", "kb_embeddings.txt")]
        {
            let snapshot = self.load_snapshot(snap_name, "corpus snapshot", "ingest")?;
            let vocab = embedding::build_vocab(&snapshot, self.cfg.embedding.min_count)?;
            let tcfg = self.cfg.embedding.train_config(self.cfg.seed);
            let model = embedding::train_skipgram(&snapshot, &vocab, &tcfg)?;
            let path = self.artifact(out_name);
            model.save_text(&path)?;
            outputs.push(path);
        }
        self.manifest_line(
            "train-embed",
            &[
                ("corpus", &self.artifact("corpus.json")),
                ("kb_corpus", &self.artifact("kb_corpus.json")),
            ],
            &[&outputs[0], &outputs[1]],
        )
    }

    fn train_topics(&self) -> Result<()> {
        let snapshot = self.load_snapshot("corpus.json", "corpus snapshot", "ingest")?;
        let tcfg = self.cfg.topic.topic_config(self.cfg.seed);
        let unigram = topic::train_lda(&snapshot, Variant::UnigramLda, &tcfg)?;
        let ngram = topic::train_lda(&snapshot, Variant::NgramNlda, &tcfg)?;
        let p1 = self.artifact("topicmodel_unigram.json");
        let p2 = self.artifact("topicmodel_ngram.json");
        unigram.save_json(&p1, false)?;
        ngram.save_json(&p2, false)?;
        self.manifest_line(
            "train-topics",
            &[("corpus", &self.artifact("corpus.json"))],
            &[&p1, &p2],
        )
    }

    fn load_embeddings(&self, name: &str) -> Result<EmbeddingModel> {
        let path = self.require(name, "embeddings", "train-embed")?;
        EmbeddingModel::load_text(&path)
    }

    fn load_timestamps(&self) -> Result<BTreeMap<String, String>> {
        let path = self.require("timestamps.json", "timestamps", "ingest")?;
        self.read_json(&path)
    }

    /// Chronological baseline/window halves of the snapshot.
    fn split_windows(&self, snapshot: &CorpusSnapshot) -> Result<(CorpusSnapshot, CorpusSnapshot)> {
        let timestamps = self.load_timestamps()?;
        let mut order: Vec<usize> = (0..snapshot.len()).collect();
        let key = |i: usize| {
            timestamps.get(&snapshot.documents[i].id).cloned().unwrap_or_default()
        };
        order.sort_by(|&a, &b| key(a).cmp(&key(b)).then(a.cmp(&b)));
        let n_base = ((snapshot.len() as f64 * self.cfg.neologism.baseline_frac) as usize)
            .clamp(1, snapshot.len().saturating_sub(1).max(1));
        let pick = |idx: &[usize]| CorpusSnapshot {
            documents: idx.iter().map(|&i| snapshot.documents[i].clone()).collect(),
            created_from: snapshot.created_from.clone(),
            preprocess_config: snapshot.preprocess_config.clone(),
        };
        Ok((pick(&order[..n_base]), pick(&order[n_base..])))
    }

    fn detect_neologisms(&self) -> Result<()> {
        let snapshot = self.load_snapshot("corpus.json", "corpus snapshot", "ingest")?;
        let em = self.load_embeddings("embeddings.txt")?;
        let lex = lexicon::load_lexicon(&self.cfg.paths.lexicon)?;
        let (baseline, window) = self.split_windows(&snapshot)?;
        let ncfg = NeologismConfig {
            min_rate: self.cfg.neologism.min_rate,
            growth: self.cfg.neologism.growth,
        };
        let candidates = lexicon::detect_neologisms(&window, Some(&baseline), &lex, &em, &ncfg)?;
        log::info!("detected {} neologism candidates", candidates.len());
        let out = self.write_json("neologisms.json", &candidates)?;
        self.manifest_line(
            "detect-neologisms",
            &[
                ("corpus", &self.artifact("corpus.json")),
                ("embeddings", &self.artifact("embeddings.txt")),
                ("lexicon", self.cfg.paths.lexicon.as_path()),
            ],
            &[&out],
        )
    }

    fn enrich_lexicon(&self) -> Result<()> {
        let lex = lexicon::load_lexicon(&self.cfg.paths.lexicon)?;
        let path = self.require("neologisms.json", "neologisms", "detect-neologisms")?;
        let candidates: Vec<lexicon::NeologismCandidate> = self.read_json(&path)?;
        let enriched = lexicon::enrich(&lex, &candidates, self.cfg.neologism.tau_sim);
        let out = self.artifact("lexicon_enriched.json");
        enriched.save_json(&out)?;
        self.manifest_line(
            "enrich-lexicon",
            &[("lexicon", self.cfg.paths.lexicon.as_path()), ("neologisms", &path)],
            &[&out],
        )
    }

    fn load_enriched_lexicon(&self) -> Result<Lexicon> {
        let path = self.require("lexicon_enriched.json", "enriched lexicon", "enrich-lexicon")?;
        lexicon::load_lexicon(&path)
    }

    fn filter(&self) -> Result<()> {
        let snapshot = self.load_snapshot("corpus.json", "corpus snapshot", "ingest")?;
        let em = self.load_embeddings("embeddings.txt")?;
        let lex = self.load_enriched_lexicon()?;
        let fcfg = &self.cfg.filter;
        let tau = if snapshot.len() < fcfg.min_docs_for_threshold {
            log::warn!(
                "corpus below {} docs; using fallback threshold {}",
                fcfg.min_docs_for_threshold,
                fcfg.fallback_tau
            );
            fcfg.fallback_tau
        } else {
            let sample = &snapshot.documents[..snapshot.len().min(fcfg.sample_size)];
            let scores: Vec<f64> = semantic::relevance_batch(
                &CorpusSnapshot {
                    documents: sample.to_vec(),
                    created_from: snapshot.created_from.clone(),
                    preprocess_config: snapshot.preprocess_config.clone(),
                },
                &lex,
                &em,
            )?
            .iter()
            .map(|s| s.score)
            .collect();
            semantic::compute_threshold(&scores, fcfg.percentile)?
        };
        let (filtered, retained) = semantic::filter(&snapshot, &lex, &em, tau)?;
        if filtered.is_empty() {
            return Err(Error::Invalid(format!(
                "relevance filter at tau {tau} retained no documents"
            )));
        }
        let p1 = self.write_json("filtered.json", &filtered)?;
        let p2 = self.write_json(
            "filter_threshold.json",
            &serde_json::json!({ "tau": tau, "retained": retained, "total": snapshot.len() }),
        )?;
        self.manifest_line(
            "filter",
            &[
                ("corpus", &self.artifact("corpus.json")),
                ("embeddings", &self.artifact("embeddings.txt")),
                ("lexicon", &self.artifact("lexicon_enriched.json")),
            ],
            &[&p1, &p2],
        )
    }

    fn load_filtered(&self) -> Result<CorpusSnapshot> {
        self.load_snapshot("filtered.json", "filtered corpus", "filter")
    }

    fn extract_meta(&self) -> Result<()> {
        let filtered = self.load_filtered()?;
        let em = self.load_embeddings("embeddings.txt")?;
        let lex = self.load_enriched_lexicon()?;
        let tm_path =
            self.require("topicmodel_ngram.json", "topicmodel", "train-topics")?;
        let tm = TopicModel::load_json(&tm_path)?;
        let gaz = Gazetteer::load_tsv(&self.cfg.paths.gazetteer)?;
        let raw_path = self.require("raw_corpus.json", "raw documents", "ingest")?;
        let raw: BTreeMap<String, RawDocument> = self.read_json(&raw_path)?;
        let path = self.artifact("meta.jsonl");
        let mut out = String::new();
        for doc in &filtered.documents {
            let Some(raw_doc) = raw.get(&doc.id) else {
                return Err(Error::Invalid(format!("no raw document for id {}", doc.id)));
            };
            let locations = semantic::extract_locations(raw_doc, doc, &gaz);
            let keyphrases =
                semantic::extract_keyphrases(doc, &tm, &lex, &em, self.cfg.scoring.tau_kp)?;
            out.push_str(&serde_json::to_string(&serde_json::json!({
                "id": doc.id,
                "locations": locations,
                "keyphrases": keyphrases,
            })).expect("serializable"));
            out.push('\n');
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        self.manifest_line(
            "extract-meta",
            &[
                ("filtered", &self.artifact("filtered.json")),
                ("gazetteer", self.cfg.paths.gazetteer.as_path()),
                ("topicmodel_ngram", &tm_path),
            ],
            &[&path],
        )
    }

    fn score(&self) -> Result<()> {
        let filtered = self.load_filtered()?;
        let em = self.load_embeddings("embeddings.txt")?;
        let lex = self.load_enriched_lexicon()?;
        let p_uni = self.require("topicmodel_unigram.json", "topicmodel", "train-topics")?;
        let p_ng = self.require("topicmodel_ngram.json", "topicmodel", "train-topics")?;
        let tm_unigram = TopicModel::load_json(&p_uni)?;
        let tm_ngram = TopicModel::load_json(&p_ng)?;
        let models = ScoringModels {
            lex: &lex,
            em: &em,
            tm_unigram: &tm_unigram,
            tm_ngram: &tm_ngram,
            top_k: self.cfg.scoring.top_k,
        };
        let path = self.artifact("labels.jsonl");
        let mut out = String::new();
        for category in lex.category_names() {
            let mut batch = scoring::score_batch(&filtered.documents, category, &models)?;
            scoring::normalize_scores(&mut batch)?;
            let labels = scoring::assign_labels(&batch, self.cfg.scoring.tau_label);
            for (s, l) in batch.iter().zip(&labels) {
                out.push_str(&serde_json::to_string(&serde_json::json!({
                    "id": s.doc_id,
                    "category": s.category,
                    "h_ng": s.h_ng,
                    "h_lda": s.h_lda,
                    "h_nlda": s.h_nlda,
                    "h_total": s.h_total,
                    "nhs": s.nhs,
                    "label": l.label,
                })).expect("serializable"));
                out.push('\n');
            }
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        self.manifest_line(
            "score",
            &[
                ("filtered", &self.artifact("filtered.json")),
                ("embeddings", &self.artifact("embeddings.txt")),
                ("topicmodel_unigram", &p_uni),
                ("topicmodel_ngram", &p_ng),
                ("lexicon", &self.artifact("lexicon_enriched.json")),
            ],
            &[&path],
        )
    }

    /// labels.jsonl -> per-category binary labels aligned with the filtered
    /// snapshot's document order.
    fn load_gold(&self, filtered: &CorpusSnapshot) -> Result<BTreeMap<String, Vec<u8>>> {
        let path = self.require("labels.jsonl", "labels", "score")?;
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut by_cat: BTreeMap<String, BTreeMap<String, u8>> = BTreeMap::new();
        for line in text.lines() {
            let v: Value = serde_json::from_str(line).map_err(|e| Error::parse(&path, e.to_string()))?;
            let id = v["id"].as_str().unwrap_or_default().to_string();
            let cat = v["category"].as_str().unwrap_or_default().to_string();
            let label = v["label"].as_u64().unwrap_or(0) as u8;
            by_cat.entry(cat).or_default().insert(id, label);
        }
        let mut gold = BTreeMap::new();
        for (cat, map) in by_cat {
            let labels: Vec<u8> = filtered
                .documents
                .iter()
                .map(|d| map.get(&d.id).copied().unwrap_or(0))
                .collect();
            gold.insert(cat, labels);
        }
        Ok(gold)
    }

    fn sedo_fit(&self) -> Result<()> {
        let em = self.load_embeddings("embeddings.txt")?;
        let em_kb = self.load_embeddings("kb_embeddings.txt")?;
        let lex = self.load_enriched_lexicon()?;
        let anchors = sedo::build_anchor_pairs(&em, &em_kb, &lex)?;
        let alignment = sedo::solve_sylvester(sedo::assemble(
            anchors,
            self.cfg.sedo.delta,
            self.cfg.sedo.epsilon_ridge,
        )?)?;
        log::info!("alignment residual {:.3e}", alignment.residual);
        let path = self.artifact("sedo.json");
        sedo::save_alignment(&alignment, &path)?;
        self.manifest_line(
            "sedo-fit",
            &[
                ("embeddings", &self.artifact("embeddings.txt")),
                ("kb_embeddings", &self.artifact("kb_embeddings.txt")),
                ("lexicon", &self.artifact("lexicon_enriched.json")),
            ],
            &[&path],
        )
    }

    fn load_alignment(&self) -> Result<SedoAlignment> {
        let path = self.require("sedo.json", "sedo alignment", "sedo-fit")?;
        sedo::load_alignment(&path)
    }

    fn train_clf(&self) -> Result<()> {
        let filtered = self.load_filtered()?;
        let em = self.load_embeddings("embeddings.txt")?;
        let alignment = self.load_alignment()?;
        let gold = self.load_gold(&filtered)?;
        let variant = self.cfg.clf.variant_kind()?;
        let ccfg = self.cfg.clf.classifier_config(self.cfg.seed);
        let features = classify::featurize_batch(&filtered.documents, &em, Some(&alignment))?;
        let mut outputs = Vec::new();
        for (category, labels) in &gold {
            let clf = classify::train(variant, &features, labels, category, &ccfg)?;
            let path = self.artifact(&format!("classifier_{category}.json"));
            clf.save_json(&path)?;
            outputs.push(path);
        }
        let out_refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
        self.manifest_line(
            "train-clf",
            &[
                ("filtered", &self.artifact("filtered.json")),
                ("labels", &self.artifact("labels.jsonl")),
                ("sedo", &self.artifact("sedo.json")),
            ],
            &out_refs,
        )
    }

    fn filtered_timestamps(&self, filtered: &CorpusSnapshot) -> Result<Vec<String>> {
        let timestamps = self.load_timestamps()?;
        Ok(filtered
            .documents
            .iter()
            .map(|d| timestamps.get(&d.id).cloned().unwrap_or_default())
            .collect())
    }

    fn evaluate(&self) -> Result<()> {
        let filtered = self.load_filtered()?;
        let em = self.load_embeddings("embeddings.txt")?;
        let alignment = self.load_alignment()?;
        let gold = self.load_gold(&filtered)?;
        let ts = self.filtered_timestamps(&filtered)?;
        let variants = self.cfg.eval.variant_kinds()?;
        let ccfg = self.cfg.clf.classifier_config(self.cfg.seed);
        let mut report = eval::run_sedo_comparison(
            &filtered,
            &gold,
            &ts,
            &em,
            &alignment,
            &variants,
            &ccfg,
            self.cfg.eval.split,
            self.cfg.eval.train_frac,
            self.cfg.seed,
        )?;
        report.config_digest = self.cfg.digest();
        let p1 = self.artifact("report.json");
        let p2 = self.artifact("report.csv");
        report.save_json(&p1)?;
        report.save_csv(&p2)?;
        self.manifest_line(
            "evaluate",
            &[
                ("filtered", &self.artifact("filtered.json")),
                ("labels", &self.artifact("labels.jsonl")),
                ("sedo", &self.artifact("sedo.json")),
            ],
            &[&p1, &p2],
        )
    }

    fn ablate(&self) -> Result<()> {
        let filtered = self.load_filtered()?;
        let em = self.load_embeddings("embeddings.txt")?;
        let alignment = self.load_alignment()?;
        let gold = self.load_gold(&filtered)?;
        let ts = self.filtered_timestamps(&filtered)?;
        let general = lexicon::load_lexicon(&self.cfg.paths.general_lexicon)?;
        let domain = self.load_enriched_lexicon()?;
        let ccfg = self.cfg.clf.classifier_config(self.cfg.seed);
        let mut outcome = eval::run_ablation(
            &filtered,
            &gold,
            &ts,
            &general,
            &domain,
            &em,
            &alignment,
            self.cfg.clf.variant_kind()?,
            &ccfg,
            self.cfg.eval.split,
            self.cfg.eval.train_frac,
            self.cfg.seed,
        )?;
        outcome.report.config_digest = self.cfg.digest();
        let p1 = self.artifact("ablation_report.json");
        let p2 = self.artifact("ablation_report.csv");
        outcome.report.save_json(&p1)?;
        outcome.report.save_csv(&p2)?;
        let p3 = self.write_json("ablation_errors.json", &outcome.errors)?;
        self.manifest_line(
            "ablate",
            &[
                ("filtered", &self.artifact("filtered.json")),
                ("labels", &self.artifact("labels.jsonl")),
                ("sedo", &self.artifact("sedo.json")),
                ("general_lexicon", self.cfg.paths.general_lexicon.as_path()),
            ],
            &[&p1, &p2, &p3],
        )
    }

    fn external_corpus_path(&self) -> Result<&Path> {
        self.cfg
            .paths
            .external_corpus
            .as_deref()
            .ok_or_else(|| Error::Invalid("paths.external_corpus not configured".into()))
    }

    /// Ingests + embeds the external corpus if not already done.
    fn ensure_external(&self) -> Result<()> {
        let source = self.external_corpus_path()?.to_path_buf();
        if !self.artifact("external_corpus.json").exists() {
            let outputs = self.ingest_one(&source, "external_corpus.json", "external_timestamps.json")?;
            let out_refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
            self.manifest_line("triangulate:ingest", &[("external_corpus", source.as_path())], &out_refs)?;
        }
        if !self.artifact("external_embeddings.txt").exists() {
            let snapshot =
                self.load_snapshot("external_corpus.json", "external corpus", "triangulate")?;
            let vocab = embedding::build_vocab(&snapshot, self.cfg.embedding.min_count)?;
            let tcfg = self.cfg.embedding.train_config(self.cfg.seed);
            let model = embedding::train_skipgram(&snapshot, &vocab, &tcfg)?;
            let path = self.artifact("external_embeddings.txt");
            model.save_text(&path)?;
            self.manifest_line(
                "triangulate:train-embed",
                &[("external_corpus", &self.artifact("external_corpus.json"))],
                &[&path],
            )?;
        }
        Ok(())
    }

    fn sedo_finetune(&self) -> Result<()> {
        let alignment = self.load_alignment()?;
        self.ensure_external()?;
        let em_ext = self.load_embeddings("external_embeddings.txt")?;
        let em_kb = self.load_embeddings("kb_embeddings.txt")?;
        let lex = self.load_enriched_lexicon()?;
        let anchors = sedo::build_anchor_pairs(&em_ext, &em_kb, &lex)?;
        let finetuned = sedo::fine_tune(&alignment, &anchors, self.cfg.eval.mode()?)?;
        let path = self.artifact("sedo_finetuned.json");
        sedo::save_alignment(&finetuned, &path)?;
        self.manifest_line(
            "sedo-finetune",
            &[
                ("sedo", &self.artifact("sedo.json")),
                ("external_embeddings", &self.artifact("external_embeddings.txt")),
                ("kb_embeddings", &self.artifact("kb_embeddings.txt")),
            ],
            &[&path],
        )
    }

    /// Weak labels for the external corpus, scored with the models trained
    /// on the primary corpus.
    fn external_gold(
        &self,
        snapshot: &CorpusSnapshot,
        em: &EmbeddingModel,
        lex: &Lexicon,
    ) -> Result<BTreeMap<String, Vec<u8>>> {
        let p_uni = self.require("topicmodel_unigram.json", "topicmodel", "train-topics")?;
        let p_ng = self.require("topicmodel_ngram.json", "topicmodel", "train-topics")?;
        let tm_unigram = TopicModel::load_json(&p_uni)?;
        let tm_ngram = TopicModel::load_json(&p_ng)?;
        let models = ScoringModels {
            lex,
            em,
            tm_unigram: &tm_unigram,
            tm_ngram: &tm_ngram,
            top_k: self.cfg.scoring.top_k,
        };
        let mut gold = BTreeMap::new();
        for category in lex.category_names() {
            let mut batch = scoring::score_batch(&snapshot.documents, category, &models)?;
            scoring::normalize_scores(&mut batch)?;
            let labels = scoring::assign_labels(&batch, self.cfg.scoring.tau_label);
            gold.insert(category.to_string(), labels.iter().map(|l| l.label).collect());
        }
        Ok(gold)
    }

    fn triangulate(&self) -> Result<()> {
        let alignment = self.load_alignment()?;
        self.ensure_external()?;
        let snapshot =
            self.load_snapshot("external_corpus.json", "external corpus", "triangulate")?;
        let em_ext = self.load_embeddings("external_embeddings.txt")?;
        let em_kb = self.load_embeddings("kb_embeddings.txt")?;
        let lex = self.load_enriched_lexicon()?;
        let gold = self.external_gold(&snapshot, &em_ext, &lex)?;
        let ts_path = self.artifact("external_timestamps.json");
        let timestamps: BTreeMap<String, String> = self.read_json(&ts_path)?;
        let ts: Vec<String> = snapshot
            .documents
            .iter()
            .map(|d| timestamps.get(&d.id).cloned().unwrap_or_default())
            .collect();
        let ccfg = self.cfg.clf.classifier_config(self.cfg.seed);
        let (mut report, finetuned) = eval::run_triangulation(
            &alignment,
            &snapshot,
            &gold,
            &ts,
            &em_ext,
            &em_kb,
            &lex,
            self.cfg.eval.mode()?,
            &self.cfg.eval.variant_kinds()?,
            &ccfg,
            self.cfg.eval.split,
            self.cfg.eval.train_frac,
            self.cfg.seed,
        )?;
        report.config_digest = self.cfg.digest();
        let p1 = self.artifact("triangulation_report.json");
        let p2 = self.artifact("triangulation_report.csv");
        report.save_json(&p1)?;
        report.save_csv(&p2)?;
        let p3 = self.artifact("sedo_finetuned.json");
        sedo::save_alignment(&finetuned, &p3)?;
        self.manifest_line(
            "triangulate",
            &[
                ("sedo", &self.artifact("sedo.json")),
                ("external_corpus", &self.artifact("external_corpus.json")),
                ("kb_embeddings", &self.artifact("kb_embeddings.txt")),
            ],
            &[&p1, &p2, &p3],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_beat_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, r#"{"seed": 1, "filter": {"percentile": 50.0}}"#).unwrap();

        let cfg = load_config(&path, &Overrides::default()).unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.filter.percentile, 50.0);

        let overrides = Overrides {
            seed: Some(9),
            out: Some(PathBuf::from("/tmp/elsewhere")),
            set: vec![
                ("filter.percentile".to_string(), "75".to_string()),
                ("clf.variant".to_string(), "rf".to_string()),
            ],
        };
        let cfg = load_config(&path, &overrides).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.paths.out_dir, PathBuf::from("/tmp/elsewhere"));
        assert_eq!(cfg.filter.percentile, 75.0);
        assert_eq!(cfg.clf.variant, "rf");
    }

    #[test]
    fn config_validation_before_work() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, r#"{"seed": "not a number"}"#).unwrap();
        assert!(load_config(&path, &Overrides::default()).is_err());
    }

    #[test]
    fn lock_excludes_second_run() {
        let dir = tempfile::tempdir().unwrap();
        let lock = Lock::acquire(dir.path()).unwrap();
        let second = Lock::acquire(dir.path());
        assert!(second.is_err());
        drop(lock);
        assert!(Lock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn missing_artifact_names_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            paths: Paths { out_dir: dir.path().to_path_buf(), ..Paths::default() },
            ..PipelineConfig::default()
        };
        let runner = Runner { out: cfg.paths.out_dir.clone(), cfg };
        let err = runner.run_stage("score").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("missing artifact"), "{msg}");
    }
}
