//! Evaluation harness: per-category precision/recall/F1, with/without
//! alignment comparisons, the cumulative feature-ablation ladder, and
//! cross-platform triangulation of a pretrained alignment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{self, ClassifierConfig, FeatureVector, VariantKind};
use crate::corpus::CorpusSnapshot;
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::sedo::{self, FineTuneMode, SedoAlignment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when a zero denominator forced precision, recall, or F1 to 0.
    pub degenerate: bool,
}

impl Metrics {
    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.fn_ + self.tn;
        if n == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / n as f64
    }
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Invalid("label vectors must be nonempty and equal-length".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => tn += 1,
        }
    }
    let mut degenerate = false;
    let mut ratio = |num: usize, den: usize| -> f64 {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        degenerate = degenerate || tp + fp + fn_ > 0;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics { tp, fp, fn_, tn, precision, recall, f1, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Chronological,
    Random,
}

/// Train/test split over document indices. Chronological (the default
/// elsewhere) sorts by timestamp and puts the earliest fraction in train;
/// random shuffles with the given seed. Both guarantee nonempty halves.
pub fn split_indices(
    timestamps: &[String],
    mode: SplitMode,
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = timestamps.len();
    if n < 2 {
        return Err(Error::Invalid(format!("cannot split {n} documents")));
    }
    if !(0.0..1.0).contains(&train_frac) || train_frac <= 0.0 {
        return Err(Error::Invalid(format!("train fraction {train_frac} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match mode {
        SplitMode::Chronological => {
            order.sort_by(|&a, &b| timestamps[a].cmp(&timestamps[b]).then(a.cmp(&b)));
        }
        SplitMode::Random => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
    }
    let n_train = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);
    let test = order.split_off(n_train);
    Ok((order, test))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalEntry {
    pub task: String,
    pub category: String,
    pub variant: String,
    pub arm: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub split: SplitMode,
    pub train_frac: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Digest of the evaluation configuration that produced this report.
    #[serde(default)]
    pub config_digest: String,
    pub entries: Vec<EvalEntry>,
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        // precision/recall/F1 reported as percentages, two decimals
        let mut out =
            String::from("task,category,variant,arm,tp,fp,fn,tn,precision,recall,f1\n");
        for e in &self.entries {
            let m = &e.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.2},{:.2},{:.2}\n",
                e.task,
                e.category,
                e.variant,
                e.arm,
                m.tp,
                m.fp,
                m.fn_,
                m.tn,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn f1(&self, category: &str, variant: &str, arm: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.category == category && e.variant == variant && e.arm == arm)
            .map(|e| e.metrics.f1)
    }

    /// Mean F1 over categories for one variant/arm.
    pub fn mean_f1(&self, variant: &str, arm: &str) -> Option<f64> {
        let scores: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.variant == variant && e.arm == arm)
            .map(|e| e.metrics.f1)
            .collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }
}

fn variant_name(v: VariantKind) -> &'static str {
    match v {
        VariantKind::Nb => "nb",
        VariantKind::Rf => "rf",
        VariantKind::Brf => "brf",
        VariantKind::Bsrf => "bsrf",
    }
}

fn gather(items: &[FeatureVector], idx: &[usize]) -> Vec<FeatureVector> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

fn gather_labels(labels: &[u8], idx: &[usize]) -> Vec<u8> {
    idx.iter().map(|&i| labels[i]).collect()
}

fn eval_arm(
    task: &str,
    arm: &str,
    features: &[FeatureVector],
    gold: &BTreeMap<String, Vec<u8>>,
    train_idx: &[usize],
    test_idx: &[usize],
    variants: &[VariantKind],
    cfg: &ClassifierConfig,
    entries: &mut Vec<EvalEntry>,
) -> Result<()> {
    let x_train = gather(features, train_idx);
    let x_test = gather(features, test_idx);
    for (category, labels) in gold {
        let y_train = gather_labels(labels, train_idx);
        let y_test = gather_labels(labels, test_idx);
        for &variant in variants {
            let clf = classify::train(variant, &x_train, &y_train, category, cfg)?;
            let pred: Vec<u8> =
                classify::predict(&clf, &x_test)?.into_iter().map(|(l, _)| l).collect();
            entries.push(EvalEntry {
                task: task.to_string(),
                category: category.clone(),
                variant: variant_name(variant).to_string(),
                arm: arm.to_string(),
                metrics: confusion(&y_test, &pred)?,
            });
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn run_sedo_comparison(
    corpus: &CorpusSnapshot,
    gold: &BTreeMap<String, Vec<u8>>,
    timestamps: &[String],
    em: &EmbeddingModel,
    alignment: &SedoAlignment,
    variants: &[VariantKind],
    cfg: &ClassifierConfig,
    mode: SplitMode,
    train_frac: f64,
    seed: u64,
) -> Result<EvalReport> {
    check_gold(corpus, gold)?;
    let (train_idx, test_idx) = split_indices(timestamps, mode, train_frac, seed)?;
    let raw = classify::featurize_batch(&corpus.documents, em, None)?;
    let modulated = classify::featurize_batch(&corpus.documents, em, Some(alignment))?;
    let mut entries = Vec::new();
    eval_arm("sedo_comparison", "with_sedo", &modulated, gold, &train_idx, &test_idx, variants, cfg, &mut entries)?;
    eval_arm("sedo_comparison", "without_sedo", &raw, gold, &train_idx, &test_idx, variants, cfg, &mut entries)?;
    Ok(EvalReport {
        seed,
        split: mode,
        train_frac,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        config_digest: String::new(),
        entries,
    })
}

fn check_gold(corpus: &CorpusSnapshot, gold: &BTreeMap<String, Vec<u8>>) -> Result<()> {
    if gold.is_empty() {
        return Err(Error::Invalid("no gold label categories".into()));
    }
    for (cat, labels) in gold {
        if labels.len() != corpus.len() {
            return Err(Error::Invalid(format!(
                "category {cat}: {} labels for {} documents",
                labels.len(),
                corpus.len()
            )));
        }
    }
    Ok(())
}

/// One rung of the cumulative feature ladder. Later rungs keep every block
/// of the earlier ones, so the feature set only ever grows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationLevel {
    pub name: String,
    pub general_counts: bool,
    pub domain_counts: bool,
    pub raw_embedding: bool,
    pub modulated_embedding: bool,
}

pub fn ablation_ladder() -> Vec<AblationLevel> {
    let mk = |name: &str, g, d, r, m| AblationLevel {
        name: name.to_string(),
        general_counts: g,
        domain_counts: d,
        raw_embedding: r,
        modulated_embedding: m,
    };
    vec![
        mk("A0", false, false, false, false),
        mk("A1", true, false, false, false),
        mk("A2", true, true, false, false),
        mk("A3", true, true, true, false),
        mk("A4", true, true, true, true),
    ]
}

fn lexicon_counts(tokens: &[String], lex: &Lexicon) -> Vec<f64> {
    lex.categories
        .values()
        .map(|entries| {
            tokens
                .iter()
                .map(|t| entries.iter().find(|e| &e.term == t).map_or(0.0, |e| e.weight))
                .sum()
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn ablation_features(
    corpus: &CorpusSnapshot,
    general: &Lexicon,
    domain: &Lexicon,
    em: &EmbeddingModel,
    alignment: &SedoAlignment,
    level: &AblationLevel,
) -> Result<Vec<FeatureVector>> {
    let raw = if level.raw_embedding {
        Some(classify::featurize_batch(&corpus.documents, em, None)?)
    } else {
        None
    };
    let modulated = if level.modulated_embedding {
        Some(classify::featurize_batch(&corpus.documents, em, Some(alignment))?)
    } else {
        None
    };
    Ok(corpus
        .documents
        .iter()
        .enumerate()
        .map(|(i, doc)| {
            let mut x = Vec::new();
            if level.general_counts {
                x.extend(lexicon_counts(&doc.tokens, general));
            }
            if level.domain_counts {
                x.extend(lexicon_counts(&doc.tokens, domain));
            }
            if let Some(r) = &raw {
                x.extend_from_slice(&r[i].x);
            }
            if let Some(m) = &modulated {
                x.extend_from_slice(&m[i].x);
            }
            if x.is_empty() {
                // baseline rung: a constant feature, so the model can only
                // learn the class prior
                x.push(0.0);
            }
            FeatureVector { doc_id: doc.id.clone(), x, oov_fraction: 0.0 }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub report: EvalReport,
    /// (level name, misclassification error averaged over categories).
    pub errors: Vec<(String, f64)>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    corpus: &CorpusSnapshot,
    gold: &BTreeMap<String, Vec<u8>>,
    timestamps: &[String],
    general: &Lexicon,
    domain: &Lexicon,
    em: &EmbeddingModel,
    alignment: &SedoAlignment,
    variant: VariantKind,
    cfg: &ClassifierConfig,
    mode: SplitMode,
    train_frac: f64,
    seed: u64,
) -> Result<AblationOutcome> {
    check_gold(corpus, gold)?;
    let (train_idx, test_idx) = split_indices(timestamps, mode, train_frac, seed)?;
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for level in ablation_ladder() {
        let features = ablation_features(corpus, general, domain, em, alignment, &level)?;
        let before = entries.len();
        eval_arm("ablation", &level.name, &features, gold, &train_idx, &test_idx, &[variant], cfg, &mut entries)?;
        let new = &entries[before..];
        let err =
            new.iter().map(|e| 1.0 - e.metrics.accuracy()).sum::<f64>() / new.len() as f64;
        log::info!("ablation {}: mean error {:.4}", level.name, err);
        errors.push((level.name, err));
    }
    Ok(AblationOutcome {
        report: EvalReport {
            seed,
            split: mode,
            train_frac,
            n_train: train_idx.len(),
            n_test: test_idx.len(),
            config_digest: String::new(),
            entries,
        },
        errors,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn run_triangulation(
    pretrained: &SedoAlignment,
    corpus: &CorpusSnapshot,
    gold: &BTreeMap<String, Vec<u8>>,
    timestamps: &[String],
    em_tweet: &EmbeddingModel,
    em_kb: &EmbeddingModel,
    lex: &Lexicon,
    fine_tune_mode: FineTuneMode,
    variants: &[VariantKind],
    cfg: &ClassifierConfig,
    mode: SplitMode,
    train_frac: f64,
    seed: u64,
) -> Result<(EvalReport, SedoAlignment)> {
    check_gold(corpus, gold)?;
    let anchors = sedo::build_anchor_pairs(em_tweet, em_kb, lex)?;
    let finetuned = sedo::fine_tune(pretrained, &anchors, fine_tune_mode)?;
    let (train_idx, test_idx) = split_indices(timestamps, mode, train_frac, seed)?;
    let pre = classify::featurize_batch(&corpus.documents, em_tweet, Some(pretrained))?;
    let fine = classify::featurize_batch(&corpus.documents, em_tweet, Some(&finetuned))?;
    let mut entries = Vec::new();
    eval_arm("triangulation", "pretrained", &pre, gold, &train_idx, &test_idx, variants, cfg, &mut entries)?;
    eval_arm("triangulation", "finetuned", &fine, gold, &train_idx, &test_idx, variants, cfg, &mut entries)?;
    let report = EvalReport {
        seed,
        split: mode,
        train_frac,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        config_digest: String::new(),
        entries,
    };
    Ok((report, finetuned))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_hand_counted() {
        let y_true = [1, 1, 1, 0, 0, 0, 1, 0];
        let y_pred = [1, 0, 1, 0, 1, 0, 1, 0];
        let m = confusion(&y_true, &y_pred).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (3, 1, 1, 3));
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        assert!((m.f1 - 0.75).abs() < 1e-12);
        assert!((m.accuracy() - 0.75).abs() < 1e-12);
        assert!(!m.degenerate);
    }

    #[test]
    fn zero_denominators_flagged_not_nan() {
        // no predicted positives and no actual positives
        let m = confusion(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!(m.degenerate);
        assert!(m.f1.is_finite());
        // positives exist but none predicted
        let m = confusion(&[1, 0], &[0, 0]).unwrap();
        assert_eq!(m.recall, 0.0);
        assert!(m.degenerate);
    }

    #[test]
    fn perfect_prediction_is_one() {
        let m = confusion(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.accuracy(), 1.0);
    }

    #[test]
    fn chronological_split_orders_by_timestamp() {
        let ts: Vec<String> = ["2020-03", "2020-01", "2020-04", "2020-02", "2020-05"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (train, test) = split_indices(&ts, SplitMode::Chronological, 0.6, 0).unwrap();
        assert_eq!(train, vec![1, 3, 0]);
        assert_eq!(test, vec![2, 4]);
        let latest_train = train.iter().map(|&i| &ts[i]).max().unwrap();
        let earliest_test = test.iter().map(|&i| &ts[i]).min().unwrap();
        assert!(latest_train <= earliest_test);
    }

    #[test]
    fn random_split_partitions_and_reproduces() {
        let ts: Vec<String> = (0..20).map(|i| format!("t{i:02}")).collect();
        let (tr1, te1) = split_indices(&ts, SplitMode::Random, 0.8, 7).unwrap();
        let (tr2, te2) = split_indices(&ts, SplitMode::Random, 0.8, 7).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        assert_eq!(tr1.len(), 16);
        let mut all: Vec<usize> = tr1.iter().chain(&te1).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        let (tr3, _) = split_indices(&ts, SplitMode::Random, 0.8, 8).unwrap();
        assert_ne!(tr1, tr3);
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        let ts = vec!["a".to_string()];
        assert!(split_indices(&ts, SplitMode::Chronological, 0.8, 0).is_err());
        let ts = vec!["a".to_string(), "b".to_string()];
        assert!(split_indices(&ts, SplitMode::Chronological, 1.5, 0).is_err());
        // extreme fraction still leaves both halves nonempty
        let (tr, te) = split_indices(&ts, SplitMode::Chronological, 0.99, 0).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(te.len(), 1);
    }

    #[test]
    fn ladder_is_cumulative() {
        let ladder = ablation_ladder();
        assert_eq!(ladder.len(), 5);
        let as_bits = |l: &AblationLevel| {
            [l.general_counts, l.domain_counts, l.raw_embedding, l.modulated_embedding]
        };
        for pair in ladder.windows(2) {
            let (a, b) = (as_bits(&pair[0]), as_bits(&pair[1]));
            for (x, y) in a.iter().zip(&b) {
                assert!(!x | y, "{}: feature block dropped", pair[1].name);
            }
            assert_ne!(a, b);
        }
    }

    #[test]
    fn lexicon_counts_weighted() {
        use crate::lexicon::{LexiconEntry, Provenance};
        let mut categories = BTreeMap::new();
        categories.insert(
            "anxiety".to_string(),
            vec![
                LexiconEntry { term: "worry".into(), weight: 1.0, provenance: Provenance::Seed },
                LexiconEntry { term: "panic".into(), weight: 0.5, provenance: Provenance::Seed },
            ],
        );
        let lex = Lexicon { version: 1, categories };
        let tokens: Vec<String> =
            ["worry", "panic", "panic", "calm"].iter().map(|s| s.to_string()).collect();
        assert_eq!(lexicon_counts(&tokens, &lex), vec![2.0]);
    }

    #[test]
    fn report_roundtrip_and_csv_shape() {
        let report = EvalReport {
            seed: 1,
            split: SplitMode::Chronological,
            train_frac: 0.8,
            n_train: 8,
            n_test: 2,
            config_digest: String::new(),
            entries: vec![EvalEntry {
                task: "sedo_comparison".into(),
                category: "anxiety".into(),
                variant: "brf".into(),
                arm: "with_sedo".into(),
                metrics: confusion(&[1, 0], &[1, 0]).unwrap(),
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let jp = dir.path().join("report.json");
        let cp = dir.path().join("report.csv");
        report.save_json(&jp).unwrap();
        report.save_csv(&cp).unwrap();
        let loaded: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(&jp).unwrap()).unwrap();
        assert_eq!(loaded.entries.len(), 1);
        assert_eq!(loaded.f1("anxiety", "brf", "with_sedo"), Some(1.0));
        let csv = std::fs::read_to_string(&cp).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "task,category,variant,arm,tp,fp,fn,tn,precision,recall,f1"
        );
        assert_eq!(lines.next().unwrap().split(',').count(), 11);
    }
}
