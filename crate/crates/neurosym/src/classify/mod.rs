//! The four classifier variants on (optionally SEDO-modulated) embedding
//! features: Gaussian naive Bayes, random forest, balanced random forest
//! (per-tree equal-count class bootstraps), and balanced-subsample random
//! forest (per-bootstrap class weights inside Gini).

pub mod nb;
pub mod tree;

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedDocument;
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::par;
use crate::sedo::SedoAlignment;

pub use nb::GaussianNb;
pub use tree::{Node, Tree, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Nb,
    Rf,
    Brf,
    Bsrf,
}

impl std::str::FromStr for VariantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<VariantKind> {
        match s.to_lowercase().as_str() {
            "nb" => Ok(VariantKind::Nb),
            "rf" => Ok(VariantKind::Rf),
            "brf" => Ok(VariantKind::Brf),
            "bsrf" => Ok(VariantKind::Bsrf),
            other => Err(Error::Invalid(format!("unknown classifier variant: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureVector {
    pub doc_id: String,
    pub x: Vec<f64>,
    pub oov_fraction: f64,
}

/// Document features: mean of per-token (optionally modulated) vectors.
/// Without an alignment this is the raw-embedding arm of the comparison.
pub fn featurize(
    doc: &TokenizedDocument,
    em: &EmbeddingModel,
    alignment: Option<&SedoAlignment>,
) -> Result<FeatureVector> {
    let out_dim = match alignment {
        Some(a) => a.dims().0,
        None => em.dim,
    };
    let mut acc = vec![0.0; out_dim];
    let mut in_vocab = 0usize;
    for tok in &doc.tokens {
        let Some(v) = em.vector(tok) else { continue };
        let mapped;
        let v: &[f64] = match alignment {
            Some(a) => {
                mapped = a.modulate(v)?;
                &mapped
            }
            None => v,
        };
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        in_vocab += 1;
    }
    if in_vocab > 0 {
        for a in &mut acc {
            *a /= in_vocab as f64;
        }
    }
    let total = doc.tokens.len().max(1);
    Ok(FeatureVector {
        doc_id: doc.id.clone(),
        x: acc,
        oov_fraction: (total - in_vocab.min(total)) as f64 / total as f64,
    })
}

pub fn featurize_batch(
    docs: &[TokenizedDocument],
    em: &EmbeddingModel,
    alignment: Option<&SedoAlignment>,
) -> Result<Vec<FeatureVector>> {
    par::map_slice(docs, |d| featurize(d, em, alignment)).into_iter().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; None means sqrt(d).
    pub feature_subsample: Option<usize>,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            feature_subsample: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Nb(GaussianNb),
    Forest(Vec<Tree>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub variant: VariantKind,
    pub category: String,
    pub config: ClassifierConfig,
    pub model: Model,
    pub n_features: usize,
}

fn bootstrap_indices(variant: VariantKind, y: &[u8], rng: &mut impl Rng) -> (Vec<usize>, Vec<f64>) {
    let n = y.len();
    let class_idx: [Vec<usize>; 2] = {
        let mut c = [Vec::new(), Vec::new()];
        for (i, &label) in y.iter().enumerate() {
            c[label as usize].push(i);
        }
        c
    };
    match variant {
        VariantKind::Brf => {
            // equal-count draws from each class
            let n_min = class_idx[0].len().min(class_idx[1].len());
            let mut idx = Vec::with_capacity(2 * n_min);
            for class in &class_idx {
                for _ in 0..n_min {
                    idx.push(class[rng.gen_range(0..class.len())]);
                }
            }
            let weights = vec![1.0; n];
            (idx, weights)
        }
        VariantKind::Bsrf => {
            // standard bootstrap, re-weighted per class inside this bootstrap
            let mut idx: Vec<usize> = Vec::new();
            let mut counts = [0usize; 2];
            for attempt in 0..100 {
                idx = (0..n).map(|_| rng.gen_range(0..n)).collect();
                counts = [0, 0];
                for &i in &idx {
                    counts[y[i] as usize] += 1;
                }
                if counts[0] > 0 && counts[1] > 0 {
                    break;
                }
                log::debug!("single-class bootstrap, retry {attempt}");
            }
            let mut weights = vec![1.0; n];
            if counts[0] > 0 && counts[1] > 0 {
                let class_weight =
                    [n as f64 / (2.0 * counts[0] as f64), n as f64 / (2.0 * counts[1] as f64)];
                for (w, &label) in weights.iter_mut().zip(y) {
                    *w = class_weight[label as usize];
                }
            }
            (idx, weights)
        }
        _ => {
            let idx = (0..n).map(|_| rng.gen_range(0..n)).collect();
            (idx, vec![1.0; n])
        }
    }
}

/// Trains one classifier variant for one per-category binary task.
/// Forest trees train in parallel with per-tree generators derived from the
/// master seed, so results do not depend on scheduling.
pub fn train(
    variant: VariantKind,
    x: &[FeatureVector],
    y: &[u8],
    category: &str,
    cfg: &ClassifierConfig,
) -> Result<TrainedClassifier> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Invalid("features and labels must be nonempty and equal-length".into()));
    }
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::Invalid("degenerate training set: single class".into()));
    }
    let features: Vec<Vec<f64>> = x.iter().map(|f| f.x.clone()).collect();
    let n_features = features[0].len();

    let model = match variant {
        VariantKind::Nb => Model::Nb(nb::fit_nb(&features, y)?),
        _ => {
            let tree_cfg = TreeConfig {
                max_depth: cfg.max_depth,
                min_leaf: cfg.min_leaf,
                feature_subsample: cfg.feature_subsample,
            };
            let trees = par::map_indices(cfg.n_trees, |t| {
                let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ (t as u64).wrapping_mul(0x9e3779b97f4a7c15));
                let (idx, weights) = bootstrap_indices(variant, y, &mut rng);
                tree::fit_tree(&features, y, &weights, &idx, tree_cfg, &mut rng)
            });
            Model::Forest(trees)
        }
    };

    Ok(TrainedClassifier {
        variant,
        category: category.to_string(),
        config: cfg.clone(),
        model,
        n_features,
    })
}

/// Scores in [0,1]; label = score >= 0.5 (inclusive).
pub fn predict(clf: &TrainedClassifier, x: &[FeatureVector]) -> Result<Vec<(u8, f64)>> {
    x.iter()
        .map(|f| {
            if f.x.len() != clf.n_features {
                return Err(Error::DimMismatch { expected: clf.n_features, got: f.x.len() });
            }
            let score = match &clf.model {
                Model::Nb(nb) => nb.posterior(&f.x)?,
                Model::Forest(trees) => {
                    trees.iter().map(|t| t.predict_fraction(&f.x)).sum::<f64>()
                        / trees.len() as f64
                }
            };
            Ok((u8::from(score >= 0.5), score))
        })
        .collect()
}

impl TrainedClassifier {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self).expect("serializable"))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<TrainedClassifier> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

/// Bootstrap audit used by tests: per-tree class counts for a BRF-style
/// bootstrap regenerated from the same seed derivation as training.
pub fn audit_brf_bootstraps(y: &[u8], cfg: &ClassifierConfig) -> Vec<[usize; 2]> {
    (0..cfg.n_trees)
        .map(|t| {
            let mut rng =
                ChaCha20Rng::seed_from_u64(cfg.seed ^ (t as u64).wrapping_mul(0x9e3779b97f4a7c15));
            let (idx, _) = bootstrap_indices(VariantKind::Brf, y, &mut rng);
            let mut counts = [0usize; 2];
            for &i in &idx {
                counts[y[i] as usize] += 1;
            }
            counts
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(id: usize, x: Vec<f64>) -> FeatureVector {
        FeatureVector { doc_id: format!("d{id}"), x, oov_fraction: 0.0 }
    }

    fn blobs(n_per_class: usize, seed: u64) -> (Vec<FeatureVector>, Vec<u8>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..2 * n_per_class {
            let label = u8::from(i >= n_per_class);
            let center = if label == 1 { 5.0 } else { 0.0 };
            x.push(fv(i, vec![center + rng.gen::<f64>(), center - rng.gen::<f64>()]));
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_all_variants() {
        let (x, y) = blobs(30, 1);
        let cfg = ClassifierConfig { n_trees: 20, seed: 5, ..Default::default() };
        for variant in [VariantKind::Nb, VariantKind::Rf, VariantKind::Brf, VariantKind::Bsrf] {
            let clf = train(variant, &x, &y, "cat", &cfg).unwrap();
            let preds = predict(&clf, &x).unwrap();
            let acc = preds.iter().zip(&y).filter(|((l, _), &t)| *l == t).count() as f64
                / y.len() as f64;
            assert_eq!(acc, 1.0, "variant {variant:?}");
        }
    }

    #[test]
    fn single_class_fatal() {
        let (x, _) = blobs(5, 2);
        let y = vec![1u8; x.len()];
        let cfg = ClassifierConfig::default();
        assert!(train(VariantKind::Rf, &x, &y, "cat", &cfg).is_err());
    }

    #[test]
    fn determinism_tree_by_tree() {
        let (x, y) = blobs(25, 3);
        let cfg = ClassifierConfig { n_trees: 10, seed: 9, ..Default::default() };
        let a = train(VariantKind::Brf, &x, &y, "cat", &cfg).unwrap();
        let b = train(VariantKind::Brf, &x, &y, "cat", &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn brf_bootstraps_balanced_on_imbalanced_data() {
        // 9:1 imbalance
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..100 {
            let label = u8::from(i >= 90);
            let c = if label == 1 { 4.0 } else { 0.0 };
            x.push(fv(i, vec![c + rng.gen::<f64>()]));
            y.push(label);
        }
        let cfg = ClassifierConfig { n_trees: 25, seed: 13, ..Default::default() };
        train(VariantKind::Brf, &x, &y, "cat", &cfg).unwrap();
        for counts in audit_brf_bootstraps(&y, &cfg) {
            assert_eq!(counts[0], counts[1], "unbalanced bootstrap {counts:?}");
            assert_eq!(counts[0], 10);
        }
    }

    #[test]
    fn forest_of_identical_trees_scores_like_one() {
        let x = vec![fv(0, vec![0.0]), fv(1, vec![1.0]), fv(2, vec![10.0]), fv(3, vec![11.0])];
        let y = vec![0, 0, 1, 1];
        let cfg = ClassifierConfig { n_trees: 7, seed: 1, feature_subsample: Some(1), ..Default::default() };
        let clf = train(VariantKind::Rf, &x, &y, "cat", &cfg).unwrap();
        if let Model::Forest(trees) = &clf.model {
            let probe = vec![fv(9, vec![10.5])];
            let (_, score) = predict(&clf, &probe).unwrap()[0];
            let mean: f64 = trees.iter().map(|t| t.predict_fraction(&[10.5])).sum::<f64>()
                / trees.len() as f64;
            assert!((score - mean).abs() < 1e-12);
        } else {
            panic!("expected forest");
        }
    }

    #[test]
    fn score_half_labels_one() {
        // symmetric NB with probe at the midpoint scores exactly 0.5
        let x = vec![fv(0, vec![-2.0]), fv(1, vec![-1.0]), fv(2, vec![1.0]), fv(3, vec![2.0])];
        let y = vec![0, 0, 1, 1];
        let clf = train(VariantKind::Nb, &x, &y, "cat", &ClassifierConfig::default()).unwrap();
        let (label, score) = predict(&clf, &[fv(9, vec![0.0])]).unwrap()[0];
        assert!((score - 0.5).abs() < 1e-12);
        assert_eq!(label, 1);
    }

    #[test]
    fn dim_mismatch_fatal() {
        let (x, y) = blobs(10, 4);
        let clf = train(VariantKind::Nb, &x, &y, "cat", &ClassifierConfig::default()).unwrap();
        assert!(predict(&clf, &[fv(0, vec![1.0, 2.0, 3.0])]).is_err());
    }

    #[test]
    fn featurize_identity_alignment_matches_raw() {
        use nalgebra::DMatrix;
        let em = EmbeddingModel::from_vectors(vec![
            ("a".into(), vec![1.0, 2.0]),
            ("b".into(), vec![3.0, 4.0]),
        ])
        .unwrap();
        let doc = TokenizedDocument {
            id: "d".into(),
            tokens: vec!["a".into(), "b".into(), "oov".into()],
            ngrams: vec![],
            hashtags: vec![],
        };
        let raw = featurize(&doc, &em, None).unwrap();
        assert_eq!(raw.x, vec![2.0, 3.0]);
        assert!((raw.oov_fraction - 1.0 / 3.0).abs() < 1e-12);

        let i2 = DMatrix::<f64>::identity(2, 2);
        let anchors = crate::sedo::AnchorSet {
            terms: vec!["a".into(), "b".into()],
            t: i2.clone(),
            m: i2,
            rank_warning: false,
        };
        let mut aligned = crate::sedo::assemble(anchors, 1.0, Some(0.0)).unwrap();
        aligned.w = Some(DMatrix::identity(2, 2));
        let modulated = featurize(&doc, &em, Some(&aligned)).unwrap();
        // W = I must reproduce the raw path bit-for-bit
        assert_eq!(modulated.x, raw.x);
    }

    #[test]
    fn featurize_all_oov_zero_vector() {
        let em = EmbeddingModel::from_vectors(vec![("a".into(), vec![1.0, 2.0])]).unwrap();
        let doc = TokenizedDocument {
            id: "d".into(),
            tokens: vec!["x".into(), "y".into()],
            ngrams: vec![],
            hashtags: vec![],
        };
        let f = featurize(&doc, &em, None).unwrap();
        assert_eq!(f.x, vec![0.0, 0.0]);
        assert_eq!(f.oov_fraction, 1.0);
    }

    #[test]
    fn classifier_json_round_trip() {
        let (x, y) = blobs(10, 6);
        let cfg = ClassifierConfig { n_trees: 5, seed: 2, ..Default::default() };
        let clf = train(VariantKind::Bsrf, &x, &y, "cat", &cfg).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        clf.save_json(f.path()).unwrap();
        let clf2 = TrainedClassifier::load_json(f.path()).unwrap();
        assert_eq!(clf.model, clf2.model);
    }
}
