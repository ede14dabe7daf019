//! Per-document, per-category index scores: semantic mapping over n-grams,
//! semantic proximity over topic mixtures, additive combination, per-category
//! max normalization, and weak label assignment.

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedDocument;
use crate::embedding::{cosine, EmbeddingModel};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::par;
use crate::topic::TopicModel;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexScore {
    pub doc_id: String,
    pub category: String,
    /// Semantic mapping component (document n-grams vs lexicon terms).
    pub h_ng: f64,
    /// Semantic proximity component, unigram topic model.
    pub h_lda: f64,
    /// Semantic proximity component, n-gram topic model.
    pub h_nlda: f64,
    pub h_total: f64,
    /// Normalized score, set by [`normalize_scores`].
    pub nhs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakLabel {
    pub doc_id: String,
    pub category: String,
    pub label: u8,
    pub nhs: f64,
    pub tau_label: f64,
}

fn category_entries<'a>(lex: &'a Lexicon, category: &str) -> Result<&'a [crate::lexicon::LexiconEntry]> {
    lex.category(category)
        .ok_or_else(|| Error::Invalid(format!("unknown category: {category}")))
}

/// Weight-normalized mean of the category's in-vocabulary term vectors.
pub fn category_embedding(lex: &Lexicon, category: &str, em: &EmbeddingModel) -> Result<Vec<f64>> {
    let entries = category_entries(lex, category)?;
    let mut acc = vec![0.0; em.dim];
    let mut wsum = 0.0;
    for e in entries {
        if let Some(v) = em.vector(&e.term) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += e.weight * x;
            }
            wsum += e.weight;
        }
    }
    if wsum > 0.0 {
        for a in &mut acc {
            *a /= wsum;
        }
    }
    Ok(acc)
}

/// Mean over in-vocabulary document n-grams of the best weighted cosine to a
/// category term, clamped below at zero.
pub fn semantic_mapping_score(
    doc: &TokenizedDocument,
    category: &str,
    lex: &Lexicon,
    em: &EmbeddingModel,
) -> Result<f64> {
    let entries = category_entries(lex, category)?;
    let term_vectors: Vec<(f64, &[f64])> =
        entries.iter().filter_map(|e| em.vector(&e.term).map(|v| (e.weight, v))).collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    for g in &doc.ngrams {
        let Some(gv) = em.vector(g) else { continue };
        n += 1;
        let mut best = f64::NEG_INFINITY;
        let mut best_weight = 0.0;
        for (w, tv) in &term_vectors {
            let c = cosine(gv, tv)?;
            if c > best {
                best = c;
                best_weight = *w;
            }
        }
        if best.is_finite() {
            sum += (best_weight * best).max(0.0);
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok(sum / n as f64)
}

/// Topic-mixture proximity: sum_k theta_d[k] * max(0, cos(topic_k, category)).
pub fn semantic_proximity_score(
    doc: &TokenizedDocument,
    category: &str,
    tm: &TopicModel,
    lex: &Lexicon,
    em: &EmbeddingModel,
    top_k: usize,
) -> Result<f64> {
    let cat_vec = category_embedding(lex, category, em)?;
    let topic_vecs = tm.topic_embeddings(em, top_k);
    let (theta, _) = tm.doc_topics(doc);
    let mut score = 0.0;
    for (k, (tv, flagged)) in topic_vecs.iter().enumerate() {
        if *flagged {
            continue;
        }
        score += theta[k] * cosine(tv, &cat_vec)?.max(0.0);
    }
    Ok(score)
}

pub struct ScoringModels<'a> {
    pub lex: &'a Lexicon,
    pub em: &'a EmbeddingModel,
    pub tm_unigram: &'a TopicModel,
    pub tm_ngram: &'a TopicModel,
    pub top_k: usize,
}

/// Unnormalized index score: the three components and their sum.
pub fn index_score(
    doc: &TokenizedDocument,
    category: &str,
    models: &ScoringModels,
) -> Result<IndexScore> {
    let h_ng = semantic_mapping_score(doc, category, models.lex, models.em)?;
    let h_lda =
        semantic_proximity_score(doc, category, models.tm_unigram, models.lex, models.em, models.top_k)?;
    let h_nlda =
        semantic_proximity_score(doc, category, models.tm_ngram, models.lex, models.em, models.top_k)?;
    Ok(IndexScore {
        doc_id: doc.id.clone(),
        category: category.to_string(),
        h_ng,
        h_lda,
        h_nlda,
        h_total: h_ng + h_lda + h_nlda,
        nhs: 0.0,
    })
}

/// Scores every document against one category (document-parallel).
pub fn score_batch(
    docs: &[TokenizedDocument],
    category: &str,
    models: &ScoringModels,
) -> Result<Vec<IndexScore>> {
    par::map_slice(docs, |d| index_score(d, category, models)).into_iter().collect()
}

/// Divides each h_total by the batch maximum for the category. A nonpositive
/// maximum zeroes the whole batch and reports it.
pub fn normalize_scores(batch: &mut [IndexScore]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Invalid("cannot normalize an empty score batch".into()));
    }
    let category = batch[0].category.clone();
    if let Some(s) = batch.iter().find(|s| s.category != category) {
        return Err(Error::Invalid(format!(
            "mixed categories in normalization batch: {category} vs {}",
            s.category
        )));
    }
    let max = batch.iter().map(|s| s.h_total).fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        log::warn!("category {category}: max index score {max} <= 0, all nhs set to 0");
        for s in batch.iter_mut() {
            s.nhs = 0.0;
        }
        return Ok(());
    }
    for s in batch.iter_mut() {
        s.nhs = s.h_total / max;
    }
    Ok(())
}

/// Binary weak labels: 1 iff nhs >= tau_label (inclusive boundary).
pub fn assign_labels(batch: &[IndexScore], tau_label: f64) -> Vec<WeakLabel> {
    batch
        .iter()
        .map(|s| WeakLabel {
            doc_id: s.doc_id.clone(),
            category: s.category.clone(),
            label: u8::from(s.nhs >= tau_label),
            nhs: s.nhs,
            tau_label,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{LexiconEntry, Provenance};

    fn lex(cats: &[(&str, &[(&str, f64)])]) -> Lexicon {
        let categories = cats
            .iter()
            .map(|(name, terms)| {
                (
                    name.to_string(),
                    terms
                        .iter()
                        .map(|(t, w)| LexiconEntry {
                            term: t.to_string(),
                            weight: *w,
                            provenance: Provenance::Seed,
                        })
                        .collect(),
                )
            })
            .collect();
        Lexicon { version: 1, categories }
    }

    fn doc(id: &str, ngrams: &[&str]) -> TokenizedDocument {
        let ngrams: Vec<String> = ngrams.iter().map(|s| s.to_string()).collect();
        TokenizedDocument { id: id.into(), tokens: ngrams.clone(), ngrams, hashtags: vec![] }
    }

    fn em() -> EmbeddingModel {
        EmbeddingModel::from_vectors(vec![
            ("sad".into(), vec![1.0, 0.0, 0.0]),
            ("ortho".into(), vec![0.0, 0.0, 1.0]),
            ("close".into(), vec![0.8, 0.2, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn mapping_identity_term() {
        let l = lex(&[("dep", &[("sad", 1.0)])]);
        let s = semantic_mapping_score(&doc("d", &["sad"]), "dep", &l, &em()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mapping_orthogonal_is_zero() {
        let l = lex(&[("dep", &[("sad", 1.0)])]);
        let s = semantic_mapping_score(&doc("d", &["ortho"]), "dep", &l, &em()).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn mapping_unknown_category_fatal() {
        let l = lex(&[("dep", &[("sad", 1.0)])]);
        assert!(semantic_mapping_score(&doc("d", &["sad"]), "nope", &l, &em()).is_err());
    }

    #[test]
    fn mapping_matches_brute_force() {
        // independent re-evaluation of the mean-of-max formula
        let l = lex(&[("dep", &[("sad", 0.7), ("close", 0.4)])]);
        let e = em();
        let docs = [
            doc("a", &["sad", "ortho"]),
            doc("b", &["close"]),
            doc("c", &["sad", "close", "ortho"]),
        ];
        for d in &docs {
            let got = semantic_mapping_score(d, "dep", &l, &e).unwrap();
            let mut expect = 0.0;
            let mut n = 0;
            for g in &d.ngrams {
                let gv = e.vector(g).unwrap();
                let mut best = f64::NEG_INFINITY;
                let mut bw = 0.0;
                for (t, w) in [("sad", 0.7), ("close", 0.4)] {
                    let c = cosine(gv, e.vector(t).unwrap()).unwrap();
                    if c > best {
                        best = c;
                        bw = w;
                    }
                }
                expect += (bw * best).max(0.0);
                n += 1;
            }
            expect /= n as f64;
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn additivity() {
        let s = IndexScore {
            doc_id: "d".into(),
            category: "c".into(),
            h_ng: 0.5,
            h_lda: 0.3,
            h_nlda: 0.2,
            h_total: 1.0,
            nhs: 0.0,
        };
        assert!((s.h_total - (s.h_ng + s.h_lda + s.h_nlda)).abs() < 1e-12);
    }

    fn batch(h: &[f64]) -> Vec<IndexScore> {
        h.iter()
            .enumerate()
            .map(|(i, &h_total)| IndexScore {
                doc_id: format!("d{i}"),
                category: "c".into(),
                h_ng: h_total,
                h_lda: 0.0,
                h_nlda: 0.0,
                h_total,
                nhs: 0.0,
            })
            .collect()
    }

    #[test]
    fn normalize_by_max() {
        let mut b = batch(&[2.0, 4.0, 8.0]);
        normalize_scores(&mut b).unwrap();
        let nhs: Vec<f64> = b.iter().map(|s| s.nhs).collect();
        assert_eq!(nhs, vec![0.25, 0.5, 1.0]);
    }

    #[test]
    fn normalize_single_and_equal() {
        let mut b = batch(&[3.0]);
        normalize_scores(&mut b).unwrap();
        assert_eq!(b[0].nhs, 1.0);
        let mut b = batch(&[0.7, 0.7, 0.7]);
        normalize_scores(&mut b).unwrap();
        assert!(b.iter().all(|s| s.nhs == 1.0));
    }

    #[test]
    fn normalize_nonpositive_max_zeroes() {
        let mut b = batch(&[0.0, 0.0]);
        normalize_scores(&mut b).unwrap();
        assert!(b.iter().all(|s| s.nhs == 0.0));
    }

    #[test]
    fn normalize_empty_fatal() {
        assert!(normalize_scores(&mut []).is_err());
    }

    #[test]
    fn labels_inclusive_boundary() {
        let mut b = batch(&[0.7, 0.5, 0.49]);
        for (s, nhs) in b.iter_mut().zip([0.7, 0.5, 0.49]) {
            s.nhs = nhs;
        }
        let labels = assign_labels(&b, 0.5);
        assert_eq!(labels.iter().map(|l| l.label).collect::<Vec<_>>(), vec![1, 1, 0]);
    }

    #[test]
    fn labels_scale_invariant() {
        let mut a = batch(&[1.0, 2.0, 5.0]);
        let mut b = batch(&[7.0, 14.0, 35.0]);
        normalize_scores(&mut a).unwrap();
        normalize_scores(&mut b).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.nhs - y.nhs).abs() < 1e-12);
        }
        let la = assign_labels(&a, 0.5);
        let lb = assign_labels(&b, 0.5);
        for (x, y) in la.iter().zip(&lb) {
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn raising_tau_never_flips_zero_to_one() {
        let mut b = batch(&[1.0, 2.0, 3.0, 4.0]);
        normalize_scores(&mut b).unwrap();
        let lo = assign_labels(&b, 0.3);
        let hi = assign_labels(&b, 0.8);
        for (l, h) in lo.iter().zip(&hi) {
            assert!(h.label <= l.label);
        }
    }

    #[test]
    fn unique_max_gets_exactly_one_unit_nhs() {
        let mut b = batch(&[1.0, 2.0, 3.0]);
        normalize_scores(&mut b).unwrap();
        assert_eq!(b.iter().filter(|s| s.nhs == 1.0).count(), 1);
        assert!(b.iter().all(|s| (0.0..=1.0).contains(&s.nhs)));
    }
}
