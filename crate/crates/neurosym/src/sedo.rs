//! Embedding-space alignment by Sylvester equation. Anchor terms embedded in
//! both the source (tweet) space T and the knowledge-base space M define
//!
//!   P W + W Q = Z,   P = M M^T,  Q = delta T T^T,  Z = (1 + delta) M T^T
//!
//! whose solution W is the stationary point of
//! ||T - W^T M||_F^2 + delta ||W T - M||_F^2. W maps source-space vectors
//! into the KB space (modulation). The solve diagonalizes the symmetric P
//! and Q and divides the rotated right-hand side by eigenvalue pair sums.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;

pub const DEFAULT_DELTA: f64 = 1.0;
pub const EPS_PAIR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct AnchorSet {
    pub terms: Vec<String>,
    /// d_t x n source-space vectors, one column per anchor term.
    pub t: DMatrix<f64>,
    /// d_m x n KB-space vectors, same column order.
    pub m: DMatrix<f64>,
    /// Set when the anchor count risks rank deficiency (n < max(d_t, d_m)).
    pub rank_warning: bool,
}

impl AnchorSet {
    pub fn from_columns(terms: Vec<String>, t_cols: &[Vec<f64>], m_cols: &[Vec<f64>]) -> Result<AnchorSet> {
        if terms.len() != t_cols.len() || terms.len() != m_cols.len() {
            return Err(Error::Invalid("anchor term/column count mismatch".into()));
        }
        if terms.is_empty() {
            return Err(Error::Invalid("no anchor pairs".into()));
        }
        let d_t = t_cols[0].len();
        let d_m = m_cols[0].len();
        let t = DMatrix::from_fn(d_t, terms.len(), |r, c| t_cols[c][r]);
        let m = DMatrix::from_fn(d_m, terms.len(), |r, c| m_cols[c][r]);
        let rank_warning = terms.len() < d_t.max(d_m);
        if rank_warning {
            log::warn!(
                "only {} anchors for dims {}x{}: alignment may be rank deficient",
                terms.len(),
                d_m,
                d_t
            );
        }
        Ok(AnchorSet { terms, t, m, rank_warning })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Anchors are the lexicon terms (all categories) present in both
/// vocabularies, ordered by term ascending.
pub fn build_anchor_pairs(
    em_tweet: &EmbeddingModel,
    em_kb: &EmbeddingModel,
    lex: &Lexicon,
) -> Result<AnchorSet> {
    let mut terms: Vec<String> = lex
        .all_terms()
        .iter()
        .map(|(t, _)| t.to_string())
        .filter(|t| em_tweet.vector(t).is_some() && em_kb.vector(t).is_some())
        .collect();
    terms.sort();
    terms.dedup();
    if terms.is_empty() {
        return Err(Error::Invalid("no lexicon term is embedded in both spaces".into()));
    }
    let t_cols: Vec<Vec<f64>> = terms.iter().map(|t| em_tweet.vector(t).unwrap().to_vec()).collect();
    let m_cols: Vec<Vec<f64>> = terms.iter().map(|t| em_kb.vector(t).unwrap().to_vec()).collect();
    log::info!("anchor set: {} shared lexicon terms", terms.len());
    AnchorSet::from_columns(terms, &t_cols, &m_cols)
}

#[derive(Debug, Clone)]
pub struct SedoAlignment {
    pub anchors: AnchorSet,
    pub delta: f64,
    pub epsilon_ridge: f64,
    /// M M^T (+ ridge), symmetric PSD, d_m x d_m.
    pub p: DMatrix<f64>,
    /// delta T T^T (+ ridge), symmetric PSD, d_t x d_t.
    pub q: DMatrix<f64>,
    /// (1 + delta) M T^T, d_m x d_t.
    pub z: DMatrix<f64>,
    /// Solved weight matrix, d_m x d_t.
    pub w: Option<DMatrix<f64>>,
    /// ||PW + WQ - Z||_F / max(||Z||_F, tiny).
    pub residual: f64,
    /// Eigenvalue pairs with |lambda_i + sigma_j| < EPS_PAIR, zeroed in the solve.
    pub singular_pairs: usize,
}

/// Builds P, Q, Z from the anchors. `epsilon_ridge = None` picks the default
/// 1e-6 * trace(P) / d_m; pass `Some(0.0)` for no ridge.
pub fn assemble(anchors: AnchorSet, delta: f64, epsilon_ridge: Option<f64>) -> Result<SedoAlignment> {
    if delta <= 0.0 {
        return Err(Error::Invalid("delta must be positive".into()));
    }
    let mut p = &anchors.m * anchors.m.transpose();
    let mut q = (&anchors.t * anchors.t.transpose()) * delta;
    let z = (&anchors.m * anchors.t.transpose()) * (1.0 + delta);
    let d_m = p.nrows();
    let eps = epsilon_ridge.unwrap_or_else(|| 1e-6 * p.trace() / d_m as f64);
    if eps < 0.0 {
        return Err(Error::Invalid("epsilon_ridge must be nonnegative".into()));
    }
    if eps > 0.0 {
        for i in 0..p.nrows() {
            p[(i, i)] += eps;
        }
        for i in 0..q.nrows() {
            q[(i, i)] += eps;
        }
    }
    Ok(SedoAlignment {
        anchors,
        delta,
        epsilon_ridge: eps,
        p,
        q,
        z,
        w: None,
        residual: f64::NAN,
        singular_pairs: 0,
    })
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn relative_residual(p: &DMatrix<f64>, q: &DMatrix<f64>, z: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let r = p * w + w * q - z;
    r.norm() / z.norm().max(f64::MIN_POSITIVE)
}

/// Closed-form Sylvester solve via eigendecomposition of the symmetric P and
/// Q: W = U [ (U^T Z V)_ij / (lambda_i + sigma_j) ] V^T.
pub fn solve_sylvester(mut a: SedoAlignment) -> Result<SedoAlignment> {
    let p = symmetrize(&a.p);
    let q = symmetrize(&a.q);
    let ep = p.symmetric_eigen();
    let eq = q.symmetric_eigen();
    let u = &ep.eigenvectors;
    let v = &eq.eigenvectors;
    let rotated = u.transpose() * &a.z * v;
    let mut core = DMatrix::zeros(rotated.nrows(), rotated.ncols());
    let mut singular = 0usize;
    for i in 0..rotated.nrows() {
        for j in 0..rotated.ncols() {
            let denom = ep.eigenvalues[i] + eq.eigenvalues[j];
            if denom.abs() < EPS_PAIR {
                singular += 1;
            } else {
                core[(i, j)] = rotated[(i, j)] / denom;
            }
        }
    }
    if singular == rotated.nrows() * rotated.ncols() {
        return Err(Error::Numerical("degenerate alignment: all eigenvalue pairs singular".into()));
    }
    if singular > 0 {
        log::warn!("sylvester solve: {singular} singular eigenvalue pairs zeroed");
    }
    let w = u * core * v.transpose();
    a.residual = relative_residual(&a.p, &a.q, &a.z, &w);
    a.w = Some(w);
    a.singular_pairs = singular;
    Ok(a)
}

impl SedoAlignment {
    /// Maps a source-space vector into the KB space: W v.
    pub fn modulate(&self, v: &[f64]) -> Result<Vec<f64>> {
        let w = self.w.as_ref().ok_or_else(|| Error::Invalid("alignment not solved".into()))?;
        if v.len() != w.ncols() {
            return Err(Error::DimMismatch { expected: w.ncols(), got: v.len() });
        }
        let x = w * DVector::from_column_slice(v);
        Ok(x.as_slice().to_vec())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p.nrows(), self.q.nrows())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FineTuneMode {
    /// Old and new anchors concatenated, deduplicated by term, new wins.
    Union,
    /// Only the new anchors.
    Replace,
}

/// Re-assembles and re-solves with updated anchors, leaving `a` untouched.
pub fn fine_tune(a: &SedoAlignment, new_anchors: &AnchorSet, mode: FineTuneMode) -> Result<SedoAlignment> {
    if new_anchors.is_empty() {
        return Err(Error::Invalid("fine_tune needs a nonempty anchor set".into()));
    }
    let merged = match mode {
        FineTuneMode::Replace => new_anchors.clone(),
        FineTuneMode::Union => {
            let mut terms: Vec<String> = Vec::new();
            let mut t_cols: Vec<Vec<f64>> = Vec::new();
            let mut m_cols: Vec<Vec<f64>> = Vec::new();
            for (i, term) in new_anchors.terms.iter().enumerate() {
                terms.push(term.clone());
                t_cols.push(new_anchors.t.column(i).iter().copied().collect());
                m_cols.push(new_anchors.m.column(i).iter().copied().collect());
            }
            for (i, term) in a.anchors.terms.iter().enumerate() {
                if !terms.contains(term) {
                    terms.push(term.clone());
                    t_cols.push(a.anchors.t.column(i).iter().copied().collect());
                    m_cols.push(a.anchors.m.column(i).iter().copied().collect());
                }
            }
            // keep term-ascending column order, matching build_anchor_pairs
            let mut order: Vec<usize> = (0..terms.len()).collect();
            order.sort_by(|&x, &y| terms[x].cmp(&terms[y]));
            let terms2: Vec<String> = order.iter().map(|&i| terms[i].clone()).collect();
            let t2: Vec<Vec<f64>> = order.iter().map(|&i| t_cols[i].clone()).collect();
            let m2: Vec<Vec<f64>> = order.iter().map(|&i| m_cols[i].clone()).collect();
            AnchorSet::from_columns(terms2, &t2, &m2)?
        }
    };
    solve_sylvester(assemble(merged, a.delta, Some(a.epsilon_ridge))?)
}

#[derive(Debug, Serialize, Deserialize)]
struct SedoFile {
    delta: f64,
    epsilon_ridge: f64,
    anchor_terms: Vec<String>,
    /// d_m x d_t, row-major.
    w: Vec<f64>,
    residual: f64,
    dims: (usize, usize),
    anchor_t: Vec<f64>,
    anchor_m: Vec<f64>,
}

pub fn save_alignment(a: &SedoAlignment, path: &Path) -> Result<()> {
    let w = a.w.as_ref().ok_or_else(|| Error::Invalid("alignment not solved".into()))?;
    let (d_m, d_t) = a.dims();
    let file = SedoFile {
        delta: a.delta,
        epsilon_ridge: a.epsilon_ridge,
        anchor_terms: a.anchors.terms.clone(),
        w: (0..d_m).flat_map(|r| (0..d_t).map(move |c| (r, c))).map(|(r, c)| w[(r, c)]).collect(),
        residual: a.residual,
        dims: (d_m, d_t),
        anchor_t: matrix_row_major(&a.anchors.t),
        anchor_m: matrix_row_major(&a.anchors.m),
    };
    fs::write(path, serde_json::to_string(&file).expect("serializable"))
        .map_err(|e| Error::io(path, e))
}

fn matrix_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| (r, c))).map(|(r, c)| m[(r, c)]).collect()
}

pub fn load_alignment(path: &Path) -> Result<SedoAlignment> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SedoFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let (d_m, d_t) = file.dims;
    let n = file.anchor_terms.len();
    if file.anchor_t.len() != d_t * n || file.anchor_m.len() != d_m * n || file.w.len() != d_m * d_t {
        return Err(Error::parse(path, "inconsistent matrix sizes"));
    }
    let t = DMatrix::from_fn(d_t, n, |r, c| file.anchor_t[r * n + c]);
    let m = DMatrix::from_fn(d_m, n, |r, c| file.anchor_m[r * n + c]);
    let anchors = AnchorSet { terms: file.anchor_terms, t, m, rank_warning: n < d_t.max(d_m) };
    let mut a = assemble(anchors, file.delta, Some(file.epsilon_ridge))?;
    a.w = Some(DMatrix::from_fn(d_m, d_t, |r, c| file.w[r * d_t + c]));
    a.residual = file.residual;
    Ok(a)
}

/// Dense vectorized-solve oracle for tests and acceptance checks:
/// (I kron P + Q^T kron I) vec(W) = vec(Z), solved by LU.
pub fn kron_solve(p: &DMatrix<f64>, q: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d_m = p.nrows();
    let d_t = q.nrows();
    let eye_t = DMatrix::<f64>::identity(d_t, d_t);
    let eye_m = DMatrix::<f64>::identity(d_m, d_m);
    let a = eye_t.kronecker(p) + q.transpose().kronecker(&eye_m);
    // column-major vec(Z)
    let zvec = DVector::from_iterator(d_m * d_t, z.iter().copied());
    let lu = a.lu();
    let x = lu
        .solve(&zvec)
        .ok_or_else(|| Error::Numerical("singular vectorized Sylvester system".into()))?;
    Ok(DMatrix::from_iterator(d_m, d_t, x.iter().copied()))
}

/// The alignment objective E(T, M) = ||T - W^T M||_F^2 + delta ||W T - M||_F^2.
pub fn alignment_objective(t: &DMatrix<f64>, m: &DMatrix<f64>, w: &DMatrix<f64>, delta: f64) -> f64 {
    let a = t - w.transpose() * m;
    let b = w * t - m;
    a.norm_squared() + delta * b.norm_squared()
}
