//! Gaussian naive Bayes over dense embedding features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub priors: [f64; 2],
}

/// Per-class feature means and variances with variance smoothing
/// eps = 1e-9 * max feature variance.
pub fn fit_nb(x: &[Vec<f64>], y: &[u8]) -> Result<GaussianNb> {
    let d = x.first().map_or(0, |r| r.len());
    let n = x.len();
    let mut means = [vec![0.0; d], vec![0.0; d]];
    let mut variances = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for (row, &label) in x.iter().zip(y) {
        let c = label as usize;
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(row) {
            *m += v;
        }
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Invalid("degenerate training set: single class".into()));
    }
    for c in 0..2 {
        for m in &mut means[c] {
            *m /= counts[c] as f64;
        }
    }
    for (row, &label) in x.iter().zip(y) {
        let c = label as usize;
        for ((var, m), v) in variances[c].iter_mut().zip(&means[c]).zip(row) {
            let diff = v - m;
            *var += diff * diff;
        }
    }
    let mut max_var: f64 = 0.0;
    for c in 0..2 {
        for var in &mut variances[c] {
            *var /= counts[c] as f64;
            max_var = max_var.max(*var);
        }
    }
    let eps = 1e-9 * max_var.max(1e-300);
    for c in 0..2 {
        for var in &mut variances[c] {
            *var += eps;
        }
    }
    Ok(GaussianNb {
        means,
        variances,
        priors: [counts[0] as f64 / n as f64, counts[1] as f64 / n as f64],
    })
}

impl GaussianNb {
    /// Posterior probability of class 1.
    pub fn posterior(&self, x: &[f64]) -> Result<f64> {
        let d = self.means[0].len();
        if x.len() != d {
            return Err(Error::DimMismatch { expected: d, got: x.len() });
        }
        let mut log_lik = [0.0f64; 2];
        for c in 0..2 {
            let mut acc = self.priors[c].ln();
            for ((v, m), var) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                let diff = v - m;
                acc += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + diff * diff / var);
            }
            log_lik[c] = acc;
        }
        let max = log_lik[0].max(log_lik[1]);
        let e0 = (log_lik[0] - max).exp();
        let e1 = (log_lik[1] - max).exp();
        Ok(e1 / (e0 + e1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form oracle for the 4-point 1-D dataset:
    /// class 0 at {0, 1}, class 1 at {10, 11}.
    fn closed_form_posterior(x: f64) -> f64 {
        // both classes: mean +/- 0.5 spread, variance 0.25 (+ smoothing eps)
        let eps = 1e-9 * 0.25;
        let var = 0.25 + eps;
        let dens = |mu: f64| (-0.5 * (x - mu) * (x - mu) / var).exp()
            / (2.0 * std::f64::consts::PI * var).sqrt();
        let p0 = 0.5 * dens(0.5);
        let p1 = 0.5 * dens(10.5);
        p1 / (p0 + p1)
    }

    #[test]
    fn matches_closed_form_gaussian() {
        let x = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let y = vec![0, 0, 1, 1];
        let nb = fit_nb(&x, &y).unwrap();
        for probe in [0.4, 10.6, 5.25, -2.0, 13.0] {
            let got = nb.posterior(&[probe]).unwrap();
            let want = closed_form_posterior(probe);
            assert!((got - want).abs() <= 1e-9, "x={probe}: {got} vs {want}");
        }
        assert!(nb.posterior(&[0.4]).unwrap() < 0.5);
        assert!(nb.posterior(&[10.6]).unwrap() > 0.5);
    }

    #[test]
    fn symmetric_midpoint_is_half() {
        let x = vec![vec![-1.0], vec![-2.0], vec![1.0], vec![2.0]];
        let y = vec![0, 0, 1, 1];
        let nb = fit_nb(&x, &y).unwrap();
        assert!((nb.posterior(&[0.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_fatal() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(fit_nb(&x, &[1, 1]).is_err());
    }

    #[test]
    fn variances_positive_after_smoothing() {
        // zero-variance feature
        let x = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 10.0], vec![1.0, 11.0]];
        let y = vec![0, 0, 1, 1];
        let nb = fit_nb(&x, &y).unwrap();
        for c in 0..2 {
            assert!(nb.variances[c].iter().all(|&v| v > 0.0));
        }
    }
}
