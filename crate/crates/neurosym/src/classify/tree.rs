//! CART decision tree with Gini impurity, per-split feature subsampling,
//! and optional per-sample weights (used by the balanced-subsample forest).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
    Leaf { class1_fraction: f64, n_samples: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct TreeConfig {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; None means sqrt(d).
    pub feature_subsample: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: None, min_leaf: 1, feature_subsample: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: Node,
    pub n_features: usize,
}

impl Tree {
    pub fn predict_fraction(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { class1_fraction, .. } => return *class1_fraction,
                Node::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaves(&self) -> Vec<&Node> {
        fn walk<'a>(n: &'a Node, out: &mut Vec<&'a Node>) {
            match n {
                Node::Leaf { .. } => out.push(n),
                Node::Split { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }
}

fn weighted_gini(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    weights: &'a [f64],
    cfg: TreeConfig,
    n_features: usize,
    mtry: usize,
}

impl Builder<'_> {
    fn leaf(&self, idx: &[usize]) -> Node {
        let total: f64 = idx.iter().map(|&i| self.weights[i]).sum();
        let pos: f64 = idx.iter().filter(|&&i| self.y[i] == 1).map(|&i| self.weights[i]).sum();
        Node::Leaf {
            class1_fraction: if total > 0.0 { pos / total } else { 0.5 },
            n_samples: idx.len(),
        }
    }

    fn best_split(&self, idx: &[usize], rng: &mut impl Rng) -> Option<(usize, f64, f64)> {
        let mut features: Vec<usize> = (0..self.n_features).collect();
        features.shuffle(rng);
        features.truncate(self.mtry);
        features.sort_unstable();

        let total_w: f64 = idx.iter().map(|&i| self.weights[i]).sum();
        let total_pos: f64 =
            idx.iter().filter(|&&i| self.y[i] == 1).map(|&i| self.weights[i]).sum();
        let parent = weighted_gini(total_pos, total_w);
        if parent == 0.0 {
            return None;
        }

        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for &f in &features {
            order.sort_by(|&a, &b| self.x[a][f].partial_cmp(&self.x[b][f]).unwrap());
            let mut left_w = 0.0;
            let mut left_pos = 0.0;
            for k in 0..order.len() - 1 {
                let i = order[k];
                left_w += self.weights[i];
                if self.y[i] == 1 {
                    left_pos += self.weights[i];
                }
                let a = self.x[order[k]][f];
                let b = self.x[order[k + 1]][f];
                if a == b {
                    continue;
                }
                if k + 1 < self.cfg.min_leaf || order.len() - (k + 1) < self.cfg.min_leaf {
                    continue;
                }
                let right_w = total_w - left_w;
                let right_pos = total_pos - left_pos;
                let impurity = (left_w * weighted_gini(left_pos, left_w)
                    + right_w * weighted_gini(right_pos, right_w))
                    / total_w;
                let gain = parent - impurity;
                if gain > 1e-12 && best.map_or(true, |(_, _, g)| gain > g) {
                    best = Some((f, 0.5 * (a + b), gain));
                }
            }
        }
        best
    }

    fn build(&self, idx: &[usize], depth: usize, rng: &mut impl Rng) -> Node {
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        let depth_ok = self.cfg.max_depth.map_or(true, |d| depth < d);
        if pure || !depth_ok || idx.len() < 2 * self.cfg.min_leaf {
            return self.leaf(idx);
        }
        match self.best_split(idx, rng) {
            None => self.leaf(idx),
            Some((feature, threshold, _)) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
                if left_idx.is_empty() || right_idx.is_empty() {
                    return self.leaf(idx);
                }
                Node::Split {
                    feature,
                    threshold,
                    left: Box::new(self.build(&left_idx, depth + 1, rng)),
                    right: Box::new(self.build(&right_idx, depth + 1, rng)),
                }
            }
        }
    }
}

/// Fits a tree on the given sample indices with per-sample weights.
pub fn fit_tree(
    x: &[Vec<f64>],
    y: &[u8],
    weights: &[f64],
    idx: &[usize],
    cfg: TreeConfig,
    rng: &mut impl Rng,
) -> Tree {
    let n_features = x.first().map_or(0, |r| r.len());
    let mtry = cfg
        .feature_subsample
        .unwrap_or_else(|| (n_features as f64).sqrt().round().max(1.0) as usize)
        .min(n_features.max(1));
    let builder = Builder { x, y, weights, cfg, n_features, mtry };
    Tree { root: builder.build(idx, 0, rng), n_features }
}
