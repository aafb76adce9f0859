//! Random-forest regression built on CART-style trees with bootstrap
//! resampling and per-node feature subsampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features tried per split; `None` means `1/sqrt(p)`.
    pub feature_fraction: Option<f64>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { trees: 200, max_depth: 8, min_leaf: 5, feature_fraction: None }
    }
}

impl ForestParams {
    pub fn mtry(&self, p: usize) -> usize {
        let frac = self.feature_fraction.unwrap_or(1.0 / (p.max(1) as f64).sqrt());
        ((p as f64 * frac).ceil() as usize).clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForestModel {
    trees: Vec<Tree>,
}

impl ForestModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        s / self.trees.len() as f64
    }
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a ForestParams,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf { value: mean });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &mut [usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let p = self.x[0].len();
        let mtry = self.params.mtry(p);
        // Sample features without replacement (partial Fisher-Yates).
        let mut feats: Vec<usize> = (0..p).collect();
        for i in 0..mtry {
            let j = rng.random_range(i..p);
            feats.swap(i, j);
        }
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let n = idx.len() as f64;
        let base = total * total / n;
        let mut best: Option<BestSplit> = None;
        for &f in &feats[..mtry] {
            idx.sort_unstable_by(|&a, &b| self.x[a][f].partial_cmp(&self.x[b][f]).unwrap());
            let mut left_sum = 0.0;
            for cut in 0..idx.len() - 1 {
                left_sum += self.y[idx[cut]];
                let nl = (cut + 1) as f64;
                if (cut + 1) < self.params.min_leaf || idx.len() - cut - 1 < self.params.min_leaf {
                    continue;
                }
                let xv = self.x[idx[cut]][f];
                let xn = self.x[idx[cut + 1]][f];
                if xv == xn {
                    continue;
                }
                // Gain in explained sum of squares from this split.
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / (n - nl) - base;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(BestSplit { feature: f, threshold: 0.5 * (xv + xn), score });
                }
            }
        }
        best.filter(|b| b.score > 1e-12)
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        if depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf {
            return self.leaf(idx);
        }
        let Some(split) = self.best_split(idx, rng) else {
            return self.leaf(idx);
        };
        let (mut li, mut ri): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 }); // placeholder
        let left = self.grow(&mut li, depth + 1, rng);
        let right = self.grow(&mut ri, depth + 1, rng);
        self.nodes[at] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        at
    }
}

/// Fits a forest on the given rows. Trees are seeded individually from
/// `seed`, so the result does not depend on scheduling.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], params: &ForestParams, seed: u64) -> ForestModel {
    let n = x.len();
    let trees = (0..params.trees)
        .map(|t| {
            let mut rng = rng_for(seed, &[t as u64]);
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut builder = TreeBuilder { x, y, params, nodes: Vec::new() };
            let root = builder.grow(&mut idx, 0, &mut rng);
            debug_assert_eq!(root, 0);
            Tree { nodes: builder.nodes }
        })
        .collect();
    ForestModel { trees }
}
