//! Bootstrap-aggregated CART trees with Gini-impurity splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_set, vote, Classifier};
use crate::data::Dataset;
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 8,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn leaf_for(&self, x: &[f64]) -> &[usize] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { counts } => return counts,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let counts: Vec<f64> = self.leaf_for(x).iter().map(|&c| c as f64).collect();
        vote(&counts)
    }
}

/// Majority vote over trees; probabilities are vote fractions.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    n_classes: usize,
    width: usize,
}

pub fn train_random_forest(train: &Dataset, n_classes: usize, config: &ForestConfig) -> Result<RandomForest> {
    RandomForest::fit(&train.x, &train.y_true, n_classes, config)
}

struct Builder<'a> {
    x: &'a Matrix,
    labels: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_samples_split: usize,
    n_candidates: usize,
    nodes: Vec<TreeNode>,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &r in rows {
            counts[self.labels[r]] += 1;
        }
        counts
    }

    fn build(&mut self, rows: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth || rows.len() < self.min_samples_split {
            return self.leaf(counts);
        }
        let Some((feature, threshold)) = self.best_split(rows, &counts, rng) else {
            return self.leaf(counts);
        };
        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { counts: vec![] });
        rows.sort_by(|&a, &b| {
            let (va, vb) = (self.x[[a, feature]] <= threshold, self.x[[b, feature]] <= threshold);
            vb.cmp(&va).then(a.cmp(&b))
        });
        let n_left = rows
            .iter()
            .filter(|&&r| self.x[[r, feature]] <= threshold)
            .count();
        let (l, r) = rows.split_at_mut(n_left);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[idx] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        idx
    }

    fn leaf(&mut self, counts: Vec<usize>) -> usize {
        self.nodes.push(TreeNode::Leaf { counts });
        self.nodes.len() - 1
    }

    /// Best Gini split over a random feature subset; the remaining features
    /// are tried only if the subset offers no valid split.
    fn best_split(&self, rows: &[usize], counts: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let mut features: Vec<usize> = (0..self.x.ncols()).collect();
        features.shuffle(rng);
        let parent = gini(counts, rows.len());
        let (head, tail) = features.split_at(self.n_candidates.min(features.len()));
        for group in [head, tail] {
            let mut best: Option<(f64, usize, f64)> = None;
            for &f in group {
                if let Some((impurity, threshold)) = self.best_threshold(rows, f) {
                    if impurity < parent - 1e-12 && best.is_none_or(|(b, _, _)| impurity < b) {
                        best = Some((impurity, f, threshold));
                    }
                }
            }
            if let Some((_, f, t)) = best {
                return Some((f, t));
            }
        }
        None
    }

    fn best_threshold(&self, rows: &[usize], feature: usize) -> Option<(f64, f64)> {
        let mut sorted: Vec<(f64, usize)> = rows
            .iter()
            .map(|&r| (self.x[[r, feature]], self.labels[r]))
            .collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = sorted.len();
        let mut left = vec![0usize; self.n_classes];
        let mut right = self.counts(rows);
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            let (v, y) = sorted[i];
            left[y] += 1;
            right[y] -= 1;
            let next = sorted[i + 1].0;
            if next <= v {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            let impurity = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            if best.is_none_or(|(b, _)| impurity < b) {
                let mut threshold = v + (next - v) / 2.0;
                if threshold >= next {
                    threshold = v;
                }
                best = Some((impurity, threshold));
            }
        }
        best
    }
}

impl RandomForest {
    pub fn fit(x: &Matrix, labels: &[usize], n_classes: usize, config: &ForestConfig) -> Result<Self> {
        check_training_set(x, labels, n_classes)?;
        if config.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = x.nrows();
        let n_candidates = (x.ncols() as f64).sqrt().ceil() as usize;
        let mut trees = Vec::with_capacity(config.n_trees);
        for _ in 0..config.n_trees {
            let mut rows: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut builder = Builder {
                x,
                labels,
                n_classes,
                max_depth: config.max_depth,
                min_samples_split: config.min_samples_split.max(2),
                n_candidates: n_candidates.max(1),
                nodes: Vec::new(),
            };
            let root = builder.build(&mut rows, 0, &mut rng);
            debug_assert_eq!(root, 0);
            trees.push(DecisionTree {
                nodes: builder.nodes,
            });
        }
        Ok(Self {
            trees,
            n_classes,
            width: x.ncols(),
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    fn votes(&self, x: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.n_classes];
        for t in &self.trees {
            votes[t.predict(x)] += 1.0;
        }
        votes
    }
}

impl Classifier for RandomForest {
    fn input_width(&self) -> usize {
        self.width
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = self.trees.len() as f64;
        Some(self.votes(x).into_iter().map(|v| v / n).collect())
    }

    fn predict(&self, x: &[f64]) -> usize {
        vote(&self.votes(x))
    }
}
