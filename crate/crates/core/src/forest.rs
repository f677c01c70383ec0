//! Bagged decision-tree classifier grown from scratch.
//!
//! Each tree is a binary CART fit on a bootstrap resample of the training
//! rows. At every node a random subset of ceil(sqrt(d)) features is drawn,
//! candidate thresholds are the midpoints between consecutive distinct
//! values, and the split with the largest Gini impurity decrease wins; ties
//! go to the lowest feature index, then the lowest threshold. Leaves store
//! the positive-class fraction and the ensemble prediction is the mean leaf
//! value across trees.
//!
//! Growing uses only index vectors and sorts, no hashing, so a fixed seed
//! reproduces the forest bit for bit on any platform. Feature importance is
//! the impurity decrease weighted by node share, accumulated over all trees
//! and normalized to sum one.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::rng_for_indexed;
use rand::Rng;

/// Bump when the serialized layout changes.
pub const FOREST_FORMAT_VERSION: u32 = 1;

/// Splits below this impurity decrease are treated as noise.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// None grows until purity or the leaf-size floor.
    pub max_depth: Option<u32>,
    pub min_samples_leaf: usize,
    /// None means ceil(sqrt(feature count)).
    pub features_per_split: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        p1: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { p1 } => return *p1,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// A fitted ensemble. Serializes to versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub version: u32,
    pub n_features: usize,
    pub config: ForestConfig,
    pub seed: u64,
    /// Normalized impurity-decrease importance per feature.
    pub importance: Vec<f64>,
    trees: Vec<Tree>,
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [u8],
    features_per_split: usize,
    min_samples_leaf: usize,
    max_depth: Option<u32>,
    n_train: f64,
}

fn gini(c1: usize, n: usize) -> f64 {
    let p = c1 as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

impl Grower<'_> {
    /// Grow a subtree over `rows`, returning its root index in `nodes`.
    fn grow(
        &self,
        nodes: &mut Vec<Node>,
        rows: &[u32],
        depth: u32,
        rng: &mut impl Rng,
        importance: &mut [f64],
    ) -> usize {
        let n = rows.len();
        let c1 = rows.iter().filter(|&&r| self.y[r as usize] == 1).count();
        let leaf = |nodes: &mut Vec<Node>| {
            nodes.push(Node::Leaf {
                p1: c1 as f64 / n as f64,
            });
            nodes.len() - 1
        };
        if c1 == 0
            || c1 == n
            || n < 2 * self.min_samples_leaf
            || self.max_depth.is_some_and(|d| depth >= d)
        {
            return leaf(nodes);
        }

        let d = self.x.ncols();
        // Partial Fisher-Yates, then sort so features are visited in index
        // order regardless of draw order.
        let mut pool: Vec<usize> = (0..d).collect();
        for i in 0..self.features_per_split {
            let j = rng.gen_range(i..d);
            pool.swap(i, j);
        }
        let mut feats = pool[..self.features_per_split].to_vec();
        feats.sort_unstable();

        let g_parent = gini(c1, n);
        let mut best: Option<(f64, usize, f64, usize)> = None; // gain, feature, threshold, left size
        let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(n);
        for &f in &feats {
            pairs.clear();
            pairs.extend(
                rows.iter()
                    .map(|&r| (self.x[[r as usize, f]], self.y[r as usize])),
            );
            pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut c1_left = 0usize;
            for i in 1..n {
                c1_left += usize::from(pairs[i - 1].1);
                if pairs[i].0 == pairs[i - 1].0 {
                    continue;
                }
                if i < self.min_samples_leaf || n - i < self.min_samples_leaf {
                    continue;
                }
                let gain = g_parent
                    - (i as f64 / n as f64) * gini(c1_left, i)
                    - ((n - i) as f64 / n as f64) * gini(c1 - c1_left, n - i);
                if best.is_none_or(|(g, ..)| gain > g) {
                    let threshold = 0.5 * (pairs[i - 1].0 + pairs[i].0);
                    best = Some((gain, f, threshold, i));
                }
            }
        }

        let Some((gain, feature, threshold, _)) = best else {
            return leaf(nodes);
        };
        if gain < MIN_GAIN {
            return leaf(nodes);
        }
        importance[feature] += (n as f64 / self.n_train) * gain;

        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .partition(|&&r| self.x[[r as usize, feature]] <= threshold);
        let idx = nodes.len();
        nodes.push(Node::Leaf { p1: 0.0 }); // placeholder until children exist
        let left = self.grow(nodes, &left_rows, depth + 1, rng, importance);
        let right = self.grow(nodes, &right_rows, depth + 1, rng, importance);
        nodes[idx] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        idx
    }
}

impl Forest {
    /// Fit on rows `x` (samples x features) with binary labels.
    pub fn fit(x: ArrayView2<'_, f64>, y: &[u8], config: &ForestConfig, seed: u64) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 || d == 0 {
            return Err(Error::data("forest training needs a non-empty matrix"));
        }
        if y.len() != n {
            return Err(Error::shape(format!("{n} labels"), format!("{}", y.len())));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::data(format!("labels must be 0 or 1, got {bad}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite feature value in training matrix"));
        }
        if config.n_trees == 0 || config.min_samples_leaf == 0 {
            return Err(Error::config("n_trees and min_samples_leaf must be positive"));
        }
        let features_per_split = match config.features_per_split {
            Some(m) if m == 0 || m > d => {
                return Err(Error::config(format!(
                    "features_per_split must lie in 1..={d}"
                )))
            }
            Some(m) => m,
            None => (d as f64).sqrt().ceil() as usize,
        };

        let grower = Grower {
            x,
            y,
            features_per_split,
            min_samples_leaf: config.min_samples_leaf,
            max_depth: config.max_depth,
            n_train: n as f64,
        };
        let mut importance = vec![0.0; d];
        let mut trees = Vec::with_capacity(config.n_trees);
        for t in 0..config.n_trees {
            let mut rng = rng_for_indexed(seed, "tree", t as u64);
            let rows: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
            let mut nodes = Vec::new();
            grower.grow(&mut nodes, &rows, 0, &mut rng, &mut importance);
            trees.push(Tree { nodes });
        }
        let total: f64 = importance.iter().sum();
        if total > 0.0 {
            for v in &mut importance {
                *v /= total;
            }
        }
        Ok(Forest {
            version: FOREST_FORMAT_VERSION,
            n_features: d,
            config: config.clone(),
            seed,
            importance,
            trees,
        })
    }

    /// Positive-class probability for each row.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::shape(
                format!("{} features", self.n_features),
                format!("{}", x.ncols()),
            ));
        }
        let mut out = Vec::with_capacity(x.nrows());
        let mut row_buf = vec![0.0; self.n_features];
        for row in x.rows() {
            for (b, v) in row_buf.iter_mut().zip(row.iter()) {
                *b = *v;
            }
            let sum: f64 = self.trees.iter().map(|t| t.predict(&row_buf)).sum();
            out.push(sum / self.trees.len() as f64);
        }
        Ok(out)
    }

    /// Hard labels at the 0.5 probability threshold.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba(x)?
            .into_iter()
            .map(|p| u8::from(p >= 0.5))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let forest: Forest = serde_json::from_str(json)?;
        if forest.version != FOREST_FORMAT_VERSION {
            return Err(Error::data(format!(
                "unsupported forest format version {} (expected {FOREST_FORMAT_VERSION})",
                forest.version
            )));
        }
        Ok(forest)
    }
}
