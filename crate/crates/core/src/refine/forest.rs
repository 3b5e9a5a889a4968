//! A compact random-forest classifier with class-balanced bootstraps.
//!
//! Each tree trains on a bootstrap that draws the same number of samples
//! (the size of the rarest class present) with replacement from every
//! class, so skewed label distributions do not drown out rare classes.
//! Splits minimize Gini impurity over `floor(sqrt(d))` candidate features
//! per node. Forest probabilities are tree-vote fractions.

use crate::error::{Error, Result};
use crate::real::Real;
use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    /// Nodes with fewer samples become leaves.
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for RandomForestConfig {
    fn default() -> Self {
        RandomForestConfig {
            num_trees: 100,
            max_depth: 20,
            min_samples_split: 2,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node<T> {
    Leaf { class: u8 },
    Split { feature: u16, threshold: T, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq)]
struct DecisionTree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> DecisionTree<T> {
    fn predict(&self, x: ArrayView1<'_, T>) -> u8 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }
}

/// Trained forest; all predictions are deterministic functions of the
/// training data and the config seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest<T> {
    trees: Vec<DecisionTree<T>>,
    num_classes: usize,
    num_features: usize,
    config: RandomForestConfig,
}

struct TreeBuilder<'a, T> {
    features: &'a Array2<T>,
    labels: &'a [u8],
    num_classes: usize,
    max_depth: usize,
    min_samples_split: usize,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node<T>>,
    scratch_features: Vec<u16>,
}

impl<'a, T: Real> TreeBuilder<'a, T> {
    fn class_counts(&self, samples: &[u32]) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &s in samples {
            counts[self.labels[s as usize] as usize] += 1;
        }
        counts
    }

    fn majority(counts: &[usize]) -> u8 {
        let mut best = 0usize;
        for (c, &n) in counts.iter().enumerate().skip(1) {
            if n > counts[best] {
                best = c;
            }
        }
        best as u8
    }

    fn gini(counts: &[usize], total: usize) -> f64 {
        if total == 0 {
            return 0.0;
        }
        let mut sum_sq = 0.0;
        for &n in counts {
            let f = n as f64 / total as f64;
            sum_sq += f * f;
        }
        1.0 - sum_sq
    }

    fn leaf(&mut self, counts: &[usize]) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { class: Self::majority(counts) });
        id
    }

    fn grow(&mut self, samples: &mut Vec<u32>, depth: usize) -> u32 {
        let counts = self.class_counts(samples);
        let present = counts.iter().filter(|&&n| n > 0).count();
        if present <= 1 || depth >= self.max_depth || samples.len() < self.min_samples_split {
            return self.leaf(&counts);
        }
        // draw `mtry` distinct candidate features (partial Fisher-Yates)
        let d = self.scratch_features.len();
        for k in 0..self.mtry {
            let pick = k + self.rng.random_range(0..d - k);
            self.scratch_features.swap(k, pick);
        }
        let candidates: Vec<u16> = self.scratch_features[..self.mtry].to_vec();
        let parent_gini = Self::gini(&counts, samples.len());
        let mut best: Option<(u16, T, f64)> = None;
        let mut sorted: Vec<(T, u8)> = Vec::with_capacity(samples.len());
        for &f in &candidates {
            sorted.clear();
            for &s in samples.iter() {
                sorted.push((self.features[(s as usize, f as usize)], self.labels[s as usize]));
            }
            sorted.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
            let total = sorted.len();
            let mut left_counts = vec![0usize; self.num_classes];
            for k in 1..total {
                left_counts[sorted[k - 1].1 as usize] += 1;
                if sorted[k - 1].0 == sorted[k].0 {
                    continue;
                }
                let right_counts: Vec<usize> = counts
                    .iter()
                    .zip(&left_counts)
                    .map(|(&all, &l)| all - l)
                    .collect();
                let weighted = (k as f64 * Self::gini(&left_counts, k)
                    + (total - k) as f64 * Self::gini(&right_counts, total - k))
                    / total as f64;
                let gain = parent_gini - weighted;
                let two = T::one() + T::one();
                let threshold = (sorted[k - 1].0 + sorted[k].0) / two;
                // guard against midpoints that round onto the upper value
                if threshold >= sorted[k].0 {
                    continue;
                }
                if best.map_or(gain > 1e-12, |(_, _, g)| gain > g) {
                    best = Some((f, threshold, gain));
                }
            }
        }
        let Some((feature, threshold, _)) = best else {
            return self.leaf(&counts);
        };
        let (mut left, mut right): (Vec<u32>, Vec<u32>) = samples
            .iter()
            .copied()
            .partition(|&s| self.features[(s as usize, feature as usize)] <= threshold);
        samples.clear();
        samples.shrink_to_fit();
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Split { feature, threshold, left: 0, right: 0 });
        let left_id = self.grow(&mut left, depth + 1);
        let right_id = self.grow(&mut right, depth + 1);
        if let Node::Split { left, right, .. } = &mut self.nodes[id as usize] {
            *left = left_id;
            *right = right_id;
        }
        id
    }
}

fn balanced_bootstrap(labels: &[u8], num_classes: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut by_class: Vec<Vec<u32>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i as u32);
    }
    let per_class = by_class
        .iter()
        .filter(|ids| !ids.is_empty())
        .map(|ids| ids.len())
        .min()
        .unwrap_or(0);
    let mut samples = Vec::new();
    for ids in by_class.iter().filter(|ids| !ids.is_empty()) {
        for _ in 0..per_class {
            samples.push(ids[rng.random_range(0..ids.len())]);
        }
    }
    samples
}

/// Trains a forest on `features` (one row per sample) and `labels`.
pub fn rf_train<T: Real>(
    features: &Array2<T>,
    labels: &[u8],
    num_classes: usize,
    config: &RandomForestConfig,
) -> Result<RandomForest<T>> {
    let (n, d) = features.dim();
    if n != labels.len() {
        return Err(Error::dims("forest labels", n, labels.len()));
    }
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(
            "forest training needs at least one sample and one feature".into(),
        ));
    }
    if num_classes < 2 || num_classes > 256 {
        return Err(Error::InvalidArgument(format!(
            "num_classes must be in 2..=256, got {num_classes}"
        )));
    }
    if d > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "feature dimension {d} exceeds the supported 65535"
        )));
    }
    if config.num_trees == 0 || config.max_depth == 0 {
        return Err(Error::InvalidArgument(
            "forest needs at least one tree and depth one".into(),
        ));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {l} exceeds num_classes {num_classes}"
        )));
    }
    let mut seen = vec![false; num_classes];
    for &l in labels {
        seen[l as usize] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::DegenerateInput(
            "forest training data contains a single class".into(),
        ));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "forest features must be finite".into(),
        ));
    }
    // per-tree seeds drawn up-front so parallel training order is irrelevant
    let mut root = ChaCha8Rng::seed_from_u64(config.seed);
    let tree_seeds: Vec<u64> = (0..config.num_trees).map(|_| root.random()).collect();
    let mtry = ((d as f64).sqrt().floor() as usize).clamp(1, d);
    let trees: Vec<DecisionTree<T>> = tree_seeds
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut samples = balanced_bootstrap(labels, num_classes, &mut rng);
            let mut builder = TreeBuilder {
                features,
                labels,
                num_classes,
                max_depth: config.max_depth,
                min_samples_split: config.min_samples_split.max(2),
                mtry,
                rng,
                nodes: Vec::new(),
                scratch_features: (0..d as u16).collect(),
            };
            builder.grow(&mut samples, 0);
            DecisionTree { nodes: builder.nodes }
        })
        .collect();
    Ok(RandomForest {
        trees,
        num_classes,
        num_features: d,
        config: config.clone(),
    })
}

impl<T: Real> RandomForest<T> {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Tree votes for one sample, as counts per class.
    pub fn votes(&self, x: ArrayView1<'_, T>) -> Vec<u32> {
        let mut votes = vec![0u32; self.num_classes];
        for tree in &self.trees {
            votes[tree.predict(x) as usize] += 1;
        }
        votes
    }

    /// Vote fractions per class; nonnegative and summing to 1.
    pub fn predict_proba(&self, x: ArrayView1<'_, T>) -> Vec<T> {
        let total = T::from_usize_lossy(self.trees.len());
        self.votes(x)
            .into_iter()
            .map(|v| T::from_usize_lossy(v as usize) / total)
            .collect()
    }

    /// Most-voted class, smallest class id on ties.
    pub fn predict(&self, x: ArrayView1<'_, T>) -> u8 {
        let votes = self.votes(x);
        let mut best = 0usize;
        for (c, &v) in votes.iter().enumerate().skip(1) {
            if v > votes[best] {
                best = c;
            }
        }
        best as u8
    }

    /// Predicted class per row of `features`.
    pub fn predict_batch(&self, features: &Array2<T>) -> Result<Vec<u8>> {
        let (n, d) = features.dim();
        if d != self.num_features {
            return Err(Error::dims("forest features", self.num_features, d));
        }
        Ok((0..n)
            .into_par_iter()
            .map(|i| self.predict(features.row(i)))
            .collect())
    }
}
