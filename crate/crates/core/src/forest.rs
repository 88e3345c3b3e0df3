//! Per-sensor random-forest regressors.
//!
//! Each forest estimates one target sensor from its `k` most correlated peers
//! (absolute Pearson correlation on training data). Trees are CART regressors
//! grown greedily on squared-error reduction, trained on bootstrap resamples.
//! Split thresholds are midpoints between consecutive distinct values and a
//! sample goes left when `value <= threshold`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Dataset, SensorCatalog};
use crate::error::{Error, Result};
use crate::metrics;

/// How many candidate features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitFeatures {
    All,
    /// `ceil(k / 3)`
    Third,
    Count(usize),
}

impl SplitFeatures {
    pub fn resolve(self, k: usize) -> usize {
        match self {
            SplitFeatures::All => k,
            SplitFeatures::Third => k.div_ceil(3).max(1),
            SplitFeatures::Count(c) => c.clamp(1, k.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: SplitFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: SplitFeatures,
    pub seed: u64,
    /// Resample with replacement per tree; when false every tree sees the
    /// full training set.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_samples_leaf: 2,
            features_per_split: SplitFeatures::Third,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig(
                "n_trees, max_depth and min_samples_leaf must be at least 1".into(),
            ));
        }
        if self.features_per_split == SplitFeatures::Count(0) {
            return Err(Error::InvalidConfig(
                "features_per_split must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn tree_params(&self, k: usize) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            features_per_split: SplitFeatures::Count(self.features_per_split.resolve(k)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Flat regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FlatTree", try_from = "FlatTree")]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

/// Struct-of-arrays form used in model files. Leaves have `feature = -1`
/// and child indices of -1; split nodes carry `value = 0`.
#[derive(Serialize, Deserialize)]
struct FlatTree {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    left: Vec<i64>,
    right: Vec<i64>,
    value: Vec<f64>,
}

impl From<Tree> for FlatTree {
    fn from(tree: Tree) -> Self {
        let n = tree.nodes.len();
        let mut flat = FlatTree {
            feature: Vec::with_capacity(n),
            threshold: Vec::with_capacity(n),
            left: Vec::with_capacity(n),
            right: Vec::with_capacity(n),
            value: Vec::with_capacity(n),
        };
        for node in tree.nodes {
            let (f, t, l, r, v) = match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => (feature as i64, threshold, left as i64, right as i64, 0.0),
                TreeNode::Leaf { value } => (-1, 0.0, -1, -1, value),
            };
            flat.feature.push(f);
            flat.threshold.push(t);
            flat.left.push(l);
            flat.right.push(r);
            flat.value.push(v);
        }
        flat
    }
}

impl TryFrom<FlatTree> for Tree {
    type Error = String;

    fn try_from(flat: FlatTree) -> std::result::Result<Self, Self::Error> {
        let n = flat.feature.len();
        if [
            flat.threshold.len(),
            flat.left.len(),
            flat.right.len(),
            flat.value.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err("tree arrays have different lengths".into());
        }
        if n == 0 {
            return Err("tree has no nodes".into());
        }
        let child = |c: i64, parent: usize| -> std::result::Result<usize, String> {
            usize::try_from(c)
                .ok()
                .filter(|&c| c > parent && c < n)
                .ok_or_else(|| format!("node {parent} has invalid child {c}"))
        };
        let nodes = (0..n)
            .map(|i| {
                if flat.feature[i] < 0 {
                    Ok(TreeNode::Leaf {
                        value: flat.value[i],
                    })
                } else {
                    Ok(TreeNode::Split {
                        feature: flat.feature[i] as usize,
                        threshold: flat.threshold[i],
                        left: child(flat.left[i], i)?,
                        right: child(flat.right[i], i)?,
                    })
                }
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        Ok(Tree { nodes })
    }
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn predict(&self, frame: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if frame[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, left).max(walk(nodes, right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Feature ids referenced by split nodes.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, .. } => Some(*feature),
            TreeNode::Leaf { .. } => None,
        })
    }
}

/// Training rows (full frames indexed by sensor id) with one target each.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub rows: &'a [&'a [f64]],
    pub targets: &'a [f64],
}

/// A chosen split: feature id, threshold and squared-error reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

struct Builder<'a> {
    samples: Samples<'a>,
    params: TreeParams,
    features: Vec<usize>,
    nodes: Vec<TreeNode>,
    scratch: Vec<(f64, f64)>,
}

impl Builder<'_> {
    fn mean(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.samples.targets[i]).sum::<f64>() / idx.len() as f64
    }

    fn best_split(&mut self, idx: &[usize], candidates: &[usize]) -> Option<BestSplit> {
        let n = idx.len();
        let min_leaf = self.params.min_samples_leaf;
        let total: f64 = idx.iter().map(|&i| self.samples.targets[i]).sum();
        let parent_score = total * total / n as f64;
        let mut best: Option<BestSplit> = None;
        for &feature in candidates {
            self.scratch.clear();
            self.scratch.extend(
                idx.iter()
                    .map(|&i| (self.samples.rows[i][feature], self.samples.targets[i])),
            );
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for pos in 1..n {
                left_sum += self.scratch[pos - 1].1;
                let (lo, hi) = (self.scratch[pos - 1].0, self.scratch[pos].0);
                if lo == hi || pos < min_leaf || n - pos < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let score =
                    left_sum * left_sum / pos as f64 + right_sum * right_sum / (n - pos) as f64;
                let gain = score - parent_score;
                if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature,
                        threshold: lo + (hi - lo) / 2.0,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: self.mean(idx),
        });
        let targets = self.samples.targets;
        let first = targets[idx[0]];
        let constant = idx.iter().all(|&i| targets[i] == first);
        if depth >= self.params.max_depth
            || idx.len() < 2 * self.params.min_samples_leaf
            || constant
        {
            return at;
        }

        let m = self.params.features_per_split.resolve(self.features.len());
        let mut candidates: Vec<usize> = if m >= self.features.len() {
            self.features.clone()
        } else {
            index::sample(rng, self.features.len(), m)
                .into_iter()
                .map(|j| self.features[j])
                .collect()
        };
        candidates.sort_unstable();

        let Some(split) = self.best_split(idx, &candidates) else {
            return at;
        };
        let rows = self.samples.rows;
        let mut cut = 0;
        for j in 0..idx.len() {
            if rows[idx[j]][split.feature] <= split.threshold {
                idx.swap(cut, j);
                cut += 1;
            }
        }
        let (left_idx, right_idx) = idx.split_at_mut(cut);
        let left = self.grow(left_idx, depth + 1, rng);
        let right = self.grow(right_idx, depth + 1, rng);
        self.nodes[at] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        at
    }
}

/// Grows one CART tree over the sample positions in `indices` (duplicates
/// allowed), considering only `features` for splits.
pub fn fit_tree(
    samples: Samples<'_>,
    indices: &[usize],
    features: &[usize],
    params: TreeParams,
    seed: u64,
) -> Result<Tree> {
    if indices.is_empty() || samples.rows.is_empty() {
        return Err(Error::EmptySamples);
    }
    if samples.rows.len() != samples.targets.len() {
        return Err(Error::LengthMismatch {
            left: samples.rows.len(),
            right: samples.targets.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fit_tree_with_rng(samples, indices, features, params, &mut rng)
}

fn fit_tree_with_rng(
    samples: Samples<'_>,
    indices: &[usize],
    features: &[usize],
    params: TreeParams,
    rng: &mut ChaCha8Rng,
) -> Result<Tree> {
    if params.max_depth == 0 && indices.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut builder = Builder {
        samples,
        params,
        features: features.to_vec(),
        nodes: Vec::new(),
        scratch: Vec::with_capacity(indices.len()),
    };
    let mut idx = indices.to_vec();
    builder.grow(&mut idx, 0, rng);
    Ok(Tree {
        nodes: builder.nodes,
    })
}

/// The `k` peers with the largest absolute Pearson correlation to `target`,
/// ties broken by lower sensor id.
pub fn select_features(rows: &[&[f64]], target: usize, k: usize) -> Result<Vec<usize>> {
    let width = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if target >= width {
        return Err(Error::UnknownSensor(target));
    }
    if k == 0 || k >= width {
        return Err(Error::InvalidK {
            k,
            max: width.saturating_sub(1),
        });
    }
    let column = |s: usize| rows.iter().map(|r| r[s]).collect::<Vec<f64>>();
    let y = column(target);
    let mut scored: Vec<(usize, f64)> = (0..width)
        .filter(|&s| s != target)
        .map(|s| {
            let c = metrics::pearson(&column(s), &y).abs();
            (s, if c.is_nan() { 0.0 } else { c })
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(s, _)| s).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub target_sensor: usize,
    pub feature_ids: Vec<usize>,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Mean of the per-tree predictions. Only `feature_ids` entries of the
    /// frame are read.
    pub fn predict(&self, frame: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(frame)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn check(&self, width: usize) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "forest for sensor {} has no trees",
                self.target_sensor
            )));
        }
        if self.feature_ids.contains(&self.target_sensor) {
            return Err(Error::InvalidConfig(format!(
                "forest for sensor {} reads its own target",
                self.target_sensor
            )));
        }
        let bad = self
            .trees
            .iter()
            .flat_map(Tree::split_features)
            .any(|f| f >= width || !self.feature_ids.contains(&f));
        if bad {
            return Err(Error::InvalidConfig(format!(
                "forest for sensor {} splits on an unselected feature",
                self.target_sensor
            )));
        }
        Ok(())
    }
}

/// Selects `k` peers for `target` and grows `config.n_trees` trees.
pub fn fit_forest(
    train: &Dataset,
    target: usize,
    k: usize,
    config: &ForestConfig,
) -> Result<ForestModel> {
    let rows = train.rows();
    fit_forest_rows(&rows, target, k, config)
}

pub fn fit_forest_rows(
    rows: &[&[f64]],
    target: usize,
    k: usize,
    config: &ForestConfig,
) -> Result<ForestModel> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let feature_ids = select_features(rows, target, k)?;
    let targets: Vec<f64> = rows.iter().map(|r| r[target]).collect();
    let samples = Samples {
        rows,
        targets: &targets,
    };
    let params = config.tree_params(k);
    let n = rows.len();

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let tree_seeds: Vec<u64> = (0..config.n_trees).map(|_| master.random()).collect();
    let all: Vec<usize> = (0..n).collect();
    let trees = tree_seeds
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let indices = if config.bootstrap {
                bootstrap_indices(n, &mut rng)
            } else {
                all.clone()
            };
            fit_tree_with_rng(samples, &indices, &feature_ids, params, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ForestModel {
        target_sensor: target,
        feature_ids,
        config: config.clone(),
        trees,
    })
}

/// `n` draws with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// One forest per catalog sensor, in catalog order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestBank {
    pub forests: Vec<ForestModel>,
}

impl ForestBank {
    /// Fits every sensor's forest on normalized training data. `ks[s]` is the
    /// peer count for sensor `s`; each forest's seed is `config.seed + s`.
    pub fn fit(train: &Dataset, ks: &[usize], config: &ForestConfig) -> Result<Self> {
        let width = train.catalog().len();
        if ks.len() != width {
            return Err(Error::LengthMismatch {
                left: ks.len(),
                right: width,
            });
        }
        let rows = train.rows();
        let forests = (0..width)
            .map(|s| {
                let cfg = ForestConfig {
                    seed: config.seed.wrapping_add(s as u64),
                    ..config.clone()
                };
                fit_forest_rows(&rows, s, ks[s], &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { forests })
    }

    pub fn peer_counts(catalog: &SensorCatalog) -> Vec<usize> {
        (0..catalog.len())
            .map(|s| catalog.peer_features(s))
            .collect()
    }

    pub fn check(&self, width: usize) -> Result<()> {
        if self.forests.len() != width {
            return Err(Error::InvalidConfig(format!(
                "forest bank has {} forests for {width} sensors",
                self.forests.len()
            )));
        }
        for (s, forest) in self.forests.iter().enumerate() {
            if forest.target_sensor != s {
                return Err(Error::InvalidConfig(format!(
                    "forest at position {s} targets sensor {}",
                    forest.target_sensor
                )));
            }
            forest.check(width)?;
        }
        Ok(())
    }

    pub fn predict(&self, sensor: usize, frame: &[f64]) -> f64 {
        self.forests[sensor].predict(frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestScore {
    pub sensor: usize,
    pub k: usize,
    pub mae: f64,
    /// `None` when the sensor is constant on the evaluation data.
    pub r2: Option<f64>,
}

/// Per-sensor MAE and R² of the bank on normalized data.
pub fn evaluate_bank(bank: &ForestBank, test: &Dataset) -> Result<Vec<ForestScore>> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    bank.forests
        .iter()
        .map(|forest| {
            let s = forest.target_sensor;
            let actual = test.column(s);
            let predicted: Vec<f64> = test
                .frames()
                .iter()
                .map(|f| forest.predict(&f.values))
                .collect();
            let r2 = match metrics::r_squared(&actual, &predicted, s) {
                Ok(v) => Some(v),
                Err(Error::ConstantTarget { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(ForestScore {
                sensor: s,
                k: forest.feature_ids.len(),
                mae: metrics::mean_absolute_error(&actual, &predicted)?,
                r2,
            })
        })
        .collect()
}
