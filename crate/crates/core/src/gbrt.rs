//! Gradient-boosted regression trees with squared loss.
//!
//! Each tree is fitted to the residual left by the trees before it, and the
//! ensemble prediction is `base + learning_rate * Σ tree(x)` accumulated in
//! list order. Trees are grown greedily with exact split search; leaf
//! weights are the L2-regularized squared-loss optimum `Σr / (n + λ)`.
//!
//! Fitting first reorders rows into a canonical order (lexicographic on the
//! feature vector, then on the target), so every floating-point sum is taken
//! in the same order no matter how the caller arranged the data. Shuffled
//! inputs therefore produce bit-identical models.

use std::cmp::Ordering;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training settings for one boosted ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbrtHyperparams {
    pub num_trees: usize,
    /// Maximum depth in edges; the root sits at depth 0.
    pub max_height: usize,
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub min_samples_split: usize,
}

impl GbrtHyperparams {
    pub fn new(
        num_trees: usize,
        max_height: usize,
        l2_lambda: f64,
        learning_rate: f64,
        min_samples_split: usize,
    ) -> Result<Self> {
        let hp = GbrtHyperparams {
            num_trees,
            max_height,
            l2_lambda,
            learning_rate,
            min_samples_split,
        };
        hp.validate()?;
        Ok(hp)
    }

    /// Landscape model trained on simulation data.
    pub fn stage_one() -> Self {
        GbrtHyperparams {
            num_trees: 140,
            max_height: 11,
            l2_lambda: 1.0,
            learning_rate: 0.05,
            min_samples_split: 2,
        }
    }

    /// Gap model trained on the experimental residual.
    pub fn stage_two() -> Self {
        GbrtHyperparams {
            num_trees: 94,
            max_height: 9,
            l2_lambda: 0.01,
            learning_rate: 0.1,
            min_samples_split: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::Config(format!(
                "l2_lambda must be a finite value >= 0, got {}",
                self.l2_lambda
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config(format!(
                "min_samples_split must be >= 2, got {}",
                self.min_samples_split
            )));
        }
        Ok(())
    }
}

/// Initial value the boosting sum starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseMode {
    Mean,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature,
                left,
                right,
                ..
            } => [Some(*feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    root: TreeNode,
    depth: usize,
}

impl RegressionTree {
    pub fn new(root: TreeNode) -> Self {
        let depth = root.depth();
        RegressionTree { root, depth }
    }

    pub fn leaf(value: f64) -> Self {
        RegressionTree::new(TreeNode::Leaf { value })
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    /// Edges from the root to the deepest leaf.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.root.predict(x)
    }

    /// True for a single leaf whose value is exactly zero.
    pub fn is_zero(&self) -> bool {
        matches!(self.root, TreeNode::Leaf { value } if value == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature_index: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Regularized squared-loss leaf weight `Σr / (n + λ)`.
pub fn leaf_value(residuals: &[f64], lambda: f64) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::EmptyLeaf);
    }
    let sum: f64 = residuals.iter().sum();
    Ok(sum / (residuals.len() as f64 + lambda))
}

/// Best regularized variance-reduction split over all features, or `None`
/// when no split has positive gain.
///
/// Panics if `residuals` and `features` differ in length.
pub fn best_split(features: &[Vec<f64>], residuals: &[f64], lambda: f64) -> Option<SplitCandidate> {
    assert_eq!(
        features.len(),
        residuals.len(),
        "features and residuals must be row-aligned"
    );
    let rows: Vec<usize> = (0..features.len()).collect();
    let arity = features.first().map_or(0, Vec::len);
    best_split_rows(features, residuals, &rows, arity, lambda)
}

fn score(sum: f64, count: usize, lambda: f64) -> f64 {
    sum * sum / (count as f64 + lambda)
}

fn best_split_rows(
    features: &[Vec<f64>],
    residuals: &[f64],
    rows: &[usize],
    arity: usize,
    lambda: f64,
) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| residuals[i]).sum();
    let sum_sq: f64 = rows.iter().map(|&i| residuals[i] * residuals[i]).sum();
    let parent = score(total, n, lambda);
    // Gains below the rounding noise of the prefix sums are treated as zero.
    let noise_floor = 4.0 * f64::EPSILON * n as f64 * sum_sq;

    let mut best: Option<SplitCandidate> = None;
    let mut order = rows.to_vec();
    for feature in 0..arity {
        order.copy_from_slice(rows);
        order.sort_by(|&a, &b| features[a][feature].total_cmp(&features[b][feature]));
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += residuals[order[k]];
            let lo = features[order[k]][feature];
            let hi = features[order[k + 1]][feature];
            if lo >= hi {
                continue;
            }
            let gain = score(left_sum, k + 1, lambda) + score(total - left_sum, n - k - 1, lambda)
                - parent;
            if best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    feature_index: feature,
                    threshold: midpoint(lo, hi),
                    gain,
                });
            }
        }
    }
    best.filter(|b| b.gain > 0.0 && b.gain > noise_floor)
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) * 0.5;
    // Adjacent floats: keep `lo <= mid < hi` so `hi` still goes right.
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Grows one tree on `residuals` with greedy exact splits.
pub fn fit_tree(features: &[Vec<f64>], residuals: &[f64], hp: &GbrtHyperparams) -> Result<RegressionTree> {
    let arity = check_matrix(features, residuals.len())?;
    let rows: Vec<usize> = (0..features.len()).collect();
    let root = grow(features, residuals, rows, arity, 0, hp)?;
    Ok(RegressionTree::new(root))
}

fn grow(
    features: &[Vec<f64>],
    residuals: &[f64],
    rows: Vec<usize>,
    arity: usize,
    depth: usize,
    hp: &GbrtHyperparams,
) -> Result<TreeNode> {
    if depth < hp.max_height && rows.len() >= hp.min_samples_split {
        if let Some(split) = best_split_rows(features, residuals, &rows, arity, hp.l2_lambda) {
            let (left, right): (Vec<usize>, Vec<usize>) = rows
                .iter()
                .partition(|&&i| features[i][split.feature_index] <= split.threshold);
            return Ok(TreeNode::Split {
                feature: split.feature_index,
                threshold: split.threshold,
                left: Box::new(grow(features, residuals, left, arity, depth + 1, hp)?),
                right: Box::new(grow(features, residuals, right, arity, depth + 1, hp)?),
            });
        }
    }
    let leaf: Vec<f64> = rows.iter().map(|&i| residuals[i]).collect();
    Ok(TreeNode::Leaf {
        value: leaf_value(&leaf, hp.l2_lambda)?,
    })
}

/// Validates a row-major matrix against a target count; returns the arity.
fn check_matrix(features: &[Vec<f64>], targets: usize) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::EmptyDataset("no training rows".into()));
    }
    if features.len() != targets {
        return Err(Error::Shape(format!(
            "{} feature rows but {} targets",
            features.len(),
            targets
        )));
    }
    let arity = features[0].len();
    if let Some((i, row)) = features.iter().enumerate().find(|(_, r)| r.len() != arity) {
        return Err(Error::Shape(format!(
            "row {i} has {} features, expected {arity}",
            row.len()
        )));
    }
    Ok(arity)
}

/// Mean with one correction pass, exact for constant inputs.
fn mean(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let rough = values.iter().sum::<f64>() / n;
    rough + values.iter().map(|v| v - rough).sum::<f64>() / n
}

/// An ordered ensemble of regression trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct GbrtModel {
    feature_arity: usize,
    base_prediction: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
}

impl GbrtModel {
    pub fn new(
        feature_arity: usize,
        base_prediction: f64,
        learning_rate: f64,
        trees: Vec<RegressionTree>,
    ) -> Result<Self> {
        if let Some(f) = trees.iter().filter_map(|t| t.root.max_feature()).max() {
            if f >= feature_arity {
                return Err(Error::Model(format!(
                    "split on feature {f} but feature arity is {feature_arity}"
                )));
            }
        }
        Ok(GbrtModel {
            feature_arity,
            base_prediction,
            learning_rate,
            trees,
        })
    }

    pub fn feature_arity(&self) -> usize {
        self.feature_arity
    }

    pub fn base_prediction(&self) -> f64 {
        self.base_prediction
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    /// The same model keeping only the first `count` trees.
    pub fn truncated(&self, count: usize) -> GbrtModel {
        GbrtModel {
            trees: self.trees[..count.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_arity {
            return Err(Error::Shape(format!(
                "point has {} features, model expects {}",
                x.len(),
                self.feature_arity
            )));
        }
        Ok(self.predict_row(x))
    }

    pub(crate) fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_prediction, |acc, t| acc + self.learning_rate * t.predict(x))
    }
}

/// Fits `hp.num_trees` trees to `targets` (fewer if a tree comes out
/// identically zero).
pub fn gbrt_fit(features: &[Vec<f64>], targets: &[f64], hp: &GbrtHyperparams, base: BaseMode) -> Result<GbrtModel> {
    gbrt_fit_observed(features, targets, hp, base, |_, _| ControlFlow::Continue(()))
}

/// Like [`gbrt_fit`], but calls `observer` after every tree with the tree's
/// index and the tree itself. Returning `Break` stops boosting; the tree just
/// passed to the observer is kept.
pub fn gbrt_fit_observed<F>(
    features: &[Vec<f64>],
    targets: &[f64],
    hp: &GbrtHyperparams,
    base: BaseMode,
    mut observer: F,
) -> Result<GbrtModel>
where
    F: FnMut(usize, &RegressionTree) -> ControlFlow<()>,
{
    hp.validate()?;
    let arity = check_matrix(features, targets.len())?;

    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| canonical_cmp(&features[a], targets[a], &features[b], targets[b]));
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| features[i].clone()).collect();
    let targets: Vec<f64> = order.iter().map(|&i| targets[i]).collect();

    let base_prediction = match base {
        BaseMode::Mean => mean(&targets),
        BaseMode::Zero => 0.0,
    };
    let mut running = vec![base_prediction; rows.len()];
    let mut residuals: Vec<f64> = targets.iter().map(|t| t - base_prediction).collect();
    let mut trees = Vec::with_capacity(hp.num_trees);

    for index in 0..hp.num_trees {
        let tree = fit_tree(&rows, &residuals, hp)?;
        for ((run, res), (x, t)) in running
            .iter_mut()
            .zip(residuals.iter_mut())
            .zip(rows.iter().zip(&targets))
        {
            *run += hp.learning_rate * tree.predict(x);
            *res = t - *run;
        }
        let done = tree.is_zero();
        let flow = observer(index, &tree);
        trees.push(tree);
        if done || flow.is_break() {
            break;
        }
    }

    GbrtModel::new(arity, base_prediction, hp.learning_rate, trees)
}

fn canonical_cmp(xa: &[f64], ta: f64, xb: &[f64], tb: f64) -> Ordering {
    xa.iter()
        .zip(xb)
        .map(|(a, b)| a.total_cmp(b))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(ta.total_cmp(&tb))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    feature_arity: usize,
    base_prediction: f64,
    learning_rate: f64,
    /// Each tree as a pre-order node list.
    trees: Vec<Vec<NodeRecord>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum NodeRecord {
    Split { feature: usize, threshold: f64 },
    Leaf { value: f64 },
}

impl From<GbrtModel> for ModelDocument {
    fn from(model: GbrtModel) -> Self {
        fn flatten(node: &TreeNode, out: &mut Vec<NodeRecord>) {
            match node {
                TreeNode::Leaf { value } => out.push(NodeRecord::Leaf { value: *value }),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(NodeRecord::Split {
                        feature: *feature,
                        threshold: *threshold,
                    });
                    flatten(left, out);
                    flatten(right, out);
                }
            }
        }
        ModelDocument {
            feature_arity: model.feature_arity,
            base_prediction: model.base_prediction,
            learning_rate: model.learning_rate,
            trees: model
                .trees
                .iter()
                .map(|t| {
                    let mut nodes = Vec::new();
                    flatten(&t.root, &mut nodes);
                    nodes
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelDocument> for GbrtModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        fn rebuild(nodes: &mut std::slice::Iter<'_, NodeRecord>) -> Result<TreeNode> {
            match nodes.next() {
                None => Err(Error::Model("truncated pre-order node list".into())),
                Some(NodeRecord::Leaf { value }) => Ok(TreeNode::Leaf { value: *value }),
                Some(NodeRecord::Split { feature, threshold }) => Ok(TreeNode::Split {
                    feature: *feature,
                    threshold: *threshold,
                    left: Box::new(rebuild(nodes)?),
                    right: Box::new(rebuild(nodes)?),
                }),
            }
        }
        let mut trees = Vec::with_capacity(doc.trees.len());
        for (i, nodes) in doc.trees.iter().enumerate() {
            let mut iter = nodes.iter();
            let root = rebuild(&mut iter)?;
            if iter.next().is_some() {
                return Err(Error::Model(format!("tree {i} has trailing nodes")));
            }
            trees.push(RegressionTree::new(root));
        }
        GbrtModel::new(doc.feature_arity, doc.base_prediction, doc.learning_rate, trees)
    }
}
