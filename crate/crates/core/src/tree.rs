// SPDX-License-Identifier: Apache-2.0

//! Tree models and the split/leaf mathematics shared by every trainer.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VflError};
use crate::messaging::PartyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "rf")]
    RandomForest,
    #[serde(rename = "gbdt")]
    Gbdt,
    #[serde(rename = "xgboost")]
    XgBoost,
}

impl ModelKind {
    pub fn is_boosting(self) -> bool {
        !matches!(self, ModelKind::RandomForest)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::RandomForest => "rf",
            ModelKind::Gbdt => "gbdt",
            ModelKind::XgBoost => "xgboost",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = VflError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rf" | "random_forest" | "randomforest" => Ok(ModelKind::RandomForest),
            "gbdt" => Ok(ModelKind::Gbdt),
            "xgboost" | "xgb" => Ok(ModelKind::XgBoost),
            other => Err(VflError::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
    Logistic,
}

impl FromStr for Loss {
    type Err = VflError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" | "mse" => Ok(Loss::Squared),
            "logistic" | "logloss" => Ok(Loss::Logistic),
            other => Err(VflError::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification { classes: u32 },
}

impl TaskKind {
    pub fn loss(self) -> Loss {
        match self {
            TaskKind::Regression => Loss::Squared,
            TaskKind::Classification { .. } => Loss::Logistic,
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, TaskKind::Classification { .. })
    }

    pub fn classes(self) -> usize {
        match self {
            TaskKind::Regression => 0,
            TaskKind::Classification { classes } => classes as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradPair {
    pub g: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub feature_subsample_ratio: f64,
    pub sample_subsample_ratio: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            tree_count: 10,
            max_depth: 3,
            learning_rate: 0.3,
            lambda: 0.1,
            gamma: 0.0,
            feature_subsample_ratio: 1.0,
            sample_subsample_ratio: 1.0,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(VflError::Config(msg));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        for (name, r) in [
            ("feature_subsample_ratio", self.feature_subsample_ratio),
            ("sample_subsample_ratio", self.sample_subsample_ratio),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("{name} must be in (0, 1], got {r}"));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Starting score of a boosted model: the label mean for regression, the
/// prior log-odds for binary classification. Forests start from zero.
pub fn initial_score(model: ModelKind, task: TaskKind, labels: &[f64]) -> f64 {
    if !model.is_boosting() || labels.is_empty() {
        return 0.0;
    }
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    match task.loss() {
        Loss::Squared => mean,
        Loss::Logistic => {
            let p = mean.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    }
}

pub fn grad_pairs(labels: &[f64], raw_predictions: &[f64], loss: Loss) -> Result<Vec<GradPair>> {
    if labels.len() != raw_predictions.len() {
        return Err(VflError::Numeric(format!(
            "{} labels but {} predictions",
            labels.len(),
            raw_predictions.len()
        )));
    }
    Ok(labels
        .iter()
        .zip(raw_predictions)
        .map(|(&y, &raw)| match loss {
            Loss::Squared => GradPair { g: raw - y, h: 1.0 },
            Loss::Logistic => {
                let p = sigmoid(raw);
                GradPair {
                    g: p - y,
                    h: p * (1.0 - p),
                }
            }
        })
        .collect())
}

fn positive_denominator(d: f64, what: &str) -> Result<f64> {
    if d > 0.0 {
        Ok(d)
    } else {
        Err(VflError::Numeric(format!("{what} denominator must be positive, got {d}")))
    }
}

/// Second-order optimal leaf weight `-G / (H + lambda)`.
pub fn xgb_leaf_weight(sum_g: f64, sum_h: f64, lambda: f64) -> Result<f64> {
    Ok(-sum_g / positive_denominator(sum_h + lambda, "leaf weight")?)
}

/// Second-order split gain, including the parent term and the `gamma` penalty.
pub fn xgb_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> Result<f64> {
    let dl = positive_denominator(hl + lambda, "left child")?;
    let dr = positive_denominator(hr + lambda, "right child")?;
    let dp = positive_denominator(hl + hr + lambda, "parent")?;
    let g = gl + gr;
    Ok(0.5 * (gl * gl / dl + gr * gr / dr - g * g / dp) - gamma)
}

/// First-order leaf weight with sample counts in the denominator.
pub fn gbdt_leaf_weight(sum_g: f64, count: f64, lambda: f64) -> Result<f64> {
    Ok(-sum_g / positive_denominator(count + lambda, "leaf weight")?)
}

/// First-order split score as printed for GBDT: no parent term. The parent
/// score `G^2 / (n + lambda)` is constant across a node's candidates.
pub fn gbdt_gain(sum_gl: f64, count_l: f64, sum_gr: f64, count_r: f64, lambda: f64) -> Result<f64> {
    let dl = positive_denominator(count_l + lambda, "left child")?;
    let dr = positive_denominator(count_r + lambda, "right child")?;
    Ok(sum_gl * sum_gl / dl + sum_gr * sum_gr / dr)
}

pub fn gini_impurity(class_counts: &[f64]) -> Result<f64> {
    let n: f64 = class_counts.iter().sum();
    if class_counts.iter().any(|&c| c < 0.0) || !(n > 0.0) {
        return Err(VflError::Numeric("gini impurity needs non-negative, non-zero counts".into()));
    }
    Ok(1.0 - class_counts.iter().map(|&c| (c / n) * (c / n)).sum::<f64>())
}

/// Weighted Gini decrease of splitting `left + right` into the two children.
pub fn rf_split_score(left_counts: &[f64], right_counts: &[f64]) -> Result<f64> {
    let nl: f64 = left_counts.iter().sum();
    let nr: f64 = right_counts.iter().sum();
    if !(nl > 0.0 && nr > 0.0) {
        return Err(VflError::Numeric("both children must be non-empty".into()));
    }
    let parent: Vec<f64> = left_counts.iter().zip(right_counts).map(|(a, b)| a + b).collect();
    let n = nl + nr;
    Ok(gini_impurity(&parent)? - nl / n * gini_impurity(left_counts)? - nr / n * gini_impurity(right_counts)?)
}

/// Decrease of the per-sample variance from moment sums `(count, sum, sum of squares)`.
pub fn variance_reduction(left: (f64, f64, f64), right: (f64, f64, f64)) -> Result<f64> {
    let (nl, sl, ql) = left;
    let (nr, sr, qr) = right;
    if !(nl > 0.0 && nr > 0.0) {
        return Err(VflError::Numeric("both children must be non-empty".into()));
    }
    let sse = |n: f64, s: f64, q: f64| q - s * s / n;
    let n = nl + nr;
    Ok((sse(n, sl + sr, ql + qr) - sse(nl, sl, ql) - sse(nr, sr, qr)) / n)
}

pub fn rf_split_score_regression(left_values: &[f64], right_values: &[f64]) -> Result<f64> {
    let moments = |v: &[f64]| {
        (
            v.len() as f64,
            v.iter().sum::<f64>(),
            v.iter().map(|x| x * x).sum::<f64>(),
        )
    };
    variance_reduction(moments(left_values), moments(right_values))
}

/// Most frequent class; ties go to the smallest class index.
pub fn majority_class(labels: &[f64], classes: usize) -> Result<usize> {
    if labels.is_empty() {
        return Err(VflError::Numeric("majority vote over an empty node".into()));
    }
    let mut counts = vec![0usize; classes.max(1)];
    for &y in labels {
        let c = y as usize;
        if c >= counts.len() {
            counts.resize(c + 1, 0);
        }
        counts[c] += 1;
    }
    let best = counts.iter().copied().max().unwrap();
    Ok(counts.iter().position(|&c| c == best).unwrap())
}

#[derive(Debug, Clone, Copy)]
pub enum LeafInput<'a> {
    Grads(&'a [GradPair]),
    Labels(&'a [f64]),
}

pub fn leaf_output(kind: ModelKind, task: TaskKind, input: LeafInput<'_>, lambda: f64) -> Result<f64> {
    match (kind, input) {
        (ModelKind::XgBoost, LeafInput::Grads(gp)) => {
            if gp.is_empty() {
                return Err(VflError::Numeric("leaf output of an empty node".into()));
            }
            let (g, h) = gp.iter().fold((0.0, 0.0), |(g, h), p| (g + p.g, h + p.h));
            xgb_leaf_weight(g, h, lambda)
        }
        (ModelKind::Gbdt, LeafInput::Grads(gp)) => {
            if gp.is_empty() {
                return Err(VflError::Numeric("leaf output of an empty node".into()));
            }
            let g: f64 = gp.iter().map(|p| p.g).sum();
            gbdt_leaf_weight(g, gp.len() as f64, lambda)
        }
        (ModelKind::RandomForest, LeafInput::Labels(labels)) => match task {
            TaskKind::Classification { classes } => Ok(majority_class(labels, classes as usize)? as f64),
            TaskKind::Regression => {
                if labels.is_empty() {
                    return Err(VflError::Numeric("leaf output of an empty node".into()));
                }
                Ok(labels.iter().sum::<f64>() / labels.len() as f64)
            }
        },
        (kind, _) => Err(VflError::Numeric(format!("wrong leaf input for {kind}"))),
    }
}

/// Opaque reference to a split rule; only `party` can resolve it.
///
/// Samples whose bucket is `<= bucket_ordinal` go left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SplitPointer {
    pub party: PartyId,
    pub feature_ordinal: u32,
    pub bucket_ordinal: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreeNode {
    Internal {
        split: SplitPointer,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn leaf(value: f64) -> Self {
        TreeNode::Leaf { value }
    }

    pub fn internal(split: SplitPointer, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Internal {
            split,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn internal_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.internal_count() + right.internal_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Leaf values in left-to-right order; this order indexes leaf indicators.
    pub fn leaf_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<f64>) {
        match self {
            TreeNode::Leaf { value } => out.push(*value),
            TreeNode::Internal { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    /// Every split pointer in pre-order.
    pub fn splits(&self) -> Vec<SplitPointer> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            if let TreeNode::Internal { split, left, right } = node {
                out.push(*split);
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Boosting: `base + eta * sum(leaves)`. Forests: mean (regression) or
    /// the fraction of trees voting for class 1 (classification).
    pub raw_score: f64,
    /// Sigmoid of the raw score for boosted classifiers, the majority class
    /// for forest classifiers, the raw score otherwise.
    pub output: f64,
}

impl Prediction {
    /// Score used for ranking metrics: a positive-class probability for
    /// classifiers, the prediction itself for regressors.
    pub fn score(&self, kind: ModelKind, task: TaskKind) -> f64 {
        match (kind, task) {
            (ModelKind::RandomForest, _) => self.raw_score,
            (_, TaskKind::Classification { .. }) => self.output,
            (_, TaskKind::Regression) => self.output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    pub model_kind: ModelKind,
    pub task: TaskKind,
    pub learning_rate: f64,
    pub base_prediction: f64,
    pub trees: Vec<TreeNode>,
}

impl Ensemble {
    pub fn new(model_kind: ModelKind, task: TaskKind, learning_rate: f64) -> Self {
        Ensemble {
            model_kind,
            task,
            learning_rate,
            base_prediction: 0.0,
            trees: Vec::new(),
        }
    }
}

pub fn ensemble_predict(ensemble: &Ensemble, leaf_values_per_tree: &[f64]) -> Result<Prediction> {
    if leaf_values_per_tree.len() != ensemble.trees.len() {
        return Err(VflError::Model(format!(
            "{} leaf values for {} trees",
            leaf_values_per_tree.len(),
            ensemble.trees.len()
        )));
    }
    match ensemble.model_kind {
        ModelKind::Gbdt | ModelKind::XgBoost => {
            let raw = ensemble.base_prediction + ensemble.learning_rate * leaf_values_per_tree.iter().sum::<f64>();
            let output = match ensemble.task {
                TaskKind::Classification { .. } => sigmoid(raw),
                TaskKind::Regression => raw,
            };
            Ok(Prediction { raw_score: raw, output })
        }
        ModelKind::RandomForest => {
            if leaf_values_per_tree.is_empty() {
                return Ok(Prediction {
                    raw_score: ensemble.base_prediction,
                    output: ensemble.base_prediction,
                });
            }
            let t = leaf_values_per_tree.len() as f64;
            match ensemble.task {
                TaskKind::Regression => {
                    let mean = leaf_values_per_tree.iter().sum::<f64>() / t;
                    Ok(Prediction { raw_score: mean, output: mean })
                }
                TaskKind::Classification { classes } => {
                    let vote = majority_class(leaf_values_per_tree, classes as usize)? as f64;
                    let positive = leaf_values_per_tree.iter().filter(|&&v| v == 1.0).count() as f64 / t;
                    Ok(Prediction {
                        raw_score: positive,
                        output: vote,
                    })
                }
            }
        }
    }
}

pub fn serialize_ensemble(ensemble: &Ensemble) -> String {
    serde_json::to_string_pretty(ensemble).expect("ensemble serializes")
}

pub fn deserialize_ensemble(document: &str) -> Result<Ensemble> {
    let ensemble: Ensemble = serde_json::from_str(document).map_err(|e| VflError::Model(e.to_string()))?;
    if !(ensemble.learning_rate > 0.0) {
        return Err(VflError::Model("learning_rate must be positive".into()));
    }
    Ok(ensemble)
}

/// A party's private mapping from split pointers to real split rules.
///
/// Kept by the owning party only and persisted as its own sidecar file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThresholdTable {
    pub party: PartyId,
    pub entries: BTreeMap<(u32, u16), ThresholdEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub feature_name: String,
    pub threshold: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdDoc {
    party: PartyId,
    entries: Vec<ThresholdRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdRow {
    feature_ordinal: u32,
    bucket_ordinal: u16,
    feature_name: String,
    threshold: f64,
}

impl ThresholdTable {
    pub fn new(party: PartyId) -> Self {
        ThresholdTable {
            party,
            entries: BTreeMap::new(),
        }
    }

    pub fn lookup(&self, feature_ordinal: u32, bucket_ordinal: u16) -> Option<&ThresholdEntry> {
        self.entries.get(&(feature_ordinal, bucket_ordinal))
    }

    pub fn to_json(&self) -> String {
        let doc = ThresholdDoc {
            party: self.party,
            entries: self
                .entries
                .iter()
                .map(|(&(f, b), e)| ThresholdRow {
                    feature_ordinal: f,
                    bucket_ordinal: b,
                    feature_name: e.feature_name.clone(),
                    threshold: e.threshold,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("threshold table serializes")
    }

    pub fn from_json(document: &str) -> Result<Self> {
        let doc: ThresholdDoc = serde_json::from_str(document).map_err(|e| VflError::Model(e.to_string()))?;
        Ok(ThresholdTable {
            party: doc.party,
            entries: doc
                .entries
                .into_iter()
                .map(|r| {
                    (
                        (r.feature_ordinal, r.bucket_ordinal),
                        ThresholdEntry {
                            feature_name: r.feature_name,
                            threshold: r.threshold,
                        },
                    )
                })
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn gradient_examples() {
        let sq = grad_pairs(&[1.0], &[0.5], Loss::Squared).unwrap();
        assert_eq!(sq[0], GradPair { g: -0.5, h: 1.0 });
        let lg = grad_pairs(&[1.0], &[0.0], Loss::Logistic).unwrap();
        assert_eq!(lg[0], GradPair { g: -0.5, h: 0.25 });
        let zero = grad_pairs(&[2.5], &[2.5], Loss::Squared).unwrap();
        assert_eq!(zero[0], GradPair { g: 0.0, h: 1.0 });
        assert!(grad_pairs(&[1.0, 2.0], &[0.0], Loss::Squared).is_err());
        assert!("hinge".parse::<Loss>().is_err());
    }

    #[test]
    fn leaf_weight_examples() {
        assert_eq!(xgb_leaf_weight(2.0, 3.0, 1.0).unwrap(), -0.5);
        assert_eq!(xgb_leaf_weight(0.0, 7.0, 0.1).unwrap(), 0.0);
        assert_eq!(xgb_leaf_weight(-4.0, 0.0, 2.0).unwrap(), 2.0);
        assert!(xgb_leaf_weight(1.0, 0.0, 0.0).is_err());

        assert_eq!(gbdt_leaf_weight(4.0, 3.0, 1.0).unwrap(), -1.0);
        assert_eq!(gbdt_leaf_weight(0.0, 5.0, 0.1).unwrap(), 0.0);
        assert_eq!(gbdt_leaf_weight(-3.0, 2.0, 1.0).unwrap(), 1.0);
        assert!(gbdt_leaf_weight(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn gain_examples() {
        assert_eq!(xgb_gain(0.0, 0.0, 0.0, 0.0, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(xgb_gain(2.0, 1.0, -2.0, 1.0, 1.0, 0.0).unwrap(), 2.0);
        assert_eq!(xgb_gain(2.0, 1.0, -2.0, 1.0, 1.0, 0.5).unwrap(), 1.5);
        assert!(xgb_gain(1.0, 0.0, 1.0, 1.0, 0.0, 0.0).is_err());

        assert_eq!(gbdt_gain(3.0, 2.0, -1.0, 3.0, 1.0).unwrap(), 3.25);
        assert_eq!(gbdt_gain(0.0, 4.0, 0.0, 9.0, 0.3).unwrap(), 0.0);
        assert_eq!(gbdt_gain(2.0, 1.0, 2.0, 1.0, 0.0).unwrap(), 8.0);
        assert!(gbdt_gain(1.0, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini_impurity(&[5.0, 5.0]).unwrap(), 0.5);
        assert_eq!(gini_impurity(&[10.0, 0.0]).unwrap(), 0.0);
        assert!(close(gini_impurity(&[1.0, 2.0, 3.0]).unwrap(), 11.0 / 18.0));
        assert!(gini_impurity(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn rf_score_examples() {
        assert_eq!(rf_split_score(&[5.0, 0.0], &[0.0, 5.0]).unwrap(), 0.5);
        assert!(rf_split_score(&[2.0, 3.0], &[4.0, 6.0]).unwrap().abs() < 1e-15);
        assert!(rf_split_score(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        // direct variance: parent {0,0,10,10} has variance 25, children 0
        assert_eq!(rf_split_score_regression(&[0.0, 0.0], &[10.0, 10.0]).unwrap(), 25.0);
        assert!(rf_split_score_regression(&[], &[1.0]).is_err());
    }

    #[test]
    fn leaf_output_examples() {
        let cls = TaskKind::Classification { classes: 2 };
        let rf = ModelKind::RandomForest;
        assert_eq!(leaf_output(rf, cls, LeafInput::Labels(&[1.0, 1.0, 0.0]), 0.0).unwrap(), 1.0);
        assert_eq!(leaf_output(rf, cls, LeafInput::Labels(&[0.0, 1.0]), 0.0).unwrap(), 0.0);
        assert_eq!(
            leaf_output(rf, TaskKind::Regression, LeafInput::Labels(&[1.0, 2.0, 6.0]), 0.0).unwrap(),
            3.0
        );
        let grads = [GradPair { g: 0.5, h: 1.0 }, GradPair { g: 1.5, h: 2.0 }];
        assert_eq!(
            leaf_output(ModelKind::XgBoost, cls, LeafInput::Grads(&grads), 1.0).unwrap(),
            -0.5
        );
        assert!(leaf_output(rf, cls, LeafInput::Labels(&[]), 0.0).is_err());
        assert!(leaf_output(ModelKind::XgBoost, cls, LeafInput::Grads(&[]), 1.0).is_err());
    }

    #[test]
    fn ensemble_predict_examples() {
        let mut boost = Ensemble::new(ModelKind::XgBoost, TaskKind::Regression, 0.1);
        boost.trees = vec![TreeNode::leaf(1.0), TreeNode::leaf(0.5)];
        let p = ensemble_predict(&boost, &[1.0, 0.5]).unwrap();
        assert!(close(p.raw_score, 0.15));

        let mut rf = Ensemble::new(ModelKind::RandomForest, TaskKind::Regression, 1.0);
        rf.trees = vec![TreeNode::leaf(2.0), TreeNode::leaf(4.0)];
        assert_eq!(ensemble_predict(&rf, &[2.0, 4.0]).unwrap().output, 3.0);

        let mut rfc = Ensemble::new(ModelKind::RandomForest, TaskKind::Classification { classes: 2 }, 1.0);
        rfc.trees = vec![TreeNode::leaf(1.0); 3];
        let p = ensemble_predict(&rfc, &[1.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.output, 1.0);
        assert!(close(p.raw_score, 2.0 / 3.0));

        assert!(ensemble_predict(&rf, &[1.0]).is_err());
    }

    fn sample_tree() -> TreeNode {
        let sp = |p: u16, f: u32, b: u16| SplitPointer {
            party: PartyId(p),
            feature_ordinal: f,
            bucket_ordinal: b,
        };
        TreeNode::internal(
            sp(1, 0, 3),
            TreeNode::internal(sp(1, 2, 0), TreeNode::leaf(-0.25), TreeNode::leaf(0.125)),
            TreeNode::internal(sp(0, 1, 7), TreeNode::leaf(1.0 / 3.0), TreeNode::leaf(2.5e-17)),
        )
    }

    #[test]
    fn tree_shape_helpers() {
        let t = sample_tree();
        assert_eq!(t.leaf_count(), 4);
        assert_eq!(t.internal_count(), 3);
        assert_eq!(t.depth(), 2);
        assert_eq!(t.leaf_values(), vec![-0.25, 0.125, 1.0 / 3.0, 2.5e-17]);
        assert_eq!(t.splits().iter().map(|s| s.party.0).collect::<Vec<_>>(), vec![1, 1, 0]);
    }

    #[test]
    fn model_document_round_trip() {
        let mut e = Ensemble::new(ModelKind::Gbdt, TaskKind::Classification { classes: 2 }, 0.49);
        e.trees = vec![sample_tree(), TreeNode::leaf(0.75)];
        let doc = serialize_ensemble(&e);
        assert_eq!(deserialize_ensemble(&doc).unwrap(), e);

        let mut single = Ensemble::new(ModelKind::XgBoost, TaskKind::Regression, 0.19);
        single.trees = vec![TreeNode::leaf(3.0)];
        let doc = serialize_ensemble(&single);
        assert_eq!(doc.matches("\"kind\": \"leaf\"").count(), 1);

        let tampered = serialize_ensemble(&e).replacen("\"internal\"", "\"branch\"", 1);
        assert!(matches!(deserialize_ensemble(&tampered), Err(VflError::Model(_))));
        assert!(deserialize_ensemble("{not json").is_err());
    }

    #[test]
    fn threshold_sidecar_round_trip() {
        let mut t = ThresholdTable::new(PartyId(1));
        t.entries.insert(
            (0, 3),
            ThresholdEntry {
                feature_name: "age".into(),
                threshold: 45.0,
            },
        );
        let back = ThresholdTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.lookup(0, 3).unwrap().threshold, 45.0);
    }

    proptest! {
        #[test]
        fn xgb_gain_is_symmetric(gl in -50f64..50., hl in 0f64..50., gr in -50f64..50., hr in 0f64..50., lambda in 0.01f64..5., gamma in 0f64..2.) {
            let a = xgb_gain(gl, hl, gr, hr, lambda, gamma).unwrap();
            let b = xgb_gain(gr, hr, gl, hl, lambda, gamma).unwrap();
            prop_assert!(close(a, b));
        }

        #[test]
        fn xgb_weight_scale_invariant(g in -50f64..50., h in 0f64..50., lambda in 0.01f64..5., k in 0.1f64..10.) {
            let w = xgb_leaf_weight(g, h, lambda).unwrap();
            prop_assert_eq!(w, -g / (h + lambda));
            let scaled = xgb_leaf_weight(k * g, k * (h + lambda) - lambda, lambda).unwrap();
            prop_assert!((w - scaled).abs() <= 1e-9 * (1.0 + w.abs()));
        }

        /// The parent term is constant across candidates, so subtracting it
        /// never changes which split wins.
        #[test]
        fn gbdt_parent_term_keeps_argmax(grads in prop::collection::vec(-5f64..5., 2..30), lambda in 0.01f64..3.) {
            let n = grads.len();
            let total: f64 = grads.iter().sum();
            let parent = total * total / (n as f64 + lambda);
            let mut best_raw = (f64::NEG_INFINITY, 0);
            let mut best_adj = (f64::NEG_INFINITY, 0);
            for cut in 1..n {
                let gl: f64 = grads[..cut].iter().sum();
                let gr: f64 = grads[cut..].iter().sum();
                let raw = gbdt_gain(gl, cut as f64, gr, (n - cut) as f64, lambda).unwrap();
                if raw > best_raw.0 { best_raw = (raw, cut); }
                if raw - parent > best_adj.0 { best_adj = (raw - parent, cut); }
            }
            prop_assert_eq!(best_raw.1, best_adj.1);
        }

        #[test]
        fn rf_score_non_negative(l in prop::collection::vec(0f64..20., 3), r in prop::collection::vec(0f64..20., 3)) {
            prop_assume!(l.iter().sum::<f64>() > 0.0 && r.iter().sum::<f64>() > 0.0);
            prop_assert!(rf_split_score(&l, &r).unwrap() >= -1e-12);
            let scaled: Vec<f64> = l.iter().map(|x| x * 3.0).collect();
            prop_assert!(rf_split_score(&l, &scaled).unwrap().abs() < 1e-12);
        }
    }
}
