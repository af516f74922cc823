//! Squared-error gradient boosting over depth-limited regression trees.
//!
//! Trees are grown level by level with exact greedy splits: every feature is
//! pre-sorted once, and each level scans those orders, routing samples to the
//! accumulators of their current node. A split at threshold `t` sends
//! `x <= t` left; thresholds are midpoints between consecutive distinct values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

/// Row-major feature matrix with one target per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    width: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn push(&mut self, features: &[f64], target: f64) -> Result<()> {
        if features.len() != self.width {
            return Err(Error::FeatureWidth {
                expected: self.width,
                found: features.len(),
            });
        }
        self.x.extend_from_slice(features);
        self.y.push(target);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.width..(i + 1) * self.width]
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetTransform {
    Identity,
    /// Fit `ln(1 + y)`, predict `exp(z) - 1`.
    Log1p,
}

impl TargetTransform {
    fn forward(self, y: f64) -> f64 {
        match self {
            Self::Identity => y,
            Self::Log1p => y.max(0.0).ln_1p(),
        }
    }

    fn inverse(self, z: f64) -> f64 {
        match self {
            Self::Identity => z,
            Self::Log1p => z.exp_m1(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub target: TargetTransform,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 6,
            min_samples_leaf: 20,
            target: TargetTransform::Identity,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Internal nodes are `[feature, threshold, left, right]`, leaves a bare value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Leaf(f64),
    Split(u32, f64, u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split(f, t, l, r) => {
                    i = if x[f as usize] <= t {
                        l as usize
                    } else {
                        r as usize
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split(_, _, l, r) => {
                    1 + walk(nodes, l as usize).max(walk(nodes, r as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// The first split, if the root is not a leaf.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first()? {
            TreeNode::Split(f, t, _, _) => Some((*f as usize, *t)),
            TreeNode::Leaf(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub version: u32,
    pub width: usize,
    pub base: f64,
    pub learning_rate: f64,
    pub target: TargetTransform,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub trees: Vec<RegressionTree>,
}

impl GbdtModel {
    /// Prediction in the transformed target space.
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.width {
            return Err(Error::FeatureWidth {
                expected: self.width,
                found: x.len(),
            });
        }
        Ok(self.target.inverse(self.predict_raw(x)))
    }

    pub fn rounds(&self) -> usize {
        self.trees.len()
    }

    /// The model made of the first `rounds` trees.
    pub fn truncated(&self, rounds: usize) -> Self {
        Self {
            trees: self.trees[..rounds.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }

    /// Fits `rounds` more trees to the residuals of this model on `data`.
    pub fn boost(&mut self, data: &Dataset, rounds: usize) -> Result<()> {
        if data.width() != self.width {
            return Err(Error::FeatureWidth {
                expected: self.width,
                found: data.width(),
            });
        }
        if data.is_empty() || rounds == 0 {
            return Ok(());
        }
        let orders = presort(data);
        let mut residual: Vec<f64> = (0..data.len())
            .map(|i| self.target.forward(data.y[i]) - self.predict_raw(data.row(i)))
            .collect();
        for _ in 0..rounds {
            let (tree, leaf_of) = fit_tree(
                data,
                &orders,
                &residual,
                self.max_depth,
                self.min_samples_leaf,
            );
            for (i, r) in residual.iter_mut().enumerate() {
                if let TreeNode::Leaf(v) = tree.nodes[leaf_of[i] as usize] {
                    *r -= self.learning_rate * v;
                }
            }
            self.trees.push(tree);
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model version {}",
                m.version
            )));
        }
        Ok(m)
    }
}

fn presort(data: &Dataset) -> Vec<Vec<u32>> {
    (0..data.width())
        .map(|f| {
            let mut idx: Vec<u32> = (0..data.len() as u32).collect();
            idx.sort_by(|&a, &b| {
                data.row(a as usize)[f]
                    .total_cmp(&data.row(b as usize)[f])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree on `residual`; also returns the leaf each sample lands in.
fn fit_tree(
    data: &Dataset,
    orders: &[Vec<u32>],
    residual: &[f64],
    max_depth: usize,
    min_samples_leaf: usize,
) -> (RegressionTree, Vec<u32>) {
    let n = data.len();
    let min_leaf = min_samples_leaf.max(1);
    let mut nodes = vec![TreeNode::Leaf(0.0)];
    let mut node_of = vec![0u32; n];
    let mut frontier = vec![0usize];

    for _ in 0..max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot_of = vec![usize::MAX; nodes.len()];
        for (s, &node) in frontier.iter().enumerate() {
            slot_of[node] = s;
        }
        let mut sum = vec![0.0; frontier.len()];
        let mut count = vec![0usize; frontier.len()];
        for i in 0..n {
            let s = slot_of[node_of[i] as usize];
            if s != usize::MAX {
                sum[s] += residual[i];
                count[s] += 1;
            }
        }
        let mut best: Vec<Option<Best>> = vec![None; frontier.len()];
        let mut left_sum = vec![0.0; frontier.len()];
        let mut left_count = vec![0usize; frontier.len()];
        let mut last = vec![f64::NAN; frontier.len()];
        for (f, order) in orders.iter().enumerate() {
            left_sum.fill(0.0);
            left_count.fill(0);
            last.fill(f64::NAN);
            for &i in order {
                let i = i as usize;
                let s = slot_of[node_of[i] as usize];
                if s == usize::MAX {
                    continue;
                }
                let v = data.row(i)[f];
                let (lc, rc) = (left_count[s], count[s] - left_count[s]);
                if lc >= min_leaf && rc >= min_leaf && v > last[s] {
                    let ls = left_sum[s];
                    let rs = sum[s] - ls;
                    let gain = ls * ls / lc as f64 + rs * rs / rc as f64
                        - sum[s] * sum[s] / count[s] as f64;
                    if gain > best[s].map_or(0.0, |b| b.gain) {
                        let mid = 0.5 * (last[s] + v);
                        let threshold = if mid < v { mid } else { last[s] };
                        best[s] = Some(Best {
                            gain,
                            feature: f,
                            threshold,
                        });
                    }
                }
                left_sum[s] += residual[i];
                left_count[s] += 1;
                last[s] = v;
            }
        }
        let mut next = Vec::new();
        let mut children = vec![(0u32, 0u32); frontier.len()];
        for (s, &node) in frontier.iter().enumerate() {
            if let Some(b) = best[s] {
                let l = nodes.len() as u32;
                nodes.push(TreeNode::Leaf(0.0));
                nodes.push(TreeNode::Leaf(0.0));
                nodes[node] = TreeNode::Split(b.feature as u32, b.threshold, l, l + 1);
                children[s] = (l, l + 1);
                next.push(l as usize);
                next.push(l as usize + 1);
            }
        }
        for i in 0..n {
            let s = slot_of[node_of[i] as usize];
            if s == usize::MAX {
                continue;
            }
            if let Some(b) = best[s] {
                node_of[i] = if data.row(i)[b.feature] <= b.threshold {
                    children[s].0
                } else {
                    children[s].1
                };
            }
        }
        frontier = next;
    }

    let mut sum = vec![0.0; nodes.len()];
    let mut count = vec![0usize; nodes.len()];
    for i in 0..n {
        sum[node_of[i] as usize] += residual[i];
        count[node_of[i] as usize] += 1;
    }
    for (k, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf(v) = node {
            *v = if count[k] > 0 {
                sum[k] / count[k] as f64
            } else {
                0.0
            };
        }
    }
    (RegressionTree { nodes }, node_of)
}

/// Trains a boosted ensemble. The base prediction is the mean transformed target.
pub fn train_gbdt(data: &Dataset, config: &GbdtConfig) -> Result<GbdtModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let z: Vec<f64> = data.y.iter().map(|&y| config.target.forward(y)).collect();
    let constant = z.iter().all(|&v| v == z[0]);
    let base = if constant {
        z[0]
    } else {
        z.iter().sum::<f64>() / z.len() as f64
    };
    let mut model = GbdtModel {
        version: MODEL_VERSION,
        width: data.width(),
        base,
        learning_rate: config.learning_rate,
        target: config.target,
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        trees: Vec::new(),
    };
    model.boost(data, config.rounds)?;
    Ok(model)
}

/// Duration prediction in seconds, never below one second.
pub fn predict_gbdt(model: &GbdtModel, features: &[f64]) -> Result<f64> {
    let v = model.predict(features)?;
    Ok(if v.is_nan() { 1.0 } else { v.max(1.0) })
}
