//! Deterministic variance-reduction regression trees, one per slice.
//!
//! Every node keeps its member set so callers can read group membership off
//! the tree; nothing here predicts unseen instances.
//!
//! Split search sorts the node's members on each feature and sweeps the
//! candidate thresholds (midpoints between consecutive distinct values) with
//! prefix sums of mean-centered labels. Reductions are compared with a relative
//! tolerance of [`SPLIT_TIE_EPS`] times the node's mean squared label: a later
//! candidate only replaces the incumbent if it is better by more than that, so
//! numerically tied splits resolve to the lowest feature, then lowest threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::{LabeledInstance, Polarity, SliceTrainingSet};

/// Relative slack used when comparing variance reductions.
pub const SPLIT_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("training set has {0} instances; at least 2 are required")]
    TooFewInstances(usize),
    #[error("invalid tree parameters: {0}")]
    InvalidParams(String),
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("instance {index} has {found} features, expected {expected}")]
    FeatureMismatch {
        index: usize,
        found: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Smallest allowed node size; never below 2.
    pub min_node_records: usize,
    pub max_depth: usize,
    /// A split must reduce label variance by strictly more than this.
    pub min_variance_reduction: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            min_node_records: 2,
            max_depth: 25,
            min_variance_reduction: 0.0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.min_node_records < 2 {
            return Err(TreeError::InvalidParams(format!(
                "min_node_records must be >= 2, got {}",
                self.min_node_records
            )));
        }
        if !(self.min_variance_reduction >= 0.0) || !self.min_variance_reduction.is_finite() {
            return Err(TreeError::InvalidParams(format!(
                "min_variance_reduction must be finite and >= 0, got {}",
                self.min_variance_reduction
            )));
        }
        Ok(())
    }
}

/// Left child takes members with `features[feature] <= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// Zero-based feature position.
    pub feature: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub variance_reduction: f64,
    pub left_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub node_id: usize,
    pub depth: usize,
    /// Indices into the slice's instance list, ascending.
    pub members: Vec<usize>,
    /// Population variance of member labels.
    pub label_variance: f64,
    pub split: Option<Split>,
    pub children: Option<(usize, usize)>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub slice_index: usize,
    /// Pre-order; `nodes[i].node_id == i`.
    pub nodes: Vec<TreeNode>,
    pub params: TreeParams,
    keys: Vec<(String, Polarity)>,
}

impl Tree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, node_id: usize) -> Result<&TreeNode, TreeError> {
        self.nodes.get(node_id).ok_or(TreeError::UnknownNode(node_id))
    }

    /// (symbol, polarity) of training instance `index`.
    pub fn key(&self, index: usize) -> (&str, Polarity) {
        let (s, p) = &self.keys[index];
        (s.as_str(), *p)
    }

    pub fn instance_count(&self) -> usize {
        self.keys.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }
}

/// Members of a node as (symbol, polarity), in training-set order.
pub fn node_members(tree: &Tree, node_id: usize) -> Result<Vec<(String, Polarity)>, TreeError> {
    let node = tree.node(node_id)?;
    Ok(node
        .members
        .iter()
        .map(|&i| {
            let (s, p) = tree.key(i);
            (s.to_string(), p)
        })
        .collect())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Two-pass population variance of the member labels.
pub fn label_variance(instances: &[LabeledInstance], members: &[usize]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let mu = mean(members.iter().map(|&i| instances[i].label));
    mean(members.iter().map(|&i| {
        let d = instances[i].label - mu;
        d * d
    }))
}

/// Threshold between two consecutive distinct sorted values, always `< hi`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = (lo + hi) * 0.5;
    if m < hi {
        m
    } else {
        lo
    }
}

/// Best variance-reducing split of `members`, or `None` if no candidate
/// leaves `min_node_records` on both sides and improves on the node by more
/// than `min_variance_reduction`.
pub fn best_split(
    instances: &[LabeledInstance],
    members: &[usize],
    params: &TreeParams,
) -> Option<SplitCandidate> {
    let n = members.len();
    let min_side = params.min_node_records.max(1);
    if n < 2 || n < 2 * min_side {
        return None;
    }
    let width = instances[members[0]].features.len();

    let mu = mean(members.iter().map(|&i| instances[i].label));
    let scale = mean(members.iter().map(|&i| instances[i].label * instances[i].label));
    let tol = SPLIT_TIE_EPS * scale;

    let centered: Vec<f64> = members.iter().map(|&i| instances[i].label - mu).collect();
    let total_s1: f64 = centered.iter().sum();
    let total_s2: f64 = centered.iter().map(|d| d * d).sum();
    let nf = n as f64;
    let parent_sse = total_s2 - total_s1 * total_s1 / nf;

    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<SplitCandidate> = None;

    for feature in 0..width {
        let value = |pos: usize| instances[members[pos]].features[feature];
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));

        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n - 1 {
            let d = centered[order[i]];
            s1 += d;
            s2 += d * d;
            let left = i + 1;
            let right = n - left;
            let (lo, hi) = (value(order[i]), value(order[i + 1]));
            if lo >= hi || left < min_side || right < min_side {
                continue;
            }
            let (ln, rn) = (left as f64, right as f64);
            let left_sse = s2 - s1 * s1 / ln;
            let r1 = total_s1 - s1;
            let right_sse = (total_s2 - s2) - r1 * r1 / rn;
            let reduction = (parent_sse - left_sse - right_sse) / nf;

            if reduction <= params.min_variance_reduction + tol {
                continue;
            }
            if best.is_some_and(|b| reduction <= b.variance_reduction + tol) {
                continue;
            }
            best = Some(SplitCandidate {
                feature,
                threshold: midpoint(lo, hi),
                variance_reduction: reduction,
                left_count: left,
            });
        }
    }
    best
}

/// Grows one tree greedily from the root. Node ids follow pre-order.
pub fn train_tree(training_set: &SliceTrainingSet, params: &TreeParams) -> Result<Tree, TreeError> {
    params.validate()?;
    let instances = &training_set.instances;
    if instances.len() < 2 {
        return Err(TreeError::TooFewInstances(instances.len()));
    }
    let expected = instances[0].features.len();
    if let Some((index, inst)) = instances
        .iter()
        .enumerate()
        .find(|(_, inst)| inst.features.len() != expected)
    {
        return Err(TreeError::FeatureMismatch {
            index,
            found: inst.features.len(),
            expected,
        });
    }

    let mut nodes = Vec::new();
    grow(instances, (0..instances.len()).collect(), 0, params, &mut nodes);

    Ok(Tree {
        slice_index: training_set.slice_index,
        nodes,
        params: *params,
        keys: instances
            .iter()
            .map(|inst| (inst.symbol.clone(), inst.polarity))
            .collect(),
    })
}

fn grow(
    instances: &[LabeledInstance],
    members: Vec<usize>,
    depth: usize,
    params: &TreeParams,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let node_id = nodes.len();
    let variance = label_variance(instances, &members);
    let candidate = if depth < params.max_depth && members.len() >= 2 * params.min_node_records {
        best_split(instances, &members, params)
    } else {
        None
    };

    let split_members = candidate.map(|c| {
        let (left, right): (Vec<usize>, Vec<usize>) = members
            .iter()
            .partition(|&&i| instances[i].features[c.feature] <= c.threshold);
        (c, left, right)
    });

    nodes.push(TreeNode {
        node_id,
        depth,
        members,
        label_variance: variance,
        split: None,
        children: None,
    });

    if let Some((c, left, right)) = split_members {
        debug_assert_eq!(left.len(), c.left_count);
        let left_id = grow(instances, left, depth + 1, params, nodes);
        let right_id = grow(instances, right, depth + 1, params, nodes);
        let node = &mut nodes[node_id];
        node.split = Some(Split {
            feature: c.feature,
            threshold: c.threshold,
        });
        node.children = Some((left_id, right_id));
    }
    node_id
}
