//! Numeric graph encoding of reasoning trees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::ReasoningTree;

pub const NUM_NODE_FEATURES: usize = 5;
/// Signed edge codes one-hot encoded over 4 functions x 2 directions.
pub const NUM_EDGE_CATEGORIES: usize = 8;

/// Column holding the cumulative token count; log1p-transformed before scaling.
pub const TOKEN_COLUMN: usize = 2;

pub type NodeFeatures = [f64; NUM_NODE_FEATURES];

/// Classifier input built from one tree.
///
/// Node rows follow node ids. Tree edge `k` (in canonical order) occupies
/// directed entries `2k` (parent to child, positive code) and `2k + 1`
/// (child to parent, negated code).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub node_features: Vec<NodeFeatures>,
    pub edge_index: Vec<[usize; 2]>,
    pub edge_codes: Vec<i8>,
}

impl GraphSample {
    pub fn num_nodes(&self) -> usize {
        self.node_features.len()
    }

    pub fn num_tree_edges(&self) -> usize {
        self.edge_index.len() / 2
    }

    /// Checks edge bounds, code range and forward/reverse pairing.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if n == 0 {
            return Err(Error::EmptyInput("graph nodes"));
        }
        if self.edge_index.len() != self.edge_codes.len() || self.edge_index.len() % 2 != 0 {
            return Err(Error::Integrity("edge list and codes must pair up".into()));
        }
        for (pair, codes) in self.edge_index.chunks(2).zip(self.edge_codes.chunks(2)) {
            let ([a, b], [c, d]) = (pair[0], pair[1]);
            if a >= n || b >= n {
                return Err(Error::Integrity(format!("edge {a}->{b} out of range")));
            }
            if (c, d) != (b, a) || codes[0] != -codes[1] || !(1..=4).contains(&codes[0]) {
                return Err(Error::Integrity("edges must come as forward/reverse twins".into()));
            }
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(Error::Integrity(format!("label {l} is not binary")));
            }
        }
        Ok(())
    }
}

/// One-hot slot of a signed edge code: 1..=4 map to 0..=3, -1..=-4 to 4..=7.
pub fn edge_category(code: i8) -> usize {
    debug_assert!(code != 0 && code.abs() <= 4);
    if code > 0 {
        (code - 1) as usize
    } else {
        (3 - code) as usize
    }
}

/// Computes raw node features and the bidirectional edge list for `tree`.
///
/// `thought_tokens[i]` is the token count of thought `i`. Per node the
/// features are: thought index, step, cumulative tokens through the node's
/// thought (0 for the virtual root), child count, and the number of nodes
/// created at the same step up to and including this one.
pub fn featurize(
    tree: &ReasoningTree,
    thought_tokens: &[usize],
    sample_id: impl Into<String>,
    label: Option<u8>,
) -> Result<GraphSample> {
    let mut cumulative = Vec::with_capacity(thought_tokens.len());
    let mut total = 0usize;
    for &t in thought_tokens {
        total += t;
        cumulative.push(total);
    }

    let child_counts = tree.child_counts();
    let mut per_step: Vec<usize> = vec![0; tree.max_step() + 1];
    let mut node_features = Vec::with_capacity(tree.len());
    for (i, node) in tree.nodes.iter().enumerate() {
        debug_assert_eq!(node.id, i);
        let tokens = if node.id == tree.root {
            0
        } else {
            *cumulative.get(node.thought).ok_or_else(|| {
                Error::Integrity(format!(
                    "node {} references thought {} but only {} thoughts are known",
                    node.id,
                    node.thought,
                    thought_tokens.len()
                ))
            })?
        };
        per_step[node.step] += 1;
        node_features.push([
            node.thought as f64,
            node.step as f64,
            tokens as f64,
            child_counts[i] as f64,
            per_step[node.step] as f64,
        ]);
    }

    let mut edges = tree.edges.clone();
    edges.sort_by_key(|e| (e.child, e.parent));
    let mut edge_index = Vec::with_capacity(edges.len() * 2);
    let mut edge_codes = Vec::with_capacity(edges.len() * 2);
    for e in &edges {
        let code = e.function.code();
        edge_index.push([e.parent, e.child]);
        edge_codes.push(code);
        edge_index.push([e.child, e.parent]);
        edge_codes.push(-code);
    }
    Ok(GraphSample {
        sample_id: sample_id.into(),
        label,
        node_features,
        edge_index,
        edge_codes,
    })
}

/// Per-column affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: NodeFeatures,
    pub std: NodeFeatures,
}

fn pre_transform(mut row: NodeFeatures) -> NodeFeatures {
    row[TOKEN_COLUMN] = row[TOKEN_COLUMN].ln_1p();
    row
}

impl NormStats {
    /// Mean and population standard deviation over all nodes of all samples.
    /// Zero-variance columns get std 1.
    pub fn fit(samples: &[GraphSample]) -> Result<Self> {
        let rows: Vec<NodeFeatures> = samples
            .iter()
            .flat_map(|s| s.node_features.iter().copied().map(pre_transform))
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyInput("samples for normalization"));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; NUM_NODE_FEATURES];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; NUM_NODE_FEATURES];
        for r in &rows {
            for c in 0..NUM_NODE_FEATURES {
                var[c] += (r[c] - mean[c]).powi(2);
            }
        }
        let mut std = [1.0; NUM_NODE_FEATURES];
        for c in 0..NUM_NODE_FEATURES {
            let s = (var[c] / n).sqrt();
            if s > 1e-12 {
                std[c] = s;
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply_row(&self, row: &NodeFeatures) -> NodeFeatures {
        let t = pre_transform(*row);
        std::array::from_fn(|c| (t[c] - self.mean[c]) / self.std[c])
    }

    pub fn invert_row(&self, row: &NodeFeatures) -> NodeFeatures {
        let mut x: NodeFeatures = std::array::from_fn(|c| row[c] * self.std[c] + self.mean[c]);
        x[TOKEN_COLUMN] = x[TOKEN_COLUMN].exp_m1();
        x
    }

    pub fn apply(&self, sample: &GraphSample) -> GraphSample {
        GraphSample {
            node_features: sample.node_features.iter().map(|r| self.apply_row(r)).collect(),
            ..sample.clone()
        }
    }

    pub fn invert(&self, sample: &GraphSample) -> GraphSample {
        GraphSample {
            node_features: sample.node_features.iter().map(|r| self.invert_row(r)).collect(),
            ..sample.clone()
        }
    }
}

/// Standardizes a batch, fitting stats on it when none are supplied.
pub fn normalize(batch: &[GraphSample], stats: Option<&NormStats>) -> Result<(Vec<GraphSample>, NormStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::fit(batch)?,
    };
    Ok((batch.iter().map(|s| stats.apply(s)).collect(), stats))
}
