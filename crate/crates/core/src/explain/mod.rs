//! Edge-importance explanations, structural error-pattern detectors, and a
//! planted-pattern tree generator used to test both.
//!
//! The explainer learns one mask logit per tree edge (shared by its forward
//! and reverse directed copies). Masks scale the attention-weighted messages
//! and are optimized to keep the model's prediction for the target class
//! while staying small and close to binary.

mod patterns;
mod planted;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use patterns::{detect_patterns, Detection, ErrorPattern, PatternThresholds};
pub use planted::{generate_planted_dataset, generate_planted_tree, PatternMix, PlantedTree};

use crate::error::{Error, Result};
use crate::features::GraphSample;
use crate::gnn::{backward_pass, bce_with_logit, forward_pass, sigmoid, PreparedGraph, TreeClassifier};
use crate::tree::ReasoningTree;

/// Update rule for the mask logits.
///
/// Plain gradient descent keeps the relative size of each edge's gradient,
/// which is what the final ranking is read from. Adam rescales every
/// coordinate to a similar step, so edges with tiny but consistent gradients
/// end up level with the ones that matter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskOptimizer {
    #[default]
    GradientDescent,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    pub steps: usize,
    pub optimizer: MaskOptimizer,
    pub learning_rate: f64,
    /// Weight of the summed mask size penalty.
    pub size_weight: f64,
    /// Weight of the mean element-wise binary entropy of the mask.
    pub entropy_weight: f64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            optimizer: MaskOptimizer::GradientDescent,
            learning_rate: 0.01,
            size_weight: 0.005,
            entropy_weight: 1.0,
        }
    }
}

/// Per-tree-edge importance, in canonical edge order (edge `k` enters node `k + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeImportance {
    /// Min-max normalized mask; equals `raw` when the mask is constant.
    pub weights: Vec<f64>,
    /// Sigmoid mask values after optimization.
    pub raw: Vec<f64>,
}

impl EdgeImportance {
    /// Edge indices sorted by decreasing weight, ties by lower index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.weights.len()).collect();
        idx.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        idx
    }

    /// The `ceil(fraction * edges)` highest-ranked edges.
    pub fn top_fraction(&self, fraction: f64) -> Vec<usize> {
        let k = ((self.weights.len() as f64) * fraction).ceil() as usize;
        self.ranking().into_iter().take(k).collect()
    }

    /// Writes the weights into the tree's edges (edges sorted by child id).
    pub fn annotate(&self, tree: &mut ReasoningTree) -> Result<()> {
        if tree.edges.len() != self.weights.len() {
            return Err(Error::Shape {
                expected: tree.edges.len(),
                got: self.weights.len(),
            });
        }
        tree.edges.sort_by_key(|e| (e.child, e.parent));
        for (e, &w) in tree.edges.iter_mut().zip(&self.weights) {
            e.importance = Some(w);
        }
        Ok(())
    }
}

struct MaskAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Optimizes an edge mask explaining `target_class` (0 or 1) for a raw sample.
pub fn explain(
    model: &TreeClassifier,
    sample: &GraphSample,
    target_class: u8,
    config: &ExplainerConfig,
) -> Result<EdgeImportance> {
    let stats = model.stats.as_ref().ok_or(Error::NotTrained)?;
    if target_class > 1 {
        return Err(Error::Config(format!("target class {target_class} is not binary")));
    }
    let layout = model.layout();
    if layout.len != model.params.len() {
        return Err(Error::Shape {
            expected: layout.len,
            got: model.params.len(),
        });
    }
    let graph = PreparedGraph::new(&stats.apply(sample))?;
    let e = graph.num_tree_edges;
    let target = target_class as f64;

    let mut logits = vec![0.0; e];
    let mut opt = MaskAdam {
        m: vec![0.0; e],
        v: vec![0.0; e],
        t: 0,
    };
    let mut scratch = vec![0.0; layout.len];
    for _ in 0..config.steps {
        let mask: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
        let pass = forward_pass(&model.params, &layout, &graph, Some(&mask));
        let dlogit = sigmoid(pass.logit) - target;
        let mut dmask = vec![0.0; e];
        scratch.iter_mut().for_each(|g| *g = 0.0);
        backward_pass(&model.params, &layout, &graph, Some(&mask), &pass, dlogit, &mut scratch, Some(&mut dmask));

        opt.t += 1;
        let c1 = 1.0 - 0.9f64.powi(opt.t);
        let c2 = 1.0 - 0.999f64.powi(opt.t);
        for k in 0..e {
            let m = mask[k].clamp(1e-12, 1.0 - 1e-12);
            let dentropy = ((1.0 - m) / m).ln() / e as f64;
            let dm = dmask[k] + config.size_weight + config.entropy_weight * dentropy;
            let g = dm * mask[k] * (1.0 - mask[k]);
            if config.optimizer == MaskOptimizer::GradientDescent {
                logits[k] -= config.learning_rate * g;
                continue;
            }
            opt.m[k] = 0.9 * opt.m[k] + 0.1 * g;
            opt.v[k] = 0.999 * opt.v[k] + 0.001 * g * g;
            logits[k] -= config.learning_rate * (opt.m[k] / c1) / ((opt.v[k] / c2).sqrt() + 1e-8);
        }
    }

    let raw: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let weights = if e > 0 && hi - lo > 1e-12 {
        raw.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    } else {
        raw.clone()
    };
    Ok(EdgeImportance { weights, raw })
}

/// Objective minimized by [`explain`] for a given mask (exposed for checks).
pub fn explanation_objective(
    model: &TreeClassifier,
    sample: &GraphSample,
    target_class: u8,
    mask: &[f64],
    config: &ExplainerConfig,
) -> Result<f64> {
    let stats = model.stats.as_ref().ok_or(Error::NotTrained)?;
    let graph = PreparedGraph::new(&stats.apply(sample))?;
    if mask.len() != graph.num_tree_edges {
        return Err(Error::Shape {
            expected: graph.num_tree_edges,
            got: mask.len(),
        });
    }
    let pass = forward_pass(&model.params, &model.layout(), &graph, Some(mask));
    let pred = bce_with_logit(pass.logit, target_class as f64);
    let size: f64 = mask.iter().sum();
    let entropy = mask
        .iter()
        .map(|&m| {
            let m = m.clamp(1e-12, 1.0 - 1e-12);
            -m * m.ln() - (1.0 - m) * (1.0 - m).ln()
        })
        .sum::<f64>()
        / mask.len().max(1) as f64;
    Ok(pred + config.size_weight * size + config.entropy_weight * entropy)
}

/// Seeded RNG shared by the generator entry points.
pub(crate) fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
