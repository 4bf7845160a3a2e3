//! Graph-attention tree classifier.
//!
//! Each layer uses dynamic attention: for a directed edge `j -> i` the score is
//! `a . leaky_relu(W_src x_j + W_dst x_i + W_edge c_ij)` where `c_ij` is the
//! one-hot edge category. Scores are softmax-normalized over the incoming
//! edges of `i` (a self-loop with a zero edge vector is always present) and
//! node `i` is updated to `relu(sum_j alpha_ij W_src x_j + b)`. Node states
//! are mean-pooled and passed through a two-layer ReLU MLP ending in a
//! sigmoid.
//!
//! All parameters live in one flat `Vec<f64>`; [`ParamLayout`] names the
//! slices. Gradients use the same layout, which keeps the optimizer and the
//! finite-difference checks trivial.

mod baseline;
mod train;

use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{baseline_score, train_length_baseline, BaselineConfig, LengthBaseline};
pub use train::{accuracy, train, EpochLog, TrainingLog};

use crate::error::{Error, Result};
use crate::features::{edge_category, GraphSample, NormStats, NUM_EDGE_CATEGORIES, NUM_NODE_FEATURES};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const CHECKPOINT_FORMAT: &str = "cotree-classifier/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            input_dim: NUM_NODE_FEATURES,
            hidden_size: 64,
            num_layers: 2,
            learning_rate: 1e-3,
            max_epochs: 100,
            batch_size: 32,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.input_dim > 0
            && self.hidden_size > 0
            && self.num_layers > 0
            && self.max_epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0;
        if !positive {
            return Err(Error::Config("classifier sizes and learning rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub in_dim: usize,
    pub w_src: Range<usize>,
    pub w_dst: Range<usize>,
    pub w_edge: Range<usize>,
    pub att: Range<usize>,
    pub bias: Range<usize>,
}

/// Offsets of every parameter group inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub hidden: usize,
    pub layers: Vec<LayerLayout>,
    pub head_w1: Range<usize>,
    pub head_b1: Range<usize>,
    pub head_w2: Range<usize>,
    pub head_b2: Range<usize>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(config: &ClassifierConfig) -> Self {
        let h = config.hidden_size;
        let mut off = 0;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let layers = (0..config.num_layers)
            .map(|l| {
                let d = if l == 0 { config.input_dim } else { h };
                LayerLayout {
                    in_dim: d,
                    w_src: take(h * d),
                    w_dst: take(h * d),
                    w_edge: take(h * NUM_EDGE_CATEGORIES),
                    att: take(h),
                    bias: take(h),
                }
            })
            .collect();
        let head_w1 = take(h * h);
        let head_b1 = take(h);
        let head_w2 = take(h);
        let head_b2 = take(1);
        Self {
            hidden: h,
            layers,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
            len: off,
        }
    }

    /// Named parameter groups, in layout order.
    pub fn groups(&self) -> Vec<(String, Range<usize>)> {
        let mut g = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            g.push((format!("layer{l}.w_src"), layer.w_src.clone()));
            g.push((format!("layer{l}.w_dst"), layer.w_dst.clone()));
            g.push((format!("layer{l}.w_edge"), layer.w_edge.clone()));
            g.push((format!("layer{l}.att"), layer.att.clone()));
            g.push((format!("layer{l}.bias"), layer.bias.clone()));
        }
        g.push(("head.w1".into(), self.head_w1.clone()));
        g.push(("head.b1".into(), self.head_b1.clone()));
        g.push(("head.w2".into(), self.head_w2.clone()));
        g.push(("head.b2".into(), self.head_b2.clone()));
        g
    }
}

/// Summary of the training run stored with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub train_size: usize,
    pub val_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

/// Trained (or freshly initialized) classifier plus its normalization stats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeClassifier {
    pub format: String,
    pub config: ClassifierConfig,
    pub params: Vec<f64>,
    #[serde(default)]
    pub stats: Option<NormStats>,
    #[serde(default)]
    pub summary: Option<TrainingSummary>,
}

impl TreeClassifier {
    /// Glorot-uniform weights, zero biases and a zero attention offset.
    pub fn init(config: ClassifierConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![0.0; layout.len];
        let mut glorot = |r: Range<usize>, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[r] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        let h = layout.hidden;
        for l in &layout.layers {
            glorot(l.w_src.clone(), l.in_dim, h);
            glorot(l.w_dst.clone(), l.in_dim, h);
            glorot(l.w_edge.clone(), NUM_EDGE_CATEGORIES, h);
            glorot(l.att.clone(), h, 1);
        }
        glorot(layout.head_w1.clone(), h, h);
        glorot(layout.head_w2.clone(), h, 1);
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            config,
            params,
            stats: None,
            summary: None,
        })
    }

    /// All-zero parameters; outputs exactly 0.5 for every graph.
    pub fn zeros(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let len = ParamLayout::new(&config).len;
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            config,
            params: vec![0.0; len],
            stats: None,
            summary: None,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.config)
    }

    pub fn is_trained(&self) -> bool {
        self.stats.is_some()
    }

    fn check_shape(&self) -> Result<ParamLayout> {
        if self.config.input_dim != NUM_NODE_FEATURES {
            return Err(Error::Shape {
                expected: NUM_NODE_FEATURES,
                got: self.config.input_dim,
            });
        }
        let layout = self.layout();
        if layout.len != self.params.len() {
            return Err(Error::Shape {
                expected: layout.len,
                got: self.params.len(),
            });
        }
        Ok(layout)
    }

    /// Probability of the positive class for an already-normalized sample.
    pub fn forward(&self, sample: &GraphSample) -> Result<f64> {
        let layout = self.check_shape()?;
        let graph = PreparedGraph::new(sample)?;
        let pass = forward_pass(&self.params, &layout, &graph, None);
        Ok(sigmoid(pass.logit))
    }

    /// Normalizes a raw sample with the stored stats and scores it.
    pub fn predict_score(&self, sample: &GraphSample) -> Result<f64> {
        let stats = self.stats.as_ref().ok_or(Error::NotTrained)?;
        self.forward(&stats.apply(sample))
    }

    /// Binary cross-entropy of a normalized sample against `label` (0 or 1).
    pub fn loss(&self, sample: &GraphSample, label: f64) -> Result<f64> {
        let layout = self.check_shape()?;
        let graph = PreparedGraph::new(sample)?;
        Ok(bce_with_logit(forward_pass(&self.params, &layout, &graph, None).logit, label))
    }

    /// Loss and its analytic gradient with respect to `params` (same layout).
    pub fn loss_gradient(&self, sample: &GraphSample, label: f64) -> Result<(f64, Vec<f64>)> {
        let layout = self.check_shape()?;
        let (loss, _, grad) = sample_loss_grad(&self.params, &layout, sample, label)?;
        Ok((loss, grad))
    }

    /// Which side of zero every piecewise-linear activation input falls on
    /// (attention LeakyReLU, node ReLU, head ReLU) for a normalized sample.
    /// Parameter vectors with equal patterns share one linear piece, so a
    /// finite difference between them is free of kink error.
    pub fn activation_pattern(&self, sample: &GraphSample) -> Result<Vec<bool>> {
        let layout = self.check_shape()?;
        let graph = PreparedGraph::new(sample)?;
        let pass = forward_pass(&self.params, &layout, &graph, None);
        let mut signs = Vec::new();
        for l in &pass.layers {
            signs.extend(l.u.iter().chain(&l.pre).map(|&v| v > 0.0));
        }
        signs.extend(pass.z1.iter().map(|&v| v > 0.0));
        Ok(signs)
    }

    pub fn classify(&self, sample: &GraphSample, threshold: f64) -> Result<bool> {
        Ok(classify_score(self.predict_score(sample)?, threshold))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: TreeClassifier = serde_json::from_str(&text)?;
        if model.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {:?} (expected {CHECKPOINT_FORMAT})",
                model.format
            )));
        }
        model.check_shape()?;
        Ok(model)
    }
}

/// Positive iff the score is strictly above the threshold.
pub fn classify_score(score: f64, threshold: f64) -> bool {
    score > threshold
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, numerically stable.
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// Directed edge as seen by the attention layers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DirectedEdge {
    pub src: usize,
    pub dst: usize,
    /// `None` for self-loops.
    pub category: Option<usize>,
    /// Index into the per-tree-edge mask, `None` for self-loops.
    pub mask_slot: Option<usize>,
}

/// Sample converted to dense features and an edge list with self-loops,
/// grouped by destination.
pub(crate) struct PreparedGraph {
    pub n: usize,
    pub x: Vec<f64>,
    pub edges: Vec<DirectedEdge>,
    /// `incoming[i]` lists edge positions whose destination is `i`.
    pub incoming: Vec<Vec<usize>>,
    pub num_tree_edges: usize,
}

impl PreparedGraph {
    pub fn new(sample: &GraphSample) -> Result<Self> {
        sample.validate()?;
        let n = sample.num_nodes();
        let x = sample.node_features.iter().flat_map(|r| r.iter().copied()).collect();
        let mut edges: Vec<DirectedEdge> = sample
            .edge_index
            .iter()
            .zip(&sample.edge_codes)
            .enumerate()
            .map(|(k, (&[src, dst], &code))| DirectedEdge {
                src,
                dst,
                category: Some(edge_category(code)),
                mask_slot: Some(k / 2),
            })
            .collect();
        edges.extend((0..n).map(|i| DirectedEdge {
            src: i,
            dst: i,
            category: None,
            mask_slot: None,
        }));
        let mut incoming = vec![Vec::new(); n];
        for (e, edge) in edges.iter().enumerate() {
            incoming[edge.dst].push(e);
        }
        Ok(Self {
            n,
            x,
            edges,
            incoming,
            num_tree_edges: sample.num_tree_edges(),
        })
    }
}

struct LayerCache {
    /// Layer input, n x in_dim.
    x: Vec<f64>,
    /// Source projection W_src x, n x h.
    p: Vec<f64>,
    /// Pre-activation of the attention nonlinearity, edges x h.
    u: Vec<f64>,
    alpha: Vec<f64>,
    /// Aggregated state before ReLU, n x h.
    pre: Vec<f64>,
}

pub(crate) struct ForwardPass {
    layers: Vec<LayerCache>,
    /// Final node states, n x h.
    h_last: Vec<f64>,
    pooled: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    pub logit: f64,
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// `out[r] = W x_r` for every row `r` of `x` (W is h x d, row-major).
fn project(w: &[f64], x: &[f64], n: usize, d: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * h];
    for r in 0..n {
        let xr = &x[r * d..(r + 1) * d];
        for k in 0..h {
            let wk = &w[k * d..(k + 1) * d];
            out[r * h + k] = wk.iter().zip(xr).map(|(a, b)| a * b).sum();
        }
    }
    out
}

fn mask_value(mask: Option<&[f64]>, edge: &DirectedEdge) -> f64 {
    match (mask, edge.mask_slot) {
        (Some(m), Some(slot)) => m[slot],
        _ => 1.0,
    }
}

fn layer_forward(
    params: &[f64],
    layout: &LayerLayout,
    h: usize,
    graph: &PreparedGraph,
    x: Vec<f64>,
    mask: Option<&[f64]>,
) -> (LayerCache, Vec<f64>) {
    let n = graph.n;
    let d = layout.in_dim;
    let p = project(&params[layout.w_src.clone()], &x, n, d, h);
    let q = project(&params[layout.w_dst.clone()], &x, n, d, h);
    let w_edge = &params[layout.w_edge.clone()];
    let att = &params[layout.att.clone()];
    let bias = &params[layout.bias.clone()];

    let m = graph.edges.len();
    let mut u = vec![0.0; m * h];
    let mut score = vec![0.0; m];
    for (e, edge) in graph.edges.iter().enumerate() {
        let ue = &mut u[e * h..(e + 1) * h];
        let (ps, qd) = (&p[edge.src * h..(edge.src + 1) * h], &q[edge.dst * h..(edge.dst + 1) * h]);
        for k in 0..h {
            let mut v = ps[k] + qd[k];
            if let Some(c) = edge.category {
                v += w_edge[k * NUM_EDGE_CATEGORIES + c];
            }
            ue[k] = v;
        }
        score[e] = ue.iter().zip(att).map(|(&v, a)| a * leaky(v)).sum();
    }

    let mut alpha = vec![0.0; m];
    let mut pre = vec![0.0; n * h];
    for i in 0..n {
        let inc = &graph.incoming[i];
        let max = inc.iter().map(|&e| score[e]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &e in inc {
            alpha[e] = (score[e] - max).exp();
            z += alpha[e];
        }
        let out = &mut pre[i * h..(i + 1) * h];
        out.copy_from_slice(bias);
        for &e in inc {
            alpha[e] /= z;
            let edge = &graph.edges[e];
            let w = alpha[e] * mask_value(mask, edge);
            let ps = &p[edge.src * h..(edge.src + 1) * h];
            for k in 0..h {
                out[k] += w * ps[k];
            }
        }
    }
    let h_out = pre.iter().map(|&v| v.max(0.0)).collect();
    (LayerCache { x, p, u, alpha, pre }, h_out)
}

pub(crate) fn forward_pass(
    params: &[f64],
    layout: &ParamLayout,
    graph: &PreparedGraph,
    mask: Option<&[f64]>,
) -> ForwardPass {
    let h = layout.hidden;
    let mut x = graph.x.clone();
    let mut layers = Vec::with_capacity(layout.layers.len());
    for l in &layout.layers {
        let (cache, out) = layer_forward(params, l, h, graph, x, mask);
        layers.push(cache);
        x = out;
    }
    let n = graph.n as f64;
    let mut pooled = vec![0.0; h];
    for r in x.chunks(h) {
        for (p, v) in pooled.iter_mut().zip(r) {
            *p += v;
        }
    }
    pooled.iter_mut().for_each(|p| *p /= n);

    let w1 = &params[layout.head_w1.clone()];
    let b1 = &params[layout.head_b1.clone()];
    let z1: Vec<f64> = (0..h)
        .map(|k| b1[k] + w1[k * h..(k + 1) * h].iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let a1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
    let w2 = &params[layout.head_w2.clone()];
    let logit = params[layout.head_b2.start] + w2.iter().zip(&a1).map(|(a, b)| a * b).sum::<f64>();
    ForwardPass {
        layers,
        h_last: x,
        pooled,
        z1,
        a1,
        logit,
    }
}

/// Accumulates `d(out)/d(params) * dlogit` into `grad` and, when `dmask` is
/// given, the gradient with respect to the per-tree-edge mask.
pub(crate) fn backward_pass(
    params: &[f64],
    layout: &ParamLayout,
    graph: &PreparedGraph,
    mask: Option<&[f64]>,
    pass: &ForwardPass,
    dlogit: f64,
    grad: &mut [f64],
    mut dmask: Option<&mut [f64]>,
) {
    let h = layout.hidden;
    let n = graph.n;

    // Head.
    let w1 = &params[layout.head_w1.clone()];
    let w2 = &params[layout.head_w2.clone()];
    grad[layout.head_b2.start] += dlogit;
    let mut dz1 = vec![0.0; h];
    for k in 0..h {
        grad[layout.head_w2.start + k] += dlogit * pass.a1[k];
        if pass.z1[k] > 0.0 {
            dz1[k] = dlogit * w2[k];
        }
    }
    let mut dpooled = vec![0.0; h];
    for k in 0..h {
        grad[layout.head_b1.start + k] += dz1[k];
        if dz1[k] == 0.0 {
            continue;
        }
        let row = layout.head_w1.start + k * h;
        for j in 0..h {
            grad[row + j] += dz1[k] * pass.pooled[j];
            dpooled[j] += dz1[k] * w1[k * h + j];
        }
    }

    // Mean pooling spreads the gradient evenly over nodes.
    let mut dh: Vec<f64> = (0..n).flat_map(|_| dpooled.iter().map(|v| v / n as f64)).collect();
    debug_assert_eq!(pass.h_last.len(), dh.len());

    for (l, layer) in layout.layers.iter().enumerate().rev() {
        let cache = &pass.layers[l];
        let need_dx = l > 0;
        dh = layer_backward(params, layer, h, graph, mask, cache, &dh, grad, dmask.as_deref_mut(), need_dx);
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    params: &[f64],
    layout: &LayerLayout,
    h: usize,
    graph: &PreparedGraph,
    mask: Option<&[f64]>,
    cache: &LayerCache,
    dh_out: &[f64],
    grad: &mut [f64],
    mut dmask: Option<&mut [f64]>,
    need_dx: bool,
) -> Vec<f64> {
    let n = graph.n;
    let d = layout.in_dim;
    let att = &params[layout.att.clone()];

    let dpre: Vec<f64> = dh_out
        .iter()
        .zip(&cache.pre)
        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
        .collect();
    for i in 0..n {
        for k in 0..h {
            grad[layout.bias.start + k] += dpre[i * h + k];
        }
    }

    let mut dp = vec![0.0; n * h];
    let mut dq = vec![0.0; n * h];
    let mut dalpha = vec![0.0; graph.edges.len()];
    for i in 0..n {
        let dout = &dpre[i * h..(i + 1) * h];
        for &e in &graph.incoming[i] {
            let edge = &graph.edges[e];
            let ps = &cache.p[edge.src * h..(edge.src + 1) * h];
            let dot: f64 = dout.iter().zip(ps).map(|(a, b)| a * b).sum();
            let m = mask_value(mask, edge);
            dalpha[e] = m * dot;
            if let (Some(dm), Some(slot)) = (dmask.as_deref_mut(), edge.mask_slot) {
                dm[slot] += cache.alpha[e] * dot;
            }
            let w = cache.alpha[e] * m;
            for k in 0..h {
                dp[edge.src * h + k] += w * dout[k];
            }
        }
    }

    for i in 0..n {
        let inc = &graph.incoming[i];
        let weighted: f64 = inc.iter().map(|&e| cache.alpha[e] * dalpha[e]).sum();
        for &e in inc {
            let dscore = cache.alpha[e] * (dalpha[e] - weighted);
            if dscore == 0.0 {
                continue;
            }
            let edge = &graph.edges[e];
            let ue = &cache.u[e * h..(e + 1) * h];
            for k in 0..h {
                grad[layout.att.start + k] += dscore * leaky(ue[k]);
                let du = dscore * att[k] * leaky_grad(ue[k]);
                dp[edge.src * h + k] += du;
                dq[edge.dst * h + k] += du;
                if let Some(c) = edge.category {
                    grad[layout.w_edge.start + k * NUM_EDGE_CATEGORIES + c] += du;
                }
            }
        }
    }

    // dW = dP^T X, dX = dP W.
    let w_src = &params[layout.w_src.clone()];
    let w_dst = &params[layout.w_dst.clone()];
    let mut dx = if need_dx { vec![0.0; n * d] } else { Vec::new() };
    for r in 0..n {
        let xr = &cache.x[r * d..(r + 1) * d];
        for k in 0..h {
            let gp = dp[r * h + k];
            let gq = dq[r * h + k];
            if gp == 0.0 && gq == 0.0 {
                continue;
            }
            let (sp, sq) = (layout.w_src.start + k * d, layout.w_dst.start + k * d);
            for j in 0..d {
                grad[sp + j] += gp * xr[j];
                grad[sq + j] += gq * xr[j];
            }
            if need_dx {
                for j in 0..d {
                    dx[r * d + j] += gp * w_src[k * d + j] + gq * w_dst[k * d + j];
                }
            }
        }
    }
    dx
}

/// Loss and gradient for one normalized, labeled sample.
pub(crate) fn sample_loss_grad(params: &[f64], layout: &ParamLayout, sample: &GraphSample, label: f64) -> Result<(f64, f64, Vec<f64>)> {
    let graph = PreparedGraph::new(sample)?;
    let pass = forward_pass(params, layout, &graph, None);
    let loss = bce_with_logit(pass.logit, label);
    let p = sigmoid(pass.logit);
    let mut grad = vec![0.0; layout.len];
    backward_pass(params, layout, &graph, None, &pass, p - label, &mut grad, None);
    Ok((loss, p, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    pub(crate) fn random_sample(rng: &mut ChaCha8Rng, n: usize) -> GraphSample {
        let node_features = (0..n)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.5..1.5)))
            .collect();
        let mut edge_index = Vec::new();
        let mut edge_codes = Vec::new();
        for child in 1..n {
            let parent = rng.gen_range(0..child);
            let code = rng.gen_range(1..=4);
            edge_index.push([parent, child]);
            edge_codes.push(code);
            edge_index.push([child, parent]);
            edge_codes.push(-code);
        }
        GraphSample {
            sample_id: "r".into(),
            label: Some(1),
            node_features,
            edge_index,
            edge_codes,
        }
    }

    fn small_config() -> ClassifierConfig {
        ClassifierConfig {
            hidden_size: 6,
            ..Default::default()
        }
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let model = TreeClassifier::zeros(ClassifierConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 9] {
            assert_eq!(model.forward(&random_sample(&mut rng, n)).unwrap(), 0.5);
        }
    }

    #[test]
    fn output_is_a_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = TreeClassifier::init(ClassifierConfig::default(), &mut rng).unwrap();
        for n in 1..12 {
            let p = model.forward(&random_sample(&mut rng, n)).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = TreeClassifier::init(ClassifierConfig::default(), &mut rng).unwrap();
        let s = random_sample(&mut rng, 11);
        let mut perm: Vec<usize> = (0..11).collect();
        perm.reverse();
        perm.swap(2, 7);
        let mut permuted = s.clone();
        for (old, &new) in perm.iter().enumerate() {
            permuted.node_features[new] = s.node_features[old];
        }
        for e in &mut permuted.edge_index {
            *e = [perm[e[0]], perm[e[1]]];
        }
        let a = model.forward(&s).unwrap();
        let b = model.forward(&permuted).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut model = TreeClassifier::zeros(small_config()).unwrap();
        model.params.pop();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = model.forward(&random_sample(&mut rng, 3)).unwrap_err();
        assert_eq!(err.kind(), "ShapeError");
        let mut model = TreeClassifier::zeros(small_config()).unwrap();
        model.config.input_dim = 4;
        assert_eq!(model.forward(&random_sample(&mut rng, 3)).unwrap_err().kind(), "ShapeError");
    }

    #[test]
    fn untrained_model_cannot_predict_raw_samples() {
        let model = TreeClassifier::zeros(small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(model.predict_score(&random_sample(&mut rng, 3)), Err(Error::NotTrained)));
    }

    #[test]
    fn threshold_is_strict() {
        assert!(classify_score(0.7, 0.5));
        assert!(!classify_score(0.5, 0.5));
        assert!(!classify_score(0.2, 0.5));
    }

    #[test]
    fn stable_loss() {
        assert!((bce_with_logit(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_with_logit(800.0, 0.0).is_finite());
        assert!(bce_with_logit(-800.0, 1.0).is_finite());
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn save_load_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = TreeClassifier::init(small_config(), &mut rng).unwrap();
        model.stats = Some(NormStats {
            mean: [0.1, 1.0 / 3.0, 2.5, 0.0, 1e-17],
            std: [1.0, 0.7, 3.3, 1.0, 2.0],
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        let back = TreeClassifier::load(&path).unwrap();
        assert_eq!(back, model);
        let s = random_sample(&mut rng, 6);
        assert_eq!(back.predict_score(&s).unwrap().to_bits(), model.predict_score(&s).unwrap().to_bits());
    }

    #[test]
    fn layout_groups_cover_everything() {
        let layout = ParamLayout::new(&ClassifierConfig::default());
        let total: usize = layout.groups().iter().map(|(_, r)| r.len()).sum();
        assert_eq!(total, layout.len);
        assert_eq!(layout.groups().len(), 14);
    }
}
