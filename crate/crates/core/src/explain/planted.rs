//! Synthetic reasoning trees with and without planted error patterns.
//!
//! Every tree is a "spine and ribs" shape: a spine of K nodes walking steps
//! 1..=K from the root, with one or two short side branches (ribs) hanging off
//! every spine node but the last. Clean trees stay below every detector
//! threshold; a planted tree deviates in exactly one place. Trees are emitted
//! as annotated thoughts in preorder and rebuilt with [`build_tree`], so the
//! insertion rules are exercised along the way.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::patterns::{detect_patterns, ErrorPattern, PatternThresholds};
use crate::annotator::{AnnotatedChain, AnnotatedThought, ReasoningSketch, SketchStep, ThoughtFunction};
use crate::error::{Error, Result};
use crate::features::{featurize, GraphSample};
use crate::segmenter::word_count;
use crate::tree::{build_tree, ReasoningTree};

use ThoughtFunction::*;

const MAX_ATTEMPTS: usize = 64;
const MERGE_PROBABILITY: f64 = 0.3;

const VOCAB: &[&str] = &[
    "the", "value", "of", "term", "sum", "factor", "ratio", "angle", "side", "bound", "integer", "case", "then",
    "so", "we", "get", "expression", "equation", "square", "number", "digit", "area", "product", "remainder",
    "triangle", "is", "at", "most", "least", "gives", "for", "each", "prime", "modulo", "count", "pair",
];

/// Relative weights of the patterns planted into negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternMix {
    pub over_branching: f64,
    pub step_redundancy: f64,
    pub direct_reasoning: f64,
    pub skipped_thinking: f64,
}

impl Default for PatternMix {
    fn default() -> Self {
        Self {
            over_branching: 1.0,
            step_redundancy: 1.0,
            direct_reasoning: 1.0,
            skipped_thinking: 1.0,
        }
    }
}

impl PatternMix {
    pub fn only(pattern: ErrorPattern) -> Self {
        let mut mix = Self {
            over_branching: 0.0,
            step_redundancy: 0.0,
            direct_reasoning: 0.0,
            skipped_thinking: 0.0,
        };
        *mix.weight_mut(pattern) = 1.0;
        mix
    }

    fn weight_mut(&mut self, pattern: ErrorPattern) -> &mut f64 {
        match pattern {
            ErrorPattern::OverBranching => &mut self.over_branching,
            ErrorPattern::StepRedundancy => &mut self.step_redundancy,
            ErrorPattern::DirectReasoning => &mut self.direct_reasoning,
            ErrorPattern::SkippedThinking => &mut self.skipped_thinking,
        }
    }

    fn weights(&self) -> [f64; 4] {
        [
            self.over_branching,
            self.step_redundancy,
            self.direct_reasoning,
            self.skipped_thinking,
        ]
    }

    fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("pattern mix needs non-negative weights with a positive sum".into()));
        }
        Ok(())
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> ErrorPattern {
        let w = self.weights();
        let mut x = rng.gen::<f64>() * w.iter().sum::<f64>();
        for (p, wi) in ErrorPattern::ALL.into_iter().zip(w) {
            if x < wi {
                return p;
            }
            x -= wi;
        }
        // Rounding can leave x at the very top of the range.
        ErrorPattern::ALL.into_iter().zip(w).rev().find(|(_, wi)| *wi > 0.0).map(|(p, _)| p).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTree {
    pub sample_id: String,
    /// 1 for clean trees, 0 for trees carrying a planted pattern.
    pub label: u8,
    pub pattern: Option<ErrorPattern>,
    /// Indices of tree edges (edge `k` enters node `k + 1`) that realize the pattern.
    pub planted_edges: Vec<usize>,
    pub chain: AnnotatedChain,
    pub tree: ReasoningTree,
    pub sample: GraphSample,
}

impl PlantedTree {
    /// The transcript the chain's thoughts were cut from.
    pub fn transcript(&self) -> String {
        self.chain.thoughts.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn thought_tokens(&self) -> Vec<usize> {
        self.chain.thoughts.iter().map(|t| t.token_count).collect()
    }
}

#[derive(Debug, Clone)]
struct Node {
    parent: usize,
    step: usize,
    function: ThoughtFunction,
    children: Vec<usize>,
    planted: bool,
    /// Kept as the first child when children are shuffled.
    pinned: bool,
}

struct Blueprint {
    nodes: Vec<Node>,
}

impl Blueprint {
    fn new() -> Self {
        Self {
            nodes: vec![Node {
                parent: 0,
                step: 0,
                function: Continuation,
                children: Vec::new(),
                planted: false,
                pinned: false,
            }],
        }
    }

    fn add(&mut self, parent: usize, step: usize, function: ThoughtFunction, planted: bool) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            parent,
            step,
            function,
            children: Vec::new(),
            planted,
            pinned: false,
        });
        self.nodes[parent].children.push(id);
        id
    }

    fn add_rib(&mut self, rng: &mut ChaCha8Rng, from: usize, len: usize, first: ThoughtFunction, planted: bool) {
        let mut cur = self.add(from, self.nodes[from].step + 1, first, planted);
        for _ in 1..len {
            let f = if rng.gen_bool(0.7) { Continuation } else { Verification };
            cur = self.add(cur, self.nodes[cur].step + 1, f, planted);
        }
    }

    fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id].children.iter().rev());
        }
        out
    }
}

fn rib_function(rng: &mut ChaCha8Rng) -> ThoughtFunction {
    *[Exploration, Exploration, Verification, Backtracking].choose(rng).unwrap()
}

fn branch_function(rng: &mut ChaCha8Rng) -> ThoughtFunction {
    if rng.gen_bool(0.5) {
        Exploration
    } else {
        Verification
    }
}

fn spine_function(rng: &mut ChaCha8Rng) -> ThoughtFunction {
    match rng.gen_range(0..20) {
        0..=13 => Continuation,
        14..=16 => Verification,
        _ => Exploration,
    }
}

fn default_ribs(rng: &mut ChaCha8Rng) -> Vec<usize> {
    if rng.gen_bool(0.5) {
        vec![1, 1]
    } else {
        vec![rng.gen_range(1..=2)]
    }
}

fn blueprint(rng: &mut ChaCha8Rng, pattern: Option<ErrorPattern>) -> Blueprint {
    let k: usize = rng.gen_range(5..=8);
    let mut ribs: Vec<Vec<usize>> = (0..k).map(|_| default_ribs(rng)).collect();
    let mut spine_fn: Vec<ThoughtFunction> = (0..=k).map(|_| spine_function(rng)).collect();
    let mut planted_spine = vec![false; k + 1];
    let mut hub = None;
    let mut crowded = None;
    let mut skip = None;

    match pattern {
        None => {}
        Some(ErrorPattern::OverBranching) => {
            let t = rng.gen_range(0..k);
            hub = Some(t);
            ribs[t] = vec![1, 1, 1];
            spine_fn[t + 1] = branch_function(rng);
            planted_spine[t + 1] = true;
            if t >= 1 {
                ribs[t - 1].iter_mut().for_each(|l| *l = 1);
            }
        }
        Some(ErrorPattern::StepRedundancy) => {
            let t = rng.gen_range(2..=k);
            crowded = Some(t);
            ribs[t - 1] = vec![1, 1];
            ribs[t - 2] = vec![2, 2];
        }
        Some(ErrorPattern::DirectReasoning) => {
            let t = rng.gen_range(0..=k - 4);
            for r in &mut ribs[t + 1..=t + 3] {
                r.clear();
            }
            for s in t + 1..=t + 4 {
                spine_fn[s] = Continuation;
                planted_spine[s] = true;
            }
        }
        Some(ErrorPattern::SkippedThinking) => {
            let t = rng.gen_range(0..=k);
            let g = rng.gen_range(3..=4);
            skip = Some((t, g));
            if t < k {
                ribs[t] = vec![rng.gen_range(1..=2)];
            }
            if t + g <= k {
                ribs[t + g - 1] = vec![1];
            }
        }
    }

    let mut bp = Blueprint::new();
    let mut spine = vec![0];
    for s in 1..=k {
        let id = bp.add(spine[s - 1], s, spine_fn[s], planted_spine[s]);
        spine.push(id);
    }
    if let Some((t, g)) = skip {
        let leaf = bp.add(spine[t], t + g, rib_function(rng), true);
        bp.nodes[leaf].pinned = true;
        if t == k {
            let len = rng.gen_range(1..=2);
            let f = rib_function(rng);
            bp.add_rib(rng, spine[k], len, f, false);
        }
    }
    for (t, lens) in ribs.iter().enumerate() {
        for &len in lens {
            let is_hub = hub == Some(t);
            let reaches_crowded = crowded.is_some_and(|c| (t + 1 == c && len == 1) || (t + 2 == c && len == 2));
            let f = if is_hub { branch_function(rng) } else { rib_function(rng) };
            bp.add_rib(rng, spine[t], len, f, is_hub);
            if reaches_crowded {
                let last = bp.nodes.len() - 1;
                bp.nodes[last].planted = true;
            }
        }
    }
    for id in 0..bp.nodes.len() {
        let mut children = std::mem::take(&mut bp.nodes[id].children);
        children.shuffle(rng);
        children.sort_by_key(|&c| !bp.nodes[c].pinned);
        bp.nodes[id].children = children;
    }
    bp
}

fn marker(function: ThoughtFunction) -> &'static str {
    match function {
        Continuation => "Hmm",
        Exploration => "Alternatively",
        Backtracking => "Wait",
        Verification => "Let me verify",
    }
}

fn filler(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(6..=48);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Generates one tree: clean when `pattern` is `None`, otherwise with that pattern planted.
pub fn generate_planted_tree(
    rng: &mut ChaCha8Rng,
    pattern: Option<ErrorPattern>,
    sample_id: &str,
) -> Result<PlantedTree> {
    let thresholds = PatternThresholds::default();
    for _ in 0..MAX_ATTEMPTS {
        let bp = blueprint(rng, pattern);
        let planted = realize(rng, &bp, pattern, sample_id)?;
        let found: Vec<ErrorPattern> = detect_patterns(&planted.tree, &thresholds).iter().map(|d| d.pattern).collect();
        let expected_ok = match pattern {
            None => found.is_empty(),
            Some(p) => !found.is_empty() && found.iter().all(|&f| f == p),
        };
        if expected_ok {
            return Ok(planted);
        }
        log::debug!("{sample_id}: regenerating, detectors reported {found:?}");
    }
    Err(Error::Integrity(format!("could not generate a tree for pattern {pattern:?}")))
}

fn realize(
    rng: &mut ChaCha8Rng,
    bp: &Blueprint,
    pattern: Option<ErrorPattern>,
    sample_id: &str,
) -> Result<PlantedTree> {
    let order = bp.preorder();
    let mut tree_id = vec![0usize; bp.nodes.len()];
    for (pos, &b) in order.iter().enumerate() {
        tree_id[b] = pos;
    }

    // Group preorder nodes into thoughts; a Continuation first child may share its parent's thought.
    let mut groups: Vec<Vec<usize>> = vec![vec![0]];
    for w in order.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        let n = &bp.nodes[cur];
        let mergeable = n.parent == prev && prev != 0 && n.function == Continuation && n.step == bp.nodes[prev].step + 1;
        if mergeable && rng.gen_bool(MERGE_PROBABILITY) {
            groups.last_mut().unwrap().push(cur);
        } else {
            groups.push(vec![cur]);
        }
    }

    let mut thoughts = Vec::with_capacity(groups.len());
    for (index, group) in groups.iter().enumerate() {
        let (text, steps, function) = if index == 0 {
            (format!("Okay, {}. ", filler(rng)), Vec::new(), None)
        } else {
            let head = &bp.nodes[group[0]];
            let mut text = format!("{}, {}.", marker(head.function), filler(rng));
            for _ in 1..group.len() {
                text.push_str(&format!(" So {}.", filler(rng)));
            }
            text.push(' ');
            (text, group.iter().map(|&b| bp.nodes[b].step).collect(), Some(head.function))
        };
        let words = word_count(&text);
        thoughts.push(AnnotatedThought {
            index,
            text,
            word_count: words,
            token_count: words,
            steps,
            function,
        });
    }

    let tree = build_tree(&thoughts)?;
    if tree.len() != bp.nodes.len() {
        return Err(Error::Integrity(format!("{sample_id}: tree has {} nodes, blueprint {}", tree.len(), bp.nodes.len())));
    }
    for (b, node) in bp.nodes.iter().enumerate().skip(1) {
        let edge = tree
            .parent_edge(tree_id[b])
            .ok_or_else(|| Error::Integrity(format!("{sample_id}: node {} has no parent", tree_id[b])))?;
        if edge.parent != tree_id[node.parent] || edge.function != node.function {
            return Err(Error::Integrity(format!("{sample_id}: node {} attached differently than planned", tree_id[b])));
        }
    }

    let mut planted_edges: Vec<usize> = (1..bp.nodes.len()).filter(|&b| bp.nodes[b].planted).map(|b| tree_id[b] - 1).collect();
    planted_edges.sort_unstable();
    let label = u8::from(pattern.is_none());
    let tokens: Vec<usize> = thoughts.iter().map(|t| t.token_count).collect();
    let sample = featurize(&tree, &tokens, sample_id, Some(label))?;
    let sketch = ReasoningSketch {
        steps: (1..=tree.max_step())
            .map(|step| SketchStep {
                step,
                text: format!("Key step {step}."),
            })
            .collect(),
    };
    Ok(PlantedTree {
        sample_id: sample_id.to_string(),
        label,
        pattern,
        planted_edges,
        chain: AnnotatedChain {
            sketch,
            thoughts,
            warnings: Vec::new(),
        },
        tree,
        sample,
    })
}

/// `n_per_class` clean trees (label 1) and as many planted ones (label 0),
/// alternating clean/planted. Deterministic in `seed`.
pub fn generate_planted_dataset(n_per_class: usize, mix: &PatternMix, seed: u64) -> Result<Vec<PlantedTree>> {
    mix.validate()?;
    let mut rng = super::rng(seed);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        out.push(generate_planted_tree(&mut rng, None, &format!("planted-{:05}", 2 * i))?);
        let p = mix.pick(&mut rng);
        out.push(generate_planted_tree(&mut rng, Some(p), &format!("planted-{:05}", 2 * i + 1))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{split_thoughts, SeparatorProfile};

    #[test]
    fn detectors_agree_with_ground_truth() {
        let data = generate_planted_dataset(150, &PatternMix::default(), 7).unwrap();
        let th = PatternThresholds::default();
        for t in &data {
            let found: Vec<_> = detect_patterns(&t.tree, &th).into_iter().map(|d| d.pattern).collect();
            match t.pattern {
                None => assert!(found.is_empty(), "{}: {found:?}", t.sample_id),
                Some(p) => assert!(found.contains(&p) && found.iter().all(|&f| f == p), "{}: {found:?}", t.sample_id),
            }
            assert_eq!(t.label == 1, t.pattern.is_none());
            assert_eq!(t.pattern.is_some(), !t.planted_edges.is_empty());
        }
        for p in ErrorPattern::ALL {
            assert!(data.iter().any(|t| t.pattern == Some(p)));
        }
    }

    #[test]
    fn planted_edges_touch_the_pattern() {
        let mut rng = crate::explain::rng(3);
        for _ in 0..40 {
            let t = generate_planted_tree(&mut rng, Some(ErrorPattern::OverBranching), "ob").unwrap();
            assert_eq!(t.planted_edges.len(), 4);
            let hub = t.tree.edges[t.planted_edges[0]].parent;
            assert!(t.planted_edges.iter().all(|&k| t.tree.edges[k].parent == hub && t.tree.edges[k].child == k + 1));

            let t = generate_planted_tree(&mut rng, Some(ErrorPattern::SkippedThinking), "st").unwrap();
            let e = &t.tree.edges[t.planted_edges[0]];
            assert!(t.tree.node(e.child).step - t.tree.node(e.parent).step >= 3);
        }
    }

    #[test]
    fn seeded_and_byte_stable() {
        let a = serde_json::to_string(&generate_planted_dataset(20, &PatternMix::default(), 42).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_planted_dataset(20, &PatternMix::default(), 42).unwrap()).unwrap();
        let c = serde_json::to_string(&generate_planted_dataset(20, &PatternMix::default(), 43).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn transcripts_resegment_to_the_same_thoughts() {
        let mut rng = crate::explain::rng(9);
        let profile = SeparatorProfile::deepseek_family();
        for p in [None, Some(ErrorPattern::StepRedundancy)] {
            let t = generate_planted_tree(&mut rng, p, "x").unwrap();
            let split = split_thoughts(&t.transcript(), &profile).unwrap();
            let texts: Vec<_> = split.iter().map(|s| s.text.as_str()).collect();
            let expected: Vec<_> = t.chain.thoughts.iter().map(|s| s.text.as_str()).collect();
            assert_eq!(texts, expected);
        }
    }

    #[test]
    fn mix_validation() {
        let bad = PatternMix { over_branching: -1.0, ..Default::default() };
        assert!(generate_planted_dataset(1, &bad, 0).is_err());
        let only = PatternMix::only(ErrorPattern::DirectReasoning);
        let data = generate_planted_dataset(10, &only, 0).unwrap();
        assert!(data.iter().filter(|t| t.label == 0).all(|t| t.pattern == Some(ErrorPattern::DirectReasoning)));
    }
}
