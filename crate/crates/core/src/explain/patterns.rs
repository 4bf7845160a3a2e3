//! Rule-based detectors for four structural error patterns.

use serde::{Deserialize, Serialize};

use crate::annotator::ThoughtFunction;
use crate::tree::ReasoningTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPattern {
    /// Many exploration/verification branches out of a single node.
    OverBranching,
    /// Too many nodes at one step.
    StepRedundancy,
    /// A long branch-free path reaching a much deeper step.
    DirectReasoning,
    /// An edge jumping several steps at once.
    SkippedThinking,
}

impl ErrorPattern {
    pub const ALL: [ErrorPattern; 4] = [
        ErrorPattern::OverBranching,
        ErrorPattern::StepRedundancy,
        ErrorPattern::DirectReasoning,
        ErrorPattern::SkippedThinking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorPattern::OverBranching => "over_branching",
            ErrorPattern::StepRedundancy => "step_redundancy",
            ErrorPattern::DirectReasoning => "direct_reasoning",
            ErrorPattern::SkippedThinking => "skipped_thinking",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternThresholds {
    /// Minimum exploration + verification children of one node.
    pub over_branching: usize,
    /// Minimum node count at one step.
    pub step_redundancy: usize,
    /// Minimum step span of a straight path.
    pub direct_reasoning: usize,
    /// Minimum step gap across one edge.
    pub skipped_thinking: usize,
}

impl Default for PatternThresholds {
    fn default() -> Self {
        Self {
            over_branching: 4,
            step_redundancy: 5,
            direct_reasoning: 4,
            skipped_thinking: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub pattern: ErrorPattern,
    /// Nodes involved: the hub, the crowded step, the path, or the edge endpoints.
    pub nodes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

/// Runs all four detectors. Output is grouped by pattern, then by node id.
pub fn detect_patterns(tree: &ReasoningTree, thresholds: &PatternThresholds) -> Vec<Detection> {
    let mut out = Vec::new();
    let n = tree.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut branching = vec![0usize; n];
    for e in &tree.edges {
        children[e.parent].push(e.child);
        if matches!(e.function, ThoughtFunction::Exploration | ThoughtFunction::Verification) {
            branching[e.parent] += 1;
        }
    }
    for c in &mut children {
        c.sort_unstable();
    }

    for (id, &count) in branching.iter().enumerate() {
        if count >= thresholds.over_branching {
            out.push(Detection {
                pattern: ErrorPattern::OverBranching,
                nodes: vec![id],
                step: Some(tree.nodes[id].step),
            });
        }
    }

    let mut by_step: Vec<Vec<usize>> = vec![Vec::new(); tree.max_step() + 1];
    for node in &tree.nodes {
        by_step[node.step].push(node.id);
    }
    for (step, ids) in by_step.into_iter().enumerate() {
        if ids.len() >= thresholds.step_redundancy {
            out.push(Detection {
                pattern: ErrorPattern::StepRedundancy,
                nodes: ids,
                step: Some(step),
            });
        }
    }

    // Straight paths start at the root or at a branching node and continue
    // through nodes with exactly one child. Only paths with at least one
    // intermediate node count; a lone long edge is skipped thinking.
    for start in 0..n {
        if start != tree.root && children[start].len() < 2 {
            continue;
        }
        for &first in &children[start] {
            let mut path = vec![start, first];
            let mut cur = first;
            while children[cur].len() == 1 {
                cur = children[cur][0];
                path.push(cur);
            }
            let span = tree.nodes[cur].step - tree.nodes[start].step;
            if path.len() >= 3 && span >= thresholds.direct_reasoning {
                out.push(Detection {
                    pattern: ErrorPattern::DirectReasoning,
                    nodes: path,
                    step: None,
                });
            }
        }
    }

    let mut edges: Vec<_> = tree.edges.iter().collect();
    edges.sort_by_key(|e| e.child);
    for e in edges {
        let gap = tree.nodes[e.child].step - tree.nodes[e.parent].step;
        if gap >= thresholds.skipped_thinking {
            out.push(Detection {
                pattern: ErrorPattern::SkippedThinking,
                nodes: vec![e.parent, e.child],
                step: Some(tree.nodes[e.parent].step),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{TreeEdge, TreeNode};
    use ThoughtFunction::*;

    /// Tree from (parent, step, function) triples; node 0 is the root.
    pub(crate) fn tree_from(spec: &[(usize, usize, ThoughtFunction)]) -> ReasoningTree {
        let mut nodes = vec![TreeNode { id: 0, thought: 0, occurrence: 0, step: 0, imputed: false }];
        let mut edges = Vec::new();
        for (i, &(parent, step, function)) in spec.iter().enumerate() {
            nodes.push(TreeNode { id: i + 1, thought: i + 1, occurrence: 1, step, imputed: false });
            edges.push(TreeEdge { parent, child: i + 1, function, importance: None });
        }
        ReasoningTree::from_parts(nodes, edges, 0).unwrap()
    }

    fn patterns(d: &[Detection]) -> Vec<ErrorPattern> {
        d.iter().map(|d| d.pattern).collect()
    }

    #[test]
    fn star_over_branching() {
        let spec: Vec<_> = (0..6).map(|i| (0, 1 + i % 2, Exploration)).collect();
        let d = detect_patterns(&tree_from(&spec), &PatternThresholds::default());
        assert_eq!(patterns(&d), [ErrorPattern::OverBranching]);
        assert_eq!(d[0].nodes, [0]);
    }

    #[test]
    fn continuation_children_do_not_count_as_branching() {
        let spec: Vec<_> = (0..4).map(|i| (0, 1 + i % 2, Continuation)).collect();
        assert!(detect_patterns(&tree_from(&spec), &PatternThresholds::default()).is_empty());
    }

    #[test]
    fn short_chain_is_clean() {
        let t = tree_from(&[(0, 1, Continuation), (1, 2, Continuation), (2, 3, Continuation)]);
        assert!(detect_patterns(&t, &PatternThresholds::default()).is_empty());
    }

    #[test]
    fn long_chain_is_direct_reasoning() {
        let t = tree_from(&[(0, 1, Continuation), (1, 2, Continuation), (2, 3, Continuation), (3, 4, Continuation)]);
        let d = detect_patterns(&t, &PatternThresholds::default());
        assert_eq!(patterns(&d), [ErrorPattern::DirectReasoning]);
        assert_eq!(d[0].nodes, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn big_jump_is_skipped_thinking() {
        let t = tree_from(&[(0, 1, Continuation), (1, 5, Continuation)]);
        let d = detect_patterns(&t, &PatternThresholds::default());
        // The root-to-leaf path also spans 5 steps through a single intermediate.
        assert!(patterns(&d).contains(&ErrorPattern::SkippedThinking));
        let single = tree_from(&[(0, 1, Continuation), (0, 1, Exploration), (1, 5, Continuation), (1, 2, Continuation)]);
        let d = detect_patterns(&single, &PatternThresholds::default());
        assert_eq!(patterns(&d), [ErrorPattern::SkippedThinking]);
        assert_eq!(d[0].nodes, [1, 3]);
    }

    #[test]
    fn crowded_step_is_redundancy() {
        let spec: Vec<_> = (0..5).map(|_| (0, 1, Continuation)).collect();
        let d = detect_patterns(&tree_from(&spec), &PatternThresholds::default());
        assert_eq!(patterns(&d), [ErrorPattern::StepRedundancy]);
        assert_eq!(d[0].step, Some(1));
        assert_eq!(d[0].nodes.len(), 5);
    }
}
