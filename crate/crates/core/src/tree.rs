//! Assembly of annotated thoughts into a reasoning tree.
//!
//! Thoughts are inserted in order. A thought mapped to steps `[s1, .., sn]`
//! becomes `n` nodes chained one under the other. The first of them hangs
//! under the latest node when `s1` is deeper than it; otherwise the builder
//! backtracks to the most recently created node at step `s1 - 1` and opens a
//! new branch there.

use serde::{Deserialize, Serialize};

use crate::annotator::{AnnotatedThought, ThoughtFunction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub thought: usize,
    /// 1-based position within the thought's step list; 0 for the virtual root.
    pub occurrence: usize,
    pub step: usize,
    /// Set when the thought had no step assignment and its step was inferred.
    pub imputed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub parent: usize,
    pub child: usize,
    pub function: ThoughtFunction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<f64>,
}

/// Rooted tree over (thought, step) placements. Node ids are creation
/// ordinals and index directly into `nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningTree {
    pub nodes: Vec<TreeNode>,
    pub edges: Vec<TreeEdge>,
    pub root: usize,
    pub latest: usize,
}

#[derive(Serialize, Deserialize)]
struct CanonicalTree {
    nodes: Vec<TreeNode>,
    edges: Vec<TreeEdge>,
    root: usize,
}

impl Serialize for ReasoningTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut nodes = self.nodes.clone();
        nodes.sort_by_key(|n| n.id);
        let mut edges = self.edges.clone();
        edges.sort_by_key(|e| (e.child, e.parent));
        CanonicalTree {
            nodes,
            edges,
            root: self.root,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ReasoningTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = CanonicalTree::deserialize(d)?;
        ReasoningTree::from_parts(raw.nodes, raw.edges, raw.root).map_err(serde::de::Error::custom)
    }
}

impl ReasoningTree {
    fn with_root() -> Self {
        Self {
            nodes: vec![TreeNode {
                id: 0,
                thought: 0,
                occurrence: 0,
                step: 0,
                imputed: false,
            }],
            edges: Vec::new(),
            root: 0,
            latest: 0,
        }
    }

    /// Rebuilds a tree from serialized parts, checking every structural invariant.
    pub fn from_parts(mut nodes: Vec<TreeNode>, mut edges: Vec<TreeEdge>, root: usize) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        if nodes.iter().enumerate().any(|(i, n)| n.id != i) {
            return Err(Error::Integrity("node ids must be 0..n without gaps".into()));
        }
        edges.sort_by_key(|e| (e.child, e.parent));
        let latest = nodes.len().checked_sub(1).ok_or(Error::EmptyInput("tree nodes"))?;
        let tree = Self {
            nodes,
            edges,
            root,
            latest,
        };
        tree.validate()?;
        Ok(tree)
    }

    /// Checks rootedness, single parents, reachability and step monotonicity.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let root = self
            .nodes
            .get(self.root)
            .ok_or_else(|| Error::Integrity(format!("root {} does not exist", self.root)))?;
        if root.step != 0 {
            return Err(Error::Integrity("root must be at step 0".into()));
        }
        let mut parent = vec![None; n];
        for e in &self.edges {
            if e.parent >= n || e.child >= n {
                return Err(Error::Integrity(format!("edge {}->{} references a missing node", e.parent, e.child)));
            }
            if e.child == self.root {
                return Err(Error::Integrity("root has a parent".into()));
            }
            if parent[e.child].replace(e.parent).is_some() {
                return Err(Error::Integrity(format!("node {} has two parents", e.child)));
            }
            if self.nodes[e.child].step <= self.nodes[e.parent].step {
                return Err(Error::Integrity(format!(
                    "edge {}->{} does not increase the step",
                    e.parent, e.child
                )));
            }
            if let Some(w) = e.importance {
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Integrity(format!("importance {w} outside [0, 1]")));
                }
            }
        }
        // Steps strictly increase along edges, so the parent relation is acyclic;
        // a single parent per non-root node then makes every node reach the root.
        if let Some(orphan) = (0..n).find(|&i| i != self.root && parent[i].is_none()) {
            return Err(Error::Integrity(format!("node {orphan} is not connected to the root")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn children(&self, id: usize) -> impl Iterator<Item = &TreeEdge> {
        self.edges.iter().filter(move |e| e.parent == id)
    }

    pub fn child_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.nodes.len()];
        for e in &self.edges {
            counts[e.parent] += 1;
        }
        counts
    }

    pub fn parent_edge(&self, id: usize) -> Option<&TreeEdge> {
        self.edges.iter().find(|e| e.child == id)
    }

    pub fn max_step(&self) -> usize {
        self.nodes.iter().map(|n| n.step).max().unwrap_or(0)
    }

    /// Most recently created node at exactly `step`.
    fn latest_at_step(&self, step: usize) -> Option<usize> {
        self.nodes.iter().rev().find(|n| n.step == step).map(|n| n.id)
    }

    /// Most recently created node among those with the largest step below `bound`.
    fn latest_below_step(&self, bound: usize) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.step < bound)
            .max_by_key(|n| (n.step, n.id))
            .map(|n| n.id)
            .unwrap_or(self.root)
    }

    fn push_node(&mut self, thought: usize, occurrence: usize, step: usize, imputed: bool) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            id,
            thought,
            occurrence,
            step,
            imputed,
        });
        self.latest = id;
        id
    }

    fn insert_thought(&mut self, thought: &AnnotatedThought) {
        let mut steps = thought.steps.clone();
        steps.sort_unstable();
        steps.dedup();
        steps.retain(|&s| s > 0);

        let latest_step = self.nodes[self.latest].step;
        let (steps, imputed) = if steps.is_empty() {
            if thought.index == 0 {
                // The virtual root stands in for an unassigned opening thought.
                return;
            }
            (vec![latest_step + 1], true)
        } else {
            (steps, false)
        };

        let first = steps[0];
        let parent = if first > latest_step {
            self.latest
        } else {
            self.latest_at_step(first - 1)
                .unwrap_or_else(|| self.latest_below_step(first))
        };
        let function = thought.function.unwrap_or(ThoughtFunction::Continuation);

        let mut prev = parent;
        for (j, &step) in steps.iter().enumerate() {
            let id = self.push_node(thought.index, j + 1, step, imputed);
            self.edges.push(TreeEdge {
                parent: prev,
                child: id,
                function: if j == 0 { function } else { ThoughtFunction::Continuation },
                importance: None,
            });
            prev = id;
        }
    }

    pub fn to_canonical_json(&self) -> String {
        to_canonical_json(self)
    }
}

/// Builds the tree for an annotated chain. Deterministic, including node ids.
pub fn build_tree(thoughts: &[AnnotatedThought]) -> Result<ReasoningTree> {
    if thoughts.is_empty() {
        return Err(Error::EmptyInput("annotated chain"));
    }
    let mut tree = ReasoningTree::with_root();
    for t in thoughts {
        tree.insert_thought(t);
    }
    Ok(tree)
}

/// Pretty-printed JSON with fixed key order, nodes by id and edges by child.
pub fn to_canonical_json(tree: &ReasoningTree) -> String {
    let mut s = serde_json::to_string_pretty(tree).expect("tree serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<ReasoningTree> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ThoughtFunction::*;

    pub(crate) fn chain(spec: &[(&[usize], Option<ThoughtFunction>)]) -> Vec<AnnotatedThought> {
        spec.iter()
            .enumerate()
            .map(|(index, (steps, function))| AnnotatedThought {
                index,
                text: format!("t{index}"),
                word_count: 1,
                token_count: 1,
                steps: steps.to_vec(),
                function: *function,
            })
            .collect()
    }

    fn parent_of(tree: &ReasoningTree, id: usize) -> usize {
        tree.parent_edge(id).unwrap().parent
    }

    #[test]
    fn backtracks_to_step_zero_for_multi_step_thought() {
        // Latest node at step 3, next thought covers steps 1..3.
        let c = chain(&[
            (&[], None),
            (&[1], Some(Continuation)),
            (&[2], Some(Continuation)),
            (&[3], Some(Continuation)),
            (&[1, 2, 3], Some(Exploration)),
        ]);
        let t = build_tree(&c).unwrap();
        assert_eq!(t.len(), 7);
        let n8 = &t.nodes[4];
        assert_eq!((n8.thought, n8.occurrence, n8.step), (4, 1, 1));
        assert_eq!(parent_of(&t, 4), t.root);
        assert_eq!(parent_of(&t, 5), 4);
        assert_eq!(parent_of(&t, 6), 5);
        assert_eq!(t.parent_edge(4).unwrap().function, Exploration);
        assert_eq!(t.parent_edge(5).unwrap().function, Continuation);
        assert_eq!(t.latest, 6);
    }

    #[test]
    fn single_thought() {
        let t = build_tree(&chain(&[(&[1], None)])).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.edges.len(), 1);
        assert_eq!(t.edges[0].function, Continuation);
    }

    #[test]
    fn linear_chain() {
        let c = chain(&[(&[1], None), (&[2], Some(Continuation)), (&[3], Some(Continuation))]);
        let t = build_tree(&c).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!((1..4).map(|i| parent_of(&t, i)).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(t.max_step(), 3);
    }

    #[test]
    fn equal_step_opens_sibling_branch() {
        let c = chain(&[(&[1], None), (&[2], Some(Continuation)), (&[2], Some(Exploration))]);
        let t = build_tree(&c).unwrap();
        assert_eq!(parent_of(&t, 3), 1);
    }

    #[test]
    fn most_recent_node_at_step_is_by_creation_order() {
        let c = chain(&[
            (&[1], None),
            (&[2], Some(Continuation)),
            (&[1], Some(Exploration)),
            (&[3], Some(Continuation)),
            (&[2], Some(Backtracking)),
        ]);
        let t = build_tree(&c).unwrap();
        // Thought 2 (node 3) is the newest step-1 node.
        assert_eq!(parent_of(&t, 3), 0);
        assert_eq!(parent_of(&t, 4), 3);
        assert_eq!(parent_of(&t, 5), 3);
    }

    #[test]
    fn gap_fallback_uses_deepest_shallower_node() {
        // Step 3 requested with no step-2 node anywhere.
        let c = chain(&[(&[1], None), (&[4], Some(Continuation)), (&[3], Some(Exploration))]);
        let t = build_tree(&c).unwrap();
        assert_eq!(parent_of(&t, 3), 1);
    }

    #[test]
    fn empty_assignment_is_imputed_below_latest() {
        let c = chain(&[(&[], None), (&[2], Some(Continuation)), (&[], Some(Verification))]);
        let t = build_tree(&c).unwrap();
        assert_eq!(t.len(), 3);
        let imputed = &t.nodes[2];
        assert!(imputed.imputed);
        assert_eq!(imputed.step, 3);
        assert_eq!(parent_of(&t, 2), 1);
        assert_eq!(t.edges[1].function, Verification);
    }

    #[test]
    fn unsorted_steps_are_normalized() {
        let c = chain(&[(&[3, 1, 1, 2], None)]);
        let t = build_tree(&c).unwrap();
        assert_eq!(t.nodes.iter().map(|n| n.step).collect::<Vec<_>>(), [0, 1, 2, 3]);
    }

    #[test]
    fn empty_chain_errors() {
        assert!(matches!(build_tree(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn canonical_json_fixpoint() {
        let c = chain(&[
            (&[], None),
            (&[1], Some(Continuation)),
            (&[2, 3], Some(Continuation)),
            (&[2], Some(Backtracking)),
        ]);
        let t = build_tree(&c).unwrap();
        let s1 = to_canonical_json(&t);
        let back = from_json(&s1).unwrap();
        assert_eq!(back, t);
        assert_eq!(to_canonical_json(&back), s1);
        assert!(s1.find("\"nodes\"").unwrap() < s1.find("\"edges\"").unwrap());
        assert!(!s1.contains("importance"));
    }

    #[test]
    fn rejects_invalid_trees() {
        let good = build_tree(&chain(&[(&[1], None), (&[2], Some(Continuation))])).unwrap();
        let mut bad = good.clone();
        bad.nodes[2].step = 1;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.edges.pop();
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.edges[0].importance = Some(1.5);
        assert!(bad.validate().is_err());
        let json = to_canonical_json(&good).replace("\"root\": 0", "\"root\": 9");
        assert!(from_json(&json).is_err());
    }
}
