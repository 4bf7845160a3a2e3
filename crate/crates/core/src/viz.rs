//! Static exports of a reasoning tree: Graphviz DOT and a self-contained HTML page.
//!
//! Edge color encodes the thought function, pen width and opacity encode the
//! importance (linear on [0, 1]). Backtracking edges also get a dashed arrow
//! from the child back to its parent.

use std::fmt::Write as _;

use crate::annotator::ThoughtFunction;
use crate::tree::{ReasoningTree, TreeEdge};

pub const MIN_PENWIDTH: f64 = 1.0;
pub const MAX_PENWIDTH: f64 = 5.0;

pub fn function_color(f: ThoughtFunction) -> &'static str {
    match f {
        ThoughtFunction::Continuation => "#4c72b0",
        ThoughtFunction::Exploration => "#dd8452",
        ThoughtFunction::Backtracking => "#c44e52",
        ThoughtFunction::Verification => "#55a868",
    }
}

pub fn penwidth(importance: Option<f64>) -> f64 {
    MIN_PENWIDTH + (MAX_PENWIDTH - MIN_PENWIDTH) * importance.unwrap_or(0.0).clamp(0.0, 1.0)
}

fn opacity(importance: Option<f64>) -> f64 {
    importance.map_or(1.0, |w| 0.3 + 0.7 * w.clamp(0.0, 1.0))
}

fn node_label(tree: &ReasoningTree, id: usize) -> String {
    if id == tree.root {
        return "root".into();
    }
    let n = tree.node(id);
    format!("N{}^{}", n.thought, n.occurrence)
}

fn sorted_edges(tree: &ReasoningTree) -> Vec<&TreeEdge> {
    let mut edges: Vec<&TreeEdge> = tree.edges.iter().collect();
    edges.sort_by_key(|e| e.child);
    edges
}

pub fn export_dot(tree: &ReasoningTree) -> String {
    let mut s = String::new();
    s.push_str("digraph reasoning_tree {\n");
    s.push_str("  rankdir=TB;\n");
    s.push_str("  node [shape=box, style=rounded, fontname=\"Helvetica\", fontsize=10];\n");
    s.push_str("  edge [arrowsize=0.7];\n");
    for n in &tree.nodes {
        let shape = if n.id == tree.root { ", shape=doublecircle" } else { "" };
        let style = if n.imputed { ", style=\"rounded,dashed\"" } else { "" };
        let _ = writeln!(
            s,
            "  n{} [label=\"{}\\nstep {}\"{shape}{style}];",
            n.id,
            node_label(tree, n.id),
            n.step
        );
    }
    for e in sorted_edges(tree) {
        let alpha = (opacity(e.importance) * 255.0).round() as u8;
        let color = format!("{}{alpha:02x}", function_color(e.function));
        let _ = write!(
            s,
            "  n{} -> n{} [color=\"{color}\", penwidth={:.2}, tooltip=\"{}\"",
            e.parent,
            e.child,
            penwidth(e.importance),
            e.function.as_str()
        );
        if let Some(w) = e.importance {
            let _ = write!(s, ", label=\"{w:.2}\", fontsize=8");
        }
        s.push_str("];\n");
        if e.function == ThoughtFunction::Backtracking {
            let _ = writeln!(
                s,
                "  n{} -> n{} [style=dashed, constraint=false, color=\"{color}\", arrowhead=open];",
                e.child, e.parent
            );
        }
    }
    s.push_str("}\n");
    s
}

/// Horizontal slot per node: leaves get consecutive slots, parents sit over their children.
fn layout(tree: &ReasoningTree) -> Vec<f64> {
    let n = tree.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &tree.edges {
        children[e.parent].push(e.child);
    }
    children.iter_mut().for_each(|c| c.sort_unstable());
    let mut x = vec![0.0; n];
    let mut next = 0.0;
    // Iterative post-order.
    let mut stack = vec![(tree.root, false)];
    while let Some((id, done)) = stack.pop() {
        if done || children[id].is_empty() {
            if children[id].is_empty() {
                x[id] = next;
                next += 1.0;
            } else {
                let c = &children[id];
                x[id] = (x[c[0]] + x[c[c.len() - 1]]) / 2.0;
            }
            continue;
        }
        stack.push((id, true));
        for &c in children[id].iter().rev() {
            stack.push((c, false));
        }
    }
    x
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone HTML with an inline SVG drawing; loads no external resources.
pub fn export_html(tree: &ReasoningTree, title: &str) -> String {
    const DX: f64 = 70.0;
    const DY: f64 = 80.0;
    const PAD: f64 = 40.0;
    let xs = layout(tree);
    let pos = |id: usize| (PAD + xs[id] * DX, PAD + tree.node(id).step as f64 * DY);
    let width = PAD * 2.0 + xs.iter().cloned().fold(0.0, f64::max) * DX;
    let height = PAD * 2.0 + tree.max_step() as f64 * DY;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    for e in sorted_edges(tree) {
        let (x1, y1) = pos(e.parent);
        let (x2, y2) = pos(e.child);
        let color = function_color(e.function);
        let _ = writeln!(
            svg,
            "  <line class=\"edge {}\" x1=\"{x1:.1}\" y1=\"{y1:.1}\" x2=\"{x2:.1}\" y2=\"{y2:.1}\" stroke=\"{color}\" stroke-width=\"{:.2}\" stroke-opacity=\"{:.2}\"><title>{}{}</title></line>",
            e.function.as_str(),
            penwidth(e.importance),
            opacity(e.importance),
            e.function.as_str(),
            e.importance.map(|w| format!(" {w:.3}")).unwrap_or_default()
        );
        if e.function == ThoughtFunction::Backtracking {
            let (cx, cy) = ((x1 + x2) / 2.0 + 18.0, (y1 + y2) / 2.0);
            let _ = writeln!(
                svg,
                "  <path class=\"reverse\" d=\"M{x2:.1},{y2:.1} Q{cx:.1},{cy:.1} {x1:.1},{y1:.1}\" fill=\"none\" stroke=\"{color}\" stroke-dasharray=\"4 3\"/>"
            );
        }
    }
    for n in &tree.nodes {
        let (x, y) = pos(n.id);
        let dash = if n.imputed { " stroke-dasharray=\"3 2\"" } else { "" };
        let _ = writeln!(
            svg,
            "  <g class=\"node\"><circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"14\" fill=\"#ffffff\" stroke=\"#333333\"{dash}/><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"9\">{}</text><title>step {}</title></g>",
            y + 3.0,
            escape(&node_label(tree, n.id)),
            n.step
        );
    }
    svg.push_str("</svg>\n");

    let mut legend = String::new();
    for f in [
        ThoughtFunction::Continuation,
        ThoughtFunction::Exploration,
        ThoughtFunction::Backtracking,
        ThoughtFunction::Verification,
    ] {
        let _ = write!(
            legend,
            "<span style=\"color:{}\">&#9632; {}</span> ",
            function_color(f),
            f.as_str()
        );
    }

    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{t}</title>\n<style>body{{font-family:sans-serif;margin:16px}} .legend span{{margin-right:12px}}</style>\n</head>\n<body>\n<h3>{t}</h3>\n<p class=\"legend\">{legend}</p>\n{svg}</body>\n</html>\n",
        t = escape(title)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TreeNode;

    fn tree_with(function: ThoughtFunction, importance: Option<f64>) -> ReasoningTree {
        let nodes = (0..3)
            .map(|id| TreeNode { id, thought: id, occurrence: (id > 0) as usize, step: id.min(1), imputed: false })
            .collect();
        let edges = vec![
            TreeEdge { parent: 0, child: 1, function: ThoughtFunction::Continuation, importance },
            TreeEdge { parent: 0, child: 2, function, importance: importance.map(|_| 1.0) },
        ];
        ReasoningTree::from_parts(nodes, edges, 0).unwrap()
    }

    #[test]
    fn one_dashed_reverse_for_one_backtrack() {
        let dot = export_dot(&tree_with(ThoughtFunction::Backtracking, None));
        assert_eq!(dot.matches("style=dashed").count(), 1);
        assert!(dot.contains("n2 -> n0 [style=dashed"));
        let dot = export_dot(&tree_with(ThoughtFunction::Exploration, None));
        assert_eq!(dot.matches("style=dashed").count(), 0);
    }

    #[test]
    fn importance_maps_to_width_endpoints() {
        let dot = export_dot(&tree_with(ThoughtFunction::Exploration, Some(0.0)));
        assert!(dot.contains("n0 -> n1 [color=\"#4c72b04d\", penwidth=1.00"));
        assert!(dot.contains("n0 -> n2 [color=\"#dd8452ff\", penwidth=5.00"));
        assert_eq!(penwidth(Some(0.5)), 3.0);
    }

    #[test]
    fn html_is_self_contained() {
        let html = export_html(&tree_with(ThoughtFunction::Backtracking, Some(0.2)), "a <tree>");
        assert!(!html.contains("http"));
        assert!(!html.contains("src="));
        assert!(html.contains("a &lt;tree&gt;"));
        assert_eq!(html.matches("<circle").count(), 3);
        assert_eq!(html.matches("class=\"reverse\"").count(), 1);
    }
}
