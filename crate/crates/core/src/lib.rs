//! Structural analysis of long chain-of-thought transcripts.
//!
//! The pipeline segments a transcript into thoughts, annotates them with an
//! LLM (sketch steps and thought functions), assembles a reasoning tree,
//! encodes the tree as a graph, and classifies it with a graph-attention
//! network. Explanations, error-pattern detectors and best-of-N selection
//! build on the trained classifier.

pub mod annotator;
pub mod config;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod features;
pub mod gnn;
pub mod segmenter;
pub mod selector;
pub mod tree;
pub mod viz;

pub use annotator::{AnnotatedChain, AnnotatedThought, ReasoningSketch, StepAssignment, ThoughtFunction};
pub use config::PipelineConfig;
pub use dataset::{DatasetRecord, TreeDocument};
pub use error::{Error, Result};
pub use explain::{detect_patterns, explain, EdgeImportance, ErrorPattern};
pub use features::{featurize, normalize, GraphSample, NormStats};
pub use gnn::{ClassifierConfig, TreeClassifier};
pub use segmenter::{split_thoughts, SeparatorProfile, Thought};
pub use selector::{Candidate, Strategy};
pub use tree::{build_tree, ReasoningTree, TreeEdge, TreeNode};
