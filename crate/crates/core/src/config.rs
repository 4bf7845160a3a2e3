//! Pipeline settings loaded from a JSON file; every section is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotator::AnnotatorConfig;
use crate::dataset::LabelSet;
use crate::error::{Error, Result};
use crate::explain::{ExplainerConfig, PatternThresholds};
use crate::gnn::{BaselineConfig, ClassifierConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Built-in separator profile name or path to a profile JSON file.
    pub profile: String,
    pub labels: LabelSet,
    pub annotator: AnnotatorConfig,
    pub classifier: ClassifierConfig,
    pub baseline: BaselineConfig,
    pub explainer: ExplainerConfig,
    pub thresholds: PatternThresholds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            profile: "deepseek-family".into(),
            labels: LabelSet::default(),
            annotator: AnnotatorConfig::default(),
            classifier: ClassifierConfig::default(),
            baseline: BaselineConfig::default(),
            explainer: ExplainerConfig::default(),
            thresholds: PatternThresholds::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The file's settings, or defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
