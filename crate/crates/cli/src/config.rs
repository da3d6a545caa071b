use std::path::Path;

use dvta::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a training run needs besides data: `{"model": ..., "train": ...}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Every violated invariant as `section.field: message`.
    pub fn violations(&self) -> Vec<String> {
        let model = self.model.violations().into_iter().map(|(f, m)| format!("model.{f}: {m}"));
        let train = self.train.violations().into_iter().map(|(f, m)| format!("train.{f}: {m}"));
        model.chain(train).collect()
    }
}

/// Parses `text` with defaults filled in. Type and syntax errors carry the
/// JSON path of the offending value.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<String>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            vec![inner.to_string()]
        } else {
            vec![format!("{path}: {inner}")]
        }
    })?;
    let v = config.violations();
    if v.is_empty() {
        Ok(config)
    } else {
        Err(v)
    }
}

/// Reads, resolves and checks a run config file.
pub fn validate_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|errors| CliError::Config { path: path.to_path_buf(), errors })
}
