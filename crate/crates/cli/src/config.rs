use std::path::{Path, PathBuf};

use crnn_core::separation::SeparationConfig;
use crnn_core::seq2seq::TrainConfig;
use crnn_core::taskgen::InitState;
use crnn_core::{Backend, CellKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub separation: SeparationConfig,
    pub io: IoSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub n: usize,
    pub k: usize,
    pub count: usize,
    pub seed: u64,
    pub init_state: InitState,
    pub modified: bool,
    pub backend: Backend,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self { n: 4, k: 2, count: 100, seed: 0, init_state: InitState::Squeezed, modified: false, backend: Backend::Exact }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub cell_kind: CellKind,
    /// Overrides `train.n` when set.
    pub n: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { cell_kind: CellKind::Crnn, n: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    /// `target<TAB>source` corpus; the bundled toy corpus when unset.
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses and validates; errors carry `origin:line:column`.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
            CliError::Usage(format!("{origin}:{}:{}: {msg}", e.line(), e.column()))
        })?;
        cfg.validate().map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> crnn_core::Result<()> {
        if self.task.n < 2 {
            return Err(crnn_core::Error::InvalidArgument("task.n must be at least 2".into()));
        }
        self.train_config().validate()?;
        self.separation.validate()
    }

    /// `train` with the model width applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(n) = self.model.n {
            t.n = n;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(RunConfig::parse(&text, "x").unwrap(), c);
        assert_eq!(RunConfig::parse("{}", "x").unwrap(), c);
    }

    #[test]
    fn unknown_keys_report_their_line() {
        let text = "{\n  \"task\": {\n    \"n\": 4,\n    \"bogus\": 1\n  }\n}";
        let CliError::Usage(msg) = RunConfig::parse(text, "cfg.json").unwrap_err() else { panic!() };
        assert!(msg.starts_with("cfg.json:4:"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn semantic_errors_are_usage_errors() {
        let err = RunConfig::parse("{\"train\": {\"epochs\": 0}}", "c").unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(RunConfig::parse("{\"model\": {\"n\": 6, \"cell_kind\": \"gru\"}}", "c").unwrap().train_config().n == 6);
    }
}
