use std::path::Path;

use opic_core::models::{TrainConfig, UNetConfig};
use opic_core::synthdata::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Contents of a `--config` TOML file; every table is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub net: UNetConfig,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_and_malformed_files_are_usage_errors() {
        assert_eq!(ExperimentConfig::load(None).unwrap(), ExperimentConfig::default());
        let err = ExperimentConfig::load(Some(Path::new("/nonexistent/exp.toml"))).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        std::fs::write(&p, "[train]\nepochz = 3\n").unwrap();
        assert!(matches!(ExperimentConfig::load(Some(&p)), Err(CliError::Usage(_))));
    }

    #[test]
    fn partial_tables_keep_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        std::fs::write(&p, "[synth]\nlevel = 2\n\n[net]\nwidths = [4, 8]\n").unwrap();
        let c = ExperimentConfig::load(Some(&p)).unwrap();
        assert_eq!(c.synth.level, 2);
        assert_eq!(c.synth.groups, SynthConfig::default().groups);
        assert_eq!(c.net.widths, vec![4, 8]);
        assert_eq!(c.train, TrainConfig::default());
    }
}
