use std::path::{Path, PathBuf};

use emargin_core::encoder::EncoderConfig;
use emargin_core::eval::EvalSpec;
use emargin_core::signal::{CsvSchema, SplitSpec, StftConfig, SynthSpec};
use emargin_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where the raw data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synth(SynthSpec),
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

impl Default for Source {
    fn default() -> Self {
        Source::Synth(SynthSpec::default())
    }
}

/// Everything a run needs, loaded from one JSON file. Missing fields take
/// their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: String,
    pub source: Source,
    /// Seed for synthetic generation, kept apart from the training seed so
    /// every training seed sees the same data.
    pub data_seed: u64,
    pub stft: StftConfig,
    pub seq_len: usize,
    pub split: SplitSpec,
    /// `input_dim` is overwritten by the width of the loaded data.
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub eval: EvalSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "synth".into(),
            source: Source::default(),
            data_seed: 0,
            stft: StftConfig::default(),
            seq_len: 120,
            split: SplitSpec::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.dataset.is_empty() {
            return Err(CliError::usage("dataset name is empty"));
        }
        if self.seq_len < 3 {
            return Err(CliError::usage(format!("seq_len {} is below 3", self.seq_len)));
        }
        if let Source::Csv { path, .. } = &self.source {
            if !path.exists() {
                return Err(CliError::usage(format!("csv source {} does not exist", path.display())));
            }
        }
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn round_trips_with_infinite_fields() {
        let mut cfg = RunConfig::default();
        cfg.train.loss.threshold = f64::INFINITY;
        if let Source::Synth(s) = &mut cfg.source {
            s.regime_dwell = f64::INFINITY;
        }
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn csv_source_parses() {
        let cfg: RunConfig = serde_json::from_str(r#"{"source": {"csv": {"path": "x.csv"}}}"#).unwrap();
        assert!(matches!(cfg.source, Source::Csv { .. }));
        assert!(cfg.validate().is_err());
    }
}
