//! Raw series ingestion, STFT features, sequence windowing and splits.

mod batch;
mod csv_io;
mod emsb;
mod stft;
mod synth;

use std::path::PathBuf;

pub use batch::{balanced_subset, split, window_sequences, BatchMeta, EvalSet, SequenceBatch, SplitSpec};
pub use csv_io::{load_csv, write_csv, CsvSchema};
pub use emsb::{decode_batch, encode_batch, read_batch, write_batch, EMSB_MAGIC, EMSB_VERSION};
pub use stft::{stft, Frames, StftConfig, WindowFn};
pub use synth::{regime_means, synth_regimes, SynthSpec};

/// Integer class label attached to samples, frames and steps.
pub type Label = i32;

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("data row {row}, column `{column}`: cannot parse {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("series has no samples")]
    Empty,
    #[error("{0}")]
    Domain(String),
    #[error("class {class}: requested {requested}, only {available} available")]
    InsufficientClass {
        class: Label,
        requested: usize,
        available: usize,
    },
    #[error("batch file: {0}")]
    Format(String),
}

impl SignalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// Multichannel series sampled at a single rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub names: Vec<String>,
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: f64,
    pub labels: Option<Vec<Label>>,
}

impl RawSeries {
    pub fn new(
        names: Vec<String>,
        channels: Vec<Vec<f64>>,
        sample_rate: f64,
        labels: Option<Vec<Label>>,
    ) -> Result<Self, SignalError> {
        if names.len() != channels.len() {
            return Err(SignalError::Domain(format!(
                "{} names for {} channels",
                names.len(),
                channels.len()
            )));
        }
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(SignalError::Domain("channels differ in length".into()));
        }
        if labels.as_ref().is_some_and(|l| l.len() != len) {
            return Err(SignalError::Domain("labels differ in length from channels".into()));
        }
        Ok(Self {
            names,
            channels,
            sample_rate,
            labels,
        })
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }
}
