use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, RawSeries, SignalError};

/// Which columns of a CSV file to read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    /// Channel columns in order. `None` takes every column except the label.
    pub channels: Option<Vec<String>>,
    pub label_column: Option<String>,
    pub sample_rate: f64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            channels: None,
            label_column: Some("label".into()),
            sample_rate: 50.0,
        }
    }
}

/// Reads a headered CSV. A row with any unparsable cell fails the whole load.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<RawSeries, SignalError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| SignalError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SignalError::MissingColumn(name.to_string()))
    };

    let label_idx = schema.label_column.as_deref().map(position).transpose()?;
    let names: Vec<String> = match &schema.channels {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let idx: Vec<usize> = names.iter().map(|n| position(n)).collect::<Result<_, _>>()?;
    if idx.is_empty() {
        return Err(SignalError::Domain("no channel columns".into()));
    }

    let mut channels = vec![Vec::new(); idx.len()];
    let mut labels = label_idx.map(|_| Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim();
        for (ch, &i) in channels.iter_mut().zip(&idx) {
            let raw = cell(i);
            let v: f64 = raw.parse().map_err(|_| SignalError::Parse {
                row,
                column: headers[i].clone(),
                value: raw.to_string(),
            })?;
            ch.push(v);
        }
        if let (Some(li), Some(ls)) = (label_idx, labels.as_mut()) {
            let raw = cell(li);
            let v: Label = raw.parse().map_err(|_| SignalError::Parse {
                row,
                column: headers[li].clone(),
                value: raw.to_string(),
            })?;
            ls.push(v);
        }
    }
    if channels[0].is_empty() {
        return Err(SignalError::Empty);
    }
    RawSeries::new(names, channels, schema.sample_rate, labels)
}

/// Writes a series in the layout [`load_csv`] reads, with shortest
/// round-trip float formatting.
pub fn write_csv(series: &RawSeries, path: impl AsRef<Path>) -> Result<(), SignalError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = series.names.clone();
    if series.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for t in 0..series.len() {
        let mut row: Vec<String> = series.channels.iter().map(|c| c[t].to_string()).collect();
        if let Some(l) = &series.labels {
            row.push(l[t].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| SignalError::io(path.as_ref(), e))?;
    Ok(())
}
