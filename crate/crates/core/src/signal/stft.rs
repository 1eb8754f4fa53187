use std::collections::BTreeMap;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{Label, RawSeries, SignalError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    Rect,
    #[default]
    Hann,
}

impl WindowFn {
    /// Periodic window coefficients of length `n`.
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowFn::Rect => vec![1.0; n],
            WindowFn::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
    pub window_fn: WindowFn,
    /// Emit `ln(1 + |X|)` instead of `|X|`.
    pub log_scale: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window: 50,
            hop: 25,
            window_fn: WindowFn::Hann,
            log_scale: false,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }
}

/// `n_frames × dim` STFT magnitudes with per-frame majority labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Frames {
    pub n_frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub labels: Option<Vec<Label>>,
    pub config: StftConfig,
}

impl Frames {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Majority label, ties broken toward the smaller label.
pub(crate) fn majority(labels: &[Label]) -> Label {
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut best = (labels[0], 0);
    for (l, c) in counts {
        if c > best.1 {
            best = (l, c);
        }
    }
    best.0
}

/// One-sided magnitude spectrogram of every channel, concatenated along
/// the feature axis per frame.
pub fn stft(series: &RawSeries, cfg: &StftConfig) -> Result<Frames, SignalError> {
    let len = series.len();
    if cfg.window == 0 || cfg.hop == 0 || cfg.hop > cfg.window {
        return Err(SignalError::Domain(format!(
            "need 0 < hop <= window, got window {} hop {}",
            cfg.window, cfg.hop
        )));
    }
    if cfg.window > len {
        return Err(SignalError::Domain(format!(
            "window {} exceeds series length {len}",
            cfg.window
        )));
    }
    let n_frames = (len - cfg.window) / cfg.hop + 1;
    let bins = cfg.bins();
    let dim = bins * series.num_channels();
    let coeffs = cfg.window_fn.coefficients(cfg.window);
    let fft = FftPlanner::new().plan_fft_forward(cfg.window);

    let mut data = vec![0.0; n_frames * dim];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.window];
    for (c, channel) in series.channels.iter().enumerate() {
        for f in 0..n_frames {
            let start = f * cfg.hop;
            for (b, (&x, &w)) in buf.iter_mut().zip(channel[start..start + cfg.window].iter().zip(&coeffs)) {
                *b = Complex::new(x * w, 0.0);
            }
            fft.process(&mut buf);
            let out = &mut data[f * dim + c * bins..f * dim + (c + 1) * bins];
            for (o, z) in out.iter_mut().zip(&buf) {
                let m = z.norm();
                *o = if cfg.log_scale { m.ln_1p() } else { m };
            }
        }
    }
    let labels = series.labels.as_ref().map(|ls| {
        (0..n_frames)
            .map(|f| majority(&ls[f * cfg.hop..f * cfg.hop + cfg.window]))
            .collect()
    });
    Ok(Frames {
        n_frames,
        dim,
        data,
        labels,
        config: cfg.clone(),
    })
}
