//! EEG recordings: EDF and CSV parsing, synthetic test signals, and
//! fixed-duration windowing.

mod csv;
mod edf;
mod synth;
mod window;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::csv::parse_csv;
pub use edf::{parse_edf, parse_edf_header, write_edf, EdfHeader, EdfSignal};
pub use synth::{synthesize_recording, SynthSpec};
pub use window::{iter_windows, Window, WindowSpec, Windows};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("EDF header truncated: need {needed} bytes, got {got}")]
    TruncatedHeader { needed: usize, got: usize },
    #[error("EDF version field {0:?} is not \"0\"")]
    BadMagic(String),
    #[error("EDF signals disagree on samples per record: {0:?}")]
    InconsistentRates(Vec<usize>),
    #[error("EDF signal {signal} has digital_max {max} <= digital_min {min}")]
    ScaleUndefined { signal: usize, min: i32, max: i32 },
    #[error("EDF header field `{field}` has unparseable value {value:?}")]
    BadHeaderField { field: &'static str, value: String },
    #[error("EDF data truncated: need {needed} bytes, got {got}")]
    TruncatedData { needed: usize, got: usize },
    #[error("cannot write EDF: {0}")]
    EdfWrite(String),
    #[error("CSV line {line}: expected {expected} columns, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("CSV line {line}, column {column}: {cell:?} is not a number")]
    NonNumericCell { line: usize, column: usize, cell: String },
    #[error("input contains no samples")]
    EmptyInput,
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid window spec: {0}")]
    InvalidWindowSpec(String),
    #[error("invalid synth spec: {0}")]
    InvalidSynthSpec(String),
    #[error("window of {window} samples is longer than the recording ({available} samples)")]
    WindowLongerThanRecording { window: usize, available: usize },
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Class labels attached to consecutive, non-overlapping windows of
/// `window_s` seconds from the start of a recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowLabels {
    pub window_s: f64,
    pub num_classes: usize,
    pub classes: BTreeMap<usize, u16>,
}

/// Multichannel recording in physical units (µV).
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording {
    pub source_id: String,
    sample_rate_hz: f64,
    channel_labels: Vec<String>,
    samples: Vec<Vec<f64>>,
    labels: Option<WindowLabels>,
}

impl EegRecording {
    pub fn new(
        source_id: impl Into<String>,
        sample_rate_hz: f64,
        channel_labels: Vec<String>,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(IngestError::InvalidRecording(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.is_empty() {
            return Err(IngestError::InvalidRecording("no channels".into()));
        }
        let n = samples[0].len();
        if let Some((c, ch)) = samples.iter().enumerate().find(|(_, ch)| ch.len() != n) {
            return Err(IngestError::InvalidRecording(format!(
                "channel {c} has {} samples, channel 0 has {n}",
                ch.len()
            )));
        }
        if channel_labels.len() != samples.len() {
            return Err(IngestError::InvalidRecording(format!(
                "{} labels for {} channels",
                channel_labels.len(),
                samples.len()
            )));
        }
        Ok(Self {
            source_id: source_id.into(),
            sample_rate_hz,
            channel_labels,
            samples,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: WindowLabels) -> Result<Self> {
        if labels.window_s.is_nan() || labels.window_s <= 0.0 {
            return Err(IngestError::InvalidRecording("label window must be positive".into()));
        }
        if let Some((w, &c)) = labels.classes.iter().find(|(_, &c)| c as usize >= labels.num_classes) {
            return Err(IngestError::InvalidRecording(format!(
                "window {w} has class {c} but only {} classes are declared",
                labels.num_classes
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> Option<&WindowLabels> {
        self.labels.as_ref()
    }

    /// Class of the labeled window that fully contains samples
    /// `[start, start + len)`, if any.
    pub fn label_for_span(&self, start: usize, len: usize) -> Option<u16> {
        let labels = self.labels.as_ref()?;
        let span = (labels.window_s * self.sample_rate_hz).round() as usize;
        if span == 0 || len == 0 {
            return None;
        }
        let first = start / span;
        let last = (start + len - 1) / span;
        if first != last {
            return None;
        }
        labels.classes.get(&first).copied()
    }
}

/// Converts a real quantity that must be a whole count.
pub(crate) fn whole_count(value: f64) -> Option<usize> {
    let rounded = value.round();
    if rounded >= 1.0 && (value - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        Some(rounded as usize)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(n: usize) -> EegRecording {
        EegRecording::new("t", 10.0, vec!["a".into()], vec![vec![0.0; n]]).unwrap()
    }

    #[test]
    fn rejects_ragged_channels_and_bad_rate() {
        assert!(EegRecording::new("t", 10.0, vec!["a".into(), "b".into()], vec![vec![0.0; 3], vec![0.0; 2]]).is_err());
        assert!(EegRecording::new("t", 0.0, vec!["a".into()], vec![vec![0.0; 3]]).is_err());
    }

    #[test]
    fn label_class_must_be_declared() {
        let labels = WindowLabels {
            window_s: 1.0,
            num_classes: 2,
            classes: BTreeMap::from([(0, 0), (1, 2)]),
        };
        assert!(rec(20).with_labels(labels).is_err());
    }

    #[test]
    fn span_label_lookup() {
        let labels = WindowLabels {
            window_s: 1.0,
            num_classes: 2,
            classes: BTreeMap::from([(0, 0), (1, 1)]),
        };
        let r = rec(20).with_labels(labels).unwrap();
        assert_eq!(r.label_for_span(0, 10), Some(0));
        assert_eq!(r.label_for_span(10, 10), Some(1));
        assert_eq!(r.label_for_span(5, 10), None);
        assert_eq!(r.label_for_span(12, 5), Some(1));
    }

    #[test]
    fn whole_counts() {
        assert_eq!(whole_count(25.0), Some(25));
        assert_eq!(whole_count(0.05 * 500.0), Some(25));
        assert_eq!(whole_count(12.5), None);
        assert_eq!(whole_count(0.0), None);
    }
}
