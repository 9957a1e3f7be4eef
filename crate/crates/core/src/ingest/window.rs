use serde::{Deserialize, Serialize};

use super::{whole_count, EegRecording, IngestError, Result};

/// Window and segment durations for image construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub window_s: f64,
    pub segment_ms: f64,
    /// Defaults to `window_s` (non-overlapping windows).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride_s: Option<f64>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self::new(5.0, 50.0)
    }
}

impl WindowSpec {
    pub fn new(window_s: f64, segment_ms: f64) -> Self {
        Self {
            window_s,
            segment_ms,
            stride_s: None,
        }
    }

    pub fn with_stride(mut self, stride_s: f64) -> Self {
        self.stride_s = Some(stride_s);
        self
    }

    pub fn stride_s(&self) -> f64 {
        self.stride_s.unwrap_or(self.window_s)
    }

    /// Rate-independent checks.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("window_s", self.window_s),
            ("segment_ms", self.segment_ms),
            ("stride_s", self.stride_s()),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(IngestError::InvalidWindowSpec(format!("{name} must be positive, got {v}")));
            }
        }
        self.segments_per_window()?;
        Ok(())
    }

    /// Number of segments (image columns) per window.
    pub fn segments_per_window(&self) -> Result<usize> {
        whole_count(self.window_s * 1000.0 / self.segment_ms).ok_or_else(|| {
            IngestError::InvalidWindowSpec(format!(
                "{} s window is not a whole number of {} ms segments",
                self.window_s, self.segment_ms
            ))
        })
    }

    pub fn samples_per_segment(&self, rate_hz: f64) -> Result<usize> {
        whole_count(self.segment_ms / 1000.0 * rate_hz).ok_or_else(|| {
            IngestError::InvalidWindowSpec(format!(
                "{} ms at {rate_hz} Hz is not a whole number of samples",
                self.segment_ms
            ))
        })
    }

    pub fn samples_per_window(&self, rate_hz: f64) -> Result<usize> {
        Ok(self.samples_per_segment(rate_hz)? * self.segments_per_window()?)
    }

    pub fn stride_samples(&self, rate_hz: f64) -> Result<usize> {
        whole_count(self.stride_s() * rate_hz).ok_or_else(|| {
            IngestError::InvalidWindowSpec(format!(
                "{} s stride at {rate_hz} Hz is not a whole number of samples",
                self.stride_s()
            ))
        })
    }
}

/// One window of a recording: `channels[c]` holds that channel's samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Window<'a> {
    pub index: usize,
    pub start_sample: usize,
    pub channels: Vec<&'a [f64]>,
    pub label: Option<u16>,
}

/// Iterator returned by [`iter_windows`].
pub struct Windows<'a> {
    rec: &'a EegRecording,
    window: usize,
    stride: usize,
    count: usize,
    next: usize,
}

impl<'a> Iterator for Windows<'a> {
    type Item = Window<'a>;

    fn next(&mut self) -> Option<Window<'a>> {
        if self.next >= self.count {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let start = index * self.stride;
        Some(Window {
            index,
            start_sample: start,
            channels: self
                .rec
                .samples()
                .iter()
                .map(|ch| &ch[start..start + self.window])
                .collect(),
            label: self.rec.label_for_span(start, self.window),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Windows<'_> {}

/// Fixed-length windows in time order; a trailing partial window is
/// dropped.
pub fn iter_windows<'a>(rec: &'a EegRecording, spec: &WindowSpec) -> Result<Windows<'a>> {
    spec.validate()?;
    let rate = rec.sample_rate_hz();
    let window = spec.samples_per_window(rate)?;
    let stride = spec.stride_samples(rate)?;
    if window > rec.len() {
        return Err(IngestError::WindowLongerThanRecording {
            window,
            available: rec.len(),
        });
    }
    let count = (rec.len() - window) / stride + 1;
    Ok(Windows {
        rec,
        window,
        stride,
        count,
        next: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(seconds: f64, rate: f64) -> EegRecording {
        let n = (seconds * rate) as usize;
        let data = (0..n).map(|i| i as f64).collect();
        EegRecording::new("r", rate, vec!["c0".into()], vec![data]).unwrap()
    }

    #[test]
    fn twelve_seconds_in_five_second_windows() {
        let rec = recording(12.0, 500.0);
        let w: Vec<_> = iter_windows(&rec, &WindowSpec::default()).unwrap().collect();
        assert_eq!(w.iter().map(|w| w.index).collect::<Vec<_>>(), [0, 1]);
        assert!(w.iter().all(|w| w.channels[0].len() == 2500));
        assert_eq!(w[1].channels[0][0], 2500.0);
    }

    #[test]
    fn half_overlap_on_ten_seconds() {
        let rec = recording(10.0, 500.0);
        let spec = WindowSpec::default().with_stride(2.5);
        let starts: Vec<f64> = iter_windows(&rec, &spec)
            .unwrap()
            .map(|w| w.start_sample as f64 / 500.0)
            .collect();
        assert_eq!(starts, [0.0, 2.5, 5.0]);
    }

    #[test]
    fn window_longer_than_recording() {
        let rec = recording(3.0, 500.0);
        assert!(matches!(
            iter_windows(&rec, &WindowSpec::default()),
            Err(IngestError::WindowLongerThanRecording { window: 2500, available: 1500 })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(WindowSpec::new(5.0, 30.0).validate().is_err());
        assert!(WindowSpec::new(2.0, 20.0).validate().is_ok());
        assert_eq!(WindowSpec::new(2.0, 20.0).segments_per_window().unwrap(), 100);
        assert_eq!(WindowSpec::default().samples_per_segment(200.0).unwrap(), 10);
        assert!(WindowSpec::default().samples_per_segment(250.0).is_err());
        assert!(WindowSpec::default().with_stride(-1.0).validate().is_err());
    }

    #[test]
    fn window_count_formula() {
        for (secs, stride) in [(10.0, 1.0), (17.3, 2.0), (5.0, 5.0), (30.0, 0.5)] {
            let rec = recording(secs, 100.0);
            let spec = WindowSpec::new(5.0, 50.0).with_stride(stride);
            let n = rec.len();
            let m = 500;
            let s = (stride * 100.0) as usize;
            assert_eq!(iter_windows(&rec, &spec).unwrap().count(), (n - m) / s + 1);
        }
    }
}
