//! Uniform-rate EDF (not EDF+) reading and writing.
//!
//! Layout: a 256-byte ASCII header, 256 bytes of per-signal fields, then
//! data records. Each record holds `samples_per_record` little-endian
//! `i16` values for every signal in turn.

use super::{EegRecording, IngestError, Result};

const FIXED_HEADER: usize = 256;
const PER_SIGNAL: usize = 256;

/// Per-signal header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct EdfSignal {
    pub label: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub samples_per_record: usize,
}

impl EdfSignal {
    /// Slope of the digital-to-physical map.
    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        self.physical_min + (f64::from(digital) - f64::from(self.digital_min)) * self.gain()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient: String,
    pub recording: String,
    pub header_bytes: usize,
    /// `-1` in the file means unknown; resolved from the data length.
    pub num_records: i64,
    pub record_duration_s: f64,
    pub signals: Vec<EdfSignal>,
}

impl EdfHeader {
    pub fn num_signals(&self) -> usize {
        self.signals.len()
    }

    fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }
}

fn ascii(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).trim().to_string()
}

fn number<T: std::str::FromStr>(bytes: &[u8], field: &'static str) -> Result<T> {
    let text = ascii(bytes);
    text.parse().map_err(|_| IngestError::BadHeaderField { field, value: text })
}

/// Parses and validates the header without decoding samples.
pub fn parse_edf_header(bytes: &[u8]) -> Result<EdfHeader> {
    if bytes.len() < FIXED_HEADER {
        return Err(IngestError::TruncatedHeader {
            needed: FIXED_HEADER,
            got: bytes.len(),
        });
    }
    let version = ascii(&bytes[0..8]);
    if version != "0" {
        return Err(IngestError::BadMagic(version));
    }
    let ns: usize = number(&bytes[252..256], "number of signals")?;
    let needed = FIXED_HEADER + PER_SIGNAL * ns;
    if bytes.len() < needed {
        return Err(IngestError::TruncatedHeader {
            needed,
            got: bytes.len(),
        });
    }
    if ns == 0 {
        return Err(IngestError::EmptyInput);
    }

    // Per-signal fields are stored field-major: all labels, then all
    // transducers, and so on.
    let widths = [16usize, 80, 8, 8, 8, 8, 8, 80, 8, 32];
    let mut offsets = [0usize; 10];
    let mut at = FIXED_HEADER;
    for (o, w) in offsets.iter_mut().zip(widths) {
        *o = at;
        at += w * ns;
    }
    let field = |f: usize, i: usize| &bytes[offsets[f] + i * widths[f]..offsets[f] + (i + 1) * widths[f]];

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let digital_min: i32 = number(field(5, i), "digital minimum")?;
        let digital_max: i32 = number(field(6, i), "digital maximum")?;
        if digital_max <= digital_min {
            return Err(IngestError::ScaleUndefined {
                signal: i,
                min: digital_min,
                max: digital_max,
            });
        }
        signals.push(EdfSignal {
            label: ascii(field(0, i)),
            physical_dimension: ascii(field(2, i)),
            physical_min: number(field(3, i), "physical minimum")?,
            physical_max: number(field(4, i), "physical maximum")?,
            digital_min,
            digital_max,
            samples_per_record: number(field(8, i), "samples per record")?,
        });
    }
    let rates: Vec<usize> = signals.iter().map(|s| s.samples_per_record).collect();
    if rates.iter().any(|&r| r != rates[0]) {
        return Err(IngestError::InconsistentRates(rates));
    }
    let record_duration_s: f64 = number(&bytes[244..252], "record duration")?;
    if record_duration_s.is_nan() || record_duration_s <= 0.0 || rates[0] == 0 {
        return Err(IngestError::BadHeaderField {
            field: "record duration",
            value: ascii(&bytes[244..252]),
        });
    }

    Ok(EdfHeader {
        version,
        patient: ascii(&bytes[8..88]),
        recording: ascii(&bytes[88..168]),
        header_bytes: needed,
        num_records: number(&bytes[236..244], "number of data records")?,
        record_duration_s,
        signals,
    })
}

/// Decodes an EDF byte stream into physical units.
pub fn parse_edf(bytes: &[u8]) -> Result<EegRecording> {
    let header = parse_edf_header(bytes)?;
    let data = &bytes[header.header_bytes..];
    let record_bytes = header.record_bytes();
    let records = if header.num_records < 0 {
        data.len() / record_bytes
    } else {
        header.num_records as usize
    };
    let needed = records * record_bytes;
    if data.len() < needed {
        return Err(IngestError::TruncatedData {
            needed: header.header_bytes + needed,
            got: bytes.len(),
        });
    }
    if records == 0 {
        return Err(IngestError::EmptyInput);
    }

    let spr = header.signals[0].samples_per_record;
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(records * spr); header.num_signals()];
    for record in data[..needed].chunks_exact(record_bytes) {
        for ((signal, block), out) in header
            .signals
            .iter()
            .zip(record.chunks_exact(spr * 2))
            .zip(samples.iter_mut())
        {
            out.extend(
                block
                    .chunks_exact(2)
                    .map(|b| signal.to_physical(i16::from_le_bytes([b[0], b[1]]))),
            );
        }
    }

    let labels = header.signals.iter().map(|s| s.label.clone()).collect();
    let rate = spr as f64 / header.record_duration_s;
    EegRecording::new(header.recording.clone(), rate, labels, samples)
}

fn put_field(out: &mut Vec<u8>, text: &str, width: usize) -> Result<()> {
    if !text.is_ascii() || text.len() > width {
        return Err(IngestError::EdfWrite(format!("{text:?} does not fit in {width} ASCII bytes")));
    }
    out.extend_from_slice(text.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - text.len()));
    Ok(())
}

/// Serializes a recording as EDF with one-second records and full 16-bit
/// resolution per channel.
///
/// The physical range of each channel is widened to whole microvolts. A
/// trailing partial second is padded with the digital value nearest 0 µV.
pub fn write_edf(rec: &EegRecording) -> Result<Vec<u8>> {
    let spr = super::whole_count(rec.sample_rate_hz())
        .ok_or_else(|| IngestError::EdfWrite(format!("sample rate {} Hz is not integral", rec.sample_rate_hz())))?;
    let ns = rec.channels();
    let records = rec.len().div_ceil(spr);
    let (dmin, dmax) = (i16::MIN as i32, i16::MAX as i32);

    let mut signals = Vec::with_capacity(ns);
    for (label, ch) in rec.channel_labels().iter().zip(rec.samples()) {
        let lo = ch.iter().copied().fold(f64::INFINITY, f64::min).min(0.0).floor();
        let mut hi = ch.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0).ceil();
        if hi <= lo {
            hi = lo + 1.0;
        }
        signals.push(EdfSignal {
            label: label.clone(),
            physical_dimension: "uV".into(),
            physical_min: lo,
            physical_max: hi,
            digital_min: dmin,
            digital_max: dmax,
            samples_per_record: spr,
        });
    }

    let mut out = Vec::with_capacity(FIXED_HEADER + PER_SIGNAL * ns + records * spr * ns * 2);
    put_field(&mut out, "0", 8)?;
    put_field(&mut out, "X X X X", 80)?;
    let rec_id: String = rec.source_id.chars().filter(|c| c.is_ascii() && !c.is_ascii_control()).take(80).collect();
    put_field(&mut out, &rec_id, 80)?;
    put_field(&mut out, "01.01.00", 8)?;
    put_field(&mut out, "00.00.00", 8)?;
    put_field(&mut out, &(FIXED_HEADER + PER_SIGNAL * ns).to_string(), 8)?;
    put_field(&mut out, "", 44)?;
    put_field(&mut out, &records.to_string(), 8)?;
    put_field(&mut out, "1", 8)?;
    put_field(&mut out, &ns.to_string(), 4)?;
    for s in &signals {
        let label: String = s.label.chars().filter(char::is_ascii).take(16).collect();
        put_field(&mut out, &label, 16)?;
    }
    for _ in &signals {
        put_field(&mut out, "", 80)?;
    }
    for s in &signals {
        put_field(&mut out, &s.physical_dimension, 8)?;
    }
    for s in &signals {
        put_field(&mut out, &format!("{}", s.physical_min), 8)?;
    }
    for s in &signals {
        put_field(&mut out, &format!("{}", s.physical_max), 8)?;
    }
    for s in &signals {
        put_field(&mut out, &s.digital_min.to_string(), 8)?;
    }
    for s in &signals {
        put_field(&mut out, &s.digital_max.to_string(), 8)?;
    }
    for _ in &signals {
        put_field(&mut out, "", 80)?;
    }
    for s in &signals {
        put_field(&mut out, &s.samples_per_record.to_string(), 8)?;
    }
    for _ in &signals {
        put_field(&mut out, "", 32)?;
    }

    let to_digital = |s: &EdfSignal, v: f64| -> i16 {
        let d = (v - s.physical_min) / s.gain() + f64::from(s.digital_min);
        d.round().clamp(f64::from(dmin), f64::from(dmax)) as i16
    };
    for r in 0..records {
        for (s, ch) in signals.iter().zip(rec.samples()) {
            for i in r * spr..(r + 1) * spr {
                let v = ch.get(i).copied().unwrap_or(0.0);
                out.extend_from_slice(&to_digital(s, v).to_le_bytes());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds a minimal single-record EDF by hand.
    fn hand_built(signals: &[(&str, usize, i32, i32, f64, f64)], data: &[i16], version: &str) -> Vec<u8> {
        let ns = signals.len();
        let mut b = Vec::new();
        put_field(&mut b, version, 8).unwrap();
        put_field(&mut b, "patient", 80).unwrap();
        put_field(&mut b, "rec", 80).unwrap();
        put_field(&mut b, "01.01.00", 8).unwrap();
        put_field(&mut b, "00.00.00", 8).unwrap();
        put_field(&mut b, &(256 + 256 * ns).to_string(), 8).unwrap();
        put_field(&mut b, "", 44).unwrap();
        put_field(&mut b, "1", 8).unwrap();
        put_field(&mut b, "1", 8).unwrap();
        put_field(&mut b, &ns.to_string(), 4).unwrap();
        for s in signals {
            put_field(&mut b, s.0, 16).unwrap();
        }
        for _ in signals {
            put_field(&mut b, "", 80).unwrap();
        }
        for _ in signals {
            put_field(&mut b, "uV", 8).unwrap();
        }
        for s in signals {
            put_field(&mut b, &s.4.to_string(), 8).unwrap();
        }
        for s in signals {
            put_field(&mut b, &s.5.to_string(), 8).unwrap();
        }
        for s in signals {
            put_field(&mut b, &s.2.to_string(), 8).unwrap();
        }
        for s in signals {
            put_field(&mut b, &s.3.to_string(), 8).unwrap();
        }
        for _ in signals {
            put_field(&mut b, "", 80).unwrap();
        }
        for s in signals {
            put_field(&mut b, &s.1.to_string(), 8).unwrap();
        }
        for _ in signals {
            put_field(&mut b, "", 32).unwrap();
        }
        assert_eq!(b.len(), 256 + 256 * ns);
        for d in data {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b
    }

    #[test]
    fn hand_built_scaling() {
        let bytes = hand_built(&[("Fp1", 4, -100, 100, -1.0, 1.0)], &[-100, 0, 100, -100], "0");
        let rec = parse_edf(&bytes).unwrap();
        assert_eq!(rec.samples()[0], vec![-1.0, 0.0, 1.0, -1.0]);
        assert_eq!(rec.sample_rate_hz(), 4.0);
        assert_eq!(rec.channel_labels(), ["Fp1"]);
    }

    #[test]
    fn short_input_is_truncated_header() {
        assert!(matches!(
            parse_edf(&[b' '; 200]),
            Err(IngestError::TruncatedHeader { needed: 256, got: 200 })
        ));
        let mut bytes = hand_built(&[("a", 4, -100, 100, -1.0, 1.0)], &[0; 4], "0");
        bytes.truncate(300);
        assert!(matches!(parse_edf(&bytes), Err(IngestError::TruncatedHeader { needed: 512, .. })));
    }

    #[test]
    fn bad_version_field() {
        let bytes = hand_built(&[("a", 4, -100, 100, -1.0, 1.0)], &[0; 4], "1");
        assert!(matches!(parse_edf(&bytes), Err(IngestError::BadMagic(v)) if v == "1"));
    }

    #[test]
    fn mixed_rates_rejected() {
        let bytes = hand_built(
            &[("a", 250, -100, 100, -1.0, 1.0), ("b", 500, -100, 100, -1.0, 1.0)],
            &[0; 750],
            "0",
        );
        assert!(matches!(parse_edf(&bytes), Err(IngestError::InconsistentRates(r)) if r == [250, 500]));
    }

    #[test]
    fn equal_digital_bounds_rejected() {
        let bytes = hand_built(&[("a", 4, 5, 5, -1.0, 1.0)], &[0; 4], "0");
        assert!(matches!(parse_edf(&bytes), Err(IngestError::ScaleUndefined { signal: 0, .. })));
    }

    #[test]
    fn missing_samples_detected() {
        let mut bytes = hand_built(&[("a", 4, -100, 100, -1.0, 1.0)], &[0; 4], "0");
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(parse_edf(&bytes), Err(IngestError::TruncatedData { .. })));
    }

    #[test]
    fn writer_round_trip_within_one_lsb() {
        let ch0: Vec<f64> = (0..600).map(|i| 37.5 * (i as f64 * 0.05).sin()).collect();
        let ch1: Vec<f64> = (0..600).map(|i| -12.0 + (i as f64 * 0.011).cos()).collect();
        let rec = EegRecording::new("rt", 200.0, vec!["C3".into(), "C4".into()], vec![ch0, ch1]).unwrap();
        let bytes = write_edf(&rec).unwrap();
        let back = parse_edf(&bytes).unwrap();
        assert_eq!(back.sample_rate_hz(), 200.0);
        assert_eq!(back.len(), 600);
        let header = parse_edf_header(&bytes).unwrap();
        for ((orig, got), sig) in rec.samples().iter().zip(back.samples()).zip(&header.signals) {
            let lsb = sig.gain();
            for (a, b) in orig.iter().zip(got) {
                assert!((a - b).abs() <= lsb, "{a} vs {b}, lsb {lsb}");
            }
        }
    }
}
