use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_error, EegImage, ImagingError, Result, RgbImage};

const MAGIC: [u8; 4] = *b"EEGI";
pub const EEGIMG_VERSION: u16 = 1;

/// Serializes to the length-exact `.eegimg` layout.
pub fn encode_eegimg(img: &EegImage) -> Result<Vec<u8>> {
    let overflow = |field, value| ImagingError::FieldOverflow { field, value };
    let h = u16::try_from(img.image.height()).map_err(|_| overflow("height", img.image.height()))?;
    let w = u16::try_from(img.image.width()).map_err(|_| overflow("width", img.image.width()))?;
    let label: i16 = match img.label {
        None => -1,
        Some(l) => i16::try_from(l).map_err(|_| ImagingError::LabelRange(l))?,
    };
    let id = img.source_id.as_bytes();
    let id_len = u16::try_from(id.len()).map_err(|_| overflow("source id length", id.len()))?;

    let mut out = Vec::with_capacity(20 + id.len() + img.image.pixels().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&EEGIMG_VERSION.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&label.to_le_bytes());
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&img.window_index.to_le_bytes());
    out.extend_from_slice(img.image.pixels());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at + n;
        if end > self.bytes.len() {
            return Err(ImagingError::TruncatedPayload {
                needed: end,
                got: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
}

pub fn decode_eegimg(bytes: &[u8]) -> Result<EegImage> {
    let mut r = Reader { bytes, at: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(ImagingError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != EEGIMG_VERSION {
        return Err(ImagingError::VersionMismatch {
            found: version,
            expected: EEGIMG_VERSION,
        });
    }
    let h = r.u16()? as usize;
    let w = r.u16()? as usize;
    let label = r.u16()? as i16;
    let id_len = r.u16()? as usize;
    let source_id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|_| ImagingError::SourceIdEncoding)?
        .to_string();
    let window_index = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    let pixels = r.take(h * w * 3)?.to_vec();
    if r.at != bytes.len() {
        return Err(ImagingError::TrailingGarbage {
            extra: bytes.len() - r.at,
        });
    }
    Ok(EegImage {
        image: RgbImage::new(h, w, pixels)?,
        label: u16::try_from(label).ok(),
        source_id,
        window_index,
    })
}

pub fn write_image(path: &Path, img: &EegImage) -> Result<()> {
    std::fs::write(path, encode_eegimg(img)?).map_err(io_error(path))
}

pub fn read_image(path: &Path) -> Result<EegImage> {
    decode_eegimg(&std::fs::read(path).map_err(io_error(path))?)
}

/// Exports an 8-bit RGB PNG for inspection.
pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let file = File::create(path).map_err(io_error(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(img.pixels())?;
    writer.finish()?;
    Ok(())
}

/// One manifest line. `file` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub label: Option<u16>,
    pub source_id: String,
    pub window_index: u32,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let file = File::create(path).map_err(io_error(path))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        let line = serde_json::to_string(e).expect("manifest entries serialize");
        writeln!(w, "{line}").map_err(io_error(path))?;
    }
    w.flush().map_err(io_error(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(io_error(path))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_error(path))?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|source| ImagingError::Manifest { line: i + 1, source })?);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(label: Option<u16>) -> EegImage {
        EegImage {
            image: RgbImage::new(3, 2, (0..18).collect()).unwrap(),
            label,
            source_id: "rec-µ".into(),
            window_index: 7,
        }
    }

    #[test]
    fn round_trip() {
        for label in [None, Some(0), Some(3)] {
            let img = sample(label);
            let bytes = encode_eegimg(&img).unwrap();
            assert_eq!(bytes.len(), 4 + 2 * 5 + "rec-µ".len() + 4 + 18);
            assert_eq!(decode_eegimg(&bytes).unwrap(), img);
        }
    }

    #[test]
    fn malformed_inputs() {
        let bytes = encode_eegimg(&sample(Some(1))).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_eegimg(&bad), Err(ImagingError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_eegimg(&bad), Err(ImagingError::VersionMismatch { found: 2, .. })));
        assert!(matches!(
            decode_eegimg(&bytes[..bytes.len() - 1]),
            Err(ImagingError::TruncatedPayload { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_eegimg(&long), Err(ImagingError::TrailingGarbage { extra: 1 })));
    }

    #[test]
    fn label_must_fit() {
        assert!(matches!(encode_eegimg(&sample(Some(40000))), Err(ImagingError::LabelRange(40000))));
    }

    #[test]
    fn files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let img = sample(Some(1));
        let path = dir.path().join("a.eegimg");
        write_image(&path, &img).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
        write_png(&dir.path().join("a.png"), &img.image).unwrap();

        let entries = vec![
            ManifestEntry { file: "a.eegimg".into(), label: Some(1), source_id: "s".into(), window_index: 0 },
            ManifestEntry { file: "b.eegimg".into(), label: None, source_id: "s".into(), window_index: 1 },
        ];
        let mpath = dir.path().join("manifest.jsonl");
        write_manifest(&mpath, &entries).unwrap();
        assert_eq!(read_manifest(&mpath).unwrap(), entries);
        let text = std::fs::read_to_string(&mpath).unwrap();
        assert!(text.starts_with(r#"{"file":"a.eegimg","label":1,"source_id":"s","window_index":0}"#));
    }
}
