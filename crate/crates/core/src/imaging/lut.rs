use std::path::Path;

use super::{io_error, ImagingError, Result};

pub type Rgb = [u8; 3];

/// SHA-256 of the embedded viridis table.
pub const VIRIDIS_SHA256: &str = "d90042be655e0386b83ef2cf137c8207e8141c374bc66b90fc3eeeca234f52b2";

static VIRIDIS: &[u8; 768] = include_bytes!("../../assets/viridis.rgb");

/// Rec. 709 relative luminance of an 8-bit triple, in [0, 1].
pub fn luminance(rgb: Rgb) -> f64 {
    (0.2126 * f64::from(rgb[0]) + 0.7152 * f64::from(rgb[1]) + 0.0722 * f64::from(rgb[2])) / 255.0
}

/// 256-entry color table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorLut {
    name: String,
    entries: Box<[Rgb; 256]>,
}

impl Default for ColorLut {
    fn default() -> Self {
        Self::viridis()
    }
}

impl ColorLut {
    /// Packed `r, g, b` bytes, 768 in total.
    pub fn from_bytes(name: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 768 {
            return Err(ImagingError::LutSize(bytes.len()));
        }
        let mut entries = Box::new([[0u8; 3]; 256]);
        for (e, c) in entries.iter_mut().zip(bytes.chunks_exact(3)) {
            *e = [c[0], c[1], c[2]];
        }
        Ok(Self { name: name.into(), entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_error(path))?;
        let name = path.file_stem().map_or_else(|| "custom".into(), |s| s.to_string_lossy().into_owned());
        Self::from_bytes(name, &bytes)
    }

    /// The default perceptually ordered table.
    pub fn viridis() -> Self {
        Self::from_bytes("viridis", VIRIDIS).expect("embedded table has 768 bytes")
    }

    pub fn grayscale() -> Self {
        let bytes: Vec<u8> = (0..=255u8).flat_map(|v| [v, v, v]).collect();
        Self::from_bytes("grayscale", &bytes).expect("768 bytes")
    }

    /// Resolves a table by name or, failing that, as a file path.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "viridis" => Ok(Self::viridis()),
            "grayscale" | "gray" => Ok(Self::grayscale()),
            path => Self::from_file(Path::new(path)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[Rgb; 256] {
        &self.entries
    }

    pub fn get(&self, index: u8) -> Rgb {
        self.entries[index as usize]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.entries.iter().flatten().copied().collect()
    }

    pub fn contains(&self, rgb: Rgb) -> bool {
        self.entries.contains(&rgb)
    }

    pub fn is_luminance_monotone(&self) -> bool {
        self.entries.windows(2).all(|w| luminance(w[0]) <= luminance(w[1]))
    }
}

#[cfg(test)]
mod tests {
    use sha2::{Digest, Sha256};

    use super::*;

    #[test]
    fn viridis_checksum_and_anchors() {
        let lut = ColorLut::viridis();
        let digest = Sha256::digest(lut.to_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, VIRIDIS_SHA256);
        assert_eq!(lut.get(0), [68, 1, 84]);
        assert_eq!(lut.get(128), [33, 145, 140]);
        assert_eq!(lut.get(255), [253, 231, 37]);
    }

    #[test]
    fn default_tables_are_monotone() {
        assert!(ColorLut::viridis().is_luminance_monotone());
        assert!(ColorLut::grayscale().is_luminance_monotone());
    }

    #[test]
    fn size_checked() {
        assert!(matches!(ColorLut::from_bytes("x", &[0; 767]), Err(ImagingError::LutSize(767))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mine.rgb");
        std::fs::write(&path, ColorLut::grayscale().to_bytes()).unwrap();
        let lut = ColorLut::named(path.to_str().unwrap()).unwrap();
        assert_eq!(lut.name(), "mine");
        assert_eq!(lut.entries(), ColorLut::grayscale().entries());
    }
}
