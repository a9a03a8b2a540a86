//! Per-pixel anomaly score maps stored as greyscale Portable Float Maps.
//!
//! File layout (the usual PFM convention):
//!
//! ```text
//! Pf\n
//! <width> <height>\n
//! <scale>\n
//! <width * height little- or big-endian f32, bottom row first>
//! ```
//!
//! A negative scale marks little-endian data. Files are always written with
//! scale `-1`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    /// Row-major, top row first.
    values: Vec<f32>,
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Dimension(format!(
                "score map {width}x{height} with {} values",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn to_pfm(&self) -> Vec<u8> {
        let mut out = format!("Pf\n{} {}\n-1\n", self.width, self.height).into_bytes();
        out.reserve(self.values.len() * 4);
        for row in self.values.chunks_exact(self.width).rev() {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_pfm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut next_token = || -> std::result::Result<&str, String> {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII header".to_string())
        };
        match next_token()? {
            "Pf" => {}
            "PF" => return Err("colour PFM is not a score map".into()),
            other => return Err(format!("bad magic '{other}'")),
        }
        let width: usize = next_token()?.parse().map_err(|_| "bad width".to_string())?;
        let height: usize = next_token()?.parse().map_err(|_| "bad height".to_string())?;
        let scale: f64 = next_token()?.parse().map_err(|_| "bad scale".to_string())?;
        // exactly one whitespace byte separates the header from the data
        let data = bytes.get(pos + 1..).ok_or("missing data")?;
        let n = width
            .checked_mul(height)
            .filter(|&n| n > 0)
            .ok_or("bad dimensions")?;
        if data.len() != n * 4 {
            return Err(format!("expected {} data bytes, found {}", n * 4, data.len()));
        }
        let little = scale < 0.0;
        let floats: Vec<f32> = data
            .chunks_exact(4)
            .map(|b| {
                let b = [b[0], b[1], b[2], b[3]];
                if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                }
            })
            .collect();
        let mut values = Vec::with_capacity(n);
        for row in floats.chunks_exact(width).rev() {
            values.extend_from_slice(row);
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pfm(&bytes).map_err(|m| Error::schema(path, 0, m))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pfm()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rows_are_stored_bottom_up() {
        let m = ScoreMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = m.to_pfm();
        let header = b"Pf\n2 2\n-1\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..header.len() + 4], &3.0f32.to_le_bytes());
    }

    #[test]
    fn reads_big_endian() {
        let mut bytes = b"Pf\n1 2\n1.0\n".to_vec();
        bytes.extend_from_slice(&5.0f32.to_be_bytes());
        bytes.extend_from_slice(&7.0f32.to_be_bytes());
        let m = ScoreMap::from_pfm(&bytes).unwrap();
        assert_eq!(m.values(), &[7.0, 5.0]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(ScoreMap::from_pfm(b"P5\n1 1\n255\n\0").is_err());
        assert!(ScoreMap::from_pfm(b"Pf\n2 2\n-1\n\0\0\0\0").is_err());
        assert!(ScoreMap::from_pfm(b"Pf\n2").is_err());
        assert!(ScoreMap::new(2, 2, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn pfm_round_trip(w in 1usize..9, h in 1usize..9, seed in proptest::collection::vec(-1e6f32..1e6, 81)) {
            let m = ScoreMap::new(w, h, seed[..w * h].to_vec()).unwrap();
            prop_assert_eq!(ScoreMap::from_pfm(&m.to_pfm()).unwrap(), m);
        }
    }
}
