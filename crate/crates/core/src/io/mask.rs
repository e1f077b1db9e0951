use std::fs;
use std::path::Path;

use crate::error::{Result, SrhError};

/// Per-pixel binary ground truth; `true` marks tumor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: u32,
    pub width: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: u32, width: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != height as usize * width as usize {
            return Err(SrhError::Size(format!(
                "mask {height}x{width} needs {} entries, got {}",
                height as usize * width as usize,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        self.data[row as usize * self.width as usize + col as usize]
    }

    pub fn fraction(&self) -> f64 {
        self.data.iter().filter(|&&b| b).count() as f64 / self.data.len().max(1) as f64
    }

    /// Intersection over union of the `true` sets.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(SrhError::Shape(format!(
                "mask {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    /// Binary PGM (P5), maxval 255, 255 = tumor.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(SrhError::Format("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        if fields[0] != "P5" {
            return Err(SrhError::Format(format!("expected P5 PGM, got {}", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| SrhError::Format(format!("bad PGM header field `{s}`")))
        };
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(SrhError::Format(format!("PGM maxval {maxval}, expected 255")));
        }
        let n = width as usize * height as usize;
        let raster = bytes.get(pos..).unwrap_or_default();
        if raster.len() != n {
            return Err(SrhError::Size(format!(
                "PGM declares {n} pixels but carries {}",
                raster.len()
            )));
        }
        Mask::new(height, width, raster.iter().map(|&v| v >= 128).collect())
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm()).map_err(|e| SrhError::io(path, e))
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| SrhError::io(path, e))?;
        Self::from_pgm(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let m = Mask::new(2, 3, vec![true, false, false, true, true, false]).unwrap();
        let bytes = m.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[255, 0, 0, 255, 255, 0]);
        assert_eq!(Mask::from_pgm(&bytes).unwrap(), m);
    }

    #[test]
    fn iou_basics() {
        let a = Mask::new(1, 4, vec![true, true, false, false]).unwrap();
        let b = Mask::new(1, 4, vec![false, true, true, false]).unwrap();
        assert!((a.iou(&b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&a).unwrap(), 1.0);
        assert!((a.fraction() - 0.5).abs() < 1e-12);
    }
}
