//! The SRH1 raw slide container.
//!
//! Layout (all little-endian): magic `SRH1`, `u32` height, `u32` width, then
//! the 2845 cm⁻¹ channel followed by the 2930 cm⁻¹ channel, each as
//! row-major `u16`.

use std::fs;
use std::path::Path;

use crate::error::{Result, SrhError};

pub const SLIDE_MAGIC: &[u8; 4] = b"SRH1";
const HEADER_LEN: usize = 12;

/// Two co-registered 16-bit Raman channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSrhImage {
    pub height: u32,
    pub width: u32,
    pub ch2845: Vec<u16>,
    pub ch2930: Vec<u16>,
}

impl RawSrhImage {
    pub fn new(height: u32, width: u32, ch2845: Vec<u16>, ch2930: Vec<u16>) -> Result<Self> {
        let n = height as usize * width as usize;
        if ch2845.len() != n || ch2930.len() != n {
            return Err(SrhError::Size(format!(
                "{height}x{width} image needs {n} pixels per channel, got {} and {}",
                ch2845.len(),
                ch2930.len()
            )));
        }
        Ok(Self {
            height,
            width,
            ch2845,
            ch2930,
        })
    }

    pub fn zeros(height: u32, width: u32) -> Self {
        let n = height as usize * width as usize;
        Self {
            height,
            width,
            ch2845: vec![0; n],
            ch2930: vec![0; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.height as usize * self.width as usize
    }

    /// Checks that the slide can be tiled into at least one patch.
    pub fn check_admissible(&self, patch_side: u32) -> Result<()> {
        if self.height < patch_side || self.width < patch_side {
            return Err(SrhError::Size(format!(
                "slide {}x{} is smaller than patch side {patch_side}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.pixel_count());
        out.extend_from_slice(SLIDE_MAGIC);
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        for v in self.ch2845.iter().chain(&self.ch2930) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(SrhError::Format(format!(
                "{} bytes is too short for an SRH1 header",
                bytes.len()
            )));
        }
        if &bytes[..4] != SLIDE_MAGIC {
            return Err(SrhError::Format(format!(
                "bad magic {:?}, expected \"SRH1\"",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let n = height as usize * width as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 4 * n {
            return Err(SrhError::Size(format!(
                "header declares {height}x{width} ({} payload bytes) but file carries {}",
                4 * n,
                payload.len()
            )));
        }
        let mut words = payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]));
        let ch2845: Vec<u16> = words.by_ref().take(n).collect();
        let ch2930: Vec<u16> = words.collect();
        Ok(Self {
            height,
            width,
            ch2845,
            ch2930,
        })
    }
}

pub fn write_slide(path: impl AsRef<Path>, img: &RawSrhImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, img.to_bytes()).map_err(|e| SrhError::io(path, e))
}

pub fn read_slide(path: impl AsRef<Path>) -> Result<RawSrhImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SrhError::io(path, e))?;
    RawSrhImage::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = RawSrhImage::zeros(2, 2).to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(RawSrhImage::from_bytes(&bytes), Err(SrhError::Format(_))));
    }

    #[test]
    fn truncated_payload_is_size_error() {
        let full = RawSrhImage::zeros(300, 300).to_bytes();
        // Drop one row from each channel's worth of payload: 300x299 pixels.
        let short = &full[..HEADER_LEN + 4 * 300 * 299];
        assert!(matches!(RawSrhImage::from_bytes(short), Err(SrhError::Size(_))));
    }

    #[test]
    fn mismatched_channel_length_rejected() {
        assert!(RawSrhImage::new(2, 2, vec![0; 4], vec![0; 3]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.srh");
        let img = RawSrhImage::new(2, 3, vec![0, 1, 2, 3, 4, 65535], vec![9, 8, 7, 6, 5, 4]).unwrap();
        write_slide(&path, &img).unwrap();
        assert_eq!(read_slide(&path).unwrap(), img);
        assert!(matches!(read_slide(dir.path().join("missing.srh")), Err(SrhError::Io { .. })));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(h in 1u32..12, w in 1u32..12, seed in any::<u64>()) {
            let n = (h * w) as usize;
            let a: Vec<u16> = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u16).collect();
            let b: Vec<u16> = (0..n).map(|i| (seed.rotate_left(i as u32) >> 3) as u16).collect();
            let img = RawSrhImage::new(h, w, a, b).unwrap();
            let bytes = img.to_bytes();
            let back = RawSrhImage::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, img);
        }
    }
}
