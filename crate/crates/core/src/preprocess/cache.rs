//! Per-slide patch blobs: `u32` count, then per patch two `u32` offsets,
//! a `u8` label and `3·side²` little-endian `f32` pixels. The side is not
//! stored; it is recovered from the blob length.

use std::fs;
use std::path::Path;

use super::Patch;
use crate::error::{Result, SrhError};
use crate::io::ClassLabel;

pub fn encode_patch_cache(patches: &[Patch]) -> Result<Vec<u8>> {
    let side = patches.first().map(|p| p.side).unwrap_or(0);
    if patches.iter().any(|p| p.side != side) {
        return Err(SrhError::Shape("patch cache requires a uniform patch side".into()));
    }
    let mut out = Vec::with_capacity(4 + patches.len() * (9 + 12 * (side * side) as usize));
    out.extend_from_slice(&(patches.len() as u32).to_le_bytes());
    for p in patches {
        out.extend_from_slice(&p.offset.0.to_le_bytes());
        out.extend_from_slice(&p.offset.1.to_le_bytes());
        out.push(p.label.index() as u8);
        for v in &p.pixels {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_patch_cache(bytes: &[u8], slide_id: &str, patient_id: &str) -> Result<Vec<Patch>> {
    let count = bytes
        .get(..4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| SrhError::Format("patch cache shorter than its header".into()))?;
    let body = &bytes[4..];
    if count == 0 {
        return if body.is_empty() {
            Ok(Vec::new())
        } else {
            Err(SrhError::Size("empty patch cache carries trailing bytes".into()))
        };
    }
    if body.len() % count != 0 {
        return Err(SrhError::Size(format!("{} body bytes do not split into {count} patches", body.len())));
    }
    let record = body.len() / count;
    let px_bytes = record.checked_sub(9).unwrap_or(1);
    let side = ((px_bytes / 12) as f64).sqrt().round() as usize;
    if record < 9 || 12 * side * side != px_bytes {
        return Err(SrhError::Size(format!("record of {record} bytes is not a square 3-channel patch")));
    }
    body.chunks_exact(record)
        .map(|rec| {
            let row = u32::from_le_bytes(rec[0..4].try_into().unwrap());
            let col = u32::from_le_bytes(rec[4..8].try_into().unwrap());
            let label = ClassLabel::from_index(rec[8] as usize)
                .ok_or_else(|| SrhError::Label(format!("label byte {} out of range", rec[8])))?;
            let pixels = rec[9..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Patch {
                side: side as u32,
                pixels,
                slide_id: slide_id.to_string(),
                patient_id: patient_id.to_string(),
                offset: (row, col),
                label,
            })
        })
        .collect()
}

pub fn write_patch_cache(path: impl AsRef<Path>, patches: &[Patch]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_patch_cache(patches)?).map_err(|e| SrhError::io(path, e))
}

pub fn read_patch_cache(path: impl AsRef<Path>, slide_id: &str, patient_id: &str) -> Result<Vec<Patch>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SrhError::io(path, e))?;
    decode_patch_cache(&bytes, slide_id, patient_id)
}
