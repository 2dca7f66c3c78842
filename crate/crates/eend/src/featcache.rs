//! Binary feature files.
//!
//! Little-endian header: magic `EENDFEAT`, u32 frames, u32 dimension,
//! f64 frame shift in seconds; then row-major f32 values.

use std::path::Path;

use eend_core::{FeatureSequence, Matrix};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"EENDFEAT";
const HEADER: usize = 8 + 4 + 4 + 8;

pub fn encode(f: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + f.data.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(f.t_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    out.extend_from_slice(&f.frame_shift_s.to_le_bytes());
    for &v in f.data.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<FeatureSequence, String> {
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err("not a feature file (bad magic or short header)".into());
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (t, f) = (u32_at(8), u32_at(12));
    let shift = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let body = &bytes[HEADER..];
    if Some(body.len()) != t.checked_mul(f).and_then(|n| n.checked_mul(4)) {
        return Err(format!("expected {t}x{f} values, found {} bytes", body.len()));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let m = Matrix::from_vec(t, f, data).map_err(|e| e.to_string())?;
    Ok(FeatureSequence::new(m, shift))
}

pub fn save(path: &Path, f: &FeatureSequence) -> Result<()> {
    std::fs::write(path, encode(f)).map_err(CliError::io(path))
}

pub fn load(path: &Path) -> Result<FeatureSequence> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    decode(&bytes).map_err(|d| CliError::format(path, d))
}
