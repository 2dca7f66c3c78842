//! Binary checkpoint: a versioned header followed by named tensors.
//!
//! Layout, all integers little-endian:
//! magic `EENDCKPT`, u32 version, six u32 model dimensions
//! (blocks, d_model, heads, d_ff, speakers, input_dim), u32 tensor count,
//! then per tensor: u32 name length, UTF-8 name, u32 rows, u32 cols,
//! rows·cols f64 values.

use std::path::Path;

use eend_core::{ModelConfig, ModelParams};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"EENDCKPT";
const VERSION: u32 = 1;

pub fn encode(cfg: &ModelConfig, params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_params() * 8);
    out.extend_from_slice(MAGIC);
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put(&mut out, VERSION as usize);
    for v in [cfg.n_blocks, cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.n_speakers, cfg.input_dim] {
        put(&mut out, v);
    }
    let tensors = params.tensors();
    put(&mut out, tensors.len());
    for t in tensors {
        put(&mut out, t.name.len());
        out.extend_from_slice(t.name.as_bytes());
        put(&mut out, t.rows);
        put(&mut out, t.cols);
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(ModelConfig, ModelParams), String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = r.u32()?;
    }
    let cfg = ModelConfig {
        n_blocks: dims[0],
        d_model: dims[1],
        n_heads: dims[2],
        d_ff: dims[3],
        n_speakers: dims[4],
        input_dim: dims[5],
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8".to_string())?;
        let (rows, cols) = (r.u32()?, r.u32()?);
        let n = rows.checked_mul(cols).ok_or("tensor size overflows")?;
        let raw = r.take(n.checked_mul(8).ok_or("tensor size overflows")?)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name.to_string(), rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let params = ModelParams::from_named(&cfg, tensors.iter().map(|(n, r, c, d)| (n.as_str(), *r, *c, d.as_slice())))
        .map_err(|e| e.to_string())?;
    Ok((cfg, params))
}

pub fn save(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    std::fs::write(path, encode(cfg, params)).map_err(CliError::io(path))
}

pub fn load(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    decode(&bytes).map_err(|d| CliError::format(path, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use eend_core::model::init_params;
    use eend_core::Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_blocks: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_speakers: 3,
            input_dim: 5,
        }
    }

    #[test]
    fn bit_exact_round_trip() {
        let mut p = init_params(&cfg(), &mut Rng::new(1)).unwrap();
        p.output_b[0] = f64::MIN_POSITIVE / 3.0;
        p.output_b[1] = -0.0;
        let bytes = encode(&cfg(), &p);
        let (c, q) = decode(&bytes).unwrap();
        assert_eq!(c, cfg());
        let bits = |m: &ModelParams| m.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&q), bits(&p));
        assert_eq!(encode(&c, &q), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = init_params(&cfg(), &mut Rng::new(1)).unwrap();
        let bytes = encode(&cfg(), &p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode(&magic).unwrap_err().contains("magic"));
        let mut version = bytes;
        version[8] = 9;
        assert!(decode(&version).unwrap_err().contains("version"));
    }
}
