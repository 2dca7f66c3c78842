//! Frame-level speaker activity.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::numerics::Matrix;

/// `T × C` binary speaker-activity matrix: `get(t, c)` is true when speaker
/// `c` is active in frame `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrameLabels {
    t_frames: usize,
    n_speakers: usize,
    bits: Vec<bool>,
}

impl FrameLabels {
    pub fn new(t_frames: usize, n_speakers: usize) -> Self {
        Self {
            t_frames,
            n_speakers,
            bits: vec![false; t_frames * n_speakers],
        }
    }

    pub fn from_bits(t_frames: usize, n_speakers: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != t_frames * n_speakers {
            return Err(shape_err(
                "FrameLabels::from_bits",
                format!("{} bits for {t_frames}x{n_speakers}", bits.len()),
            ));
        }
        Ok(Self {
            t_frames,
            n_speakers,
            bits,
        })
    }

    /// Builds labels from per-frame rows of 0/1 values.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let c = rows.first().map_or(0, |r| r.as_ref().len());
        let mut bits = Vec::with_capacity(rows.len() * c);
        for (t, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != c {
                return Err(shape_err(
                    "FrameLabels::from_rows",
                    format!("row {t} has {} speakers, expected {c}", r.len()),
                ));
            }
            for &v in r {
                match v {
                    0 => bits.push(false),
                    1 => bits.push(true),
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "label value {other} at frame {t} is not 0 or 1"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            t_frames: rows.len(),
            n_speakers: c,
            bits,
        })
    }

    #[inline]
    pub fn t_frames(&self) -> usize {
        self.t_frames
    }

    #[inline]
    pub fn n_speakers(&self) -> usize {
        self.n_speakers
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize) -> bool {
        self.bits[t * self.n_speakers + c]
    }

    #[inline]
    pub fn set(&mut self, t: usize, c: usize, v: bool) {
        self.bits[t * self.n_speakers + c] = v;
    }

    pub fn row(&self, t: usize) -> &[bool] {
        &self.bits[t * self.n_speakers..(t + 1) * self.n_speakers]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn column(&self, c: usize) -> Vec<bool> {
        (0..self.t_frames).map(|t| self.get(t, c)).collect()
    }

    /// Number of active speakers in frame `t`.
    pub fn active_count(&self, t: usize) -> usize {
        self.row(t).iter().filter(|&&b| b).count()
    }

    /// Column `c` of the result is column `perm[c]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_speakers {
            return Err(shape_err(
                "FrameLabels::permute_columns",
                format!("permutation of {} for {} speakers", perm.len(), self.n_speakers),
            ));
        }
        let mut out = Self::new(self.t_frames, self.n_speakers);
        for t in 0..self.t_frames {
            for (c, &src) in perm.iter().enumerate() {
                out.set(t, c, self.get(t, src));
            }
        }
        Ok(out)
    }

    /// Frames `start..start + len`.
    pub fn frame_range(&self, start: usize, len: usize) -> Self {
        let c = self.n_speakers;
        Self {
            t_frames: len,
            n_speakers: c,
            bits: self.bits[start * c..(start + len) * c].to_vec(),
        }
    }

    /// Truncates or zero-pads to exactly `t_frames` frames.
    pub fn with_length(&self, t_frames: usize) -> Self {
        let mut bits = self.bits.clone();
        bits.resize(t_frames * self.n_speakers, false);
        Self {
            t_frames,
            n_speakers: self.n_speakers,
            bits,
        }
    }

    pub fn select_frames(&self, idx: &[usize]) -> Self {
        let mut bits = Vec::with_capacity(idx.len() * self.n_speakers);
        for &t in idx {
            bits.extend_from_slice(self.row(t));
        }
        Self {
            t_frames: idx.len(),
            n_speakers: self.n_speakers,
            bits,
        }
    }

    /// Labels as a 0/1 matrix.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Matrix::from_vec(self.t_frames, self.n_speakers, data).expect("consistent shape")
    }
}
