//! Log-mel features, frame splicing and subsampling.
//!
//! Pinned front-end choices: Hamming window over 25 ms frames at a 10 ms
//! shift, 256-point FFT power spectrum, 23 triangular filters evenly spaced
//! on the HTK mel scale (`2595 log10(1 + f / 700)`) between 0 Hz and
//! Nyquist, peak-normalized to 1, and a natural log with a 1e-10 floor. No
//! pre-emphasis, dithering or mean/variance normalization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{shape_err, Error, Result};
use crate::labels::FrameLabels;
use crate::numerics::{power_spectrum, Matrix};

/// A `T × F` feature matrix with its frame shift.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub data: Matrix,
    pub frame_shift_s: f64,
}

impl FeatureSequence {
    pub fn new(data: Matrix, frame_shift_s: f64) -> Self {
        Self { data, frame_shift_s }
    }

    pub fn t_frames(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    /// Frames `start..start + len`.
    pub fn frame_range(&self, start: usize, len: usize) -> Self {
        Self::new(self.data.row_range(start, len), self.frame_shift_s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogMelConfig {
    pub sample_rate: u32,
    /// Frame length in samples.
    pub frame_len: usize,
    /// Frame shift in samples.
    pub frame_shift: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        Self::for_rate(8000)
    }
}

impl LogMelConfig {
    /// 25 ms / 10 ms framing, 23 mel bins up to Nyquist.
    pub fn for_rate(sample_rate: u32) -> Self {
        let frame_len = (sample_rate as usize * 25).div_ceil(1000);
        Self {
            sample_rate,
            frame_len,
            frame_shift: sample_rate as usize / 100,
            n_fft: frame_len.next_power_of_two(),
            n_mels: 23,
            f_min: 0.0,
            f_max: sample_rate as f64 / 2.0,
            log_floor: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.frame_shift == 0 || self.n_mels == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame_len, frame_shift and n_mels must be positive"
            )));
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < self.frame_len {
            return Err(Error::InvalidArgument(format!(
                "n_fft {} must be a power of two >= frame_len {}",
                self.n_fft, self.frame_len
            )));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "mel band {}..{} Hz is invalid",
                self.f_min, self.f_max
            )));
        }
        Ok(())
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift as f64 / self.sample_rate as f64
    }

    /// Number of frames for a waveform of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.frame_shift
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * libm::log10(1.0 + f / 700.0)
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (libm::pow(10.0, m / 2595.0) - 1.0)
}

/// Center frequencies of the mel filters in Hz.
pub fn mel_centers(cfg: &LogMelConfig) -> Vec<f64> {
    let edges = mel_edges(cfg);
    edges[1..edges.len() - 1].to_vec()
}

fn mel_edges(cfg: &LogMelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect()
}

/// `n_mels × (n_fft/2 + 1)` triangular filter weights.
pub fn mel_filterbank(cfg: &LogMelConfig) -> Matrix {
    let edges = mel_edges(cfg);
    let n_bins = cfg.n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut fb = Matrix::zeros(cfg.n_mels, n_bins);
    for m in 0..cfg.n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb.set(m, k, w);
        }
    }
    fb
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * libm::cos(2.0 * PI * i as f64 / (n - 1) as f64))
        .collect()
}

/// Log-mel filterbank energies, one row per frame. A waveform shorter than
/// one frame gives an empty sequence.
pub fn logmel(wave: &[f64], cfg: &LogMelConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    let n_frames = cfg.n_frames(wave.len());
    let window = hamming(cfg.frame_len);
    let fb = mel_filterbank(cfg);
    let mut out = Matrix::zeros(n_frames, cfg.n_mels);
    let mut frame = vec![0.0; cfg.frame_len];
    for t in 0..n_frames {
        let start = t * cfg.frame_shift;
        for ((f, &s), &w) in frame
            .iter_mut()
            .zip(&wave[start..start + cfg.frame_len])
            .zip(&window)
        {
            *f = s * w;
        }
        let spec = power_spectrum(&frame, cfg.n_fft);
        for (m, o) in out.row_mut(t).iter_mut().enumerate() {
            let e: f64 = fb.row(m).iter().zip(&spec).map(|(a, b)| a * b).sum();
            *o = libm::log(e.max(cfg.log_floor));
        }
    }
    Ok(FeatureSequence::new(out, cfg.frame_shift_s()))
}

/// Concatenates each frame with `context` neighbours on each side,
/// replicating the first and last frames at the edges.
pub fn splice(f: &FeatureSequence, context: usize) -> FeatureSequence {
    let (t, d) = (f.t_frames(), f.dim());
    let width = 2 * context + 1;
    let mut out = Matrix::zeros(t, d * width);
    for i in 0..t {
        let row = out.row_mut(i);
        for k in 0..width {
            let src = (i + k).saturating_sub(context).min(t - 1);
            row[k * d..(k + 1) * d].copy_from_slice(f.data.row(src));
        }
    }
    FeatureSequence::new(out, f.frame_shift_s)
}

/// How labels are reduced when features are subsampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelSubsampling {
    /// Take the label row of the kept frame.
    #[default]
    KeepFrame,
    /// A speaker is active if active anywhere in the `factor`-frame window
    /// starting at the kept frame.
    MaxPool,
}

/// Keeps frames `0, factor, 2·factor, ...` of both features and labels.
pub fn subsample(
    f: &FeatureSequence,
    labels: &FrameLabels,
    factor: usize,
    mode: LabelSubsampling,
) -> Result<(FeatureSequence, FrameLabels)> {
    if factor == 0 {
        return Err(Error::InvalidArgument(format!("subsampling factor must be >= 1")));
    }
    if f.t_frames() != labels.t_frames() {
        return Err(shape_err(
            "subsample",
            format!("{} feature frames vs {} label frames", f.t_frames(), labels.t_frames()),
        ));
    }
    let kept: Vec<usize> = (0..f.t_frames()).step_by(factor).collect();
    let feats = FeatureSequence::new(f.data.select_rows(&kept), f.frame_shift_s * factor as f64);
    let labs = match mode {
        LabelSubsampling::KeepFrame => labels.select_frames(&kept),
        LabelSubsampling::MaxPool => {
            let mut out = FrameLabels::new(kept.len(), labels.n_speakers());
            for (i, &k) in kept.iter().enumerate() {
                for t in k..(k + factor).min(labels.t_frames()) {
                    for c in 0..labels.n_speakers() {
                        if labels.get(t, c) {
                            out.set(i, c, true);
                        }
                    }
                }
            }
            out
        }
    };
    Ok((feats, labs))
}

/// The complete front end: log-mel, splicing, subsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub logmel: LogMelConfig,
    pub context: usize,
    pub subsampling: usize,
    pub label_subsampling: LabelSubsampling,
}

impl Default for FeatureConfig {
    /// 23 log-mel bins, ±7 frames of context, 10× subsampling.
    fn default() -> Self {
        Self {
            logmel: LogMelConfig::default(),
            context: 7,
            subsampling: 10,
            label_subsampling: LabelSubsampling::KeepFrame,
        }
    }
}

impl FeatureConfig {
    /// Dimension of the network input.
    pub fn output_dim(&self) -> usize {
        self.logmel.n_mels * (2 * self.context + 1)
    }

    /// Features for inference; no labels involved.
    pub fn extract(&self, wave: &[f64]) -> Result<FeatureSequence> {
        let spliced = splice(&logmel(wave, &self.logmel)?, self.context);
        let dummy = FrameLabels::new(spliced.t_frames(), 0);
        Ok(subsample(&spliced, &dummy, self.subsampling, self.label_subsampling)?.0)
    }

    /// Features and aligned labels. `labels` are at the log-mel frame rate
    /// and are truncated or zero-padded to the feature frame count first.
    pub fn prepare(
        &self,
        wave: &[f64],
        labels: &FrameLabels,
    ) -> Result<(FeatureSequence, FrameLabels)> {
        let spliced = splice(&logmel(wave, &self.logmel)?, self.context);
        let aligned = labels.with_length(spliced.t_frames());
        subsample(&spliced, &aligned, self.subsampling, self.label_subsampling)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / 8000.0).sin())
            .collect()
    }

    #[test]
    fn frame_count_formula() {
        let cfg = LogMelConfig::default();
        assert_eq!((cfg.frame_len, cfg.frame_shift, cfg.n_fft), (200, 80, 256));
        assert_eq!(cfg.n_frames(199), 0);
        assert_eq!(cfg.n_frames(200), 1);
        assert_eq!(cfg.n_frames(8000), 1 + (8000 - 200) / 80);
        assert_eq!(logmel(&[0.0; 100], &cfg).unwrap().t_frames(), 0);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = LogMelConfig::default();
        let f = logmel(&[0.0; 800], &cfg).unwrap();
        assert_eq!(f.dim(), 23);
        assert!(f.data.data().iter().all(|&v| v == 1e-10f64.ln()));
    }

    #[test]
    fn tone_peaks_at_nearest_mel_center() {
        let cfg = LogMelConfig::default();
        let f = logmel(&tone(1000.0, 0.5, 4000), &cfg).unwrap();
        let centers = mel_centers(&cfg);
        let nearest = (0..centers.len())
            .min_by(|&a, &b| (centers[a] - 1000.0).abs().total_cmp(&(centers[b] - 1000.0).abs()))
            .unwrap();
        for t in 0..f.t_frames() {
            let row = f.data.row(t);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn doubling_amplitude_adds_log_four() {
        let cfg = LogMelConfig::default();
        let a = logmel(&tone(700.0, 0.1, 2000), &cfg).unwrap();
        let b = logmel(&tone(700.0, 0.2, 2000), &cfg).unwrap();
        for (x, y) in a.data.data().iter().zip(b.data.data()) {
            if *x > 1e-10f64.ln() + 1.0 {
                assert!((y - x - 4f64.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shift_by_one_hop_shifts_frames() {
        let cfg = LogMelConfig::default();
        let wave: Vec<f64> = (0..3000).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5).collect();
        let a = logmel(&wave, &cfg).unwrap();
        let b = logmel(&wave[80..], &cfg).unwrap();
        for t in 0..b.t_frames() {
            for (x, y) in a.data.row(t + 1).iter().zip(b.data.row(t)) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn splice_properties() {
        let data = Matrix::from_vec(6, 2, (0..12).map(|v| v as f64).collect()).unwrap();
        let f = FeatureSequence::new(data, 0.01);
        assert_eq!(splice(&f, 0), f);
        let s = splice(&f, 7);
        assert_eq!(s.dim(), 30);
        assert_eq!(s.t_frames(), 6);
        for t in 0..6 {
            assert_eq!(&s.data.row(t)[14..16], f.data.row(t));
            // leftmost block is frame max(t - 7, 0) = 0
            assert_eq!(&s.data.row(t)[0..2], f.data.row(0));
            assert_eq!(&s.data.row(t)[28..30], f.data.row(5));
        }
        let c = FeatureSequence::new(Matrix::filled(4, 3, 2.5), 0.01);
        assert!(splice(&c, 2).data.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn subsample_indexing() {
        let data = Matrix::from_vec(25, 1, (0..25).map(|v| v as f64).collect()).unwrap();
        let f = FeatureSequence::new(data, 0.01);
        let mut l = FrameLabels::new(25, 2);
        l.set(10, 1, true);
        l.set(13, 0, true);
        let (f1, l1) = subsample(&f, &l, 1, LabelSubsampling::KeepFrame).unwrap();
        assert_eq!((f1, l1), (f.clone(), l.clone()));
        let (fs, ls) = subsample(&f, &l, 10, LabelSubsampling::KeepFrame).unwrap();
        assert_eq!(fs.data.data(), &[0.0, 10.0, 20.0]);
        assert!((fs.frame_shift_s - 0.1).abs() < 1e-15);
        for (i, k) in [0, 10, 20].into_iter().enumerate() {
            assert_eq!(ls.row(i), l.row(k));
        }
        let (_, lm) = subsample(&f, &l, 10, LabelSubsampling::MaxPool).unwrap();
        assert_eq!(lm.row(1), &[true, true]);
        assert!(subsample(&f, &FrameLabels::new(24, 2), 10, LabelSubsampling::KeepFrame).is_err());
    }

    #[test]
    fn fifty_seconds_gives_about_five_hundred_frames() {
        let cfg = FeatureConfig::default();
        let wave = tone(440.0, 0.1, 50 * 8000);
        let f = cfg.extract(&wave).unwrap();
        assert_eq!(f.dim(), 345);
        assert_eq!(f.t_frames(), 500);
        assert!((f.frame_shift_s - 0.1).abs() < 1e-12);
    }
}
