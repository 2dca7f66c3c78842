//! 16-bit PCM mono WAV.

use std::path::Path;

use crate::error::{CliError, Result};

/// Writes samples in [-1, 1) as 16-bit PCM; values outside are clipped.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| CliError::format(path, e);
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let q = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(q).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

/// Reads a mono 16-bit WAV as samples in [-1, 1).
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => CliError::io(path)(io),
        e => CliError::format(path, e),
    };
    let mut r = hound::WavReader::open(path).map_err(wrap)?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(CliError::format(
            path,
            format!(
                "expected 16-bit PCM mono, got {} channel(s) of {}-bit {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wrap)?;
    Ok((samples, spec.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let x: Vec<f64> = (0..800).map(|i| 0.5 * (i as f64 * 0.05).sin()).collect();
        write_wav(&path, &x, 8000).unwrap();
        let (y, sr) = read_wav(&path).unwrap();
        assert_eq!(sr, 8000);
        assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
    }

    #[test]
    fn clipping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        write_wav(&path, &[2.0, -2.0], 8000).unwrap();
        let (y, _) = read_wav(&path).unwrap();
        assert_eq!(y, vec![32767.0 / 32768.0, -1.0]);
    }
}
