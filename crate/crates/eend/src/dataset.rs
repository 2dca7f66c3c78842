//! On-disk dataset layout written by `simulate`:
//!
//! ```text
//! <dir>/manifest.json      summary and recording ids
//! <dir>/metadata.jsonl     one record per mixture
//! <dir>/wav/<id>.wav       16-bit PCM mono
//! <dir>/rttm/<id>.rttm     reference speaker segments
//! <dir>/feats/<id>.feats   optional feature files
//! ```

use std::path::{Path, PathBuf};

use eend_core::features::FeatureConfig;
use eend_core::scoring::segments_to_labels;
use eend_core::training::Example;
use eend_core::{FrameLabels, SegmentList};
use serde::{Deserialize, Serialize};

use crate::config::SimSection;
use crate::error::{CliError, Result};
use crate::{rttm, wav};

pub const MANIFEST: &str = "manifest.json";
pub const METADATA: &str = "metadata.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_mixtures: usize,
    pub sample_rate: u32,
    pub seed: u64,
    pub total_duration_s: f64,
    /// `None` for an empty dataset.
    pub overlap_ratio_mean: Option<f64>,
    /// Sample standard deviation; `None` below two mixtures.
    pub overlap_ratio_stdev: Option<f64>,
    pub recordings: Vec<String>,
    pub sim: SimSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub id: String,
    pub seed: u64,
    /// Index of the generator stream of `seed` the mixture was drawn from.
    pub stream: u64,
    pub duration_s: f64,
    pub overlap_ratio: f64,
    pub speakers: Vec<String>,
    pub n_utterances: usize,
    pub sim: SimSection,
}

pub fn mixture_id(i: usize) -> String {
    format!("mix{i:06}")
}

pub fn speaker_name(id: usize) -> String {
    format!("spk{id:04}")
}

/// Mean and sample standard deviation.
pub fn mean_stdev(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let stdev = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), stdev)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::Usage(format!("dataset manifest not found: {}", path.display())));
    }
    let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(&path, e))
}

/// One recording of a dataset directory.
#[derive(Debug, Clone)]
pub struct Recording {
    pub id: String,
    pub wave: Vec<f64>,
    pub sample_rate: u32,
    pub reference: SegmentList,
}

pub fn wav_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("wav").join(format!("{id}.wav"))
}

pub fn rttm_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("rttm").join(format!("{id}.rttm"))
}

/// Reads the audio and references listed in the manifest.
pub fn load_recordings(dir: &Path) -> Result<Vec<Recording>> {
    let manifest = read_manifest(dir)?;
    manifest
        .recordings
        .iter()
        .map(|id| {
            let (wave, sample_rate) = wav::read_wav(&wav_path(dir, id))?;
            let (rid, reference) = rttm::read_recording(&rttm_path(dir, id))?;
            debug_assert_eq!(&rid, id);
            Ok(Recording {
                id: id.clone(),
                wave,
                sample_rate,
                reference,
            })
        })
        .collect()
}

/// Reference activity at the 10 ms log-mel frame rate, speakers in sorted
/// name order and padded with silent columns up to `n_speakers`.
pub fn reference_labels(rec: &Recording, n_speakers: usize) -> Result<FrameLabels> {
    let names = rec.reference.speakers();
    if names.len() > n_speakers {
        return Err(CliError::Config(format!(
            "{} has {} speakers but the model outputs {n_speakers}",
            rec.id,
            names.len()
        )));
    }
    let hop = (rec.sample_rate / 100) as usize;
    let frames = rec.wave.len().div_ceil(hop);
    let labels = segments_to_labels(&rec.reference, 0.01, frames, &names)?;
    let mut padded = FrameLabels::new(frames, n_speakers);
    for t in 0..frames {
        for c in 0..names.len() {
            padded.set(t, c, labels.get(t, c));
        }
    }
    Ok(padded)
}

/// Features and subsampled labels for training.
pub fn examples(recs: &[Recording], feats: &FeatureConfig, n_speakers: usize) -> Result<Vec<Example>> {
    recs.iter()
        .map(|r| {
            if r.sample_rate != feats.logmel.sample_rate {
                return Err(CliError::Config(format!(
                    "{}: sample rate {} Hz, features expect {} Hz",
                    r.id, r.sample_rate, feats.logmel.sample_rate
                )));
            }
            Ok(feats.prepare(&r.wave, &reference_labels(r, n_speakers)?)?)
        })
        .collect()
}
