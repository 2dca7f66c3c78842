//! Multi-speaker mixture simulation.
//!
//! Each speaker in a mixture gets a track built from alternating silences
//! (exponential with mean `beta`) and reverberated utterances. Tracks are
//! zero-padded to the longest one, summed, and background noise is added at
//! an SNR drawn from `snr_choices`. Ground-truth labels mark each speaker
//! active over the dry (pre-reverberation) extent of its utterances.
//!
//! Real utterance corpora are replaced by [`SpeakerModel`]s: fixed bundles of
//! sinusoids whose frequencies act as the speaker's identity.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::labels::FrameLabels;
use crate::numerics::Rng;

/// Label frame length in seconds.
pub const LABEL_FRAME_S: f64 = 0.01;
/// Target RMS of a synthesized utterance.
pub const UTTERANCE_RMS: f64 = 0.1;
const NOISE_FRACTION: f64 = 0.01;
const MIN_FORMANT_HZ: f64 = 150.0;
const MAX_FORMANT_HZ: f64 = 3300.0;
/// Frequencies of one speaker are at least this far apart.
const MIN_FORMANT_SPACING_HZ: f64 = 100.0;

/// A synthetic speaker: a sum of sinusoids at speaker-specific frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub id: usize,
    pub formant_freqs: Vec<f64>,
    pub base_gain: f64,
}

impl SpeakerModel {
    /// Draws 3 to 5 frequencies in (150, 3300) Hz, at least 100 Hz apart,
    /// and a gain in [0.7, 1.3).
    pub fn sample(id: usize, rng: &mut Rng) -> Self {
        let n = rng.int_range(3, 5) as usize;
        let mut formant_freqs: Vec<f64> = Vec::with_capacity(n);
        while formant_freqs.len() < n {
            let f = rng.uniform_range(MIN_FORMANT_HZ, MAX_FORMANT_HZ);
            if formant_freqs.iter().all(|g| (f - g).abs() >= MIN_FORMANT_SPACING_HZ) {
                formant_freqs.push(f);
            }
        }
        formant_freqs.sort_by(f64::total_cmp);
        Self {
            id,
            formant_freqs,
            base_gain: rng.uniform_range(0.7, 1.3),
        }
    }
}

/// `n` speakers with ids `first_id..first_id + n`, drawn from `seed`.
pub fn speaker_pool(n: usize, first_id: usize, seed: u64) -> Vec<SpeakerModel> {
    let mut rng = Rng::new(seed);
    (0..n).map(|i| SpeakerModel::sample(first_id + i, &mut rng)).collect()
}

/// Parameters of the mixture simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    /// Speakers per mixture.
    pub n_spk: usize,
    /// Minimum utterances per speaker.
    pub n_umin: usize,
    /// Maximum utterances per speaker.
    pub n_umax: usize,
    /// Mean silence interval in seconds.
    pub beta: f64,
    /// SNR values in dB, sampled uniformly.
    pub snr_choices: Vec<f64>,
    /// Size of the RIR pool; 0 disables reverberation.
    pub n_rirs: usize,
    /// Seed of the RIR pool; RIR `i` is drawn from stream `i` of this seed.
    pub rir_seed: u64,
    pub sample_rate: u32,
    /// Utterance duration range in seconds, sampled uniformly.
    pub utt_dur_range: (f64, f64),
}

impl Default for SimSpec {
    /// Two speakers, 10 to 20 utterances each, beta = 2 s, SNR in {10, 15, 20} dB.
    fn default() -> Self {
        Self {
            n_spk: 2,
            n_umin: 10,
            n_umax: 20,
            beta: 2.0,
            snr_choices: vec![10.0, 15.0, 20.0],
            n_rirs: 10_000,
            rir_seed: 0x5249_5200,
            sample_rate: 8000,
            utt_dur_range: (1.0, 5.0),
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidArgument(msg));
        if self.n_spk == 0 {
            return bad(format!("n_spk must be >= 1"));
        }
        if self.n_umin > self.n_umax || self.n_umin == 0 {
            return bad(format!(
                "need 1 <= n_umin <= n_umax, got {}..{}",
                self.n_umin, self.n_umax
            ));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if self.snr_choices.is_empty() || self.snr_choices.iter().any(|s| !s.is_finite()) {
            return bad(format!("snr_choices must be nonempty and finite"));
        }
        if self.sample_rate == 0 || self.sample_rate % 100 != 0 {
            return bad(format!(
                "sample_rate must be a positive multiple of 100, got {}",
                self.sample_rate
            ));
        }
        let (lo, hi) = self.utt_dur_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("invalid utterance duration range {lo}..{hi}"));
        }
        Ok(())
    }

    fn label_hop(&self) -> usize {
        (self.sample_rate / 100) as usize
    }
}

/// Background noise used by [`sample_mixture`].
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    /// No noise is added.
    Silent,
    /// A fresh white Gaussian noise clip of this many seconds per mixture,
    /// repeated to the mixture length.
    White { duration_s: f64 },
    /// A fixed recording, repeated to the mixture length.
    Recording(Vec<f64>),
}

/// One placed utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// Column of the speaker in the mixture's labels.
    pub speaker: usize,
    /// `SpeakerModel::id` of the speaker.
    pub speaker_id: usize,
    pub onset_s: f64,
    pub dur_s: f64,
}

/// A simulated recording with exact labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub waveform: Vec<f64>,
    pub sample_rate: u32,
    /// Activity at 10 ms resolution; column `c` belongs to `speaker_ids[c]`.
    pub labels: FrameLabels,
    pub speaker_ids: Vec<usize>,
    pub utterances: Vec<Utterance>,
    pub overlap_ratio: f64,
    /// Per-speaker track lengths in samples, before zero-padding.
    pub track_lengths: Vec<usize>,
}

impl Mixture {
    pub fn duration_s(&self) -> f64 {
        self.waveform.len() as f64 / self.sample_rate as f64
    }
}

/// Sum of sinusoids at the speaker's frequencies with random phases, plus
/// white noise at 1% of the sinusoid RMS, scaled to RMS 0.1.
pub fn synth_utterance(spk: &SpeakerModel, dur_s: f64, sample_rate: u32, rng: &mut Rng) -> Vec<f64> {
    let n = libm::round(dur_s * sample_rate as f64).max(1.0) as usize;
    let sr = sample_rate as f64;
    let mut out = vec![0.0; n];
    for &f in &spk.formant_freqs {
        let phase = rng.uniform_range(0.0, 2.0 * PI);
        let w = 2.0 * PI * f / sr;
        for (i, v) in out.iter_mut().enumerate() {
            *v += libm::sin(w * i as f64 + phase);
        }
    }
    let tone_rms = libm::sqrt(power(&out)).max(f64::MIN_POSITIVE);
    for v in out.iter_mut() {
        *v += NOISE_FRACTION * tone_rms * rng.normal();
    }
    let rms = libm::sqrt(power(&out));
    if rms > 0.0 {
        let g = UTTERANCE_RMS / rms;
        for v in out.iter_mut() {
            *v *= g;
        }
    }
    out
}

/// Exponentially decaying random FIR with a unit direct path, 50 to 200 taps.
pub(crate) fn decaying_taps(rng: &mut Rng) -> Vec<f64> {
    let len = rng.int_range(50, 200) as usize;
    let mut taps = Vec::with_capacity(len);
    taps.push(1.0);
    // Amplitude falls by 60 dB over the response.
    let decay = libm::log(1000.0) / len as f64;
    for k in 1..len {
        taps.push(0.3 * rng.normal() * libm::exp(-decay * k as f64));
    }
    taps
}

/// A synthetic room impulse response with unit energy.
pub fn sample_rir(rng: &mut Rng) -> Vec<f64> {
    let mut taps = decaying_taps(rng);
    let g = 1.0 / libm::sqrt(taps.iter().map(|t| t * t).sum::<f64>());
    for t in taps.iter_mut() {
        *t *= g;
    }
    taps
}

/// RIR number `index` of the pool described by `spec`.
pub fn pool_rir(spec: &SimSpec, index: usize) -> Vec<f64> {
    sample_rir(&mut Rng::stream(spec.rir_seed, index as u64))
}

/// Full linear convolution, length `x.len() + h.len() - 1`.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, &xv) in x.iter().enumerate() {
        for (o, &hv) in out[i..].iter_mut().zip(h) {
            *o += xv * hv;
        }
    }
    out
}

/// Mean square.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Scale `p` such that `speech + p * noise` has the requested SNR:
/// `p = sqrt(P_speech / (P_noise * 10^(snr/10)))`.
pub fn mixing_scale(snr_db: f64, speech: &[f64], noise: &[f64]) -> Result<f64> {
    let pn = power(noise);
    if !(pn > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise has zero power; cannot mix at {snr_db} dB"
        )));
    }
    Ok(libm::sqrt(power(speech) / (pn * libm::pow(10.0, snr_db / 10.0))))
}

/// A silence interval drawn from the exponential with mean `beta`.
pub fn sample_interval(beta: f64, rng: &mut Rng) -> f64 {
    rng.exponential(beta)
}

/// Simulates one mixture.
pub fn sample_mixture(
    spec: &SimSpec,
    speakers: &[SpeakerModel],
    noise: &NoiseSource,
    rng: &mut Rng,
) -> Result<Mixture> {
    spec.validate()?;
    if speakers.len() < spec.n_spk {
        return Err(Error::InvalidArgument(format!(
            "{} speakers available, {} required",
            speakers.len(),
            spec.n_spk
        )));
    }
    let sr = spec.sample_rate;
    let chosen = rng.choose_distinct(speakers.len(), spec.n_spk);

    let mut tracks: Vec<Vec<f64>> = Vec::with_capacity(spec.n_spk);
    // (column, onset sample, dry length)
    let mut placements: Vec<(usize, usize, usize)> = Vec::new();
    for (col, &si) in chosen.iter().enumerate() {
        let spk = &speakers[si];
        let rir = if spec.n_rirs == 0 {
            vec![1.0]
        } else {
            pool_rir(spec, rng.int_range(0, spec.n_rirs as u64 - 1) as usize)
        };
        let n_u = rng.int_range(spec.n_umin as u64, spec.n_umax as u64) as usize;
        let mut track = Vec::new();
        for _ in 0..n_u {
            let gap = sample_interval(spec.beta, rng);
            track.resize(track.len() + libm::round(gap * sr as f64) as usize, 0.0);
            let dur = rng.uniform_range(spec.utt_dur_range.0, spec.utt_dur_range.1);
            let mut dry = synth_utterance(spk, dur, sr, rng);
            for v in dry.iter_mut() {
                *v *= spk.base_gain;
            }
            placements.push((col, track.len(), dry.len()));
            track.extend(convolve(&dry, &rir));
        }
        tracks.push(track);
    }

    let track_lengths: Vec<usize> = tracks.iter().map(Vec::len).collect();
    let l_max = track_lengths.iter().copied().max().unwrap_or(0);
    let mut y = vec![0.0; l_max];
    for track in &tracks {
        for (o, v) in y.iter_mut().zip(track) {
            *o += v;
        }
    }

    let base_noise = match noise {
        NoiseSource::Silent => None,
        NoiseSource::White { duration_s } => {
            let n = libm::round(duration_s * sr as f64).max(1.0) as usize;
            Some((0..n).map(|_| rng.normal()).collect::<Vec<f64>>())
        }
        NoiseSource::Recording(rec) => Some(rec.clone()),
    };
    if let Some(base) = base_noise {
        let snr = spec.snr_choices[rng.int_range(0, spec.snr_choices.len() as u64 - 1) as usize];
        let repeated: Vec<f64> = base.iter().copied().cycle().take(l_max).collect();
        let p = mixing_scale(snr, &y, &repeated)?;
        for (o, n) in y.iter_mut().zip(&repeated) {
            *o += p * n;
        }
    }

    let hop = spec.label_hop();
    let t_frames = l_max.div_ceil(hop);
    let mut labels = FrameLabels::new(t_frames, spec.n_spk);
    let mut utterances = Vec::with_capacity(placements.len());
    for &(col, onset, len) in &placements {
        for t in onset / hop..(onset + len).div_ceil(hop) {
            labels.set(t, col, true);
        }
        utterances.push(Utterance {
            speaker: col,
            speaker_id: speakers[chosen[col]].id,
            onset_s: onset as f64 / sr as f64,
            dur_s: len as f64 / sr as f64,
        });
    }

    let overlap = overlap_ratio(&labels);
    Ok(Mixture {
        waveform: y,
        sample_rate: sr,
        labels,
        speaker_ids: chosen.iter().map(|&i| speakers[i].id).collect(),
        utterances,
        overlap_ratio: overlap,
        track_lengths,
    })
}

/// Frames with two or more active speakers over frames with at least one;
/// 0 when nothing is active.
pub fn overlap_ratio(labels: &FrameLabels) -> f64 {
    let (mut speech, mut overlap) = (0usize, 0usize);
    for t in 0..labels.t_frames() {
        let n = labels.active_count(t);
        speech += (n >= 1) as usize;
        overlap += (n >= 2) as usize;
    }
    if speech == 0 {
        0.0
    } else {
        overlap as f64 / speech as f64
    }
}
