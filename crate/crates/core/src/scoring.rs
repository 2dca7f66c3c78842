//! Post-processing and diarization error rate.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::labels::FrameLabels;
use crate::numerics::{median_filter_binary, permutations, Matrix};

/// Largest speaker count handled by the exhaustive mapping search.
pub const MAX_SCORED_SPEAKERS: usize = 6;

/// One speaker turn, `[onset, offset)` in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub speaker: String,
    pub onset: f64,
    pub offset: f64,
}

impl Segment {
    pub fn new(speaker: impl Into<String>, onset: f64, offset: f64) -> Self {
        Self {
            speaker: speaker.into(),
            onset,
            offset,
        }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    fn validate(&self) -> Result<()> {
        let ok = self.onset.is_finite()
            && self.offset.is_finite()
            && self.onset >= 0.0
            && self.offset > self.onset
            && !self.speaker.is_empty()
            && !self.speaker.chars().any(char::is_whitespace);
        if ok {
            Ok(())
        } else {
            Err(Error::MalformedSegment(format!("{self}")))
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "speaker {:?} [{}, {})", self.speaker, self.onset, self.offset)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentList {
    pub entries: Vec<Segment>,
}

impl SegmentList {
    pub fn new(entries: Vec<Segment>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, seg: Segment) {
        self.entries.push(seg);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fails on the first entry with a bad time range or speaker name.
    pub fn validate(&self) -> Result<()> {
        self.entries.iter().try_for_each(Segment::validate)
    }

    /// Sorted distinct speaker names.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.iter().map(|s| s.speaker.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn end_time(&self) -> f64 {
        self.entries.iter().map(|s| s.offset).fold(0.0, f64::max)
    }

    /// Per speaker, merges overlapping or touching segments; output sorted
    /// by speaker then onset.
    pub fn normalized(&self) -> Result<Self> {
        self.validate()?;
        let mut sorted = self.entries.clone();
        sorted.sort_by(|a, b| {
            a.speaker
                .cmp(&b.speaker)
                .then(a.onset.total_cmp(&b.onset))
                .then(a.offset.total_cmp(&b.offset))
        });
        let mut out: Vec<Segment> = Vec::with_capacity(sorted.len());
        for seg in sorted {
            match out.last_mut() {
                Some(last) if last.speaker == seg.speaker && seg.onset <= last.offset => {
                    last.offset = last.offset.max(seg.offset);
                }
                _ => out.push(seg),
            }
        }
        Ok(Self { entries: out })
    }
}

/// Thresholds posteriors (`z >= threshold` is active) and median-filters
/// each speaker column.
pub fn binarize(z: &Matrix, threshold: f64, median_window: usize) -> Result<FrameLabels> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let (t, c) = z.shape();
    let mut out = FrameLabels::new(t, c);
    for s in 0..c {
        let bits: Vec<bool> = (0..t).map(|i| z.get(i, s) >= threshold).collect();
        let filtered = median_filter_binary(&bits, median_window)?;
        for (i, b) in filtered.into_iter().enumerate() {
            out.set(i, s, b);
        }
    }
    Ok(out)
}

/// `spk0`, `spk1`, ...
pub fn default_speaker_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("spk{i}")).collect()
}

/// Maximal runs of active frames become `[start·shift, (end+1)·shift)`.
pub fn labels_to_segments(labels: &FrameLabels, frame_shift: f64, names: &[String]) -> Result<SegmentList> {
    if names.len() != labels.n_speakers() {
        return Err(Error::InvalidArgument(format!(
            "{} speaker names for {} label columns",
            names.len(),
            labels.n_speakers()
        )));
    }
    let mut out = SegmentList::default();
    for (c, name) in names.iter().enumerate() {
        for (start, end) in active_runs(&labels.column(c)) {
            out.push(Segment::new(name.clone(), start as f64 * frame_shift, end as f64 * frame_shift));
        }
    }
    Ok(out)
}

/// Half-open `[start, end)` index runs of `true`.
fn active_runs(bits: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &b) in bits.iter().enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, bits.len()));
    }
    runs
}

/// Frame `t` of speaker `names[c]` is active when its center
/// `(t + 0.5)·shift` lies inside one of that speaker's segments.
/// Segments of speakers missing from `names` are an error.
pub fn segments_to_labels(segs: &SegmentList, frame_shift: f64, n_frames: usize, names: &[String]) -> Result<FrameLabels> {
    if !(frame_shift > 0.0) {
        return Err(Error::InvalidArgument(format!("frame shift must be > 0, got {frame_shift}")));
    }
    segs.validate()?;
    let mut out = FrameLabels::new(n_frames, names.len());
    for seg in &segs.entries {
        let c = names.iter().position(|n| *n == seg.speaker).ok_or_else(|| {
            Error::InvalidArgument(format!("segment speaker {:?} not in the speaker list", seg.speaker))
        })?;
        // first t with (t+0.5)·shift >= onset
        let lo = libm::ceil(seg.onset / frame_shift - 0.5).max(0.0) as usize;
        let mut t = lo;
        while t < n_frames && (t as f64 + 0.5) * frame_shift < seg.offset {
            if (t as f64 + 0.5) * frame_shift >= seg.onset {
                out.set(t, c, true);
            }
            t += 1;
        }
        // guard against rounding placing `lo` one past the true first frame
        if lo > 0 && lo - 1 < n_frames {
            let center = (lo as f64 - 0.5) * frame_shift;
            if center >= seg.onset && center < seg.offset {
                out.set(lo - 1, c, true);
            }
        }
    }
    Ok(out)
}

/// Number of frames of `resolution` needed to cover `duration` seconds.
pub fn frames_for_duration(duration: f64, resolution: f64) -> usize {
    let n = duration / resolution;
    let r = libm::round(n);
    if (n - r).abs() < 1e-9 {
        r as usize
    } else {
        libm::ceil(n) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerConfig {
    /// Seconds on each side of a reference boundary left unscored.
    pub collar: f64,
    /// Scoring frame length in seconds.
    pub resolution: f64,
}

impl Default for DerConfig {
    fn default() -> Self {
        Self {
            collar: 0.25,
            resolution: 0.01,
        }
    }
}

/// Frame counts behind a [`DerReport`]. Counts add across recordings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DerCounts {
    /// Scored reference speaker-frames (the DER denominator).
    pub ref_speech: u64,
    pub miss: u64,
    pub false_alarm: u64,
    pub confusion: u64,
    /// Scored frames where any reference speaker is active.
    pub ref_any: u64,
    pub sad_miss: u64,
    pub sad_false_alarm: u64,
    /// Frames left after collar exclusion.
    pub scored_frames: u64,
}

impl Add for DerCounts {
    type Output = DerCounts;

    fn add(mut self, rhs: DerCounts) -> DerCounts {
        self += rhs;
        self
    }
}

impl AddAssign for DerCounts {
    fn add_assign(&mut self, r: DerCounts) {
        self.ref_speech += r.ref_speech;
        self.miss += r.miss;
        self.false_alarm += r.false_alarm;
        self.confusion += r.confusion;
        self.ref_any += r.ref_any;
        self.sad_miss += r.sad_miss;
        self.sad_false_alarm += r.sad_false_alarm;
        self.scored_frames += r.scored_frames;
    }
}

impl DerCounts {
    /// Rates over scored reference speech; all zero without reference speech.
    pub fn report(&self, resolution: f64) -> DerReport {
        let rate = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let miss = rate(self.miss, self.ref_speech);
        let fa = rate(self.false_alarm, self.ref_speech);
        let confusion = rate(self.confusion, self.ref_speech);
        DerReport {
            der: miss + fa + confusion,
            miss,
            fa,
            confusion,
            sad_miss: rate(self.sad_miss, self.ref_any),
            sad_fa: rate(self.sad_false_alarm, self.ref_any),
            scored_time: self.ref_speech as f64 * resolution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerReport {
    pub der: f64,
    pub miss: f64,
    pub fa: f64,
    pub confusion: f64,
    /// Speech/non-speech misses over scored reference speech frames.
    pub sad_miss: f64,
    pub sad_fa: f64,
    /// Scored reference speaker time in seconds.
    pub scored_time: f64,
}

/// Scores `hyp` against `ref_` on a frame grid.
pub fn der(ref_: &SegmentList, hyp: &SegmentList, cfg: &DerConfig) -> Result<DerReport> {
    Ok(der_counts(ref_, hyp, cfg)?.report(cfg.resolution))
}

/// Frame counts for one recording.
///
/// Both lists are discretized by frame center. Frames whose center lies
/// strictly within `collar` of a reference run boundary are dropped. Hyp
/// speakers are mapped one-to-one onto reference speakers by the
/// assignment with the most co-active scored frames.
pub fn der_counts(ref_: &SegmentList, hyp: &SegmentList, cfg: &DerConfig) -> Result<DerCounts> {
    if !(cfg.resolution > 0.0) || !(cfg.collar >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "resolution must be > 0 and collar >= 0, got {} and {}",
            cfg.resolution, cfg.collar
        )));
    }
    ref_.validate()?;
    hyp.validate()?;
    let ref_names = ref_.speakers();
    let hyp_names = hyp.speakers();
    for (what, n) in [("reference", ref_names.len()), ("hypothesis", hyp_names.len())] {
        if n > MAX_SCORED_SPEAKERS {
            return Err(Error::TooManySpeakers {
                what,
                count: n,
                max: MAX_SCORED_SPEAKERS,
            });
        }
    }
    let n = frames_for_duration(ref_.end_time().max(hyp.end_time()), cfg.resolution);
    let r = segments_to_labels(ref_, cfg.resolution, n, &ref_names)?;
    let h = segments_to_labels(hyp, cfg.resolution, n, &hyp_names)?;
    let scored = scored_mask(&r, cfg);
    Ok(frame_counts(&r, &h, &scored))
}

/// `true` for frames outside every reference collar.
fn scored_mask(r: &FrameLabels, cfg: &DerConfig) -> Vec<bool> {
    let n = r.t_frames();
    let mut keep = vec![true; n];
    if cfg.collar <= 0.0 {
        return keep;
    }
    let res = cfg.resolution;
    let mut boundaries = Vec::new();
    for c in 0..r.n_speakers() {
        for (s, e) in active_runs(&r.column(c)) {
            boundaries.push(s as f64 * res);
            boundaries.push(e as f64 * res);
        }
    }
    for b in boundaries {
        let lo = libm::floor((b - cfg.collar) / res - 1.0).max(0.0) as usize;
        let hi = (libm::ceil((b + cfg.collar) / res + 1.0).max(0.0) as usize).min(n);
        for (t, k) in keep.iter_mut().enumerate().take(hi).skip(lo) {
            let center = (t as f64 + 0.5) * res;
            if (center - b).abs() < cfg.collar {
                *k = false;
            }
        }
    }
    keep
}

fn frame_counts(r: &FrameLabels, h: &FrameLabels, scored: &[bool]) -> DerCounts {
    let (nr, nh) = (r.n_speakers(), h.n_speakers());
    let k = nr.max(nh);
    // co-activity of ref speaker i and hyp speaker j on scored frames
    let mut overlap = vec![vec![0u64; nh]; nr];
    for t in (0..r.t_frames()).filter(|&t| scored[t]) {
        for (i, row) in overlap.iter_mut().enumerate() {
            if r.get(t, i) {
                for (j, v) in row.iter_mut().enumerate() {
                    if h.get(t, j) {
                        *v += 1;
                    }
                }
            }
        }
    }
    // perm[i] is the hyp index assigned to ref slot i; indices past the
    // real speaker counts are null speakers
    let mut mapping: Vec<Option<usize>> = vec![None; nr];
    let mut best = 0u64;
    let mut first = true;
    for perm in permutations(k) {
        let total: u64 = (0..nr).filter(|&i| perm[i] < nh).map(|i| overlap[i][perm[i]]).sum();
        if first || total > best {
            best = total;
            first = false;
            mapping = (0..nr).map(|i| (perm[i] < nh).then_some(perm[i])).collect();
        }
    }

    let mut c = DerCounts::default();
    for t in (0..r.t_frames()).filter(|&t| scored[t]) {
        let ref_n = r.active_count(t) as u64;
        let hyp_n = h.active_count(t) as u64;
        let correct = (0..nr)
            .filter(|&i| r.get(t, i) && mapping[i].is_some_and(|j| h.get(t, j)))
            .count() as u64;
        c.scored_frames += 1;
        c.ref_speech += ref_n;
        c.miss += ref_n.saturating_sub(hyp_n);
        c.false_alarm += hyp_n.saturating_sub(ref_n);
        c.confusion += ref_n.min(hyp_n) - correct;
        let (ra, ha) = (ref_n > 0, hyp_n > 0);
        c.ref_any += ra as u64;
        c.sad_miss += (ra && !ha) as u64;
        c.sad_false_alarm += (!ra && ha) as u64;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn segs(v: &[(&str, f64, f64)]) -> SegmentList {
        SegmentList::new(v.iter().map(|&(s, a, b)| Segment::new(s, a, b)).collect())
    }

    #[test]
    fn binarize_examples() {
        let z = Matrix::filled(4, 2, 0.5);
        let l = binarize(&z, 0.5, 1).unwrap();
        assert!(l.bits().iter().all(|&b| b));

        let z = Matrix::from_vec(5, 1, vec![0.9, 0.9, 0.1, 0.9, 0.9]).unwrap();
        let l = binarize(&z, 0.5, 3).unwrap();
        assert!(l.bits().iter().all(|&b| b));

        assert!(binarize(&z, 0.0, 3).is_err());
        assert!(binarize(&z, 0.5, 4).is_err());
    }

    #[test]
    fn higher_threshold_gives_a_subset_before_filtering() {
        let z = Matrix::from_vec(6, 1, vec![0.2, 0.55, 0.95, 0.7, 0.99, 0.4]).unwrap();
        let lo = binarize(&z, 0.5, 1).unwrap();
        let hi = binarize(&z, 0.9, 1).unwrap();
        for (a, b) in hi.bits().iter().zip(lo.bits()) {
            assert!(!a | b);
        }
    }

    #[test]
    fn labels_segments_examples() {
        let names = default_speaker_names(2);
        let empty = FrameLabels::new(5, 2);
        assert!(labels_to_segments(&empty, 0.1, &names).unwrap().is_empty());

        let mut l = FrameLabels::new(6, 1);
        l.set(3, 0, true);
        let s = labels_to_segments(&l, 0.1, &names[..1]).unwrap();
        assert_eq!(s.entries.len(), 1);
        assert!((s.entries[0].onset - 0.3).abs() < 1e-12);
        assert!((s.entries[0].offset - 0.4).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn labels_round_trip(bits in proptest::collection::vec(any::<bool>(), 60), shift in prop::sample::select(vec![0.01, 0.1, 0.08])) {
            let l = FrameLabels::from_bits(20, 3, bits).unwrap();
            let names = default_speaker_names(3);
            let s = labels_to_segments(&l, shift, &names).unwrap();
            let back = segments_to_labels(&s, shift, 20, &names).unwrap();
            prop_assert_eq!(back, l);
        }
    }

    #[test]
    fn normalization_merges_per_speaker() {
        let s = segs(&[("b", 2.0, 3.0), ("a", 0.0, 1.0), ("a", 0.5, 2.0), ("a", 2.0, 2.5), ("b", 0.0, 1.0)]);
        let n = s.normalized().unwrap();
        assert_eq!(n, segs(&[("a", 0.0, 2.5), ("b", 0.0, 1.0), ("b", 2.0, 3.0)]));
    }

    #[test]
    fn malformed_segments_are_rejected() {
        let cfg = DerConfig::default();
        for bad in [("a", 1.0, 1.0), ("a", 2.0, 1.0), ("a", -1.0, 1.0), ("", 0.0, 1.0), ("a", 0.0, f64::NAN)] {
            let r = der(&segs(&[bad]), &segs(&[]), &cfg);
            assert!(matches!(r, Err(Error::MalformedSegment(_))), "{bad:?}");
        }
    }

    #[test]
    fn identical_and_empty() {
        let r = segs(&[("a", 0.0, 3.0), ("b", 2.0, 5.0), ("a", 6.0, 7.5)]);
        let cfg = DerConfig::default();
        let same = der(&r, &r, &cfg).unwrap();
        assert_eq!((same.der, same.miss, same.fa, same.confusion), (0.0, 0.0, 0.0, 0.0));
        let empty = der(&r, &SegmentList::default(), &cfg).unwrap();
        assert_eq!(empty.der, 1.0);
        assert_eq!(empty.miss, 1.0);
        assert_eq!(empty.sad_miss, 1.0);
        let none = der(&SegmentList::default(), &r, &cfg).unwrap();
        assert_eq!((none.der, none.scored_time), (0.0, 0.0));
    }

    #[test]
    fn handcrafted_two_speaker_case() {
        // 10 s; A speaks 0-4, B speaks 5-10. Hyp labels A for 0-4, labels
        // 5-6 as A (1 s confusion), B 6-10 and adds B at 4.0-4.5 (FA).
        let r = segs(&[("A", 0.0, 4.0), ("B", 5.0, 10.0)]);
        let h = segs(&[("x", 0.0, 4.0), ("x", 5.0, 6.0), ("y", 6.0, 10.0), ("y", 4.0, 4.5)]);
        let c = der_counts(&r, &h, &DerConfig { collar: 0.0, resolution: 0.01 }).unwrap();
        assert_eq!(c.ref_speech, 900);
        assert_eq!(c.confusion, 100);
        assert_eq!(c.false_alarm, 50);
        assert_eq!(c.miss, 0);
        let rep = c.report(0.01);
        assert!((rep.der - 150.0 / 900.0).abs() < 1e-12);
        assert!((rep.sad_fa - 50.0 / 900.0).abs() < 1e-12);
    }

    #[test]
    fn collar_excludes_boundary_frames() {
        let r = segs(&[("A", 1.0, 2.0)]);
        let c = der_counts(&r, &SegmentList::default(), &DerConfig { collar: 0.25, resolution: 0.01 }).unwrap();
        // centers in (1.25, 1.75) remain: 1.255 .. 1.745
        assert_eq!(c.ref_speech, 50);
        // 2.0 + 0.25 bounds the grid, so 1.25 s before the first boundary
        // gives 0..1.0 of which centers < 0.75 are scored
        assert_eq!(c.scored_frames, 75 + 50);
    }

    #[test]
    fn pooled_counts_add() {
        let a = DerCounts {
            ref_speech: 10,
            miss: 2,
            ..Default::default()
        };
        let b = DerCounts {
            ref_speech: 30,
            false_alarm: 6,
            ..Default::default()
        };
        let rep = (a + b).report(0.01);
        assert!((rep.der - 0.2).abs() < 1e-12);
    }

    #[test]
    fn too_many_speakers() {
        let names: Vec<String> = (0..7).map(|i| format!("s{i}")).collect();
        let r = SegmentList::new(names.iter().map(|n| Segment::new(n.clone(), 0.0, 1.0)).collect());
        assert!(matches!(der(&r, &r, &DerConfig::default()), Err(Error::TooManySpeakers { .. })));
    }
}
