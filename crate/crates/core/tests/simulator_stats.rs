use eend_core::simulator::{sample_mixture, speaker_pool, synth_utterance, NoiseSource, SimSpec};
use eend_core::Rng;

/// Power at integer-Hz bins by a direct DFT over a Hann-windowed signal.
fn periodogram(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let w: Vec<f64> = (0..n)
        .map(|i| x[i] * (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect();
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|m| {
            let a = 2.0 * std::f64::consts::PI * m as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .unzip();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in w.iter().enumerate() {
                let m = (k * i) % n;
                re += v * cos[m];
                im -= v * sin[m];
            }
            re * re + im * im
        })
        .collect()
}

#[test]
fn utterance_peaks_sit_at_the_speaker_frequencies() {
    let speakers = speaker_pool(4, 0, 77);
    for spk in &speakers {
        // 1 s at 8 kHz gives 1 Hz bins.
        let x = synth_utterance(spk, 1.0, 8000, &mut Rng::new(spk.id as u64));
        let p = periodogram(&x);
        let mut peaks: Vec<(f64, usize)> = (1..p.len() - 1)
            .filter(|&k| p[k] > p[k - 1] && p[k] >= p[k + 1])
            .map(|k| (p[k], k))
            .collect();
        peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut found: Vec<f64> = peaks[..spk.formant_freqs.len()].iter().map(|&(_, k)| k as f64).collect();
        found.sort_by(f64::total_cmp);
        for (f, want) in found.iter().zip(&spk.formant_freqs) {
            assert!((f - want).abs() <= 1.0, "peaks {found:?} vs {:?}", spk.formant_freqs);
        }
    }
}

#[test]
fn speakers_are_distinct_and_in_band() {
    let pool = speaker_pool(20, 0, 3);
    for (i, a) in pool.iter().enumerate() {
        assert!(a.formant_freqs.iter().all(|&f| f > 100.0 && f < 3400.0));
        for b in &pool[i + 1..] {
            assert_ne!(a.formant_freqs, b.formant_freqs);
        }
    }
}

#[test]
fn overlap_falls_as_gaps_grow() {
    let speakers = speaker_pool(40, 0, 1);
    let mean_overlap = |beta: f64| {
        let spec = SimSpec {
            beta,
            n_umin: 4,
            n_umax: 8,
            n_rirs: 0,
            ..SimSpec::default()
        };
        let total: f64 = (0..30u64)
            .map(|i| {
                let mut rng = Rng::new(1000 + i);
                sample_mixture(&spec, &speakers, &NoiseSource::Silent, &mut rng).unwrap().overlap_ratio
            })
            .sum();
        total / 30.0
    };
    let (a, b, c) = (mean_overlap(2.0), mean_overlap(3.0), mean_overlap(5.0));
    assert!(a > b && b > c, "{a} {b} {c}");
}
