use alloc::vec;
use alloc::vec::Vec;

/// In-place iterative radix-2 complex FFT.
///
/// # Panics
/// If the length is not a power of two or the slices differ in length.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert_eq!(n, im.len(), "fft: real/imag length mismatch");
    assert!(n.is_power_of_two(), "fft: length {n} is not a power of two");
    if n < 2 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * core::f64::consts::PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (ws, wc) = libm::sincos(ang * k as f64);
                let a = start + k;
                let b = a + half;
                let tr = re[b] * wc - im[b] * ws;
                let ti = re[b] * ws + im[b] * wc;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// `|X_k|^2` for `k = 0..=n_fft/2` of the zero-padded real frame.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    assert!(frame.len() <= n_fft, "frame longer than FFT size");
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];
    re[..frame.len()].copy_from_slice(frame);
    fft_in_place(&mut re, &mut im);
    (0..=n_fft / 2).map(|k| re[k] * re[k] + im[k] * im[k]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn matches_direct_dft() {
        let mut rng = Rng::new(2);
        let n = 64;
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let p = power_spectrum(&x, n);
        for k in 0..=n / 2 {
            let (mut r, mut i) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * core::f64::consts::PI * (k * t) as f64 / n as f64;
                r += v * a.cos();
                i += v * a.sin();
            }
            assert!((p[k] - (r * r + i * i)).abs() < 1e-9 * (1.0 + p[k]));
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let p = power_spectrum(&[1.0], 16);
        assert!(p.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }
}
