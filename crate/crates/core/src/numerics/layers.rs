use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Matrix;
use crate::error::{shape_err, Error, Result};

/// Layer-normalization epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Gradient through a row-wise softmax given its output `y` and `dL/dy`.
pub fn softmax_rows_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, dyr) = (y.row(r), dy.row(r));
        let inner: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for ((o, &a), &g) in dx.row_mut(r).iter_mut().zip(yr).zip(dyr) {
            *o = a * (g - inner);
        }
    }
    dx
}

/// Normalizes `x` to zero mean and unit (biased) variance, then applies
/// `gain * x̂ + bias`.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    assert!(
        x.len() == gain.len() && x.len() == bias.len(),
        "layer_norm: dimension mismatch"
    );
    let mut out = vec![0.0; x.len()];
    normalize_into(x, gain, bias, eps, &mut out);
    out
}

fn normalize_into(x: &[f64], gain: &[f64], bias: &[f64], eps: f64, out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / libm::sqrt(var + eps);
    for (((o, &v), &g), &b) in out.iter_mut().zip(x).zip(gain).zip(bias) {
        *o = g * ((v - mean) * inv_std) + b;
    }
    inv_std
}

/// What the backward pass of a row-wise layer norm needs.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

/// Layer norm applied independently to every row.
pub fn layer_norm_rows(
    x: &Matrix,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> (Matrix, LayerNormCache) {
    let d = x.cols();
    assert!(gain.len() == d && bias.len() == d, "layer_norm_rows: dimension mismatch");
    let ones = vec![1.0; d];
    let zeros = vec![0.0; d];
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        inv_std.push(normalize_into(x.row(r), &ones, &zeros, eps, normalized.row_mut(r)));
    }
    let mut y = normalized.clone();
    for r in 0..y.rows() {
        for ((v, g), b) in y.row_mut(r).iter_mut().zip(gain).zip(bias) {
            *v = *v * g + b;
        }
    }
    (y, LayerNormCache { normalized, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_rows_backward(
    dy: &Matrix,
    gain: &[f64],
    cache: &LayerNormCache,
) -> (Matrix, Vec<f64>, Vec<f64>) {
    let d = dy.cols();
    let n = d as f64;
    let mut dx = Matrix::zeros(dy.rows(), d);
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..dy.rows() {
        let (dyr, xh) = (dy.row(r), cache.normalized.row(r));
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        let inv = cache.inv_std[r];
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = inv * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    (dx, dgain, dbias)
}

/// `x · w + b` with `b` broadcast over rows.
pub fn linear(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    if x.cols() != w.rows() || w.cols() != b.len() {
        return Err(shape_err(
            "linear",
            format!(
                "x {}x{}, w {}x{}, b {}",
                x.rows(),
                x.cols(),
                w.rows(),
                w.cols(),
                b.len()
            ),
        ));
    }
    let mut out = x.matmul(w);
    out.add_row_vector(b);
    Ok(out)
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `d` where the pre-activation was positive.
pub fn relu_backward(pre: &Matrix, d: &Matrix) -> Matrix {
    let mut out = d.clone();
    for (o, &p) in out.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn sigmoid(m: &Matrix) -> Matrix {
    m.map(sigmoid_scalar)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

/// Majority filter over a centered odd window, replicating edge values.
pub fn median_filter_binary(bits: &[bool], window: usize) -> Result<Vec<bool>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "median window must be odd and >= 1, got {window}"
        )));
    }
    let n = bits.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let half = (window / 2) as isize;
    let at = |i: isize| bits[i.clamp(0, n as isize - 1) as usize] as usize;
    let mut count: usize = (-half..=half).map(at).sum();
    let mut out = Vec::with_capacity(n);
    for t in 0..n as isize {
        out.push(2 * count > window);
        count = count + at(t + half + 1) - at(t - half);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn row_matrix(v: &[f64]) -> Matrix {
        Matrix::from_rows(&[v]).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&row_matrix(&[0.0, 0.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&row_matrix(&[0.0, 3f64.ln()]));
        assert!((s.get(0, 0) - 0.25).abs() < 1e-15 && (s.get(0, 1) - 0.75).abs() < 1e-15);
        let s = softmax_rows(&row_matrix(&[1000.0, 1000.0, 1000.0]));
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_examples() {
        assert_eq!(layer_norm(&[5.0; 3], &[1.0; 3], &[0.0; 3], LAYER_NORM_EPS), vec![0.0; 3]);
        let y = layer_norm(&[1.0, -1.0], &[1.0; 2], &[0.0; 2], 1e-15);
        assert!((y[0] - 1.0).abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
        // mean 1, variance 1: x̂ = [-1, 1], then 2·x̂ + 1.
        let y = layer_norm(&[0.0, 2.0], &[2.0; 2], &[1.0; 2], 1e-15);
        assert!((y[0] + 1.0).abs() < 1e-12 && (y[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_input_gives_bias() {
        let (y, _) = layer_norm_rows(&row_matrix(&[2.0; 4]), &[3.0; 4], &[0.5; 4], LAYER_NORM_EPS);
        assert_eq!(y.data(), &[0.5; 4]);
    }

    #[test]
    fn linear_examples() {
        let x = row_matrix(&[1.0, 2.0]);
        let w = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert_eq!(linear(&x, &w, &[3.0]).unwrap().data(), &[6.0]);
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(linear(&x, &Matrix::identity(2), &[0.0, 0.0]).unwrap(), x);
        assert!(linear(&x, &Matrix::identity(3), &[0.0; 3]).is_err());
        assert!(linear(&x, &Matrix::identity(2), &[0.0; 3]).is_err());
    }

    #[test]
    fn linear_matches_naive_triple_loop_exactly() {
        let mut rng = Rng::new(17);
        for _ in 0..50 {
            let (n, k, m) = (
                rng.int_range(1, 8) as usize,
                rng.int_range(1, 8) as usize,
                rng.int_range(1, 8) as usize,
            );
            let mk = |r: usize, c: usize, rng: &mut Rng| {
                Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
            };
            let (x, w) = (mk(n, k, &mut rng), mk(k, m, &mut rng));
            let b: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
            let got = linear(&x, &w, &b).unwrap();
            for i in 0..n {
                for j in 0..m {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += x.get(i, p) * w.get(p, j);
                    }
                    assert_eq!(got.get(i, j).to_bits(), (s + b[j]).to_bits());
                }
            }
        }
    }

    #[test]
    fn activations() {
        assert_eq!(relu(&row_matrix(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let mut rng = Rng::new(4);
        for _ in 0..1000 {
            let x = rng.uniform_range(-40.0, 40.0);
            assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-15);
        }
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
    }

    #[test]
    fn median_filter_examples() {
        let b = |v: &[u8]| v.iter().map(|&x| x == 1).collect::<Vec<_>>();
        assert_eq!(median_filter_binary(&b(&[0, 0, 1, 0, 0]), 3).unwrap(), b(&[0; 5]));
        for w in [1, 3, 5, 11, 21] {
            assert_eq!(median_filter_binary(&[true; 7], w).unwrap(), vec![true; 7]);
        }
        assert_eq!(
            median_filter_binary(&b(&[1, 1, 0, 1, 1, 0, 0, 0]), 3).unwrap(),
            b(&[1, 1, 1, 1, 1, 0, 0, 0])
        );
        assert!(median_filter_binary(&[], 3).unwrap().is_empty());
        assert!(median_filter_binary(&[true], 4).is_err());
        assert!(median_filter_binary(&[true], 0).is_err());
    }

    /// Direct majority count with clamped indexing.
    fn median_oracle(bits: &[bool], window: usize) -> Vec<bool> {
        let n = bits.len() as isize;
        let h = (window / 2) as isize;
        (0..n)
            .map(|t| {
                let ones = (t - h..=t + h)
                    .filter(|&i| bits[i.clamp(0, n - 1) as usize])
                    .count();
                ones > window / 2
            })
            .collect()
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(
            rows in 1usize..6,
            vals in proptest::collection::vec(-500.0f64..500.0, 1..40),
        ) {
            let cols = (vals.len() / rows).max(1);
            let data: Vec<f64> = vals.iter().cycle().take(rows * cols).copied().collect();
            let s = softmax_rows(&Matrix::from_vec(rows, cols, data).unwrap());
            for r in 0..rows {
                let sum: f64 = s.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                prop_assert!(s.row(r).iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn layer_norm_shift_and_scale_invariant(
            x in proptest::collection::vec(-10.0f64..10.0, 2..16),
            a in 0.1f64..10.0,
            c in -50.0f64..50.0,
        ) {
            let n = x.len();
            let var = {
                let m = x.iter().sum::<f64>() / n as f64;
                x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64
            };
            prop_assume!(var > 1e-3);
            let ones = vec![1.0; n];
            let zeros = vec![0.0; n];
            let y = layer_norm(&x, &ones, &zeros, 1e-12);
            let xs: Vec<f64> = x.iter().map(|v| a * v + c).collect();
            let ys = layer_norm(&xs, &ones, &zeros, 1e-12);
            for (p, q) in y.iter().zip(&ys) {
                prop_assert!((p - q).abs() < 1e-6);
            }
            let mean = y.iter().sum::<f64>() / n as f64;
            let var_y = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() <= 1e-12);
            prop_assert!((var_y - 1.0).abs() < 1e-6);
        }

        #[test]
        fn median_filter_matches_oracle_and_is_monotone(
            a in proptest::collection::vec(any::<bool>(), 0..60),
            extra in proptest::collection::vec(any::<bool>(), 60),
            half in 0usize..6,
        ) {
            let w = 2 * half + 1;
            let fa = median_filter_binary(&a, w).unwrap();
            prop_assert_eq!(&fa, &median_oracle(&a, w));
            prop_assert_eq!(fa.len(), a.len());
            let b: Vec<bool> = a.iter().zip(&extra).map(|(&x, &y)| x || y).collect();
            let fb = median_filter_binary(&b, w).unwrap();
            for (p, q) in fa.iter().zip(&fb) {
                prop_assert!(!p | q);
            }
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        use crate::numerics::finite_diff_grad;
        let mut rng = Rng::new(8);
        let x = Matrix::from_vec(3, 5, (0..15).map(|_| rng.normal()).collect()).unwrap();
        let gain: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let bias: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let probe = Matrix::from_vec(3, 5, (0..15).map(|_| rng.normal()).collect()).unwrap();
        let loss = |xv: &[f64]| {
            let xm = Matrix::from_vec(3, 5, xv.to_vec()).unwrap();
            let (y, _) = layer_norm_rows(&xm, &gain, &bias, LAYER_NORM_EPS);
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = layer_norm_rows(&x, &gain, &bias, LAYER_NORM_EPS);
        let (dx, _, _) = layer_norm_rows_backward(&probe, &gain, &cache);
        let fd = finite_diff_grad(loss, x.data(), 1e-6).unwrap();
        for (a, b) in dx.data().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        use crate::numerics::finite_diff_grad;
        let mut rng = Rng::new(12);
        let x = Matrix::from_vec(2, 4, (0..8).map(|_| rng.normal()).collect()).unwrap();
        let probe = Matrix::from_vec(2, 4, (0..8).map(|_| rng.normal()).collect()).unwrap();
        let loss = |xv: &[f64]| {
            let y = softmax_rows(&Matrix::from_vec(2, 4, xv.to_vec()).unwrap());
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let dx = softmax_rows_backward(&softmax_rows(&x), &probe);
        let fd = finite_diff_grad(loss, x.data(), 1e-6).unwrap();
        for (a, b) in dx.data().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
