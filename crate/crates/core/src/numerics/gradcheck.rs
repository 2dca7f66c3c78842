use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Central finite-difference gradient of `f` at `x`:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + h;
        let plus = f(&point);
        point[i] = orig - h;
        let minus = f(&point);
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i}: f(x+h)={plus}, f(x-h)={minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    libm::fabs(a - b) / libm::fabs(a).max(libm::fabs(b)).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sigmoid_scalar;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 3.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn sum_of_sigmoids_matches_analytic() {
        let x = [-2.0, -0.3, 0.0, 0.7, 3.1];
        let g = finite_diff_grad(|p| p.iter().map(|&v| sigmoid_scalar(v)).sum(), &x, 1e-5).unwrap();
        for (gi, &xi) in g.iter().zip(&x) {
            let s = sigmoid_scalar(xi);
            assert!((gi - s * (1.0 - s)).abs() < 1e-7);
        }
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        assert!(matches!(
            finite_diff_grad(|x| x[0].ln(), &[0.0], 1e-5),
            Err(Error::NonFinite(_))
        ));
        assert!(finite_diff_grad(|x| x[0], &[0.0], 0.0).is_err());
    }
}
