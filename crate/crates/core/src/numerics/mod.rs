//! Dense matrices, elementary layers and numerical helpers.
//!
//! Everything is 64-bit floating point. Transcendental functions go through
//! `libm` so results are bit-reproducible across platforms.

mod fft;
mod gradcheck;
mod layers;
mod matrix;
mod rng;

pub use fft::{fft_in_place, power_spectrum};
pub use gradcheck::{finite_diff_grad, relative_error};
pub use layers::{
    layer_norm, layer_norm_rows, layer_norm_rows_backward, linear, median_filter_binary, relu,
    relu_backward, sigmoid, sigmoid_scalar, softmax_rows, softmax_rows_backward, softplus,
    LayerNormCache, LAYER_NORM_EPS,
};
pub use matrix::Matrix;
pub use rng::Rng;

use alloc::vec::Vec;

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    loop {
        out.push(current.clone());
        if !next_permutation(&mut current) {
            return out;
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
