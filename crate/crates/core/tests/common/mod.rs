#![allow(dead_code)]

pub mod gradcheck;

use ibm_core::{gaussian_sample, Matrix, SeededRng};
use nalgebra::DMatrix;

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

pub fn random(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    gaussian_sample(rng, rows, cols, 0.0, 1.0).unwrap()
}

/// A `rows × cols` matrix of rank at most `rank`.
pub fn low_rank(rng: &mut SeededRng, rows: usize, cols: usize, rank: usize) -> Matrix {
    random(rng, rows, rank).matmul(&random(rng, rank, cols)).unwrap()
}

/// Post-ReLU-looking activations: nonnegative, many exact zeros.
pub fn relu_like(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    random(rng, rows, cols).map(|v| v.max(0.0))
}

/// Smallest k whose rank-k reconstruction leaves at most `1 − δ` of the squared
/// Frobenius norm unexplained. The reconstruction projects onto the top-k eigenvectors
/// of `HᵀH`, so no SVD routine is involved.
pub fn brute_force_rank(h: &Matrix, delta: f64) -> usize {
    let a = to_na(h);
    let total = a.norm_squared();
    let eig = (a.transpose() * &a).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    for k in 1..=order.len() {
        let v = DMatrix::from_fn(a.ncols(), k, |r, c| eig.eigenvectors[(r, order[c])]);
        let approx = &a * &v * v.transpose();
        if (&a - approx).norm_squared() <= (1.0 - delta) * total {
            return k;
        }
    }
    order.len()
}
