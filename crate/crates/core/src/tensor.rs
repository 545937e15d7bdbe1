//! Dense row-major matrices, seeded Gaussian sampling and a one-sided Jacobi SVD.
//!
//! Everything is `f64`. Randomness only enters through an explicit [`SeededRng`]
//! handle; there is no global generator anywhere in the crate.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{IbmError, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(IbmError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(IbmError::ShapeMismatch {
                    context: "from_rows",
                    expected: (rows.len(), cols),
                    found: (rows.len(), r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn ensure_shape(&self, context: &'static str, expected: (usize, usize)) -> Result<()> {
        if self.shape() != expected {
            return Err(IbmError::ShapeMismatch {
                context,
                expected,
                found: self.shape(),
            });
        }
        Ok(())
    }

    /// Rejects the matrix if any entry is NaN or infinite.
    pub fn ensure_finite(&self, context: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(IbmError::NonFinite {
                context,
                row: i / self.cols.max(1),
                col: i % self.cols.max(1),
            }),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped matrices.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        other.ensure_shape("zip_map", self.shape())?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        other.ensure_shape("max_abs_diff", self.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `self · other`
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(IbmError::ShapeMismatch {
                context: "matmul",
                expected: (self.cols, other.cols),
                found: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(IbmError::ShapeMismatch {
                context: "matmul_nt",
                expected: (other.rows, self.cols),
                found: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a_row, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(IbmError::ShapeMismatch {
                context: "matmul_tn",
                expected: (self.rows, other.cols),
                found: other.shape(),
            });
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sum of squared entries.
pub fn frobenius_sq(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum()
}

/// Explicit-state generator. Identical seed and call sequence yield identical samples.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream, advancing this one by a single draw.
    pub fn split(&mut self) -> SeededRng {
        SeededRng::new(self.inner.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random_bool(p)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// i.i.d. normal entries with the given mean and standard deviation.
pub fn gaussian_sample(
    rng: &mut SeededRng,
    rows: usize,
    cols: usize,
    mean: f64,
    stddev: f64,
) -> Result<Matrix> {
    if stddev.is_nan() || stddev < 0.0 {
        return Err(IbmError::NegativeStddev(stddev));
    }
    let data = (0..rows * cols)
        .map(|_| mean + stddev * rng.standard_normal())
        .collect();
    Matrix::new(rows, cols, data)
}

/// Thin SVD `m = U · diag(s) · Vᵀ` with `s` descending.
///
/// For an `r × c` input with `p = min(r, c)`, `u` is `r × p` and `v` is `c × p`,
/// both column-orthonormal.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_rank(self.singular_values.len())
    }

    /// Best rank-`k` approximation `U_k Σ_k V_kᵀ`.
    pub fn reconstruct_rank(&self, k: usize) -> Matrix {
        let (rows, cols) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(rows, cols);
        for (idx, &s) in self.singular_values.iter().enumerate().take(k) {
            for r in 0..rows {
                let us = self.u[(r, idx)] * s;
                if us == 0.0 {
                    continue;
                }
                let row = out.row_mut(r);
                for (c, o) in row.iter_mut().enumerate() {
                    *o += us * self.v[(c, idx)];
                }
            }
        }
        out
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

pub fn svd(m: &Matrix) -> Result<Svd> {
    if m.is_empty() {
        return Err(IbmError::Empty("svd"));
    }
    m.ensure_finite("svd")?;
    if m.rows() >= m.cols() {
        jacobi_tall(m)
    } else {
        let t = jacobi_tall(&m.transpose())?;
        Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        })
    }
}

/// One-sided (Hestenes) Jacobi on the columns of a tall matrix.
fn jacobi_tall(m: &Matrix) -> Result<Svd> {
    let (rows, n) = m.shape();
    // column-major working copies
    let mut a: Vec<Vec<f64>> = (0..n).map(|c| m.col(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = a.iter().map(|col| (dot(col, col).sqrt(), 0)).collect();
    for (i, o) in order.iter_mut().enumerate() {
        o.1 = i;
    }
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let scale = order.first().map_or(0.0, |o| o.0);
    let tiny = scale * f64::EPSILON * (rows.max(n) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut singular_values = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for &(s, idx) in &order {
        if s > tiny {
            u_cols.push(a[idx].iter().map(|x| x / s).collect());
            singular_values.push(s);
        } else {
            deficient.push(u_cols.len());
            u_cols.push(vec![0.0; rows]);
            singular_values.push(0.0);
        }
        v_cols.push(v[idx].clone());
    }
    complete_orthonormal(&mut u_cols, &deficient);

    let mut u = Matrix::zeros(rows, n);
    for (c, col) in u_cols.iter().enumerate() {
        for (r, &x) in col.iter().enumerate() {
            u[(r, c)] = x;
        }
    }
    let mut vm = Matrix::zeros(n, n);
    for (c, col) in v_cols.iter().enumerate() {
        for (r, &x) in col.iter().enumerate() {
            vm[(r, c)] = x;
        }
    }
    Ok(Svd {
        u,
        singular_values,
        v: vm,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Replaces the listed (zero) columns with unit vectors orthogonal to every other column.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let dim = cols[0].len();
    let mut basis = 0;
    for &slot in missing {
        while basis < dim {
            let mut cand = vec![0.0; dim];
            cand[basis] = 1.0;
            basis += 1;
            // two Gram-Schmidt passes for stability
            for _ in 0..2 {
                for (i, col) in cols.iter().enumerate() {
                    if i == slot || (missing.contains(&i) && col.iter().all(|&x| x == 0.0)) {
                        continue;
                    }
                    let proj = dot(&cand, col);
                    for (x, y) in cand.iter_mut().zip(col) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if norm > 1e-6 {
                cols[slot] = cand.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
        gaussian_sample(rng, rows, cols, 0.0, 3.0).unwrap()
    }

    fn assert_svd_ok(m: &Matrix) {
        let d = svd(m).unwrap();
        assert!(d.reconstruct().max_abs_diff(m).unwrap() <= 1e-8);
        for w in d.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for q in [&d.u, &d.v] {
            let gram = q.matmul_tn(q).unwrap();
            assert!(gram.max_abs_diff(&Matrix::identity(q.cols())).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let d = svd(&Matrix::identity(2)).unwrap();
        assert_eq!(d.singular_values, vec![1.0, 1.0]);
        let d = svd(&Matrix::diag(&[3.0, 2.0])).unwrap();
        assert_eq!(d.singular_values, vec![3.0, 2.0]);
        let d = svd(&Matrix::diag(&[2.0, 3.0])).unwrap();
        assert_eq!(d.singular_values, vec![3.0, 2.0]);
    }

    #[test]
    fn svd_tall_wide_and_rank_deficient() {
        let mut rng = SeededRng::new(3);
        for &(r, c) in &[(5, 3), (3, 5), (1, 7), (7, 1), (16, 16), (64, 64), (40, 9)] {
            assert_svd_ok(&random(&mut rng, r, c));
        }
        // rank one
        let u = random(&mut rng, 8, 1);
        let v = random(&mut rng, 1, 6);
        let m = u.matmul(&v).unwrap();
        assert_svd_ok(&m);
        let d = svd(&m).unwrap();
        assert!(d.singular_values[1..].iter().all(|&s| s < 1e-9 * d.singular_values[0]));
        assert_svd_ok(&Matrix::zeros(4, 3));
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = Matrix::ones(2, 2);
        m[(1, 0)] = f64::NAN;
        assert!(matches!(svd(&m), Err(IbmError::NonFinite { row: 1, col: 0, .. })));
        m[(1, 0)] = f64::INFINITY;
        assert!(svd(&m).is_err());
        assert!(matches!(svd(&Matrix::zeros(0, 3)), Err(IbmError::Empty(_))));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_sq(&Matrix::zeros(3, 2)), 0.0);
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(frobenius_sq(&m), 30.0);
    }

    #[test]
    fn gaussian_zero_stddev_and_determinism() {
        let mut rng = SeededRng::new(1);
        let m = gaussian_sample(&mut rng, 3, 4, 2.5, 0.0).unwrap();
        assert!(m.data().iter().all(|&v| v == 2.5));
        let a = gaussian_sample(&mut SeededRng::new(42), 5, 5, 0.0, 1.0).unwrap();
        let b = gaussian_sample(&mut SeededRng::new(42), 5, 5, 0.0, 1.0).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(matches!(
            gaussian_sample(&mut rng, 1, 1, 0.0, -1.0),
            Err(IbmError::NegativeStddev(_))
        ));
    }

    #[test]
    fn gaussian_moments() {
        // standard errors at n = 1e5: mean 0.0032, variance 0.0045; bounds are > 6 SE
        let m = gaussian_sample(&mut SeededRng::new(7), 1, 100_000, 0.0, 1.0).unwrap();
        let n = m.len() as f64;
        let mean = m.sum() / n;
        let var = m.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn split_streams_are_reproducible() {
        let mut a = SeededRng::new(9);
        let mut b = SeededRng::new(9);
        let (mut ca, mut cb) = (a.split(), b.split());
        assert_eq!(ca.next_u64(), cb.next_u64());
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = SeededRng::new(5);
        let a = random(&mut rng, 4, 3);
        let b = random(&mut rng, 3, 5);
        let ab = a.matmul(&b).unwrap();
        let ab_nt = a.matmul_nt(&b.transpose()).unwrap();
        let ab_tn = a.transpose().matmul_tn(&b).unwrap();
        assert!(ab.max_abs_diff(&ab_nt).unwrap() < 1e-12);
        assert!(ab.max_abs_diff(&ab_tn).unwrap() < 1e-12);
        assert!(a.matmul(&a).is_err());
    }
}
