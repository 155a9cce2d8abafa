//! Small dense linear algebra: a row-major matrix type, a cyclic Jacobi
//! eigen-solver for symmetric matrices and the orthonormal projection `Q`
//! onto the complement of the all-ones vector.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Maximum allowed asymmetry, relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Off-diagonal mass (relative to the Frobenius norm) at which Jacobi stops.
pub const JACOBI_TOL: f64 = 1e-15;
pub const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub symmetry_tol: f64,
    pub jacobi_tol: f64,
    pub max_sweeps: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            symmetry_tol: SYMMETRY_TOL,
            jacobi_tol: JACOBI_TOL,
            max_sweeps: JACOBI_MAX_SWEEPS,
        }
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting bad lengths and
    /// non-finite entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "matrix entry ({}, {}) is not finite",
                pos / cols.max(1) + 1,
                pos % cols.max(1) + 1
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|row| row.len() != c) {
            return Err(invalid(format!(
                "row {} has {} entries, expected {c}",
                i + 1,
                rows[i].len()
            )));
        }
        Self::from_row_major(r, c, rows.iter().flatten().copied().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(invalid(format!(
                "vector of length {} does not match {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(invalid(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
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

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, v) in s.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        s
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetric_part(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(invalid("symmetric part requires a square matrix"));
        }
        Ok(self.add(&self.transpose())?.scale(0.5))
    }

    /// `‖M − Mᵀ‖_max`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `P M Pᵀ` for a permutation given as `perm[i] = image of i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(perm[i], perm[j])] = self[(i, j)];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl TryFrom<Vec<Vec<f64>>> for DenseMatrix {
    type Error = crate::Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<DenseMatrix> for Vec<Vec<f64>> {
    fn from(m: DenseMatrix) -> Self {
        m.to_rows()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
/// Column `i` of `vectors` is the unit eigenvector for `values[i]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl SymmetricEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn min_vector(&self) -> Vec<f64> {
        self.vectors.column(0)
    }

    pub fn max_vector(&self) -> Vec<f64> {
        self.vectors.column(self.values.len() - 1)
    }
}

fn check_symmetric(m: &DenseMatrix, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(invalid(format!(
            "eigen-solver needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if m.rows() == 0 {
        return Err(invalid("eigen-solver needs a non-empty matrix"));
    }
    let scale = m.max_abs();
    let asym = m.asymmetry();
    if asym > tol * scale {
        return Err(invalid(format!(
            "matrix is not symmetric: max |M - Mᵀ| = {asym:e} exceeds {tol:e} x {scale:e}"
        )));
    }
    Ok(())
}

/// Cyclic Jacobi rotations on the symmetrized input.
pub fn symmetric_eigen_with(m: &DenseMatrix, opts: &EigenOptions) -> Result<SymmetricEigen> {
    check_symmetric(m, opts.symmetry_tol)?;
    let n = m.rows();
    let mut a = m.symmetric_part()?;
    let mut v = DenseMatrix::identity(n);

    let frob = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = opts.jacobi_tol * frob;

    for _ in 0..opts.max_sweeps {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, col)] = v[(k, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

pub fn symmetric_eigen(m: &DenseMatrix) -> Result<SymmetricEigen> {
    symmetric_eigen_with(m, &EigenOptions::default())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn symmetric_eigen_min(m: &DenseMatrix) -> Result<f64> {
    Ok(symmetric_eigen(m)?.min())
}

/// Largest eigenvalue of a symmetric matrix.
pub fn symmetric_eigen_max(m: &DenseMatrix) -> Result<f64> {
    Ok(symmetric_eigen(m)?.max())
}

/// The `(n−1)×n` matrix with orthonormal rows spanning the complement of
/// `1_n`. It maps a stacked species vector to coordinates of its deviation
/// from the across-compartment mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionQ {
    n: usize,
    matrix: DenseMatrix,
}

impl ProjectionQ {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// `Q M Qᵀ` for an `n×n` matrix `M`.
    pub fn reduce(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        self.matrix.matmul(m)?.matmul(&self.matrix.transpose())
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.matrix.matvec(v)
    }
}

pub fn build_projection_q(n: usize) -> Result<ProjectionQ> {
    if n < 2 {
        return Err(invalid(format!("projection needs n >= 2, got {n}")));
    }
    let nf = n as f64;
    let nu = (nf - nf.sqrt()) / (nf * (nf - 1.0));
    let first = -1.0 + (nf - 1.0) * nu;
    let mut m = DenseMatrix::zeros(n - 1, n);
    for i in 0..n - 1 {
        m[(i, 0)] = first;
        for j in 1..n {
            m[(i, j)] = if j == i + 1 { 1.0 - nu } else { -nu };
        }
    }
    Ok(ProjectionQ { n, matrix: m })
}
