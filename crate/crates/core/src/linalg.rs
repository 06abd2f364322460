//! Small dense symmetric-matrix kernel.
//!
//! Everything here works on [`SymMatrix`], a row-major square matrix that is exactly
//! symmetric. The eigensolver is cyclic Jacobi, which is accurate to machine precision
//! on the small matrices (a few hundred rows at most) this crate deals with.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension accepted by [`sym_eigen`].
pub const MAX_EIGEN_DIM: usize = 512;

/// Jacobi sweep cap.
pub const MAX_SWEEPS: usize = 100;

/// Relative off-diagonal tolerance: iteration stops once the off-diagonal Frobenius
/// norm drops below `JACOBI_TOLERANCE * ‖m‖_F`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

/// Dense square matrix with `entries[i][j] == entries[j][i]` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSymMatrix", into = "RawSymMatrix")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl TryFrom<RawSymMatrix> for SymMatrix {
    type Error = Error;
    fn try_from(raw: RawSymMatrix) -> Result<Self> {
        SymMatrix::from_row_major(raw.dim, raw.data)
    }
}

impl From<SymMatrix> for RawSymMatrix {
    fn from(m: SymMatrix) -> Self {
        RawSymMatrix { dim: m.dim, data: m.data }
    }
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        SymMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from `f(i, j)` and symmetrizes the result.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        let mut m = SymMatrix { dim, data };
        m.symmetrize();
        m
    }

    /// Takes ownership of `dim*dim` row-major entries, replacing `M` by `(M + Mᵀ)/2`.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("matrix dimension must be at least 1".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: data.len() });
        }
        let mut m = SymMatrix { dim, data };
        m.symmetrize();
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(dim, data)
    }

    /// Rank-one matrix `x xᵀ`.
    pub fn outer(x: &[f64]) -> Self {
        let dim = x.len();
        let mut data = Vec::with_capacity(dim * dim);
        for &xi in x {
            for &xj in x {
                data.push(xi * xj);
            }
        }
        SymMatrix { dim, data }
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set_sym(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Entrywise inner product `Σ_ij a_ij b_ij`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Quadratic form `xᵀ M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.dim;
        let mut total = 0.0;
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * x[j];
            }
            total += x[i] * acc;
        }
        total
    }

    pub fn scale(&self, alpha: f64) -> SymMatrix {
        SymMatrix { dim: self.dim, data: self.data.iter().map(|v| alpha * v).collect() }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &SymMatrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// `self += alpha * x xᵀ` without materializing the outer product.
    pub fn add_outer(&mut self, alpha: f64, x: &[f64]) {
        let n = self.dim;
        debug_assert_eq!(x.len(), n);
        for (i, xi) in x.iter().enumerate() {
            let axi = alpha * xi;
            for (slot, xj) in self.data[i * n..(i + 1) * n].iter_mut().zip(x) {
                *slot += axi * xj;
            }
        }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        let mut out = self.clone();
        out.add_scaled(1.0, other);
        out
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Eigendecomposition `m = V diag(values) Vᵀ`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Row-major `n×n`; column `k` is the eigenvector of `values[k]`.
    pub vectors: Vec<f64>,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.vectors[i * n + k]).collect()
    }

    pub fn min_value(&self) -> f64 {
        *self.values.last().expect("non-empty decomposition")
    }

    /// `V diag(w) Vᵀ` for replacement eigenvalues `w`.
    pub fn recompose_with(&self, w: &[f64]) -> SymMatrix {
        let n = self.dim();
        debug_assert_eq!(w.len(), n);
        let v = &self.vectors;
        SymMatrix::from_fn(n, |i, j| {
            let mut acc = 0.0;
            for k in 0..n {
                if w[k] != 0.0 {
                    acc += v[i * n + k] * w[k] * v[j * n + k];
                }
            }
            acc
        })
    }

    pub fn recompose(&self) -> SymMatrix {
        self.recompose_with(&self.values)
    }
}

/// Cyclic Jacobi eigendecomposition.
pub fn sym_eigen(m: &SymMatrix) -> Result<SymEigen> {
    let n = m.dim();
    if n > MAX_EIGEN_DIM {
        return Err(Error::TooLarge { dim: n, max: MAX_EIGEN_DIM });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("eigendecomposition input".into()));
    }
    let mut a = m.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let tol = JACOBI_TOLERANCE * frob_norm(m);

    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    loop {
        let off = off_norm(&a);
        if off <= tol {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, off_diagonal: off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &k) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + col] = v[i * n + k];
        }
    }
    Ok(SymEigen { values, vectors })
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    Ok(sym_eigen(m)?.min_value())
}

/// Frobenius-nearest PSD matrix: negative eigenvalues are clamped to zero.
pub fn psd_project(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eigen(m)?;
    if eig.min_value() >= 0.0 {
        return Ok(m.clone());
    }
    let clamped: Vec<f64> = eig.values.iter().map(|&w| w.max(0.0)).collect();
    Ok(eig.recompose_with(&clamped))
}

/// Projection onto `{P ⪰ 0, ‖P‖_F ≤ radius}`.
///
/// Both sets are spectral, so the projection clamps the eigenvalues to be
/// non-negative and then rescales them onto the ball if needed.
pub fn psd_ball_project(m: &SymMatrix, radius: f64) -> Result<SymMatrix> {
    let eig = sym_eigen(m)?;
    let mut w: Vec<f64> = eig.values.iter().map(|&w| w.max(0.0)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= radius {
        if eig.min_value() >= 0.0 {
            return Ok(m.clone());
        }
    } else {
        let shrink = radius / norm;
        w.iter_mut().for_each(|v| *v *= shrink);
    }
    Ok(eig.recompose_with(&w))
}

pub fn frob_norm(m: &SymMatrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `sqrt(Σ_c ‖M_c‖²_F)`, the norm of a set of matrices viewed as one vector.
pub fn frob_norm_set(ms: &[SymMatrix]) -> f64 {
    ms.iter().map(|m| m.data.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}
