//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Projections are never formed as n×n matrices. A [`ColumnSpace`] keeps an
//! orthonormal basis of span(A) from a singular value decomposition and
//! applies `M_A = I - P_A` by residualization.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Reciprocal condition number of `A^T A` below which `A` is treated as singular.
pub const GRAM_RCOND_MIN: f64 = 1e-12;

/// Relative eigenvalue floor (times the trace) for symmetric inverse square roots.
pub const EIGEN_FLOOR_REL: f64 = 1e-12;

/// Orthonormal basis of the column space of a tall matrix.
#[derive(Debug, Clone)]
pub struct ColumnSpace {
    basis: DMatrix<f64>,
    // Pseudo-inverse pieces for coefficient recovery: coef = V diag(1/s) U^T b.
    v: DMatrix<f64>,
    inv_sv: DVector<f64>,
    full_rank: bool,
}

impl ColumnSpace {
    /// Builds the column space of `a`, failing when `a^T a` is numerically singular.
    pub fn new(a: &DMatrix<f64>, what: &'static str) -> Result<Self> {
        let cs = Self::build(a)?;
        if !cs.full_rank {
            return Err(Error::Singular { what });
        }
        Ok(cs)
    }

    /// Builds the column space keeping only numerically independent directions.
    pub fn tolerant(a: &DMatrix<f64>) -> Result<Self> {
        Self::build(a)
    }

    fn build(a: &DMatrix<f64>) -> Result<Self> {
        let (n, k) = a.shape();
        if k == 0 {
            return Ok(Self {
                basis: DMatrix::zeros(n, 0),
                v: DMatrix::zeros(0, 0),
                inv_sv: DVector::zeros(0),
                full_rank: true,
            });
        }
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let s = &svd.singular_values;
        let smax = s.iter().cloned().fold(0.0_f64, f64::max);
        if smax == 0.0 || !smax.is_finite() {
            return Ok(Self {
                basis: DMatrix::zeros(n, 0),
                v: DMatrix::zeros(k, 0),
                inv_sv: DVector::zeros(0),
                full_rank: false,
            });
        }
        let keep: Vec<usize> = (0..s.len())
            .filter(|&i| (s[i] / smax).powi(2) >= GRAM_RCOND_MIN)
            .collect();
        let full_rank = keep.len() == k;
        let basis = u.select_columns(keep.iter());
        let v = v_t.transpose().select_columns(keep.iter());
        let inv_sv = DVector::from_iterator(keep.len(), keep.iter().map(|&i| 1.0 / s[i]));
        Ok(Self {
            basis,
            v,
            inv_sv,
            full_rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_full_rank(&self) -> bool {
        self.full_rank
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `M_A b`.
    pub fn residualize(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        if self.basis.ncols() == 0 {
            return b.clone();
        }
        let proj = &self.basis * (self.basis.transpose() * b);
        b - proj
    }

    pub fn residualize_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        if self.basis.ncols() == 0 {
            return b.clone();
        }
        let proj = &self.basis * (self.basis.tr_mul(b));
        b - proj
    }

    /// Least-squares coefficients of `b` on the original columns (minimum norm).
    pub fn coefficients(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut ub = self.basis.tr_mul(b);
        for (i, mut row) in ub.row_iter_mut().enumerate() {
            row *= self.inv_sv[i];
        }
        &self.v * ub
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular { what });
    }
    let chol = Cholesky::new(m.clone()).ok_or(Error::Singular { what })?;
    let diag_max = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let l = chol.l_dirty();
    let lmin = (0..m.nrows()).map(|i| l[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if diag_max == 0.0 || lmin * lmin < GRAM_RCOND_MIN * diag_max {
        return Err(Error::Singular { what });
    }
    Ok(chol.inverse())
}

/// Inverse of a general square matrix, with a relative pivot guard.
pub fn square_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular { what });
    }
    let scale = m.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Singular { what });
    }
    let lu = m.clone().lu();
    let u = lu.u();
    let pivot_min = (0..m.nrows()).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if pivot_min <= 1e-13 * scale {
        return Err(Error::Singular { what });
    }
    lu.try_inverse().ok_or(Error::Singular { what })
}

/// Symmetric inverse square root through an eigendecomposition.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    let trace = sym.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::Singular { what });
    }
    let eig = SymmetricEigen::new(sym);
    let floor = EIGEN_FLOOR_REL * trace;
    if eig.eigenvalues.iter().any(|&l| l < floor) {
        return Err(Error::Singular { what });
    }
    let d = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// Smallest generalized eigenvalue of the symmetric-definite pencil `(a, b)`.
pub fn min_generalized_eigenvalue(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    what: &'static str,
) -> Result<f64> {
    let chol = Cholesky::new(symmetrize(b)).ok_or(Error::Singular { what })?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(l.nrows(), l.nrows()))
        .ok_or(Error::Singular { what })?;
    let c = symmetrize(&(&linv * a * linv.transpose()));
    let eig = SymmetricEigen::new(c);
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// `sqrt(u^T a u)`, clamped at zero.
pub fn weighted_norm(u: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    let v = (u.transpose() * a * u)[(0, 0)];
    v.max(0.0).sqrt()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Rows `range` of `m` as an owned matrix.
pub fn rows(m: &DMatrix<f64>, range: std::ops::Range<usize>) -> DMatrix<f64> {
    m.rows(range.start, range.len()).into_owned()
}

/// Checks that a symmetric matrix is positive definite.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.nrows() > 0 && Cholesky::new(symmetrize(m)).is_some()
}

/// Verifies `lambda` has full column rank.
pub fn has_full_column_rank(m: &DMatrix<f64>) -> bool {
    if m.ncols() == 0 || m.ncols() > m.nrows() {
        return false;
    }
    ColumnSpace::tolerant(m).map(|c| c.is_full_rank()).unwrap_or(false)
}
