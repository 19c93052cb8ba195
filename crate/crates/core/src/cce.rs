//! Cluster-robust covariance (CCE) for k-class estimates.

use nalgebra::{DMatrix, DVector};

use crate::data::PartialledDesign;
use crate::error::Result;
use crate::linalg;

/// Cluster covariance pieces for one set of residuals.
#[derive(Debug, Clone)]
pub struct CceBundle {
    /// `(1/n) sum_j S_j S_j'` with `S_j = sum_{i in j} Z~_ij e_ij`.
    pub omega_cr: DMatrix<f64>,
    /// Sandwich variance of `sqrt(n) (beta_hat - beta)`.
    pub v_hat: DMatrix<f64>,
    /// `(lambda' V lambda)^{-1}`.
    pub a_r_cr: DMatrix<f64>,
    /// `Q_ZX' Q_ZZ^{-1} Q_ZX`.
    pub q_hat: DMatrix<f64>,
}

/// Small-sample scaling of the clustered meat matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CceCorrection {
    #[default]
    None,
    /// Multiply by `q / (q - 1)`.
    ClusterCount,
}

impl CceCorrection {
    pub fn factor(self, q: usize) -> f64 {
        match self {
            CceCorrection::None => 1.0,
            CceCorrection::ClusterCount => q as f64 / (q as f64 - 1.0),
        }
    }
}

/// `cce_matrix`: CCE from the original `Q_ZX` and residuals `e`.
pub fn cce_matrix(
    design: &PartialledDesign,
    resid: &DVector<f64>,
    lambda_beta: &DMatrix<f64>,
) -> Result<CceBundle> {
    cce_matrix_with(design, &design.q_zx, resid, lambda_beta, CceCorrection::None)
}

/// `bootstrap_cce_matrix`: CCE for a bootstrap sample, with `Q*_ZX = Z~'X*/n`.
pub fn bootstrap_cce_matrix(
    design: &PartialledDesign,
    x_star: &DMatrix<f64>,
    resid_star: &DVector<f64>,
    lambda_beta: &DMatrix<f64>,
) -> Result<CceBundle> {
    let q_zx = design.z_tilde.tr_mul(x_star) / design.n as f64;
    cce_matrix_with(design, &q_zx, resid_star, lambda_beta, CceCorrection::None)
}

pub fn cce_matrix_with(
    design: &PartialledDesign,
    q_zx: &DMatrix<f64>,
    resid: &DVector<f64>,
    lambda_beta: &DMatrix<f64>,
    correction: CceCorrection,
) -> Result<CceBundle> {
    let scores = design.cluster_scores(resid);
    let omega = omega_from_scores(&scores, design.n) * correction.factor(design.q());
    assemble(&design.q_zz_inv, q_zx, omega, lambda_beta)
}

pub(crate) fn omega_from_scores(scores: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let dz = scores.first().map_or(0, |s| s.len());
    let mut omega = DMatrix::zeros(dz, dz);
    for s in scores {
        omega.ger(1.0, s, s, 1.0);
    }
    linalg::symmetrize(&(omega / n as f64))
}

pub(crate) fn assemble(
    q_zz_inv: &DMatrix<f64>,
    q_zx: &DMatrix<f64>,
    omega: DMatrix<f64>,
    lambda_beta: &DMatrix<f64>,
) -> Result<CceBundle> {
    let bread_half = q_zx.tr_mul(q_zz_inv);
    let q_hat = linalg::symmetrize(&(&bread_half * q_zx));
    let q_inv = linalg::spd_inverse(&q_hat, "Q_ZX' Q_ZZ^{-1} Q_ZX")?;
    let left = &q_inv * &bread_half;
    let v_hat = linalg::symmetrize(&(&left * &omega * left.transpose()));
    let lvl = linalg::symmetrize(&(lambda_beta.tr_mul(&v_hat) * lambda_beta));
    let a_r_cr = linalg::spd_inverse(&lvl, "clustered variance of the restriction")?;
    Ok(CceBundle {
        omega_cr: omega,
        v_hat,
        a_r_cr,
        q_hat,
    })
}
