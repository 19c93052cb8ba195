//! Anderson–Rubin tests of a full null vector and their wild bootstrap.
//!
//! Scores are `f_ij = Z~_ij e_ij` with `e` the null-restricted OLS residual.
//! Statistics are stored as norms (`AR = ||sqrt(n) f_hat||_A`); the
//! asymptotic comparison and the CQLR formula use the squared form.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cce;
use crate::data::{ClusteredDataset, PartialledDesign};
use crate::dist;
use crate::error::{Error, Result};
use crate::inference::{self, BootstrapResult, SignSet, TestKind};
use crate::kclass::{restricted_ols_fit, RestrictedOlsFit};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct ArStatistics {
    pub n: usize,
    pub f_hat: DVector<f64>,
    /// Per-cluster score sums `S_j`.
    pub scores: Vec<DVector<f64>>,
    pub ar: f64,
    /// Present whenever the null-imposed CCE is invertible.
    pub ar_cr: Option<f64>,
    pub a_z: DMatrix<f64>,
    pub a_cr: Option<DMatrix<f64>>,
}

impl ArStatistics {
    /// `n f_hat' A_CR f_hat`.
    pub fn ar_cr_squared(&self) -> Option<f64> {
        self.ar_cr.map(|v| v * v)
    }

    /// `n^{-1} sum_j g_j S_j`.
    pub fn f_star(&self, g: &[i8]) -> DVector<f64> {
        let mut f = DVector::zeros(self.f_hat.len());
        for (s, &gj) in self.scores.iter().zip(g) {
            f.axpy(gj as f64, s, 1.0);
        }
        f / self.n as f64
    }

    /// `AR*(g)`, or `AR*_CR(g)` with the sample `A_CR` when `studentize`.
    pub fn bootstrap(&self, g: &[i8], studentize: bool) -> Result<f64> {
        let f = self.f_star(g);
        let a = self.weight(studentize)?;
        Ok((self.n as f64).sqrt() * linalg::weighted_norm(&f, a))
    }

    fn weight(&self, studentize: bool) -> Result<&DMatrix<f64>> {
        if studentize {
            self.a_cr.as_ref().ok_or(Error::Singular {
                what: "null-imposed CCE (needs q > d_z and non-degenerate scores)",
            })
        } else {
            Ok(&self.a_z)
        }
    }

    pub fn statistic(&self, studentize: bool) -> Result<f64> {
        if studentize {
            self.ar_cr.ok_or(Error::Singular {
                what: "null-imposed CCE (needs q > d_z and non-degenerate scores)",
            })
        } else {
            Ok(self.ar)
        }
    }
}

pub(crate) fn validate_weight(a: &DMatrix<f64>, dz: usize) -> Result<()> {
    if a.nrows() != dz || a.ncols() != dz {
        return Err(Error::DimensionMismatch {
            what: "weight matrix A_z",
            expected: dz,
            found: a.nrows(),
        });
    }
    if (a - a.transpose()).amax() > 1e-12 * a.amax() || !linalg::is_positive_definite(a) {
        return Err(Error::InvalidArgument("A_z must be symmetric positive definite".into()));
    }
    Ok(())
}

/// `ar_statistics`.
pub fn ar_statistics(
    design: &PartialledDesign,
    restricted: &RestrictedOlsFit,
    a_z: Option<&DMatrix<f64>>,
) -> Result<ArStatistics> {
    let dz = design.dz();
    let a_z = match a_z {
        Some(a) => {
            validate_weight(a, dz)?;
            a.clone()
        }
        None => DMatrix::identity(dz, dz),
    };
    let n = design.n;
    let scores = design.cluster_scores(&restricted.resid);
    let mut f_hat = DVector::zeros(dz);
    for s in &scores {
        f_hat += s;
    }
    f_hat /= n as f64;
    let rootn = (n as f64).sqrt();
    let ar = rootn * linalg::weighted_norm(&f_hat, &a_z);
    let omega = cce::omega_from_scores(&scores, n);
    let a_cr = null_cce_inverse(&omega);
    let ar_cr = a_cr.as_ref().map(|a| rootn * linalg::weighted_norm(&f_hat, a));
    Ok(ArStatistics {
        n,
        f_hat,
        scores,
        ar,
        ar_cr,
        a_z,
        a_cr,
    })
}

fn null_cce_inverse(omega: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    // The eigenvalue floor catches rank deficiency that Cholesky can miss.
    linalg::sym_inv_sqrt(omega, "null-imposed CCE").ok()?;
    linalg::spd_inverse(omega, "null-imposed CCE").ok()
}

/// Convenience: restricted OLS plus [`ar_statistics`] from a dataset.
pub fn ar_statistics_for(
    data: &ClusteredDataset,
    design: &PartialledDesign,
    beta_0: &DVector<f64>,
    a_z: Option<&DMatrix<f64>>,
) -> Result<ArStatistics> {
    let r = restricted_ols_fit(data, design, beta_0)?;
    ar_statistics(design, &r, a_z)
}

/// `ar_bootstrap_test`.
pub fn ar_bootstrap_test(
    data: &ClusteredDataset,
    beta_0: &DVector<f64>,
    studentize: bool,
    signs: &SignSet,
    alpha: f64,
    a_z: Option<&DMatrix<f64>>,
) -> Result<BootstrapResult> {
    let design = PartialledDesign::new(data)?;
    ar_bootstrap_test_with(data, &design, beta_0, studentize, signs, alpha, a_z)
}

pub(crate) fn ar_bootstrap_test_with(
    data: &ClusteredDataset,
    design: &PartialledDesign,
    beta_0: &DVector<f64>,
    studentize: bool,
    signs: &SignSet,
    alpha: f64,
    a_z: Option<&DMatrix<f64>>,
) -> Result<BootstrapResult> {
    inference::check_alpha(alpha)?;
    if signs.q() != data.q() {
        return Err(Error::DimensionMismatch {
            what: "sign vector length",
            expected: data.q(),
            found: signs.q(),
        });
    }
    if studentize && data.q() <= data.dz() {
        return Err(Error::InvalidArgument(format!(
            "studentized AR needs q > d_z (q = {}, d_z = {})",
            data.q(),
            data.dz()
        )));
    }
    let st = ar_statistics_for(data, design, beta_0, a_z)?;
    let stat = st.statistic(studentize)?;
    let (dist, failed) = inference::map_signs(signs, |g| st.bootstrap(g, studentize));
    BootstrapResult::from_distribution(
        TestKind::Ar,
        None,
        studentize,
        stat,
        dist,
        alpha,
        signs.descriptor(),
        failed,
    )
}

/// Asymptotic AR test with the null-imposed CCE: rejects when
/// `AR_CR^2 > chi2_{d_z, 1-alpha}`.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticArResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub alpha: f64,
}

pub fn asymptotic_ar_cr_test(
    data: &ClusteredDataset,
    beta_0: &DVector<f64>,
    alpha: f64,
) -> Result<AsymptoticArResult> {
    let design = PartialledDesign::new(data)?;
    asymptotic_ar_cr_test_with(data, &design, beta_0, alpha)
}

pub(crate) fn asymptotic_ar_cr_test_with(
    data: &ClusteredDataset,
    design: &PartialledDesign,
    beta_0: &DVector<f64>,
    alpha: f64,
) -> Result<AsymptoticArResult> {
    inference::check_alpha(alpha)?;
    let st = ar_statistics_for(data, design, beta_0, None)?;
    let stat = st.ar_cr_squared().ok_or(Error::Singular {
        what: "null-imposed CCE (needs q > d_z and non-degenerate scores)",
    })?;
    let cv = dist::chi2_quantile(data.dz(), 1.0 - alpha)?;
    Ok(AsymptoticArResult {
        statistic: stat,
        critical_value: cv,
        reject: inference::exceeds(stat, cv),
        alpha,
    })
}
