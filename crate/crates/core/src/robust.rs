//! Cluster-robust LM and CQLR statistics and their wild bootstrap.
//!
//! Both use the null-imposed score covariance `Omega` and the Jacobian
//! orthogonalized against the mean score. In the bootstrap, `Omega`, the
//! sample Jacobian and `rk` are held at their sample values.

use nalgebra::{DMatrix, DVector};

use crate::cce;
use crate::data::{ClusteredDataset, PartialledDesign};
use crate::error::{Error, Result};
use crate::inference::{self, BootstrapResult, SignSet, TestKind};
use crate::kclass::{restricted_ols_fit, RestrictedOlsFit};
use crate::linalg::{self, ColumnSpace};

#[derive(Debug, Clone)]
pub struct JacobianBundle {
    pub g_hat: DMatrix<f64>,
    /// `Gamma_l`, one `d_z × d_z` matrix per endogenous column.
    pub gamma_hat: Vec<DMatrix<f64>>,
    pub omega_hat: DMatrix<f64>,
    pub d_hat: DMatrix<f64>,
    /// `n D' Omega^{-1} D`, for a single endogenous regressor.
    pub rk: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobustStatistic {
    Lm,
    Cqlr,
}

/// Orthogonal projection onto span(m).
pub fn projection_matrix(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let basis = jacobian_space(m)?;
    Ok(basis.basis() * basis.basis().transpose())
}

fn jacobian_space(m: &DMatrix<f64>) -> Result<ColumnSpace> {
    ColumnSpace::new(m, "orthogonalized Jacobian").map_err(|_| Error::RankDeficient {
        what: "orthogonalized Jacobian".into(),
    })
}

/// Everything the LM and CQLR statistics need at a given null.
#[derive(Debug, Clone)]
struct RobustParts {
    n: usize,
    scores: Vec<DVector<f64>>,
    /// `H_j = Z~_j' X_j`.
    h: Vec<DMatrix<f64>>,
    g_hat: DMatrix<f64>,
    omega: DMatrix<f64>,
    omega_inv: DMatrix<f64>,
    omega_inv_sqrt: DMatrix<f64>,
}

impl RobustParts {
    fn new(data: &ClusteredDataset, design: &PartialledDesign, restricted: &RestrictedOlsFit) -> Result<Self> {
        let n = design.n;
        let scores = design.cluster_scores(&restricted.resid);
        let omega = cce::omega_from_scores(&scores, n);
        let omega_inv_sqrt = linalg::sym_inv_sqrt(&omega, "null-imposed score covariance")?;
        let omega_inv = linalg::spd_inverse(&omega, "null-imposed score covariance")?;
        let h = design
            .ranges
            .iter()
            .map(|r| design.z_tilde.rows(r.start, r.len()).tr_mul(&data.x().rows(r.start, r.len())))
            .collect();
        Ok(Self {
            n,
            scores,
            h,
            g_hat: design.q_zx.clone(),
            omega,
            omega_inv,
            omega_inv_sqrt,
        })
    }

    fn f(&self, g: Option<&[i8]>) -> DVector<f64> {
        let mut f = DVector::zeros(self.omega.nrows());
        for (j, s) in self.scores.iter().enumerate() {
            f.axpy(g.map_or(1.0, |g| g[j] as f64), s, 1.0);
        }
        f / self.n as f64
    }

    fn gammas(&self, g: Option<&[i8]>) -> Vec<DMatrix<f64>> {
        let (dz, dx) = (self.omega.nrows(), self.g_hat.ncols());
        (0..dx)
            .map(|l| {
                let mut gm = DMatrix::zeros(dz, dz);
                for (j, (hj, s)) in self.h.iter().zip(&self.scores).enumerate() {
                    let w = g.map_or(1.0, |g| g[j] as f64);
                    gm.ger(w, &hj.column(l).into_owned(), s, 1.0);
                }
                gm / self.n as f64
            })
            .collect()
    }

    fn d(&self, gammas: &[DMatrix<f64>], f: &DVector<f64>) -> DMatrix<f64> {
        let of = &self.omega_inv * f;
        let mut d = self.g_hat.clone();
        for (l, gm) in gammas.iter().enumerate() {
            let col = self.g_hat.column(l) - gm * &of;
            d.set_column(l, &col);
        }
        d
    }

    fn lm(&self, f: &DVector<f64>, d: &DMatrix<f64>) -> Result<f64> {
        let u = &self.omega_inv_sqrt * f;
        let m = &self.omega_inv_sqrt * d;
        let space = jacobian_space(&m)?;
        let c = space.basis().tr_mul(&u);
        Ok(self.n as f64 * c.norm_squared())
    }

    fn ar_squared(&self, f: &DVector<f64>) -> f64 {
        let v = linalg::weighted_norm(f, &self.omega_inv);
        self.n as f64 * v * v
    }

    fn rk(&self, d: &DMatrix<f64>) -> Option<f64> {
        if d.ncols() != 1 {
            return None;
        }
        let col = d.column(0).into_owned();
        let v = linalg::weighted_norm(&col, &self.omega_inv);
        Some(self.n as f64 * v * v)
    }
}

/// `lm_statistic`.
pub fn lm_statistic(
    data: &ClusteredDataset,
    design: &PartialledDesign,
    restricted: &RestrictedOlsFit,
) -> Result<(f64, JacobianBundle)> {
    let parts = RobustParts::new(data, design, restricted)?;
    let f = parts.f(None);
    let gammas = parts.gammas(None);
    let d = parts.d(&gammas, &f);
    let lm = parts.lm(&f, &d)?;
    let rk = parts.rk(&d);
    Ok((
        lm,
        JacobianBundle {
            g_hat: parts.g_hat.clone(),
            gamma_hat: gammas,
            omega_hat: parts.omega.clone(),
            d_hat: d,
            rk,
        },
    ))
}

/// `cqlr_statistic`: `(AR - rk + sqrt((AR - rk)^2 + 4 LM rk)) / 2`, with AR squared.
pub fn cqlr_statistic(ar_squared: f64, lm: f64, rk: f64) -> Result<f64> {
    for (name, v) in [("AR", ar_squared), ("LM", lm), ("rk", rk)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!("CQLR input {name} must be finite and ≥ 0, got {v}")));
        }
    }
    let a = ar_squared - rk;
    let disc = (a * a + 4.0 * lm * rk).sqrt();
    if a >= 0.0 {
        Ok(0.5 * (a + disc))
    } else if disc - a == 0.0 {
        Ok(0.0)
    } else {
        // Same value without cancellation.
        Ok(2.0 * lm * rk / (disc - a))
    }
}

/// LM statistic, its CQLR counterpart (single regressor only) and the bundle.
pub fn robust_statistics(
    data: &ClusteredDataset,
    design: &PartialledDesign,
    beta_0: &DVector<f64>,
) -> Result<(f64, Option<f64>, JacobianBundle)> {
    let r = restricted_ols_fit(data, design, beta_0)?;
    let parts = RobustParts::new(data, design, &r)?;
    let (lm, bundle) = lm_statistic(data, design, &r)?;
    let lr = match bundle.rk {
        Some(rk) => Some(cqlr_statistic(parts.ar_squared(&parts.f(None)), lm, rk)?),
        None => None,
    };
    Ok((lm, lr, bundle))
}

/// `lm_cqlr_bootstrap_test`.
pub fn lm_cqlr_bootstrap_test(
    data: &ClusteredDataset,
    beta_0: &DVector<f64>,
    statistic: RobustStatistic,
    signs: &SignSet,
    alpha: f64,
) -> Result<BootstrapResult> {
    let design = PartialledDesign::new(data)?;
    lm_cqlr_bootstrap_test_with(data, &design, beta_0, statistic, signs, alpha)
}

pub(crate) fn lm_cqlr_bootstrap_test_with(
    data: &ClusteredDataset,
    design: &PartialledDesign,
    beta_0: &DVector<f64>,
    statistic: RobustStatistic,
    signs: &SignSet,
    alpha: f64,
) -> Result<BootstrapResult> {
    inference::check_alpha(alpha)?;
    if signs.q() != data.q() {
        return Err(Error::DimensionMismatch {
            what: "sign vector length",
            expected: data.q(),
            found: signs.q(),
        });
    }
    if data.q() <= data.dz() {
        return Err(Error::InvalidArgument(format!(
            "LM and CQLR bootstrap need q > d_z (q = {}, d_z = {})",
            data.q(),
            data.dz()
        )));
    }
    if statistic == RobustStatistic::Cqlr && data.dx() != 1 {
        return Err(Error::InvalidArgument("CQLR supports a single endogenous regressor".into()));
    }
    let r = restricted_ols_fit(data, design, beta_0)?;
    let parts = RobustParts::new(data, design, &r)?;
    let f = parts.f(None);
    let d = parts.d(&parts.gammas(None), &f);
    let lm = parts.lm(&f, &d)?;
    let rk = parts.rk(&d);
    let eval = |lm: f64, f: &DVector<f64>| -> Result<f64> {
        match statistic {
            RobustStatistic::Lm => Ok(lm),
            RobustStatistic::Cqlr => cqlr_statistic(parts.ar_squared(f), lm, rk.expect("d_x = 1")),
        }
    };
    let stat = eval(lm, &f)?;
    let (dist, failed) = inference::map_signs(signs, |g| {
        let fs = parts.f(Some(g));
        let ds = parts.d(&parts.gammas(Some(g)), &fs);
        eval(parts.lm(&fs, &ds)?, &fs)
    });
    BootstrapResult::from_distribution(
        match statistic {
            RobustStatistic::Lm => TestKind::Lm,
            RobustStatistic::Cqlr => TestKind::Cqlr,
        },
        None,
        false,
        stat,
        dist,
        alpha,
        signs.descriptor(),
        failed,
    )
}
