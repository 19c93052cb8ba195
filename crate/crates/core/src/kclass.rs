//! k-class IV estimators (TSLS, LIML, FULL, BA), their null-restricted
//! versions and the null-restricted OLS fit used by the AR family.
//!
//! All estimators are computed from the partialled moments of `[y : X]`:
//! with `P = P_{Z~}` and `M = M_{[Z:W]}`,
//! `beta = (X'PX - mu X'MX)^{-1} (X'Py - mu X'My)` where `mu = kappa - 1`.
//! This is algebraically the joint formula on `[X : W]` after
//! Frisch–Waugh–Lovell, because `M_W = P_{Z~} + M_{[Z:W]}`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{concat_columns, ClusteredDataset, Hypothesis, PartialledDesign};
use crate::error::{Error, Result};
use crate::linalg::{self, ColumnSpace};

/// Default Fuller constant.
pub const DEFAULT_FULLER_C: f64 = 1.0;

/// LIML values below `1 - KAPPA_CLAMP_TOL` are treated as numerical noise and clamped to 1.
pub const KAPPA_CLAMP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tsls,
    Liml,
    Full,
    Ba,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Tsls, Method::Liml, Method::Full, Method::Ba];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tsls => "tsls",
            Method::Liml => "liml",
            Method::Full => "full",
            Method::Ba => "ba",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsls" | "2sls" => Ok(Method::Tsls),
            "liml" => Ok(Method::Liml),
            "full" | "fuller" => Ok(Method::Full),
            "ba" => Ok(Method::Ba),
            other => Err(Error::InvalidArgument(format!("unknown estimator \"{other}\""))),
        }
    }
}

/// How kappa is obtained for a given sample size and design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct KappaRule {
    pub method: Method,
    pub fuller_c: f64,
    pub n: usize,
    pub dz: usize,
    pub dw: usize,
}

impl KappaRule {
    pub fn new(method: Method, fuller_c: f64, n: usize, dz: usize, dw: usize) -> Result<Self> {
        if method == Method::Full && n <= dz + dw {
            return Err(Error::InvalidArgument(format!(
                "FULL needs n > d_z + d_w ({n} ≤ {dz} + {dw})"
            )));
        }
        if method == Method::Ba && n + 2 <= dz {
            return Err(Error::InvalidArgument("BA needs n > d_z - 2".into()));
        }
        Ok(Self {
            method,
            fuller_c,
            n,
            dz,
            dw,
        })
    }

    /// Kappa from the `[y:X]` moments; LIML and FULL solve the eigenproblem.
    pub fn kappa(&self, m: &YMoments) -> Result<f64> {
        Ok(match self.method {
            Method::Tsls => 1.0,
            Method::Ba => self.n as f64 / (self.n as f64 - self.dz as f64 + 2.0),
            Method::Liml => m.liml_kappa()?,
            Method::Full => {
                m.liml_kappa()? - self.fuller_c / (self.n as f64 - self.dz as f64 - self.dw as f64)
            }
        })
    }
}

/// Moments of `Ybar = [y : X]` under `P_{Z~}` and `M_{[Z:W]}`.
#[derive(Debug, Clone)]
pub(crate) struct YMoments {
    pub p: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

impl YMoments {
    pub fn from_data(
        y: &DVector<f64>,
        x: &DMatrix<f64>,
        design: &PartialledDesign,
    ) -> YMoments {
        let ybar = concat_columns(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()), x);
        let zy = design.z_tilde.tr_mul(&ybar);
        let p = zy.tr_mul(&(&design.q_zz_inv * &zy)) / design.n as f64;
        let resid = design.residualize_zw(&ybar);
        let m = resid.tr_mul(&resid);
        YMoments {
            p: linalg::symmetrize(&p),
            m: linalg::symmetrize(&m),
        }
    }

    /// `1 + min eig(Ybar'P Ybar, Ybar'M Ybar)`, which equals the smallest
    /// eigenvalue of `(Ybar'M_W Ybar, Ybar'M Ybar)`.
    pub fn liml_kappa(&self) -> Result<f64> {
        let l = linalg::min_generalized_eigenvalue(&self.p, &self.m, "[y:X]'M_[Z:W][y:X]")?;
        let kappa = 1.0 + l;
        if kappa < 1.0 - KAPPA_CLAMP_TOL {
            log::warn!("LIML kappa {kappa} below one; clamping");
            return Ok(1.0);
        }
        Ok(kappa)
    }

    /// System matrix `X'PX - mu X'MX` and right-hand side `X'Py - mu X'My`.
    pub fn system(&self, mu: f64) -> (DMatrix<f64>, DVector<f64>) {
        let dx = self.p.nrows() - 1;
        let h = self.p.view((1, 1), (dx, dx)) - self.m.view((1, 1), (dx, dx)) * mu;
        let r = self.p.view((1, 0), (dx, 1)) - self.m.view((1, 0), (dx, 1)) * mu;
        (h.into_owned(), DVector::from_column_slice(r.as_slice()))
    }

    pub fn beta(&self, mu: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (h, r) = self.system(mu);
        let hinv = linalg::square_inverse(&h, "k-class system matrix (model may be unidentified)")?;
        Ok((&hinv * r, hinv))
    }
}

/// Null-restricted k-class estimates.
#[derive(Debug, Clone)]
pub struct RestrictedKClass {
    pub beta_hat_r: DVector<f64>,
    pub gamma_hat_r: DVector<f64>,
    pub resid_restricted: DVector<f64>,
}

/// A k-class fit with its residuals.
#[derive(Debug, Clone)]
pub struct KClassFit {
    pub method: Method,
    pub kappa: f64,
    pub mu: f64,
    pub beta_hat: DVector<f64>,
    pub gamma_hat: DVector<f64>,
    pub resid_unrestricted: DVector<f64>,
    pub restricted: Option<RestrictedKClass>,
    /// `(X'PX - mu X'MX)^{-1}`.
    pub system_inverse: DMatrix<f64>,
}

impl KClassFit {
    /// Computes kappa for `method` and fits.
    pub fn estimate(
        data: &ClusteredDataset,
        design: &PartialledDesign,
        method: Method,
        fuller_c: f64,
    ) -> Result<Self> {
        let kappa = kappa_value(method, data, design, fuller_c)?;
        kclass_fit(data, design, method, kappa)
    }

    pub fn beta_r(&self) -> Option<&DVector<f64>> {
        self.restricted.as_ref().map(|r| &r.beta_hat_r)
    }
}

/// `kappa_value`.
pub fn kappa_value(
    method: Method,
    data: &ClusteredDataset,
    design: &PartialledDesign,
    fuller_c: f64,
) -> Result<f64> {
    let rule = KappaRule::new(method, fuller_c, data.n(), data.dz(), design.dw())?;
    match method {
        Method::Tsls | Method::Ba => rule.kappa(&YMoments {
            p: DMatrix::zeros(0, 0),
            m: DMatrix::zeros(0, 0),
        }),
        _ => rule.kappa(&YMoments::from_data(data.y(), data.x(), design)),
    }
}

/// LIML kappa from the literal pencil `([y:X]'M_W[y:X], [y:X]'M_[Z:W][y:X])`.
pub fn liml_kappa_direct(data: &ClusteredDataset, design: &PartialledDesign) -> Result<f64> {
    let ybar = concat_columns(
        &DMatrix::from_column_slice(data.n(), 1, data.y().as_slice()),
        data.x(),
    );
    let mw = design.residualize_w(&ybar);
    let mzw = design.residualize_zw(&ybar);
    linalg::min_generalized_eigenvalue(&mw.tr_mul(&mw), &mzw.tr_mul(&mzw), "[y:X]'M_[Z:W][y:X]")
}

/// `kclass_fit` for a given kappa.
pub fn kclass_fit(
    data: &ClusteredDataset,
    design: &PartialledDesign,
    method: Method,
    kappa: f64,
) -> Result<KClassFit> {
    let moments = YMoments::from_data(data.y(), data.x(), design);
    let mu = kappa - 1.0;
    let (beta_hat, system_inverse) = moments.beta(mu)?;
    let (gamma_hat, resid) = exogenous_part(data, design, &beta_hat);
    Ok(KClassFit {
        method,
        kappa,
        mu,
        beta_hat,
        gamma_hat,
        resid_unrestricted: resid,
        restricted: None,
        system_inverse,
    })
}

/// `gamma = (W'W)^{-1} W'(y - X beta)` and the residual `M_W (y - X beta)`.
fn exogenous_part(
    data: &ClusteredDataset,
    design: &PartialledDesign,
    beta: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let net = data.y() - data.x() * beta;
    let netm = DMatrix::from_column_slice(net.len(), 1, net.as_slice());
    let gamma = design.w_coefficients(&netm);
    let resid = design.residualize_w(&netm);
    (
        DVector::from_column_slice(gamma.as_slice()),
        DVector::from_column_slice(resid.as_slice()),
    )
}

/// `restricted_kclass_fit`: imposes `lambda' beta = lambda_0` on an existing fit.
pub fn restricted_kclass_fit(
    fit: &KClassFit,
    data: &ClusteredDataset,
    design: &PartialledDesign,
    hypothesis: &Hypothesis,
) -> Result<KClassFit> {
    if hypothesis.dx() != data.dx() {
        return Err(Error::DimensionMismatch {
            what: "hypothesis d_x",
            expected: data.dx(),
            found: hypothesis.dx(),
        });
    }
    let beta_r = match hypothesis {
        // A full restriction pins beta exactly.
        Hypothesis::FullVector { beta_0 } => beta_0.clone(),
        Hypothesis::Linear {
            lambda_beta,
            lambda_0,
        } => {
            let hl = &fit.system_inverse * lambda_beta;
            let inner = lambda_beta.tr_mul(&hl);
            let inner_inv = linalg::square_inverse(&inner, "restriction projection")?;
            let gap = lambda_beta.tr_mul(&fit.beta_hat) - lambda_0;
            &fit.beta_hat - hl * (inner_inv * gap)
        }
    };
    let (gamma_r, resid_r) = exogenous_part(data, design, &beta_r);
    let mut out = fit.clone();
    out.restricted = Some(RestrictedKClass {
        beta_hat_r: beta_r,
        gamma_hat_r: gamma_r,
        resid_restricted: resid_r,
    });
    Ok(out)
}

/// Null-restricted OLS fit of W given a full null vector.
#[derive(Debug, Clone)]
pub struct RestrictedOlsFit {
    pub beta_0: DVector<f64>,
    pub gamma_bar_r: DVector<f64>,
    pub resid: DVector<f64>,
}

/// `restricted_ols_fit`.
pub fn restricted_ols_fit(
    data: &ClusteredDataset,
    design: &PartialledDesign,
    beta_0: &DVector<f64>,
) -> Result<RestrictedOlsFit> {
    if beta_0.len() != data.dx() {
        return Err(Error::DimensionMismatch {
            what: "beta_0",
            expected: data.dx(),
            found: beta_0.len(),
        });
    }
    let (gamma, resid) = exogenous_part(data, design, beta_0);
    Ok(RestrictedOlsFit {
        beta_0: beta_0.clone(),
        gamma_bar_r: gamma,
        resid,
    })
}

/// Joint k-class formula on `[X:W]`, returning `(beta, gamma)` stacked.
/// Used to cross-check the partialled route.
pub fn kclass_joint(data: &ClusteredDataset, kappa: f64) -> Result<DVector<f64>> {
    let xw = concat_columns(data.x(), data.w());
    let zw = concat_columns(data.z(), data.w());
    let zspace = ColumnSpace::new(&zw, "[Z:W]")?;
    let mx = zspace.residualize(&xw);
    let ymat = DMatrix::from_column_slice(data.n(), 1, data.y().as_slice());
    let my = zspace.residualize(&ymat);
    let lhs = xw.tr_mul(&xw) - mx.tr_mul(&mx) * kappa;
    let rhs = xw.tr_mul(&ymat) - mx.tr_mul(&my) * kappa;
    let inv = linalg::square_inverse(&lhs, "joint k-class system")?;
    let coef = inv * rhs;
    Ok(DVector::from_column_slice(coef.as_slice()))
}
