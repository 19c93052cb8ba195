//! Wald statistics and the restricted-efficient wild cluster bootstrap.
//!
//! Bootstrap samples are generated from the null-restricted k-class fit
//! and an efficient first stage that adds the unrestricted residual as a
//! control. For each sign vector `g`,
//!
//! ```text
//! X*(g) = Xhat + g_j v~        y*(g) = X*(g) beta_r + W gamma_r + g_j e_r
//! ```
//!
//! and the k-class estimator (kappa included) is recomputed on `(y*, X*)`.
//! `[y* : X*]` is linear in `h = (1, g_1, ..., g_q)`, so every moment the
//! k-class estimator and the CCE need is a quadratic or linear form in `h`
//! over matrices computed once per null. [`WaldBootstrap`] evaluates the
//! bootstrap statistics from those, and [`bootstrap_statistic_direct`]
//! rebuilds each sample explicitly for cross-checking.

use nalgebra::{DMatrix, DVector};

use crate::cce::{self, CceCorrection};
use crate::data::{concat_columns, ClusteredDataset, Hypothesis, PartialledDesign};
use crate::error::{Error, Result};
use crate::inference::{self, BootstrapResult, SignSet, TestKind};
use crate::kclass::{
    self, restricted_kclass_fit, KClassFit, KappaRule, Method, RestrictedKClass, YMoments,
    DEFAULT_FULLER_C,
};
use crate::linalg::{self, ColumnSpace};

/// Efficient first stage: OLS of X on the cluster-interacted instruments,
/// W and the unrestricted residual. The residual term is excluded from the fit.
#[derive(Debug, Clone)]
pub struct EfficientFirstStage {
    /// `(q d_z) × d_x`, cluster blocks stacked in canonical order.
    pub pi_zbar: DMatrix<f64>,
    pub pi_w: DMatrix<f64>,
    pub pi_eps: DMatrix<f64>,
    /// `Zbar Pi_Zbar + W Pi_w`.
    pub fitted: DMatrix<f64>,
    /// `X - fitted`.
    pub v_tilde: DMatrix<f64>,
}

/// Partialled instruments interacted with every cluster dummy.
pub fn cluster_interacted(design: &PartialledDesign) -> DMatrix<f64> {
    let (n, dz) = (design.n, design.dz());
    let mut zbar = DMatrix::zeros(n, design.q() * dz);
    for (j, r) in design.ranges.iter().enumerate() {
        zbar.view_mut((r.start, j * dz), (r.len(), dz))
            .copy_from(&design.z_tilde.rows(r.start, r.len()));
    }
    zbar
}

/// `efficient_first_stage`.
pub fn efficient_first_stage(
    data: &ClusteredDataset,
    design: &PartialledDesign,
    resid_unrestricted: &DVector<f64>,
) -> Result<EfficientFirstStage> {
    let zbar = cluster_interacted(design);
    let k = zbar.ncols() + data.dw() + 1;
    if data.n() < k {
        return Err(Error::RankDeficient {
            what: format!("efficient first stage ({} regressors, {} rows)", k, data.n()),
        });
    }
    let e = DMatrix::from_column_slice(data.n(), 1, resid_unrestricted.as_slice());
    let regs = concat_columns(&concat_columns(&zbar, data.w()), &e);
    let space = ColumnSpace::new(&regs, "efficient first stage").map_err(|_| Error::RankDeficient {
        what: "efficient first-stage regressors [Zbar : W : e]".into(),
    })?;
    let coef = space.coefficients(data.x());
    let (kz, dw) = (zbar.ncols(), data.dw());
    let pi_zbar = coef.rows(0, kz).into_owned();
    let pi_w = coef.rows(kz, dw).into_owned();
    let pi_eps = coef.rows(kz + dw, 1).into_owned();
    let fitted = &zbar * &pi_zbar + data.w() * &pi_w;
    let v_tilde = data.x() - &fitted;
    Ok(EfficientFirstStage {
        pi_zbar,
        pi_w,
        pi_eps,
        fitted,
        v_tilde,
    })
}

/// `bootstrap_sample`: `(y*, X*)` for one sign vector.
pub fn bootstrap_sample(
    data: &ClusteredDataset,
    first_stage: &EfficientFirstStage,
    restricted: &RestrictedKClass,
    g: &[i8],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_signs(data.q(), g.len())?;
    let mut x = first_stage.fitted.clone();
    let mut u = restricted.resid_restricted.clone();
    for (j, r) in data.ranges().iter().enumerate() {
        let s = g[j] as f64;
        for i in r.clone() {
            for c in 0..data.dx() {
                x[(i, c)] += s * first_stage.v_tilde[(i, c)];
            }
            u[i] *= s;
        }
    }
    let y = &x * &restricted.beta_hat_r + data.w() * &restricted.gamma_hat_r + u;
    Ok((y, x))
}

fn check_signs(q: usize, len: usize) -> Result<()> {
    if q != len {
        return Err(Error::DimensionMismatch {
            what: "sign vector length",
            expected: q,
            found: len,
        });
    }
    Ok(())
}

/// `wald_statistic`: `sqrt(n (lambda'b - lambda_0)' A (lambda'b - lambda_0))`.
pub fn wald_statistic(
    beta: &DVector<f64>,
    n: usize,
    hypothesis: &Hypothesis,
    a_r: &DMatrix<f64>,
) -> Result<f64> {
    let (lam, l0) = hypothesis.restriction();
    let d = lam.tr_mul(beta) - l0;
    wald_from_gap(&d, n, a_r)
}

fn wald_from_gap(d: &DVector<f64>, n: usize, a_r: &DMatrix<f64>) -> Result<f64> {
    if a_r.nrows() != d.len() || a_r.ncols() != d.len() {
        return Err(Error::DimensionMismatch {
            what: "weight matrix",
            expected: d.len(),
            found: a_r.nrows(),
        });
    }
    Ok((n as f64).sqrt() * linalg::weighted_norm(d, a_r))
}

/// Options of the WREC Wald bootstrap.
#[derive(Debug, Clone)]
pub struct WaldOptions {
    pub method: Method,
    pub fuller_c: f64,
    /// Use the clustered weight `(lambda' V lambda)^{-1}`, recomputed per bootstrap sample.
    pub studentize: bool,
    /// Weight of the non-studentized statistic; identity when absent.
    pub a_r: Option<DMatrix<f64>>,
    pub correction: CceCorrection,
}

impl WaldOptions {
    pub fn new(method: Method, studentize: bool) -> Self {
        Self {
            method,
            fuller_c: DEFAULT_FULLER_C,
            studentize,
            a_r: None,
            correction: CceCorrection::None,
        }
    }
}

/// A dataset prepared for repeated WREC Wald tests (one per null value).
#[derive(Debug, Clone)]
pub struct WaldBootstrap<'a> {
    data: &'a ClusteredDataset,
    design: PartialledDesign,
    opts: WaldOptions,
    rule: KappaRule,
    fit: KClassFit,
    first_stage: EfficientFirstStage,
}

impl<'a> WaldBootstrap<'a> {
    pub fn new(data: &'a ClusteredDataset, opts: WaldOptions) -> Result<Self> {
        let design = PartialledDesign::new(data)?;
        Self::with_design(data, design, opts)
    }

    pub fn with_design(
        data: &'a ClusteredDataset,
        design: PartialledDesign,
        opts: WaldOptions,
    ) -> Result<Self> {
        let rule = KappaRule::new(opts.method, opts.fuller_c, data.n(), data.dz(), design.dw())?;
        let moments = YMoments::from_data(data.y(), data.x(), &design);
        let kappa = rule.kappa(&moments)?;
        let fit = kclass::kclass_fit(data, &design, opts.method, kappa)?;
        let first_stage = efficient_first_stage(data, &design, &fit.resid_unrestricted)?;
        Ok(Self {
            data,
            design,
            opts,
            rule,
            fit,
            first_stage,
        })
    }

    pub fn fit(&self) -> &KClassFit {
        &self.fit
    }
    pub fn design(&self) -> &PartialledDesign {
        &self.design
    }
    pub fn first_stage(&self) -> &EfficientFirstStage {
        &self.first_stage
    }

    fn weight(&self, dr: usize) -> Result<DMatrix<f64>> {
        let a = self.opts.a_r.clone().unwrap_or_else(|| DMatrix::identity(dr, dr));
        if a.nrows() != dr || a.ncols() != dr {
            return Err(Error::DimensionMismatch {
                what: "weight matrix A_r",
                expected: dr,
                found: a.nrows(),
            });
        }
        if !linalg::is_positive_definite(&a) || (&a - a.transpose()).amax() > 1e-12 * a.amax() {
            return Err(Error::InvalidArgument("A_r must be symmetric positive definite".into()));
        }
        Ok(a)
    }

    /// Sample statistic for `hypothesis`.
    pub fn statistic(&self, hypothesis: &Hypothesis) -> Result<f64> {
        self.statistic_as(hypothesis, self.opts.studentize)
    }

    fn statistic_as(&self, hypothesis: &Hypothesis, studentize: bool) -> Result<f64> {
        let (lam, _) = hypothesis.restriction();
        let a = if studentize {
            cce::cce_matrix_with(
                &self.design,
                &self.design.q_zx,
                &self.fit.resid_unrestricted,
                &lam,
                self.opts.correction,
            )?
            .a_r_cr
        } else {
            self.weight(lam.ncols())?
        };
        wald_statistic(&self.fit.beta_hat, self.data.n(), hypothesis, &a)
    }

    /// Null-restricted fit for `hypothesis`.
    pub fn restricted(&self, hypothesis: &Hypothesis) -> Result<RestrictedKClass> {
        let r = restricted_kclass_fit(&self.fit, self.data, &self.design, hypothesis)?;
        Ok(r.restricted.expect("restricted fit present"))
    }

    /// Sufficient statistics for the bootstrap distribution under `hypothesis`.
    pub fn engine(&self, hypothesis: &Hypothesis) -> Result<SignEngine> {
        self.engine_as(hypothesis, self.opts.studentize)
    }

    fn engine_as(&self, hypothesis: &Hypothesis, studentize: bool) -> Result<SignEngine> {
        let restricted = self.restricted(hypothesis)?;
        let (lam, l0) = hypothesis.restriction();
        let a_r = if studentize {
            None
        } else {
            Some(self.weight(lam.ncols())?)
        };
        Ok(SignEngine::new(
            self.data,
            &self.design,
            &self.first_stage,
            &restricted,
            self.rule,
            lam,
            l0,
            a_r,
            self.opts.correction,
        ))
    }

    /// Runs the test of `hypothesis` over `signs`.
    pub fn test(&self, hypothesis: &Hypothesis, signs: &SignSet, alpha: f64) -> Result<BootstrapResult> {
        self.test_as(hypothesis, signs, alpha, self.opts.studentize)
    }

    /// [`WaldBootstrap::test`] with the studentization choice overridden.
    pub fn test_as(
        &self,
        hypothesis: &Hypothesis,
        signs: &SignSet,
        alpha: f64,
        studentize: bool,
    ) -> Result<BootstrapResult> {
        inference::check_alpha(alpha)?;
        check_signs(self.data.q(), signs.q())?;
        let stat = self.statistic_as(hypothesis, studentize)?;
        let engine = self.engine_as(hypothesis, studentize)?;
        let (dist, failed) = inference::map_signs(signs, |g| engine.statistic(g));
        BootstrapResult::from_distribution(
            TestKind::Wald,
            Some(self.opts.method),
            studentize,
            stat,
            dist,
            alpha,
            signs.descriptor(),
            failed,
        )
    }
}

/// Per-null sufficient statistics of the bootstrap k-class estimator.
///
/// Blocks of `p = 1 + d_x` columns: block 0 is `[Xhat beta_r : Xhat]`,
/// block `j` is `[v~ beta_r + e_r : v~]` restricted to cluster `j`.
#[derive(Debug, Clone)]
pub struct SignEngine {
    p: usize,
    q: usize,
    n: usize,
    /// `U' M_[Z:W] U`.
    gram_m: DMatrix<f64>,
    /// `Z~' U`.
    zu: DMatrix<f64>,
    /// `Z~_j' (M_W U)_j`.
    k_j: Vec<DMatrix<f64>>,
    zz_inv: DMatrix<f64>,
    q_zz_inv: DMatrix<f64>,
    rule: KappaRule,
    lambda: DMatrix<f64>,
    lambda_0: DVector<f64>,
    a_r: Option<DMatrix<f64>>,
    correction: f64,
}

impl SignEngine {
    #[allow(clippy::too_many_arguments)]
    fn new(
        data: &ClusteredDataset,
        design: &PartialledDesign,
        fs: &EfficientFirstStage,
        restricted: &RestrictedKClass,
        rule: KappaRule,
        lambda: DMatrix<f64>,
        lambda_0: DVector<f64>,
        a_r: Option<DMatrix<f64>>,
        correction: CceCorrection,
    ) -> Self {
        let (n, q, dx) = (data.n(), data.q(), data.dx());
        let p = 1 + dx;
        let mut u = DMatrix::zeros(n, (q + 1) * p);
        let beta_r = &restricted.beta_hat_r;
        let xb = &fs.fitted * beta_r;
        let vb = &fs.v_tilde * beta_r;
        u.column_mut(0).copy_from(&xb);
        u.columns_mut(1, dx).copy_from(&fs.fitted);
        for (j, r) in data.ranges().iter().enumerate() {
            let c0 = (j + 1) * p;
            for i in r.clone() {
                u[(i, c0)] = vb[i] + restricted.resid_restricted[i];
                for c in 0..dx {
                    u[(i, c0 + 1 + c)] = fs.v_tilde[(i, c)];
                }
            }
        }
        let um = design.residualize_zw(&u);
        let gram_m = linalg::symmetrize(&um.tr_mul(&um));
        let uw = design.residualize_w(&u);
        let zu = design.z_tilde.tr_mul(&uw);
        let k_j = data
            .ranges()
            .iter()
            .map(|r| {
                design
                    .z_tilde
                    .rows(r.start, r.len())
                    .tr_mul(&uw.rows(r.start, r.len()))
            })
            .collect();
        Self {
            p,
            q,
            n,
            gram_m,
            zu,
            k_j,
            zz_inv: &design.q_zz_inv / n as f64,
            q_zz_inv: design.q_zz_inv.clone(),
            rule,
            lambda,
            lambda_0,
            a_r,
            correction: correction.factor(q),
        }
    }

    fn combiner(&self, g: &[i8]) -> DMatrix<f64> {
        let p = self.p;
        let mut c = DMatrix::zeros((self.q + 1) * p, p);
        for a in 0..=self.q {
            let h = if a == 0 { 1.0 } else { g[a - 1] as f64 };
            for k in 0..p {
                c[(a * p + k, k)] = h;
            }
        }
        c
    }

    /// Bootstrap k-class estimate and `Z~'[y* : X*]` for sign vector `g`.
    pub fn beta(&self, g: &[i8]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_signs(self.q, g.len())?;
        let c = self.combiner(g);
        let ym = linalg::symmetrize(&c.tr_mul(&(&self.gram_m * &c)));
        let zy = &self.zu * &c;
        let yp = linalg::symmetrize(&zy.tr_mul(&(&self.zz_inv * &zy)));
        let moments = YMoments { p: yp, m: ym };
        let kappa = self.rule.kappa(&moments)?;
        let (beta, _) = moments.beta(kappa - 1.0)?;
        Ok((beta, zy))
    }

    /// Bootstrap statistic `T*(g)`.
    pub fn statistic(&self, g: &[i8]) -> Result<f64> {
        let (beta, zy) = self.beta(g)?;
        let d = self.lambda.tr_mul(&beta) - &self.lambda_0;
        match &self.a_r {
            Some(a) => wald_from_gap(&d, self.n, a),
            None => {
                let p = self.p;
                let mut hb = DVector::zeros((self.q + 1) * p);
                for a in 0..=self.q {
                    let h = if a == 0 { 1.0 } else { g[a - 1] as f64 };
                    hb[a * p] = h;
                    for k in 1..p {
                        hb[a * p + k] = -h * beta[k - 1];
                    }
                }
                let scores: Vec<DVector<f64>> = self.k_j.iter().map(|k| k * &hb).collect();
                let omega = cce::omega_from_scores(&scores, self.n) * self.correction;
                let q_zx = zy.columns(1, p - 1) / self.n as f64;
                let bundle = cce::assemble(&self.q_zz_inv, &q_zx, omega, &self.lambda)?;
                wald_from_gap(&d, self.n, &bundle.a_r_cr)
            }
        }
    }
}

/// Bootstrap statistic for one sign vector computed from an explicitly
/// generated sample `(y*, X*)`.
pub fn bootstrap_statistic_direct(
    boot: &WaldBootstrap<'_>,
    hypothesis: &Hypothesis,
    g: &[i8],
) -> Result<f64> {
    let data = boot.data;
    let restricted = boot.restricted(hypothesis)?;
    let (y, x) = bootstrap_sample(data, &boot.first_stage, &restricted, g)?;
    let star = data.with_outcomes(y, x)?;
    let kappa = kclass::kappa_value(boot.opts.method, &star, &boot.design, boot.opts.fuller_c)?;
    let fit = kclass::kclass_fit(&star, &boot.design, boot.opts.method, kappa)?;
    let (lam, _) = hypothesis.restriction();
    let a = if boot.opts.studentize {
        cce::bootstrap_cce_matrix(&boot.design, star.x(), &fit.resid_unrestricted, &lam)?.a_r_cr
    } else {
        boot.weight(lam.ncols())?
    };
    wald_statistic(&fit.beta_hat, data.n(), hypothesis, &a)
}

/// `wrec_wald_test`.
pub fn wrec_wald_test(
    data: &ClusteredDataset,
    hypothesis: &Hypothesis,
    opts: WaldOptions,
    signs: &SignSet,
    alpha: f64,
) -> Result<BootstrapResult> {
    WaldBootstrap::new(data, opts)?.test(hypothesis, signs, alpha)
}

/// Score-bootstrap Wald test for a scalar IV model (`d_x = d_z = 1`):
/// `T*(g) = |Q_ZX^{-1} n^{-1/2} sum_j g_j S_j|` with restricted-TSLS scores.
pub fn score_bootstrap_wald_test(
    data: &ClusteredDataset,
    beta_0: f64,
    signs: &SignSet,
    alpha: f64,
) -> Result<BootstrapResult> {
    inference::check_alpha(alpha)?;
    if data.dx() != 1 || data.dz() != 1 {
        return Err(Error::InvalidArgument(
            "score bootstrap requires one regressor and one instrument".into(),
        ));
    }
    check_signs(data.q(), signs.q())?;
    let design = PartialledDesign::new(data)?;
    let stat = score_wald_statistic(data, &design, beta_0)?;
    let scores = score_terms(data, &design, beta_0)?;
    let (dist, failed) = inference::map_signs(signs, |g| {
        Ok(g.iter().zip(&scores).map(|(&s, v)| s as f64 * v).sum::<f64>().abs())
    });
    BootstrapResult::from_distribution(
        TestKind::Score,
        Some(Method::Tsls),
        false,
        stat,
        dist,
        alpha,
        signs.descriptor(),
        failed,
    )
}

fn score_q_zx(design: &PartialledDesign) -> Result<f64> {
    let q = design.q_zx[(0, 0)];
    if q == 0.0 {
        return Err(Error::UnidentifiedJacobian);
    }
    Ok(q)
}

/// `sqrt(n) |beta_tsls - beta_0|`.
pub fn score_wald_statistic(data: &ClusteredDataset, design: &PartialledDesign, beta_0: f64) -> Result<f64> {
    score_q_zx(design)?;
    let fit = kclass::kclass_fit(data, design, Method::Tsls, 1.0)?;
    Ok((data.n() as f64).sqrt() * (fit.beta_hat[0] - beta_0).abs())
}

/// `S_j / (sqrt(n) Q_ZX)` per cluster, from restricted residuals.
fn score_terms(data: &ClusteredDataset, design: &PartialledDesign, beta_0: f64) -> Result<Vec<f64>> {
    let q = score_q_zx(design)?;
    let r = kclass::restricted_ols_fit(data, design, &DVector::from_element(1, beta_0))?;
    let denom = (data.n() as f64).sqrt() * q;
    Ok(design.cluster_scores(&r.resid).iter().map(|s| s[0] / denom).collect())
}
