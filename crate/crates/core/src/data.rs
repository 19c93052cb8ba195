//! Clustered IV datasets, partialling of the instruments on the exogenous
//! regressors, and the cluster-level moment matrices every statistic uses.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, ColumnSpace};

/// Outcome, endogenous regressors, instruments and exogenous regressors,
/// stored with rows grouped by cluster.
#[derive(Debug, Clone)]
pub struct ClusteredDataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    w: DMatrix<f64>,
    labels: Vec<i64>,
    ranges: Vec<Range<usize>>,
}

impl ClusteredDataset {
    /// Validates the inputs and sorts rows by cluster label (stable within a cluster).
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        w: DMatrix<f64>,
        cluster_id: &[i64],
    ) -> Result<Self> {
        let n = y.len();
        for (what, rows) in [("X", x.nrows()), ("Z", z.nrows()), ("W", w.nrows())] {
            if rows != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found: rows,
                });
            }
        }
        if cluster_id.len() != n {
            return Err(Error::DimensionMismatch {
                what: "cluster_id",
                expected: n,
                found: cluster_id.len(),
            });
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidArgument("at least one endogenous regressor required".into()));
        }
        if z.ncols() < x.ncols() {
            return Err(Error::InvalidArgument(format!(
                "need at least as many instruments ({}) as endogenous regressors ({})",
                z.ncols(),
                x.ncols()
            )));
        }
        if w.ncols() == 0 {
            return Err(Error::InvalidArgument("at least one exogenous regressor required".into()));
        }
        check_finite("y", &DMatrix::from_column_slice(n, 1, y.as_slice()))?;
        check_finite("X", &x)?;
        check_finite("Z", &z)?;
        check_finite("W", &w)?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| cluster_id[i]);
        let mut labels = Vec::new();
        let mut ranges = Vec::new();
        for (pos, &i) in order.iter().enumerate() {
            if labels.last() != Some(&cluster_id[i]) {
                if let Some(r) = ranges.last_mut() {
                    let r: &mut Range<usize> = r;
                    r.end = pos;
                }
                labels.push(cluster_id[i]);
                ranges.push(pos..n);
            }
        }
        if labels.len() < 2 {
            return Err(Error::TooFewClusters {
                needed: 2,
                found: labels.len(),
            });
        }
        let permute = |m: &DMatrix<f64>| DMatrix::from_fn(n, m.ncols(), |r, c| m[(order[r], c)]);
        Ok(Self {
            y: DVector::from_fn(n, |r, _| y[order[r]]),
            x: permute(&x),
            z: permute(&z),
            w: permute(&w),
            labels,
            ranges,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn q(&self) -> usize {
        self.ranges.len()
    }
    pub fn dx(&self) -> usize {
        self.x.ncols()
    }
    pub fn dz(&self) -> usize {
        self.z.ncols()
    }
    pub fn dw(&self) -> usize {
        self.w.ncols()
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    /// Original cluster labels in canonical (ascending) order.
    pub fn labels(&self) -> &[i64] {
        &self.labels
    }
    /// Row range of each cluster.
    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }
    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }
    /// Canonical cluster index of every row.
    pub fn cluster_index(&self) -> Vec<usize> {
        let mut idx = vec![0; self.n()];
        for (j, r) in self.ranges.iter().enumerate() {
            idx[r.clone()].fill(j);
        }
        idx
    }

    /// Same design with a different outcome and endogenous block (bootstrap samples).
    pub fn with_outcomes(&self, y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.len() != self.n() || x.nrows() != self.n() || x.ncols() != self.dx() {
            return Err(Error::DimensionMismatch {
                what: "replacement outcomes",
                expected: self.n(),
                found: y.len(),
            });
        }
        let mut out = self.clone();
        out.y = y;
        out.x = x;
        Ok(out)
    }

    /// Same design with the instrument block replaced.
    pub fn with_instruments(&self, z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() != self.n() || z.ncols() < self.dx() {
            return Err(Error::DimensionMismatch {
                what: "replacement instruments",
                expected: self.n(),
                found: z.nrows(),
            });
        }
        check_finite("Z", &z)?;
        let mut out = self.clone();
        out.z = z;
        Ok(out)
    }
}

fn check_finite(what: &'static str, m: &DMatrix<f64>) -> Result<()> {
    for r in 0..m.nrows() {
        if m.row(r).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what, row: r });
        }
    }
    Ok(())
}

/// `build_dataset`: free-function form of [`ClusteredDataset::new`].
pub fn build_dataset(
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    w: DMatrix<f64>,
    cluster_id: &[i64],
) -> Result<ClusteredDataset> {
    ClusteredDataset::new(y, x, z, w, cluster_id)
}

/// Instruments residualized on W over the full sample, with the
/// per-cluster (1/n_j) and pooled (1/n) moment matrices.
#[derive(Debug, Clone)]
pub struct PartialledDesign {
    pub z_tilde: DMatrix<f64>,
    pub q_zz_j: Vec<DMatrix<f64>>,
    pub q_zx_j: Vec<DMatrix<f64>>,
    pub q_zw_j: Vec<DMatrix<f64>>,
    pub q_zz: DMatrix<f64>,
    pub q_zx: DMatrix<f64>,
    pub q_ww: DMatrix<f64>,
    pub q_zz_inv: DMatrix<f64>,
    pub cluster_sizes: Vec<usize>,
    pub ranges: Vec<Range<usize>>,
    pub n: usize,
    pub(crate) w_space: ColumnSpace,
    pub(crate) zw_space: ColumnSpace,
}

impl PartialledDesign {
    pub fn new(data: &ClusteredDataset) -> Result<Self> {
        let n = data.n();
        let nf = n as f64;
        let w_space = ColumnSpace::new(data.w(), "W'W (collinear exogenous regressors)")?;
        let z_tilde = w_space.residualize(data.z());
        let zw = concat_columns(data.z(), data.w());
        let zw_space = ColumnSpace::new(&zw, "[Z:W]'[Z:W] (collinear instruments)")?;

        let mut q_zz_j = Vec::with_capacity(data.q());
        let mut q_zx_j = Vec::with_capacity(data.q());
        let mut q_zw_j = Vec::with_capacity(data.q());
        for r in data.ranges() {
            let nj = r.len() as f64;
            let zt = z_tilde.rows(r.start, r.len());
            q_zz_j.push(zt.transpose() * zt / nj);
            q_zx_j.push(zt.transpose() * data.x().rows(r.start, r.len()) / nj);
            q_zw_j.push(zt.transpose() * data.w().rows(r.start, r.len()) / nj);
        }
        let q_zz = z_tilde.transpose() * &z_tilde / nf;
        let q_zx = z_tilde.transpose() * data.x() / nf;
        let q_ww = data.w().transpose() * data.w() / nf;
        let q_zz_inv = linalg::spd_inverse(&q_zz, "instrument moment matrix")?;
        Ok(Self {
            z_tilde,
            q_zz_j,
            q_zx_j,
            q_zw_j,
            q_zz,
            q_zx,
            q_ww,
            q_zz_inv,
            cluster_sizes: data.cluster_sizes(),
            ranges: data.ranges().to_vec(),
            n,
            w_space,
            zw_space,
        })
    }

    pub fn q(&self) -> usize {
        self.ranges.len()
    }
    pub fn dz(&self) -> usize {
        self.z_tilde.ncols()
    }

    /// `M_W a`.
    pub fn residualize_w(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        self.w_space.residualize(a)
    }

    /// `M_[Z:W] a`.
    pub fn residualize_zw(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        self.zw_space.residualize(a)
    }

    /// Coefficients of `a` regressed on W.
    pub fn w_coefficients(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        self.w_space.coefficients(a)
    }

    /// Rank of W.
    pub fn dw(&self) -> usize {
        self.w_space.rank()
    }

    /// Per-cluster sums `sum_i Z~_ij e_ij` for an n-vector `e`.
    pub fn cluster_scores(&self, e: &DVector<f64>) -> Vec<DVector<f64>> {
        self.ranges
            .iter()
            .map(|r| self.z_tilde.rows(r.start, r.len()).tr_mul(&e.rows(r.start, r.len())))
            .collect()
    }
}

/// `partial_out_exogenous`.
pub fn partial_out_exogenous(data: &ClusteredDataset) -> Result<PartialledDesign> {
    PartialledDesign::new(data)
}

pub(crate) fn concat_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Per-cluster `Q_{Z~W,j}` matrices with their max-abs entries.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionDiagnostics {
    pub labels: Vec<i64>,
    pub cluster_sizes: Vec<usize>,
    #[serde(serialize_with = "crate::io::serialize_matrices")]
    pub q_zw_j: Vec<DMatrix<f64>>,
    pub max_abs: Vec<f64>,
}

/// `assumption_diagnostics`: the cluster-level cross moments of the
/// partialled instruments with W. These vanish when W carries all
/// cluster-dummy interactions.
pub fn assumption_diagnostics(
    data: &ClusteredDataset,
    design: &PartialledDesign,
) -> AssumptionDiagnostics {
    AssumptionDiagnostics {
        labels: data.labels().to_vec(),
        cluster_sizes: design.cluster_sizes.clone(),
        q_zw_j: design.q_zw_j.clone(),
        max_abs: design.q_zw_j.iter().map(|m| m.amax()).collect(),
    }
}

/// `cluster_first_stage`: per-cluster OLS of X on (Z, W), returning the
/// d_z×d_x instrument block for each cluster.
///
/// W columns that are constant zero or collinear inside a cluster (cluster
/// dummies, an intercept next to them) are absorbed through the cluster's
/// own column space, which leaves the Z block unchanged.
pub fn cluster_first_stage(data: &ClusteredDataset) -> Result<Vec<DMatrix<f64>>> {
    data.ranges()
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let wj = linalg::rows(data.w(), r.clone());
            let zj = linalg::rows(data.z(), r.clone());
            let xj = linalg::rows(data.x(), r.clone());
            let wspace = ColumnSpace::tolerant(&wj)?;
            let zt = wspace.residualize(&zj);
            let xt = wspace.residualize(&xj);
            if r.len() < data.dz() + wspace.rank() {
                return Err(Error::RankDeficient {
                    what: format!("first-stage design in cluster {j} (too few rows)"),
                });
            }
            let zspace = ColumnSpace::new(&zt, "cluster first stage").map_err(|_| {
                Error::RankDeficient {
                    what: format!("first-stage design in cluster {j}"),
                }
            })?;
            Ok(zspace.coefficients(&xt))
        })
        .collect()
}

/// Null hypothesis: a linear restriction on beta (Wald tests) or a full
/// vector of values (AR, LM and CQLR tests).
#[derive(Debug, Clone, PartialEq)]
pub enum Hypothesis {
    Linear {
        lambda_beta: DMatrix<f64>,
        lambda_0: DVector<f64>,
    },
    FullVector {
        beta_0: DVector<f64>,
    },
}

impl Hypothesis {
    pub fn linear(lambda_beta: DMatrix<f64>, lambda_0: DVector<f64>) -> Result<Self> {
        let dr = lambda_beta.ncols();
        if dr == 0 || dr > lambda_beta.nrows() {
            return Err(Error::InvalidArgument(format!(
                "restriction matrix must be d_x×d_r with 1 ≤ d_r ≤ d_x, got {}×{}",
                lambda_beta.nrows(),
                dr
            )));
        }
        if lambda_0.len() != dr {
            return Err(Error::DimensionMismatch {
                what: "restriction target",
                expected: dr,
                found: lambda_0.len(),
            });
        }
        if !linalg::has_full_column_rank(&lambda_beta) {
            return Err(Error::RankDeficient {
                what: "restriction matrix".into(),
            });
        }
        Ok(Hypothesis::Linear {
            lambda_beta,
            lambda_0,
        })
    }

    pub fn full_vector(beta_0: DVector<f64>) -> Self {
        Hypothesis::FullVector { beta_0 }
    }

    /// Scalar null `beta = b` for a single endogenous regressor.
    pub fn scalar(b: f64) -> Self {
        Hypothesis::FullVector {
            beta_0: DVector::from_element(1, b),
        }
    }

    /// The restriction as `(lambda_beta, lambda_0)`; a full vector maps to `(I, beta_0)`.
    pub fn restriction(&self) -> (DMatrix<f64>, DVector<f64>) {
        match self {
            Hypothesis::Linear {
                lambda_beta,
                lambda_0,
            } => (lambda_beta.clone(), lambda_0.clone()),
            Hypothesis::FullVector { beta_0 } => {
                (DMatrix::identity(beta_0.len(), beta_0.len()), beta_0.clone())
            }
        }
    }

    pub fn dr(&self) -> usize {
        match self {
            Hypothesis::Linear { lambda_beta, .. } => lambda_beta.ncols(),
            Hypothesis::FullVector { beta_0 } => beta_0.len(),
        }
    }

    pub fn dx(&self) -> usize {
        match self {
            Hypothesis::Linear { lambda_beta, .. } => lambda_beta.nrows(),
            Hypothesis::FullVector { beta_0 } => beta_0.len(),
        }
    }

    /// The full null vector, required by AR, LM and CQLR.
    pub fn beta_0(&self) -> Result<&DVector<f64>> {
        match self {
            Hypothesis::FullVector { beta_0 } => Ok(beta_0),
            Hypothesis::Linear { .. } => Err(Error::InvalidArgument(
                "full-vector test requires a full-vector null".into(),
            )),
        }
    }
}
