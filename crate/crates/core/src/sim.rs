//! Monte Carlo design with few heterogeneous clusters and one (or a few)
//! strong-instrument clusters, plus size and power experiments.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::ar;
use crate::data::{ClusteredDataset, Hypothesis, PartialledDesign};
use crate::error::{Error, Result};
use crate::inference::{SignPolicy, SignSet, AUTO_EXHAUSTIVE_MAX_Q};
use crate::kclass::Method;
use crate::rng::{self, NormalSampler};
use crate::robust::{self, RobustStatistic};
use crate::wald::{WaldBootstrap, WaldOptions};

const BASE_SIZES: [usize; 14] = [100, 40, 40, 30, 30, 30, 20, 20, 10, 10, 20, 20, 10, 10];
const BASE_SCALE: [f64; 14] = [2.5, 2.0, 2.0, 1.5, 1.5, 1.5, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0, 0.5, 0.5];
const BASE_RATIO: [f64; 14] = [1.0, 0.4, 0.4, 0.3, 0.3, 0.3, -0.2, -0.2, -0.1, -0.1, 0.2, 0.2, 0.1, 0.1];
/// Clusters whose instrument covariance is `c_j diag(1, ..., d_z)`.
const DIAG_CLUSTERS: usize = 6;

/// Data-generating process parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpConfig {
    /// 10 or 14.
    pub q: usize,
    pub dz: usize,
    pub pi0: f64,
    pub rho: f64,
    /// 1, 3 or 6.
    pub strong_clusters: usize,
    pub beta: f64,
    pub gamma: f64,
    /// Multiplies every cluster size.
    pub size_scale: usize,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            q: 10,
            dz: 1,
            pi0: 4.0,
            rho: 0.5,
            strong_clusters: 1,
            beta: 0.0,
            gamma: 1.0,
            size_scale: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q != 10 && self.q != 14 {
            return Err(Error::InvalidArgument(format!("q must be 10 or 14, got {}", self.q)));
        }
        if ![1, 3, 6].contains(&self.strong_clusters) {
            return Err(Error::InvalidArgument(format!(
                "strong_clusters must be 1, 3 or 6, got {}",
                self.strong_clusters
            )));
        }
        if self.dz == 0 {
            return Err(Error::InvalidArgument("d_z must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.size_scale == 0 || !self.pi0.is_finite() || !self.beta.is_finite() || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument("invalid DGP scale or coefficients".into()));
        }
        Ok(())
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        BASE_SIZES[..self.q].iter().map(|s| s * self.size_scale).collect()
    }

    pub fn n(&self) -> usize {
        self.cluster_sizes().iter().sum()
    }

    /// First-stage ratio of cluster `j` to the strong cluster.
    pub fn ratio(&self, j: usize) -> f64 {
        let strong = match self.strong_clusters {
            3 => j < 3,
            6 => j < 6,
            _ => j == 0,
        };
        if strong {
            1.0
        } else {
            BASE_RATIO[j]
        }
    }

    /// Stable id of everything except `beta`, so that power curves at
    /// `beta = 0` reuse the size experiment's draws.
    pub fn cell_id(&self) -> u64 {
        let mut bytes = Vec::new();
        for v in [self.q as u64, self.dz as u64, self.strong_clusters as u64, self.size_scale as u64] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.pi0, self.rho, self.gamma] {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        rng::fnv1a(&bytes)
    }
}

/// `simulate_dgp`: one dataset from `rng`. W holds the cluster dummies.
pub fn simulate_dgp<R: RngCore>(config: &DgpConfig, rng: &mut R) -> Result<ClusteredDataset> {
    config.validate()?;
    let normal = NormalSampler::default();
    let sizes = config.cluster_sizes();
    let (n, q, dz) = (config.n(), config.q, config.dz);
    let root = (1.0 - config.rho * config.rho).sqrt();
    let mut y = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, 1);
    let mut z = DMatrix::zeros(n, dz);
    let mut w = DMatrix::zeros(n, q);
    let mut ids = Vec::with_capacity(n);
    let mut row = 0;
    for (j, &nj) in sizes.iter().enumerate() {
        let a_eps = normal.draw(rng);
        let a_u = normal.draw(rng);
        let a_v = config.rho * a_eps + root * a_u;
        let pi = config.pi0 * config.ratio(j);
        for _ in 0..nj {
            let mut sum = 0.0;
            let mut zpi = 0.0;
            for k in 0..dz {
                let var = if j < DIAG_CLUSTERS {
                    BASE_SCALE[j] * (k + 1) as f64
                } else {
                    BASE_SCALE[j]
                };
                let zk = var.sqrt() * normal.draw(rng);
                z[(row, k)] = zk;
                sum += zk;
                zpi += zk * pi;
            }
            let eps = normal.draw(rng);
            let u = normal.draw(rng);
            let v = config.rho * eps + root * u;
            let sigma = sum * sum;
            let xi = config.gamma + zpi + sigma * (a_v + v);
            x[(row, 0)] = xi;
            y[row] = config.gamma + xi * config.beta + sigma * (a_eps + eps);
            w[(row, j)] = 1.0;
            ids.push(j as i64);
            row += 1;
        }
    }
    ClusteredDataset::new(y, x, z, w, &ids)
}

/// Draw for replication `rep` of a cell.
pub fn replication_dataset(config: &DgpConfig, seed: u64, rep: usize) -> Result<ClusteredDataset> {
    let mut r = rng::substream(seed, &[rng::DATA_TAG, config.cell_id(), rep as u64]);
    simulate_dgp(config, &mut r)
}

/// Sign set for replication `rep` of a cell: exhaustive for small `q`,
/// otherwise `boot_reps` vectors from the replication's sign stream.
pub fn replication_signs(config: &DgpConfig, seed: u64, rep: usize, boot_reps: usize) -> Result<SignSet> {
    if config.q <= AUTO_EXHAUSTIVE_MAX_Q {
        return SignSet::exhaustive(config.q);
    }
    let mut r = rng::substream(seed, &[rng::SIGN_TAG, config.cell_id(), rep as u64]);
    SignSet::sampled_from(config.q, boot_reps, &mut r)
}

/// Tests available to the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimTest {
    /// `T_n`-based wild bootstrap.
    WaldUs(Method),
    /// `T_CR`-based wild bootstrap.
    WaldS(Method),
    ArUs,
    ArS,
    /// `AR_CR^2` against the chi-square quantile.
    AsyArS,
    Lm,
    Cqlr,
}

impl SimTest {
    pub fn name(&self) -> &'static str {
        match self {
            SimTest::WaldUs(_) => "WB-US",
            SimTest::WaldS(_) => "WB-S",
            SimTest::ArUs => "WB-AR-US",
            SimTest::ArS => "WB-AR-S",
            SimTest::AsyArS => "ASY-AR-S",
            SimTest::Lm => "WB-LM",
            SimTest::Cqlr => "WB-CQLR",
        }
    }

    pub fn estimator(&self) -> Option<Method> {
        match self {
            SimTest::WaldUs(m) | SimTest::WaldS(m) => Some(*m),
            _ => None,
        }
    }

    /// Parses `WB-US:tsls`, `wb-s:liml`, `WB-AR-S`, and so on.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, est) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b.parse::<Method>()?)),
            None => (s, None),
        };
        let m = est.unwrap_or(Method::Tsls);
        Ok(match name.to_ascii_uppercase().as_str() {
            "WB-US" => SimTest::WaldUs(m),
            "WB-S" => SimTest::WaldS(m),
            "WB-AR-US" => SimTest::ArUs,
            "WB-AR-S" => SimTest::ArS,
            "ASY-AR-S" => SimTest::AsyArS,
            "WB-LM" => SimTest::Lm,
            "WB-CQLR" => SimTest::Cqlr,
            _ => return Err(Error::InvalidArgument(format!("unknown simulation test \"{s}\""))),
        })
    }

    /// The default test menu, with the estimators used for `d_z`.
    pub fn default_menu(dz: usize) -> Vec<SimTest> {
        let methods: &[Method] = if dz == 1 {
            &[Method::Tsls]
        } else {
            &[Method::Tsls, Method::Liml, Method::Full]
        };
        let mut out = Vec::new();
        for &m in methods {
            out.push(SimTest::WaldUs(m));
            out.push(SimTest::WaldS(m));
        }
        out.extend([SimTest::ArUs, SimTest::ArS, SimTest::AsyArS]);
        out
    }
}

/// Rejection decisions of every test on one replication (`None` on failure).
pub fn replication_decisions(
    data: &ClusteredDataset,
    tests: &[SimTest],
    beta_0: f64,
    signs: &SignSet,
    alpha: f64,
) -> Vec<Option<bool>> {
    let design = match PartialledDesign::new(data) {
        Ok(d) => d,
        Err(_) => return vec![None; tests.len()],
    };
    let hyp = Hypothesis::scalar(beta_0);
    let b0 = DVector::from_element(1, beta_0);
    let mut wald_cache: Vec<(Method, Option<WaldBootstrap<'_>>)> = Vec::new();
    let mut decisions = Vec::with_capacity(tests.len());
    for t in tests {
        let d = match *t {
            SimTest::WaldUs(m) | SimTest::WaldS(m) => {
                let studentize = matches!(t, SimTest::WaldS(_));
                if !wald_cache.iter().any(|(mm, _)| *mm == m) {
                    let b = WaldBootstrap::with_design(data, design.clone(), WaldOptions::new(m, false)).ok();
                    wald_cache.push((m, b));
                }
                let prepared = wald_cache.iter().find(|(mm, _)| *mm == m).and_then(|(_, b)| b.as_ref());
                prepared.and_then(|b| b.test_as(&hyp, signs, alpha, studentize).ok().map(|r| r.reject))
            }
            SimTest::ArUs | SimTest::ArS => {
                ar::ar_bootstrap_test_with(data, &design, &b0, *t == SimTest::ArS, signs, alpha, None)
                    .ok()
                    .map(|r| r.reject)
            }
            SimTest::AsyArS => ar::asymptotic_ar_cr_test_with(data, &design, &b0, alpha)
                .ok()
                .map(|r| r.reject),
            SimTest::Lm | SimTest::Cqlr => {
                let s = if *t == SimTest::Lm {
                    RobustStatistic::Lm
                } else {
                    RobustStatistic::Cqlr
                };
                robust::lm_cqlr_bootstrap_test_with(data, &design, &b0, s, signs, alpha)
                    .ok()
                    .map(|r| r.reject)
            }
        };
        decisions.push(d);
    }
    decisions
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRow {
    pub test: String,
    pub estimator: Option<Method>,
    pub q: usize,
    pub rho: f64,
    pub pi0: f64,
    pub dz: usize,
    pub strong: usize,
    pub beta: f64,
    pub rejections: usize,
    /// Replications where the test could be computed.
    pub reps: usize,
    pub failures: usize,
    pub reject_rate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionTable {
    pub kind: String,
    pub alpha: f64,
    pub mc_reps: usize,
    pub boot_reps: usize,
    pub seed: u64,
    pub rows: Vec<RejectionRow>,
}

impl RejectionTable {
    /// Row for a test, estimator and `(rho, pi0, dz, strong, beta)` match.
    pub fn find(&self, test: SimTest, cfg: &DgpConfig) -> Option<&RejectionRow> {
        self.rows.iter().find(|r| {
            r.test == test.name()
                && r.estimator == test.estimator()
                && r.q == cfg.q
                && r.rho == cfg.rho
                && r.pi0 == cfg.pi0
                && r.dz == cfg.dz
                && r.strong == cfg.strong_clusters
                && r.beta == cfg.beta
        })
    }

    pub fn rate(&self, test: SimTest, cfg: &DgpConfig) -> Option<f64> {
        self.find(test, cfg).map(|r| r.reject_rate)
    }
}

/// Experiment settings shared by size and power runs.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub tests: Vec<SimTest>,
    pub mc_reps: usize,
    pub boot_reps: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Null value tested; the true value is the cell's `beta`.
    pub beta_0: f64,
}

impl ExperimentSpec {
    pub fn new(tests: Vec<SimTest>, mc_reps: usize, seed: u64) -> Self {
        Self {
            tests,
            mc_reps,
            boot_reps: crate::inference::DEFAULT_DRAWS,
            alpha: 0.1,
            seed,
            beta_0: 0.0,
        }
    }
}

/// Minimum replications per cell.
pub const MIN_MC_REPS: usize = 100;

fn run_cell(cfg: &DgpConfig, spec: &ExperimentSpec) -> Result<Vec<RejectionRow>> {
    cfg.validate()?;
    let per_rep: Vec<Vec<Option<bool>>> = (0..spec.mc_reps)
        .into_par_iter()
        .map(|rep| {
            let data = replication_dataset(cfg, spec.seed, rep);
            let signs = replication_signs(cfg, spec.seed, rep, spec.boot_reps);
            match (data, signs) {
                (Ok(d), Ok(s)) => replication_decisions(&d, &spec.tests, spec.beta_0, &s, spec.alpha),
                _ => vec![None; spec.tests.len()],
            }
        })
        .collect();
    Ok(spec
        .tests
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let mut rej = 0;
            let mut ok = 0;
            for d in per_rep.iter().map(|r| r[k]).flatten() {
                ok += 1;
                rej += d as usize;
            }
            let rate = if ok > 0 { rej as f64 / ok as f64 } else { f64::NAN };
            RejectionRow {
                test: t.name().to_string(),
                estimator: t.estimator(),
                q: cfg.q,
                rho: cfg.rho,
                pi0: cfg.pi0,
                dz: cfg.dz,
                strong: cfg.strong_clusters,
                beta: cfg.beta,
                rejections: rej,
                reps: ok,
                failures: spec.mc_reps - ok,
                reject_rate: rate,
                se: (rate * (1.0 - rate) / ok.max(1) as f64).sqrt(),
            }
        })
        .collect())
}

fn check_spec(spec: &ExperimentSpec) -> Result<()> {
    if spec.mc_reps < MIN_MC_REPS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_MC_REPS} Monte Carlo replications, got {}",
            spec.mc_reps
        )));
    }
    if spec.tests.is_empty() || spec.boot_reps == 0 {
        return Err(Error::InvalidArgument("need at least one test and one bootstrap draw".into()));
    }
    crate::inference::check_alpha(spec.alpha)
}

/// `run_size_experiment`: rejection frequencies of `H0: beta = beta_0` in each cell.
pub fn run_size_experiment(cells: &[DgpConfig], spec: &ExperimentSpec) -> Result<RejectionTable> {
    check_spec(spec)?;
    let mut rows = Vec::new();
    for cfg in cells {
        rows.extend(run_cell(cfg, spec)?);
    }
    Ok(RejectionTable {
        kind: "size".into(),
        alpha: spec.alpha,
        mc_reps: spec.mc_reps,
        boot_reps: spec.boot_reps,
        seed: spec.seed,
        rows,
    })
}

/// `run_power_experiment`: rejection frequencies as the true `beta` moves over `beta_grid`.
pub fn run_power_experiment(
    cells: &[DgpConfig],
    beta_grid: &[f64],
    spec: &ExperimentSpec,
) -> Result<RejectionTable> {
    check_spec(spec)?;
    if beta_grid.is_empty() {
        return Err(Error::InvalidArgument("empty beta grid".into()));
    }
    let mut rows = Vec::new();
    for cfg in cells {
        for &b in beta_grid {
            let c = DgpConfig {
                beta: b,
                ..cfg.clone()
            };
            rows.extend(run_cell(&c, spec)?);
        }
    }
    Ok(RejectionTable {
        kind: "power".into(),
        alpha: spec.alpha,
        mc_reps: spec.mc_reps,
        boot_reps: spec.boot_reps,
        seed: spec.seed,
        rows,
    })
}

/// Half-width of the default power grid, times `pi0`.
pub const POWER_GRID_SCALE: f64 = 6.0;

/// Default power grid: `points` values over `[-6, 6] / pi0`.
pub fn default_beta_grid(pi0: f64, points: usize) -> Vec<f64> {
    let half = POWER_GRID_SCALE / pi0;
    if points <= 1 {
        return vec![0.0];
    }
    (0..points)
        .map(|k| -half + 2.0 * half * k as f64 / (points - 1) as f64)
        .collect()
}

/// Runs `f` on a pool of `workers` threads (all available cores when 0).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Default sign policy for a single test run on simulated data.
pub fn default_policy(seed: u64, boot_reps: usize) -> SignPolicy {
    SignPolicy::Auto {
        draws: boot_reps,
        seed,
    }
}
