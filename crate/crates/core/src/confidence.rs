//! Confidence sets for a scalar coefficient by inverting bootstrap tests
//! over a grid.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::ar;
use crate::data::{ClusteredDataset, Hypothesis, PartialledDesign};
use crate::error::{Error, Result};
use crate::inference::{make_sign_set, BootstrapResult, SignPolicy, SignSet};
use crate::rng;
use crate::robust::{self, RobustStatistic};
use crate::wald::{self, WaldBootstrap, WaldOptions};

/// Tag for per-grid-point sign streams.
const GRID_TAG: u64 = 0x4752_4944;

/// The test being inverted.
#[derive(Debug, Clone)]
pub enum TestSpec {
    Wald(WaldOptions),
    Ar { studentize: bool },
    Lm,
    Cqlr,
    ScoreWald,
}

impl TestSpec {
    pub fn name(&self) -> String {
        match self {
            TestSpec::Wald(o) if o.studentize => format!("wald-cr:{}", o.method),
            TestSpec::Wald(o) => format!("wald:{}", o.method),
            TestSpec::Ar { studentize: true } => "ar-cr".into(),
            TestSpec::Ar { studentize: false } => "ar".into(),
            TestSpec::Lm => "lm".into(),
            TestSpec::Cqlr => "cqlr".into(),
            TestSpec::ScoreWald => "score-wald".into(),
        }
    }
}

/// Whether sign vectors are redrawn at every grid point or shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignReuse {
    #[default]
    Fresh,
    Shared,
}

/// Evenly spaced grid `lo, lo + step, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            lo: -10.0,
            hi: 10.0,
            step: 0.01,
        }
    }
}

impl Grid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.hi >= self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid needs lo ≤ hi and step > 0 (lo={}, hi={}, step={})",
                self.lo, self.hi, self.step
            )));
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|k| self.lo + k as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceSet {
    pub test: String,
    pub alpha: f64,
    pub grid: Grid,
    pub points: usize,
    pub intervals: Vec<[f64; 2]>,
    /// Grid points where the test could not be computed; these are kept in the set.
    pub failed_points: usize,
    #[serde(skip)]
    pub values: Vec<f64>,
    #[serde(skip)]
    pub accepted: Vec<bool>,
}

impl ConfidenceSet {
    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains_point(&self, b: f64) -> bool {
        self.intervals.iter().any(|iv| iv[0] <= b && b <= iv[1])
    }

    /// Accepted mask recovered from the intervals.
    pub fn mask_from_intervals(&self) -> Vec<bool> {
        self.values.iter().map(|&b| self.contains_point(b)).collect()
    }
}

/// Maximal runs of accepted grid points as `[lo, hi]` pairs.
pub fn merge_intervals(values: &[f64], accepted: &[bool]) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for k in 0..=values.len() {
        let on = k < values.len() && accepted[k];
        match (on, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push([values[s], values[k - 1]]);
                start = None;
            }
            _ => {}
        }
    }
    out
}

enum Prepared<'a> {
    Wald(WaldBootstrap<'a>),
    Other(PartialledDesign),
}

fn prepare<'a>(data: &'a ClusteredDataset, spec: &TestSpec) -> Result<Prepared<'a>> {
    Ok(match spec {
        TestSpec::Wald(o) => Prepared::Wald(WaldBootstrap::new(data, o.clone())?),
        _ => Prepared::Other(PartialledDesign::new(data)?),
    })
}

fn run_one(
    data: &ClusteredDataset,
    spec: &TestSpec,
    prepared: &Prepared<'_>,
    b: f64,
    signs: &SignSet,
    alpha: f64,
) -> Result<BootstrapResult> {
    let beta_0 = DVector::from_element(1, b);
    match (spec, prepared) {
        (TestSpec::Wald(_), Prepared::Wald(w)) => w.test(&Hypothesis::scalar(b), signs, alpha),
        (TestSpec::Ar { studentize }, Prepared::Other(d)) => {
            ar::ar_bootstrap_test_with(data, d, &beta_0, *studentize, signs, alpha, None)
        }
        (TestSpec::Lm, Prepared::Other(d)) => {
            robust::lm_cqlr_bootstrap_test_with(data, d, &beta_0, RobustStatistic::Lm, signs, alpha)
        }
        (TestSpec::Cqlr, Prepared::Other(d)) => {
            robust::lm_cqlr_bootstrap_test_with(data, d, &beta_0, RobustStatistic::Cqlr, signs, alpha)
        }
        (TestSpec::ScoreWald, _) => wald::score_bootstrap_wald_test(data, b, signs, alpha),
        _ => unreachable!("prepared state matches the spec"),
    }
}

/// Sign set for grid point `k`.
fn grid_signs(q: usize, policy: SignPolicy, k: usize) -> Result<SignSet> {
    let fresh = |draws: usize, seed: u64| {
        let mut r = rng::substream(seed, &[rng::SIGN_TAG, GRID_TAG, k as u64]);
        SignSet::sampled_from(q, draws, &mut r)
    };
    match policy {
        SignPolicy::Exhaustive => SignSet::exhaustive(q),
        SignPolicy::Sampled { draws, seed } => fresh(draws, seed),
        SignPolicy::Auto { draws, seed } => {
            if q <= crate::inference::AUTO_EXHAUSTIVE_MAX_Q {
                SignSet::exhaustive(q)
            } else {
                fresh(draws, seed)
            }
        }
    }
}

/// `invert_confidence_set`: accepted values of `beta` among the grid points.
pub fn invert_confidence_set(
    data: &ClusteredDataset,
    spec: &TestSpec,
    grid: Grid,
    alpha: f64,
    policy: SignPolicy,
    reuse: SignReuse,
) -> Result<ConfidenceSet> {
    if data.dx() != 1 {
        return Err(Error::InvalidArgument(
            "grid inversion needs a single endogenous regressor".into(),
        ));
    }
    crate::inference::check_alpha(alpha)?;
    let values = grid.points()?;
    let prepared = prepare(data, spec)?;
    let shared = match reuse {
        SignReuse::Shared => Some(make_sign_set(data.q(), policy)?),
        SignReuse::Fresh => None,
    };
    let outcome: Vec<Result<Option<bool>>> = values
        .par_iter()
        .enumerate()
        .map(|(k, &b)| {
            let owned;
            let signs = match &shared {
                Some(s) => s,
                None => {
                    owned = grid_signs(data.q(), policy, k)?;
                    &owned
                }
            };
            Ok(run_one(data, spec, &prepared, b, signs, alpha).ok().map(|r| !r.reject))
        })
        .collect();
    let mut accepted = Vec::with_capacity(values.len());
    let mut failed = 0;
    for o in outcome {
        match o? {
            Some(a) => accepted.push(a),
            None => {
                failed += 1;
                accepted.push(true);
            }
        }
    }
    if failed > 0 {
        log::warn!("{failed} grid points could not be tested and were kept in the set");
    }
    Ok(ConfidenceSet {
        test: spec.name(),
        alpha,
        grid,
        points: values.len(),
        intervals: merge_intervals(&values, &accepted),
        failed_points: failed,
        values,
        accepted,
    })
}
