//! Rademacher sign sets, bootstrap critical values, p-values and the
//! common result record of every bootstrap test.

use rand_chacha::rand_core::RngCore;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kclass::Method;
use crate::rng;

/// The sign set is enumerated exhaustively for `q` up to this value in auto mode.
pub const AUTO_EXHAUSTIVE_MAX_Q: usize = 12;
/// Hard cap on exhaustive enumeration.
pub const MAX_EXHAUSTIVE_Q: usize = 20;
/// Default number of sampled sign vectors.
pub const DEFAULT_DRAWS: usize = 499;
/// Relative tolerance used when comparing a statistic with a critical value.
/// Differences below it are ties and do not reject.
pub const TIE_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SignMode {
    Exhaustive,
    Sampled,
}

/// How to build the sign set for `q` clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignPolicy {
    /// Exhaustive for `q <= 12`, otherwise `draws` sampled vectors.
    Auto { draws: usize, seed: u64 },
    Exhaustive,
    Sampled { draws: usize, seed: u64 },
}

impl Default for SignPolicy {
    fn default() -> Self {
        SignPolicy::Auto {
            draws: DEFAULT_DRAWS,
            seed: 0,
        }
    }
}

/// Compact description of a sign set for reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SignSetDescriptor {
    pub mode: SignMode,
    pub q: usize,
    pub size: usize,
    pub seed: Option<u64>,
}

/// A list of sign vectors in `{-1, +1}^q`, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignSet {
    q: usize,
    mode: SignMode,
    seed: Option<u64>,
    signs: Vec<i8>,
}

impl SignSet {
    /// All `2^q` vectors in lexicographic order: vector `k` has `g_j = +1`
    /// when bit `q-1-j` of `k` is set, so the first is all `-1` and the last all `+1`.
    pub fn exhaustive(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidArgument("sign set needs q ≥ 1".into()));
        }
        if q > MAX_EXHAUSTIVE_Q {
            return Err(Error::SignSetTooLarge { q });
        }
        let m = 1usize << q;
        let mut signs = Vec::with_capacity(m * q);
        for k in 0..m {
            for j in 0..q {
                signs.push(if (k >> (q - 1 - j)) & 1 == 1 { 1 } else { -1 });
            }
        }
        Ok(Self {
            q,
            mode: SignMode::Exhaustive,
            seed: None,
            signs,
        })
    }

    /// `draws` i.i.d. Rademacher vectors from the sign stream of `seed`.
    pub fn sampled(q: usize, draws: usize, seed: u64) -> Result<Self> {
        let mut r = rng::substream(seed, &[rng::SIGN_TAG, q as u64]);
        let mut s = Self::sampled_from(q, draws, &mut r)?;
        s.seed = Some(seed);
        Ok(s)
    }

    /// `draws` i.i.d. Rademacher vectors from an existing generator.
    pub fn sampled_from<R: RngCore>(q: usize, draws: usize, r: &mut R) -> Result<Self> {
        if q == 0 || draws == 0 {
            return Err(Error::InvalidArgument("sampled sign set needs q ≥ 1 and B ≥ 1".into()));
        }
        let mut signs = Vec::with_capacity(draws * q);
        let mut bits = 0u64;
        let mut left = 0;
        for _ in 0..draws * q {
            if left == 0 {
                bits = r.next_u64();
                left = 64;
            }
            signs.push(if bits & 1 == 1 { 1 } else { -1 });
            bits >>= 1;
            left -= 1;
        }
        Ok(Self {
            q,
            mode: SignMode::Sampled,
            seed: None,
            signs,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }
    pub fn mode(&self) -> SignMode {
        self.mode
    }
    pub fn len(&self) -> usize {
        self.signs.len() / self.q
    }
    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }
    pub fn get(&self, k: usize) -> &[i8] {
        &self.signs[k * self.q..(k + 1) * self.q]
    }
    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[i8]> + '_ {
        self.signs.chunks(self.q)
    }

    pub fn descriptor(&self) -> SignSetDescriptor {
        SignSetDescriptor {
            mode: self.mode,
            q: self.q,
            size: self.len(),
            seed: self.seed,
        }
    }
}

/// `make_sign_set`.
pub fn make_sign_set(q: usize, policy: SignPolicy) -> Result<SignSet> {
    match policy {
        SignPolicy::Exhaustive => SignSet::exhaustive(q),
        SignPolicy::Sampled { draws, seed } => SignSet::sampled(q, draws, seed),
        SignPolicy::Auto { draws, seed } => {
            if q <= AUTO_EXHAUSTIVE_MAX_Q {
                SignSet::exhaustive(q)
            } else {
                SignSet::sampled(q, draws, seed)
            }
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// `critical_value`: the `ceil(m(1-alpha))`-th order statistic.
pub fn critical_value(stats: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if stats.is_empty() {
        return Err(Error::InvalidArgument("empty bootstrap distribution".into()));
    }
    let m = stats.len();
    let target = m as f64 * (1.0 - alpha);
    let k = ((target - 1e-9).ceil() as usize).clamp(1, m);
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k - 1])
}

/// `stat > cv` beyond the relative tie tolerance.
pub fn exceeds(stat: f64, cv: f64) -> bool {
    stat - cv > TIE_REL_TOL * stat.abs().max(cv.abs())
}

/// `stat >= cv` up to the tie tolerance.
pub fn at_least(value: f64, stat: f64) -> bool {
    !exceeds(stat, value)
}

/// Share of bootstrap statistics at least as large as `stat`.
pub fn bootstrap_pvalue(stat: f64, stats: &[f64]) -> f64 {
    if stats.is_empty() {
        return f64::NAN;
    }
    stats.iter().filter(|&&s| at_least(s, stat)).count() as f64 / stats.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Wald,
    Score,
    Ar,
    Lm,
    Cqlr,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::Wald => "wald",
            TestKind::Score => "score",
            TestKind::Ar => "ar",
            TestKind::Lm => "lm",
            TestKind::Cqlr => "cqlr",
        }
    }
}

/// Outcome of one bootstrap test.
#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    pub test: TestKind,
    pub estimator: Option<Method>,
    pub studentized: bool,
    pub statistic: f64,
    pub critical_value: f64,
    pub pvalue: f64,
    pub reject: bool,
    pub alpha: f64,
    pub signset: SignSetDescriptor,
    /// Sign vectors whose bootstrap statistic could not be computed (set to 0).
    pub singular_draws: usize,
    #[serde(skip)]
    pub distribution: Vec<f64>,
}

pub type WaldBootstrapResult = BootstrapResult;

impl BootstrapResult {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_distribution(
        test: TestKind,
        estimator: Option<Method>,
        studentized: bool,
        statistic: f64,
        distribution: Vec<f64>,
        alpha: f64,
        signset: SignSetDescriptor,
        singular_draws: usize,
    ) -> Result<Self> {
        let cv = critical_value(&distribution, alpha)?;
        Ok(Self {
            test,
            estimator,
            studentized,
            statistic,
            critical_value: cv,
            pvalue: bootstrap_pvalue(statistic, &distribution),
            reject: exceeds(statistic, cv),
            alpha,
            signset,
            singular_draws,
            distribution,
        })
    }
}

/// Evaluates `f` on every sign vector in parallel, keeping the sign-set order.
/// Failed draws contribute 0 and are counted.
pub(crate) fn map_signs<F>(signs: &SignSet, f: F) -> (Vec<f64>, usize)
where
    F: Fn(&[i8]) -> Result<f64> + Sync,
{
    use rayon::prelude::*;
    let out: Vec<Option<f64>> = (0..signs.len())
        .into_par_iter()
        .map(|k| f(signs.get(k)).ok().filter(|v| v.is_finite()))
        .collect();
    let failed = out.iter().filter(|v| v.is_none()).count();
    if failed > 0 {
        log::warn!("{failed} bootstrap draws were singular and set to 0");
    }
    (out.into_iter().map(|v| v.unwrap_or(0.0)).collect(), failed)
}
