//! Chi-square quantiles for the asymptotic tests.

use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};

use crate::error::{Error, Result};

/// `p`-quantile of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_quantile(df: usize, p: f64) -> Result<f64> {
    if df == 0 || !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("chi2 quantile needs df ≥ 1 and 0 < p < 1 (df={df}, p={p})")));
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut x = dist.inverse_cdf(p);
    // Polish with Newton steps on the CDF.
    for _ in 0..8 {
        let f = dist.cdf(x) - p;
        let d = dist.pdf(x);
        if !(d > 0.0) {
            break;
        }
        let step = f / d;
        let next = (x - step).max(x * 0.5);
        if (next - x).abs() <= 1e-15 * x.abs() {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}
