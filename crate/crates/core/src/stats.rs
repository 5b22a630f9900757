//! Shared descriptive statistics: compensated summation, sample moments and
//! Student-t confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("standard error must be non-negative, got {0}")]
    NegativeSe(f64),
    #[error("confidence level must lie in (0, 1), got {0}")]
    BadLevel(f64),
}

/// Neumaier-compensated sum. Order-independent to well below 1e-12 for the
/// magnitudes handled here, which keeps sharded aggregation reproducible.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Two-sided Student-t quantile: returns t such that P(T <= t) = p for T ~ t(df).
pub fn t_quantile(df: f64, p: f64) -> f64 {
    debug_assert!(df > 0.0 && p > 0.0 && p < 1.0);
    StudentsT::new(0.0, 1.0, df)
        .expect("valid t distribution")
        .inverse_cdf(p)
}

/// Two-sided p-value for a t statistic with the given degrees of freedom.
/// An infinite statistic (zero standard error under a nonzero coefficient)
/// yields p = 0; a NaN statistic propagates.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

/// Summary of one sample batch: moments plus a t-based confidence interval.
///
/// `sd` uses the n-1 denominator and `se = sd / sqrt(n)`. Both are reported
/// explicitly; the interval is `mean ± t(n-1, (1+level)/2) * se`. A single
/// observation (or zero dispersion) yields the degenerate interval
/// `[mean, mean]` with `degenerate` set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_level: f64,
    pub degenerate: bool,
}

pub fn summarize(values: &[f64], ci_level: f64) -> Result<AnswerStats, StatsError> {
    if values.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    if !(0.0 < ci_level && ci_level < 1.0) {
        return Err(StatsError::BadLevel(ci_level));
    }
    let n = values.len();
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return Ok(AnswerStats {
            n,
            mean,
            sd: 0.0,
            se: 0.0,
            ci_low: mean,
            ci_high: mean,
            ci_level,
            degenerate: true,
        });
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    let sd = (ss / (n - 1) as f64).max(0.0).sqrt();
    let se = sd / (n as f64).sqrt();
    let (ci_low, ci_high) = ci_bounds(mean, se, n, ci_level);
    Ok(AnswerStats {
        n,
        mean,
        sd,
        se,
        ci_low,
        ci_high,
        ci_level,
        degenerate: se == 0.0,
    })
}

/// `mean ± t(n-1, (1+level)/2) * se`. Requires n >= 2.
pub fn ci_from_summary(
    mean: f64,
    se: f64,
    n: usize,
    level: f64,
) -> Result<(f64, f64), StatsError> {
    if n < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n });
    }
    if se < 0.0 {
        return Err(StatsError::NegativeSe(se));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(StatsError::BadLevel(level));
    }
    Ok(ci_bounds(mean, se, n, level))
}

fn ci_bounds(mean: f64, se: f64, n: usize, level: f64) -> (f64, f64) {
    if se == 0.0 {
        return (mean, mean);
    }
    let half = t_quantile((n - 1) as f64, (1.0 + level) / 2.0) * se;
    (mean - half, mean + half)
}
