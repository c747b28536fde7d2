//! Risk measures and realized-performance statistics.
//!
//! Shortfall follows the loss-sign convention: a positive value is the
//! expected loss magnitude over the K worst scenarios, `K = floor(T(1-p))`,
//! with no fractional-tail interpolation. The NN statistic is the percent
//! deviation of that empirical shortfall from the Gaussian forecast at
//! matched volatility.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::{derive_seed, inverse_normal_cdf, normal_pdf};

/// Which tail of the distribution a statistic examines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    /// The left (loss) tail.
    Loss,
    /// The right (gain) tail, handled by negating the sample.
    Gain,
}

impl Tail {
    /// Lowercase label used in report rows.
    pub fn label(&self) -> &'static str {
        match self {
            Tail::Loss => "loss",
            Tail::Gain => "gain",
        }
    }
}

/// An empirical shortfall estimate together with its tail geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShortfallValue {
    /// Expected loss over the tail; positive means a loss.
    pub value: f64,
    /// Confidence level p.
    pub confidence: f64,
    /// Number of scenarios in the tail, `K = floor(T(1-p))`.
    pub tail_count: usize,
}

/// Tail size `K = floor(T(1-p))`.
///
/// A small nudge absorbs cases like `10 * (1 - 0.9)` rounding just below the
/// integer it represents exactly.
pub fn tail_count(sample_size: usize, confidence: f64) -> Result<usize> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    let k = (sample_size as f64 * (1.0 - confidence) + 1e-9).floor() as usize;
    if k == 0 {
        return Err(Error::DegenerateTail { confidence, sample_size });
    }
    Ok(k)
}

/// Sum of the `k` smallest values, in deterministic order.
pub(crate) fn sum_k_smallest(values: &[f64], k: usize) -> f64 {
    debug_assert!(k >= 1 && k <= values.len());
    if k == values.len() {
        return values.iter().sum();
    }
    let mut scratch = values.to_vec();
    scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
    scratch[..k].iter().sum()
}

/// Empirical shortfall: minus the average of the K smallest returns.
pub fn empirical_shortfall(returns: &[f64], confidence: f64) -> Result<ShortfallValue> {
    let k = tail_count(returns.len(), confidence)?;
    let value = -sum_k_smallest(returns, k) / k as f64;
    Ok(ShortfallValue { value, confidence, tail_count: k })
}

/// Zero-mean Gaussian expected shortfall: `sigma * phi(Phi^-1(p)) / (1-p)`.
pub fn normal_shortfall(sigma: f64, confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("volatility {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    Ok(sigma * normal_pdf(inverse_normal_cdf(confidence)) / (1.0 - confidence))
}

/// Non-normality statistic: empirical shortfall over the Gaussian forecast at
/// matched volatility, minus one.
///
/// `sigma_matched` must be estimated with the same half-life used to
/// normalize the sample, which makes NN invariant under positive scaling of
/// the series.
pub fn nn_statistic(sample: &[f64], confidence: f64, tail: Tail, sigma_matched: f64) -> Result<f64> {
    if !(sigma_matched > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "matched volatility {sigma_matched} must be > 0"
        )));
    }
    let shortfall = match tail {
        Tail::Loss => empirical_shortfall(sample, confidence)?,
        Tail::Gain => {
            let negated: Vec<f64> = sample.iter().map(|v| -v).collect();
            empirical_shortfall(&negated, confidence)?
        }
    };
    Ok(shortfall.value / normal_shortfall(sigma_matched, confidence)? - 1.0)
}

/// Zero-mean root-mean-square of a series: the equal-weight limit of the EWMA
/// volatility convention used throughout the crate.
pub fn rms_volatility(sample: &[f64]) -> f64 {
    if sample.is_empty() {
        return 0.0;
    }
    (sample.iter().map(|v| v * v).sum::<f64>() / sample.len() as f64).sqrt()
}

/// NN point estimate with a percentile bootstrap confidence interval.
#[derive(Debug, Clone, Serialize)]
pub struct NNReport {
    /// NN on the original sample.
    pub nn: f64,
    /// Lower 95% percentile bound.
    pub ci_low: f64,
    /// Upper 95% percentile bound.
    pub ci_high: f64,
    /// Which tail was measured.
    pub tail: Tail,
    /// Confidence level of the shortfall.
    pub confidence: f64,
}

/// Bootstrap comparison of the NN statistic between two periods.
#[derive(Debug, Clone, Serialize)]
pub struct NNComparison {
    /// Report for the first sample.
    pub report_a: NNReport,
    /// Report for the second sample.
    pub report_b: NNReport,
    /// 95% percentile CI on `NN_a - NN_b`.
    pub difference_ci: (f64, f64),
    /// True when the difference CI contains zero, i.e. persistence of the NN
    /// statistic across the two periods is not rejected.
    pub persistent: bool,
}

// Linear-interpolation quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

fn bootstrap_nn_samples(
    sample: &[f64],
    confidence: f64,
    tail: Tail,
    replications: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let results: Vec<Result<f64>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, rep as u64));
            let resampled: Vec<f64> = (0..sample.len())
                .map(|_| sample[rng.gen_range(0..sample.len())])
                .collect();
            let sigma = rms_volatility(&resampled);
            if sigma == 0.0 {
                return Err(Error::ZeroVolatility);
            }
            nn_statistic(&resampled, confidence, tail, sigma)
        })
        .collect();
    results.into_iter().collect()
}

fn percentile_report(
    sample: &[f64],
    replicates: &[f64],
    confidence: f64,
    tail: Tail,
) -> Result<NNReport> {
    let sigma = rms_volatility(sample);
    if sigma == 0.0 {
        return Err(Error::ZeroVolatility);
    }
    let nn = nn_statistic(sample, confidence, tail, sigma)?;
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Widen to the point estimate if a skewed bootstrap lands outside, so the
    // report always satisfies ci_low <= nn <= ci_high.
    let ci_low = quantile_sorted(&sorted, 0.025).min(nn);
    let ci_high = quantile_sorted(&sorted, 0.975).max(nn);
    Ok(NNReport { nn, ci_low, ci_high, tail, confidence })
}

/// Bootstraps the NN statistic of two samples independently (`replications`
/// resamples each, percentile 95% intervals) and tests persistence via the
/// CI on the difference.
///
/// Matched volatility is recomputed per replicate as the zero-mean RMS of the
/// resampled series, keeping every replicate scale-invariant.
pub fn bootstrap_nn_ci(
    sample_a: &[f64],
    sample_b: &[f64],
    confidence: f64,
    tail: Tail,
    replications: usize,
    seed: u64,
) -> Result<NNComparison> {
    if replications < 100 {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs at least 100 replications, got {replications}"
        )));
    }
    // Check tails up front so the error mentions the caller's sample, not a replicate.
    tail_count(sample_a.len(), confidence)?;
    tail_count(sample_b.len(), confidence)?;

    let reps_a = bootstrap_nn_samples(sample_a, confidence, tail, replications, derive_seed(seed, 1))?;
    let reps_b = bootstrap_nn_samples(sample_b, confidence, tail, replications, derive_seed(seed, 2))?;
    let report_a = percentile_report(sample_a, &reps_a, confidence, tail)?;
    let report_b = percentile_report(sample_b, &reps_b, confidence, tail)?;

    let mut diffs: Vec<f64> = reps_a.iter().zip(&reps_b).map(|(a, b)| a - b).collect();
    diffs.sort_by(f64::total_cmp);
    let difference_ci = (quantile_sorted(&diffs, 0.025), quantile_sorted(&diffs, 0.975));
    let persistent = difference_ci.0 <= 0.0 && 0.0 <= difference_ci.1;
    Ok(NNComparison { report_a, report_b, difference_ci, persistent })
}

/// Annualized sample standard deviation (mean-subtracted, divisor T-1).
pub fn realized_volatility(returns: &[f64], periods_per_year: usize) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::InvalidParameter(
            "realized volatility needs at least 2 returns".into(),
        ));
    }
    if returns.iter().all(|r| *r == returns[0]) {
        return Ok(0.0);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() * (periods_per_year as f64).sqrt())
}

/// Annualized mean return over annualized volatility, with no risk-free
/// adjustment.
pub fn sharpe_ratio(returns: &[f64], periods_per_year: usize) -> Result<f64> {
    let vol = realized_volatility(returns, periods_per_year)?;
    if vol == 0.0 {
        return Err(Error::ZeroVolatility);
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(mean * periods_per_year as f64 / vol)
}

/// Trailing-window regression beta of `portfolio` on `market`.
///
/// Both series must share the same dates. Each output point uses the full
/// window ending at its date; sample moments are mean-subtracted.
pub fn rolling_beta(
    dates: &[NaiveDate],
    portfolio: &[f64],
    market: &[f64],
    window_days: usize,
) -> Result<(Vec<NaiveDate>, Vec<f64>)> {
    if portfolio.len() != market.len() || dates.len() != market.len() {
        return Err(Error::Validation(format!(
            "rolling beta needs aligned series: {} dates, {} portfolio, {} market",
            dates.len(),
            portfolio.len(),
            market.len()
        )));
    }
    if window_days < 2 {
        return Err(Error::InvalidParameter("window_days must be >= 2".into()));
    }
    let mut out_dates = Vec::new();
    let mut betas = Vec::new();
    if market.len() < window_days {
        return Ok((out_dates, betas));
    }
    for end in window_days..=market.len() {
        let p = &portfolio[end - window_days..end];
        let m = &market[end - window_days..end];
        let n = window_days as f64;
        let mp = p.iter().sum::<f64>() / n;
        let mm = m.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut var = 0.0;
        for i in 0..window_days {
            cov += (p[i] - mp) * (m[i] - mm);
            var += (m[i] - mm) * (m[i] - mm);
        }
        if var == 0.0 {
            return Err(Error::ZeroVariance(format!(
                "market series is flat in the window ending {}",
                dates[end - 1]
            )));
        }
        out_dates.push(dates[end - 1]);
        betas.push(cov / var);
    }
    Ok((out_dates, betas))
}
