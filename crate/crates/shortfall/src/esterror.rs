//! Monte Carlo estimation-error laboratory.
//!
//! Simulates i.i.d. standard normal returns, minimizes shortfall over the
//! full equal-weighted sample under full investment and long-only
//! constraints, and measures how far the optimized portfolio lands from the
//! true optimum (equal weights, by symmetry). Risk error is the population
//! risk of the optimized weights over the true minimum risk; weight error is
//! the angle to the true weight vector, compared against the analytic
//! boundary angle of the feasibility simplex.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::{derive_seed, ln_gamma};
use crate::optimize::{minimize_shortfall, ConstraintSet};
use crate::risk::{normal_shortfall, tail_count};
use crate::scenario::ScenarioSet;

/// Averages over one (sample length, confidence) cell of the study.
#[derive(Debug, Clone, Serialize)]
pub struct TrialReport {
    /// Number of simulated assets.
    pub n_assets: usize,
    /// Scenario sample length T.
    pub sample_length: usize,
    /// Shortfall confidence level.
    pub confidence: f64,
    /// Monte Carlo replications averaged.
    pub replications: usize,
    /// Mean ratio of optimized population risk to the true minimum (>= 1).
    pub mean_risk_error: f64,
    /// Mean angle between optimized and true weights, degrees.
    pub mean_weight_error_deg: f64,
    /// Analytic boundary angle for this asset count, degrees.
    pub boundary_angle_deg: f64,
}

/// Angle between two weight vectors in degrees, from the clamped cosine
/// similarity.
pub fn weight_error_angle(w: &DVector<f64>, w_true: &DVector<f64>) -> Result<f64> {
    if w.len() != w_true.len() {
        return Err(Error::Validation(format!(
            "weight vectors of length {} and {}",
            w.len(),
            w_true.len()
        )));
    }
    let (na, nb) = (w.norm(), w_true.norm());
    if na < f64::MIN_POSITIVE || nb < f64::MIN_POSITIVE {
        return Err(Error::ZeroVector);
    }
    let cosine = (w.dot(w_true) / (na * nb)).clamp(-1.0, 1.0);
    Ok(cosine.acos().to_degrees())
}

/// Boundary angle of the n-dimensional feasibility simplex (n = assets - 1):
/// the half-volume ball around the equal-weight optimum subtends this angle.
/// Beyond it, a random guess is no worse than the optimizer.
///
/// The simplex of fully-invested nonnegative weights over n+1 assets has
/// n-volume `sqrt(n+1)/n!`; the ball radius solving
/// `pi^(n/2) r^n / Gamma(n/2+1) = V/2` and the equal-weight norm
/// `1/sqrt(n+1)` give `beta = atan(r sqrt(n+1))`.
pub fn boundary_angle(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("boundary angle needs n >= 1".into()));
    }
    let nf = n as f64;
    // ln V_feasible = 0.5 ln(n+1) - ln Gamma(n+1)
    let ln_v = 0.5 * (nf + 1.0).ln() - ln_gamma(nf + 1.0);
    // ln r = (ln(V/2) + ln Gamma(n/2+1) - (n/2) ln pi) / n
    let ln_r = (ln_v - std::f64::consts::LN_2 + ln_gamma(nf / 2.0 + 1.0)
        - nf / 2.0 * std::f64::consts::PI.ln())
        / nf;
    let r = ln_r.exp();
    Ok((r * (nf + 1.0).sqrt()).atan().to_degrees())
}

/// Mean angle between weights drawn uniformly from the standard simplex and
/// the equal-weight vector, in degrees.
pub fn random_weight_baseline(n_assets: usize, samples: usize, seed: u64) -> Result<f64> {
    if n_assets == 0 || samples == 0 {
        return Err(Error::InvalidParameter(
            "baseline needs n_assets >= 1 and samples >= 1".into(),
        ));
    }
    if n_assets == 1 {
        return Ok(0.0);
    }
    let equal = DVector::from_element(n_assets, 1.0 / n_assets as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..samples {
        // normalized Exp(1) draws are uniform on the simplex
        let mut w = DVector::from_fn(n_assets, |_, _| rng.sample::<f64, _>(Exp1));
        w /= w.sum();
        total += weight_error_angle(&w, &equal)?;
    }
    Ok(total / samples as f64)
}

/// Runs the full study grid: for each sample length, `replications`
/// simulated panels are drawn and shortfall-optimized at every confidence
/// level, reusing the same sample across confidences within a replication.
///
/// Replications run in parallel on independent seed streams derived from
/// `seed`; means are accumulated in replication order, so reports are
/// identical across thread counts.
pub fn run_estimation_study(
    n_assets: usize,
    sample_lengths: &[usize],
    confidences: &[f64],
    replications: usize,
    seed: u64,
) -> Result<Vec<TrialReport>> {
    if n_assets < 2 {
        return Err(Error::InvalidParameter("study needs at least 2 assets".into()));
    }
    if sample_lengths.is_empty() || confidences.is_empty() || replications == 0 {
        return Err(Error::InvalidParameter(
            "study needs sample lengths, confidences, and replications".into(),
        ));
    }
    for &t in sample_lengths {
        for &p in confidences {
            tail_count(t, p)?;
        }
    }

    let constraints = ConstraintSet::full_investment_long_only(n_assets);
    let equal = DVector::from_element(n_assets, 1.0 / n_assets as f64);
    let sigma_true = 1.0 / (n_assets as f64).sqrt();
    let boundary = boundary_angle(n_assets - 1)?;

    let mut reports = Vec::with_capacity(sample_lengths.len() * confidences.len());
    for (ti, &t) in sample_lengths.iter().enumerate() {
        let cell_seed = derive_seed(seed, ti as u64);
        // per replication: (weight error, risk error) for each confidence
        let per_rep: Vec<Result<Vec<(f64, f64)>>> = (0..replications)
            .into_par_iter()
            .map(|rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cell_seed, rep as u64));
                let sample = DMatrix::from_fn(t, n_assets, |_, _| {
                    rng.sample::<f64, _>(StandardNormal)
                });
                let scenarios = ScenarioSet::synthetic(sample);
                confidences
                    .iter()
                    .map(|&p| {
                        let result =
                            minimize_shortfall(&scenarios, p, &constraints).map_err(|e| {
                                Error::Numerical(format!(
                                    "trial T={t} p={p} replication {rep}: {e}"
                                ))
                            })?;
                        let angle = weight_error_angle(&result.weights, &equal)?;
                        // population risk of w over iid unit normals is ||w||
                        let risk = normal_shortfall(result.weights.norm(), p)?
                            / normal_shortfall(sigma_true, p)?;
                        Ok((angle, risk))
                    })
                    .collect()
            })
            .collect();

        let mut sums = vec![(0.0_f64, 0.0_f64); confidences.len()];
        for rep in per_rep {
            for (i, (angle, risk)) in rep?.into_iter().enumerate() {
                sums[i].0 += angle;
                sums[i].1 += risk;
            }
        }
        for (i, &p) in confidences.iter().enumerate() {
            reports.push(TrialReport {
                n_assets,
                sample_length: t,
                confidence: p,
                replications,
                mean_risk_error: sums[i].1 / replications as f64,
                mean_weight_error_deg: sums[i].0 / replications as f64,
                boundary_angle_deg: boundary,
            });
        }
    }
    Ok(reports)
}
