//! Covariance-normalized forecast return scenarios.
//!
//! Each historical observation is stripped of its own trailing covariance and
//! rescaled by the covariance prevailing on the analysis date: the normalized
//! residual is `g_t = Sigma_t^{-1/2} f_t` and the forecast scenario is
//! `Sigma_T^{1/2} g_t`. The first `warmup` observations only seed the initial
//! trailing estimate and are never emitted.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covariance::{
    effective_eigen_floor, ewma_covariance, matrix_inv_sqrt, matrix_sqrt, CovarianceEstimate,
};
use crate::data::{AnalysisConfig, ReturnPanel};
use crate::error::{Error, Result};

/// Forecast return scenarios for one analysis date.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    analysis_date: NaiveDate,
    names: Vec<String>,
    scenarios: DMatrix<f64>,
    source_dates: Vec<NaiveDate>,
}

impl ScenarioSet {
    /// Builds a scenario set, checking shape invariants.
    pub fn new(
        analysis_date: NaiveDate,
        names: Vec<String>,
        scenarios: DMatrix<f64>,
        source_dates: Vec<NaiveDate>,
    ) -> Result<Self> {
        if scenarios.nrows() == 0 {
            return Err(Error::Validation("scenario set must have at least one row".into()));
        }
        if scenarios.nrows() != source_dates.len() {
            return Err(Error::Validation(format!(
                "{} scenario rows but {} source dates",
                scenarios.nrows(),
                source_dates.len()
            )));
        }
        if scenarios.ncols() != names.len() {
            return Err(Error::Validation(format!(
                "{} scenario columns but {} names",
                scenarios.ncols(),
                names.len()
            )));
        }
        Ok(Self { analysis_date, names, scenarios, source_dates })
    }

    /// Scenario set over a bare matrix, for simulation studies: synthetic
    /// sequential source dates and generated column names.
    pub fn synthetic(scenarios: DMatrix<f64>) -> Self {
        let t = scenarios.nrows();
        let base = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let source_dates: Vec<NaiveDate> =
            (0..t).map(|i| base + chrono::Duration::days(i as i64)).collect();
        let names = (0..scenarios.ncols()).map(|j| format!("w{j}")).collect();
        Self {
            analysis_date: base + chrono::Duration::days(t as i64),
            names,
            scenarios,
            source_dates,
        }
    }

    /// The date the scenarios forecast.
    pub fn analysis_date(&self) -> NaiveDate {
        self.analysis_date
    }

    /// Column identifiers, matching the generating panel.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// T'×N matrix of forecast returns.
    pub fn scenarios(&self) -> &DMatrix<f64> {
        &self.scenarios
    }

    /// Historical date each scenario row came from.
    pub fn source_dates(&self) -> &[NaiveDate] {
        &self.source_dates
    }

    /// Number of scenarios T'.
    pub fn len(&self) -> usize {
        self.scenarios.nrows()
    }

    /// True when the set holds no scenarios (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.scenarios.nrows() == 0
    }

    /// Number of columns N.
    pub fn width(&self) -> usize {
        self.scenarios.ncols()
    }

    /// Re-expresses the set as a dated panel (source dates as the date
    /// column), e.g. for CSV export via [`crate::data::save_panel`].
    pub fn to_panel(&self) -> Result<ReturnPanel> {
        ReturnPanel::new(self.source_dates.clone(), self.names.clone(), self.scenarios.clone())
    }
}

/// Strips each dated observation of its trailing covariance:
/// `g_t = Sigma_t^{-1/2} f_t` with `Sigma_t` estimated from observations
/// strictly before t. Rows for the first `warmup` observations are excluded.
pub fn normalize_history(
    panel: &ReturnPanel,
    half_life_days: usize,
    warmup: usize,
    eigen_floor: f64,
) -> Result<ReturnPanel> {
    if warmup < 2 {
        return Err(Error::InvalidParameter("warmup must be >= 2 to seed the first covariance".into()));
    }
    if panel.len() <= warmup {
        return Err(Error::InsufficientHistory(format!(
            "panel has {} observations, warmup of {warmup} leaves none",
            panel.len()
        )));
    }
    let rows: Vec<Result<DVector<f64>>> = (warmup..panel.len())
        .into_par_iter()
        .map(|t| {
            let cov = ewma_covariance(panel, half_life_days, panel.dates()[t])?;
            let floor = effective_eigen_floor(&cov, eigen_floor);
            let q = matrix_inv_sqrt(&cov, floor)?;
            Ok(&q * panel.returns().row(t).transpose())
        })
        .collect();
    let mut normalized = DMatrix::zeros(panel.len() - warmup, panel.width());
    for (i, row) in rows.into_iter().enumerate() {
        normalized.set_row(i, &row?.transpose());
    }
    ReturnPanel::new(
        panel.dates()[warmup..].to_vec(),
        panel.names().to_vec(),
        normalized,
    )
}

/// Maps already-normalized residuals through the covariance of `cov_now`:
/// scenario rows are `Sigma_T^{1/2} g_t` for every normalized row dated
/// strictly before the estimate's as-of date.
///
/// This is the shared kernel of [`forecast_scenarios`]; backtests call it
/// directly so the expanding-window normalization is computed once.
pub fn scenarios_given_covariance(
    normalized: &ReturnPanel,
    cov_now: &CovarianceEstimate,
    eigen_floor: f64,
) -> Result<ScenarioSet> {
    let cut = normalized.rows_before(cov_now.as_of());
    if cut == 0 {
        return Err(Error::InsufficientHistory(format!(
            "no normalized observations before {}",
            cov_now.as_of()
        )));
    }
    let floor = effective_eigen_floor(cov_now, eigen_floor);
    let s = matrix_sqrt(cov_now, floor)?;
    let g = normalized.returns().rows(0, cut);
    let scenarios = g * s.transpose(); // (S g_t')' row-wise; S symmetric
    ScenarioSet::new(
        cov_now.as_of(),
        normalized.names().to_vec(),
        scenarios,
        normalized.dates()[..cut].to_vec(),
    )
}

/// Generates covariance-normalized forecast scenarios for `analysis_date`
/// from all panel history strictly before it.
pub fn forecast_scenarios(
    panel: &ReturnPanel,
    analysis_date: NaiveDate,
    config: &AnalysisConfig,
) -> Result<ScenarioSet> {
    config.validate()?;
    let warmup = config.warmup_observations;
    let count = panel.rows_before(analysis_date);
    if count <= warmup {
        return Err(Error::InsufficientHistory(format!(
            "{count} observations before {analysis_date}, need more than warmup {warmup}"
        )));
    }
    let prefix = crate::data::slice_window(panel, analysis_date, None)?;
    let normalized = normalize_history(&prefix, config.half_life_days, warmup, config.eigen_floor)?;
    let cov_now = ewma_covariance(panel, config.half_life_days, analysis_date)?;
    scenarios_given_covariance(&normalized, &cov_now, config.eigen_floor)
}
