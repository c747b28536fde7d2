//! Rolling-rebalance backtests of minimum-shortfall versus minimum-variance
//! portfolios.
//!
//! At each rebalance date the engine builds the market-plus-styles constraint
//! set (index weight one, bounded dollar-neutral style exposures), estimates
//! the trailing EWMA covariance, generates covariance-normalized scenarios
//! from the expanding history, and solves both optimizers. Weights are held
//! in exposure space until the next rebalance; the active portfolio is long
//! minimum shortfall, short minimum variance. Everything an analysis needs
//! afterwards (weights, spans, factor returns) is stored on the report, so
//! every return is reproducible as an inner product.

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::ewma_covariance;
use crate::data::{RebalanceFrequency, ReturnPanel};
use crate::error::{Error, Result};
use crate::optimize::{minimize_shortfall, minimize_variance, ConstraintSet};
use crate::risk::{empirical_shortfall, realized_volatility, rolling_beta, sharpe_ratio};
use crate::scenario::{normalize_history, scenarios_given_covariance};

/// Trading days per year used for annualization.
pub const PERIODS_PER_YEAR: usize = 252;
/// Two years of daily observations, the default rolling-beta window.
pub const BETA_WINDOW: usize = 504;
/// Confidence level of the realized-shortfall column in stats tables.
pub const REALIZED_SHORTFALL_CONFIDENCE: f64 = 0.95;

/// Parameters of one backtest run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Shortfall confidence levels to run side by side.
    pub confidences: Vec<f64>,
    /// Rebalancing cadence.
    pub rebalance_frequency: RebalanceFrequency,
    /// EWMA half-life for covariance estimation and scenario rescaling.
    pub half_life_days: usize,
    /// First rebalance is the first qualifying date on or after this.
    pub start_date: NaiveDate,
    /// Last day of the evaluation window.
    pub end_date: NaiveDate,
    /// Panel column holding the market index.
    pub index_column: String,
    /// Style exposures are constrained to `[-style_bound, style_bound]`.
    pub style_bound: f64,
    /// Observations consumed before the first normalized residual.
    pub warmup_observations: usize,
    /// Absolute eigenvalue floor for scenario generation (0 = automatic).
    pub eigen_floor: f64,
}

impl BacktestConfig {
    fn validate(&self, panel: &ReturnPanel) -> Result<usize> {
        if self.confidences.is_empty() {
            return Err(Error::InvalidParameter("backtest needs at least one confidence".into()));
        }
        for &p in &self.confidences {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "confidence level {p} outside (0, 1)"
                )));
            }
        }
        if self.start_date >= self.end_date {
            return Err(Error::InvalidParameter(format!(
                "start date {} is not before end date {}",
                self.start_date, self.end_date
            )));
        }
        if self.half_life_days < 1 {
            return Err(Error::InvalidParameter("half_life_days must be >= 1".into()));
        }
        if self.warmup_observations < 2 {
            return Err(Error::InvalidParameter("warmup_observations must be >= 2".into()));
        }
        if !(self.style_bound > 0.0) {
            return Err(Error::InvalidParameter("style_bound must be positive".into()));
        }
        panel.column_index(&self.index_column).ok_or_else(|| {
            Error::Validation(format!("index column '{}' not in panel", self.index_column))
        })
    }
}

/// Weights chosen at one rebalance date.
#[derive(Debug, Clone)]
pub struct RebalanceRecord {
    /// The rebalance date (weights take effect from this day).
    pub date: NaiveDate,
    /// Half-open day-index range `[start, end)` into the report date axis.
    pub span: (usize, usize),
    /// Minimum-variance weights.
    pub min_variance_weights: DVector<f64>,
    /// Minimum-shortfall weights, one vector per confidence level.
    pub min_shortfall_weights: Vec<DVector<f64>>,
}

/// Everything a backtest produced, on one shared date axis.
#[derive(Debug, Clone)]
pub struct BacktestReport {
    /// Panel column names.
    pub names: Vec<String>,
    /// Position of the index column.
    pub index_position: usize,
    /// Confidence levels, in the order of the per-confidence series.
    pub confidences: Vec<f64>,
    /// Date axis: every panel date from the first rebalance through the end.
    pub dates: Vec<NaiveDate>,
    /// Panel rows over the date axis (factor returns behind every series).
    pub factor_returns: DMatrix<f64>,
    /// Daily index returns.
    pub index_returns: Vec<f64>,
    /// Daily minimum-variance strategy returns.
    pub min_variance_returns: Vec<f64>,
    /// Daily minimum-shortfall returns, indexed by confidence.
    pub min_shortfall_returns: Vec<Vec<f64>>,
    /// Daily active returns (shortfall minus variance), indexed by confidence.
    pub active_returns: Vec<Vec<f64>>,
    /// Weight history.
    pub rebalances: Vec<RebalanceRecord>,
    /// Rolling-beta window length.
    pub beta_window: usize,
    /// Dates of the rolling-beta series (suffix of the axis).
    pub beta_dates: Vec<NaiveDate>,
    /// Rolling beta of the minimum-variance strategy on the index.
    pub min_variance_beta: Vec<f64>,
    /// Rolling beta of each minimum-shortfall strategy on the index.
    pub min_shortfall_beta: Vec<Vec<f64>>,
}

/// Compact label for a confidence level: 0.6 -> "60", 0.975 -> "97_5".
pub fn confidence_label(p: f64) -> String {
    let pct = p * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}").replace('.', "_")
    }
}

fn rebalance_schedule(dates: &[NaiveDate], frequency: RebalanceFrequency) -> Vec<usize> {
    let mut schedule = Vec::new();
    let mut last_key: Option<(i32, u32)> = None;
    for (i, d) in dates.iter().enumerate() {
        let key = match frequency {
            RebalanceFrequency::Daily => {
                schedule.push(i);
                continue;
            }
            RebalanceFrequency::Weekly => {
                let iso = d.iso_week();
                (iso.year(), iso.week())
            }
            RebalanceFrequency::Monthly => (d.year(), d.month()),
            RebalanceFrequency::Quarterly => (d.year(), d.month0() / 3),
        };
        if last_key != Some(key) {
            schedule.push(i);
            last_key = Some(key);
        }
    }
    schedule
}

/// Runs the rolling backtest.
pub fn run_backtest(panel: &ReturnPanel, config: &BacktestConfig) -> Result<BacktestReport> {
    let index_position = config.validate(panel)?;
    let n = panel.width();

    // candidate dates: panel dates within [start, end]
    let axis_start = panel.dates().partition_point(|d| *d < config.start_date);
    let axis_end = panel.dates().partition_point(|d| *d <= config.end_date);
    if axis_start >= axis_end {
        return Err(Error::EmptyWindow(format!(
            "no panel dates between {} and {}",
            config.start_date, config.end_date
        )));
    }
    let candidate_dates: Vec<NaiveDate> = panel.dates()[axis_start..axis_end].to_vec();
    let schedule = rebalance_schedule(&candidate_dates, config.rebalance_frequency);
    debug_assert!(!schedule.is_empty());

    let first_rebalance = candidate_dates[schedule[0]];
    if panel.rows_before(first_rebalance) <= config.warmup_observations {
        return Err(Error::InsufficientHistory(format!(
            "{} observations before the first rebalance {}, need more than warmup {}",
            panel.rows_before(first_rebalance),
            first_rebalance,
            config.warmup_observations
        )));
    }

    // Normalized residuals are prefix-determined, so one pass serves every
    // expanding rebalance window.
    let normalized = normalize_history(
        panel,
        config.half_life_days,
        config.warmup_observations,
        config.eigen_floor,
    )?;
    let constraints = ConstraintSet::market_style(n, index_position, config.style_bound)?;

    // The report axis starts at the first rebalance.
    let report_start = axis_start + schedule[0];
    let dates: Vec<NaiveDate> = panel.dates()[report_start..axis_end].to_vec();
    let t_axis = dates.len();
    let factor_returns = panel.returns().rows(report_start, t_axis).into_owned();

    let mut rebalances = Vec::with_capacity(schedule.len());
    for (k, &axis_idx) in schedule.iter().enumerate() {
        let date = candidate_dates[axis_idx];
        let context = |e: Error| match e {
            Error::Infeasible(m) => Error::Infeasible(format!("rebalance {date}: {m}")),
            Error::Unbounded(m) => Error::Unbounded(format!("rebalance {date}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("rebalance {date}: {m}")),
            other => other,
        };
        let cov = ewma_covariance(panel, config.half_life_days, date).map_err(context)?;
        let scen =
            scenarios_given_covariance(&normalized, &cov, config.eigen_floor).map_err(context)?;
        let min_variance = minimize_variance(&cov, &constraints).map_err(context)?;
        let mut min_shortfall_weights = Vec::with_capacity(config.confidences.len());
        for &p in &config.confidences {
            let sf = minimize_shortfall(&scen, p, &constraints).map_err(context)?;
            min_shortfall_weights.push(sf.weights);
        }
        let span_start = axis_idx - schedule[0];
        let span_end = schedule
            .get(k + 1)
            .map(|&next| next - schedule[0])
            .unwrap_or(t_axis);
        rebalances.push(RebalanceRecord {
            date,
            span: (span_start, span_end),
            min_variance_weights: min_variance.weights,
            min_shortfall_weights,
        });
    }

    // Daily strategy returns: inner product of held weights with the day's row.
    let n_conf = config.confidences.len();
    let mut index_returns = vec![0.0; t_axis];
    let mut min_variance_returns = vec![0.0; t_axis];
    let mut min_shortfall_returns = vec![vec![0.0; t_axis]; n_conf];
    let mut active_returns = vec![vec![0.0; t_axis]; n_conf];
    for record in &rebalances {
        for day in record.span.0..record.span.1 {
            let row = factor_returns.row(day).transpose();
            index_returns[day] = row[index_position];
            let mv = record.min_variance_weights.dot(&row);
            min_variance_returns[day] = mv;
            for (c, weights) in record.min_shortfall_weights.iter().enumerate() {
                let sf = weights.dot(&row);
                min_shortfall_returns[c][day] = sf;
                active_returns[c][day] = sf - mv;
            }
        }
    }

    let (beta_dates, min_variance_beta) =
        rolling_beta(&dates, &min_variance_returns, &index_returns, BETA_WINDOW)?;
    let mut min_shortfall_beta = Vec::with_capacity(n_conf);
    for series in &min_shortfall_returns {
        let (_, betas) = rolling_beta(&dates, series, &index_returns, BETA_WINDOW)?;
        min_shortfall_beta.push(betas);
    }

    Ok(BacktestReport {
        names: panel.names().to_vec(),
        index_position,
        confidences: config.confidences.clone(),
        dates,
        factor_returns,
        index_returns,
        min_variance_returns,
        min_shortfall_returns,
        active_returns,
        rebalances,
        beta_window: BETA_WINDOW,
        beta_dates,
        min_variance_beta,
        min_shortfall_beta,
    })
}

impl BacktestReport {
    /// Position of the requested confidence level.
    pub fn confidence_index(&self, confidence: f64) -> Result<usize> {
        self.confidences
            .iter()
            .position(|p| (p - confidence).abs() < 1e-12)
            .ok_or(Error::UnknownConfidence(confidence))
    }

    fn record_for_day(&self, day: usize) -> &RebalanceRecord {
        // spans partition the axis; linear scan is fine at rebalance counts
        self.rebalances
            .iter()
            .find(|r| day >= r.span.0 && day < r.span.1)
            .expect("axis day covered by a rebalance span")
    }

    /// Simple-sum cumulative series of a daily series.
    pub fn cumulative_simple(series: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        series
            .iter()
            .map(|r| {
                acc += r;
                acc
            })
            .collect()
    }

    /// Compounded cumulative series of a daily series.
    pub fn cumulative_compounded(series: &[f64]) -> Vec<f64> {
        let mut acc = 1.0;
        series
            .iter()
            .map(|r| {
                acc *= 1.0 + r;
                acc - 1.0
            })
            .collect()
    }
}

/// Per-factor cumulative contributions to the active return.
#[derive(Debug, Clone)]
pub struct Attribution {
    /// Confidence level of the active portfolio attributed.
    pub confidence: f64,
    /// Date axis, shared with the report.
    pub dates: Vec<NaiveDate>,
    /// Factor names, one column per factor.
    pub names: Vec<String>,
    /// Running simple-sum contribution of each factor: the prevailing excess
    /// exposure times the factor return, accumulated day by day.
    pub cumulative: DMatrix<f64>,
}

/// Attributes the active return of one confidence level to factors: each
/// factor contributes its excess exposure times its return, held piecewise
/// over rebalance spans and summed without compounding. Factor contributions
/// add up to the simple-sum active return.
pub fn return_attribution(report: &BacktestReport, confidence: f64) -> Result<Attribution> {
    let conf_idx = report.confidence_index(confidence)?;
    let t = report.dates.len();
    let n = report.names.len();
    let mut cumulative = DMatrix::zeros(t, n);
    let mut running = DVector::zeros(n);
    for day in 0..t {
        let record = report.record_for_day(day);
        let excess = &record.min_shortfall_weights[conf_idx] - &record.min_variance_weights;
        for j in 0..n {
            running[j] += excess[j] * report.factor_returns[(day, j)];
        }
        cumulative.set_row(day, &running.transpose());
    }
    Ok(Attribution {
        confidence,
        dates: report.dates.clone(),
        names: report.names.clone(),
        cumulative,
    })
}

/// One row of the realized-statistics table.
#[derive(Debug, Clone, Serialize)]
pub struct RealizedStats {
    /// Strategy label (index, minvar, xsf60, active60, ...).
    pub strategy: String,
    /// Regime label.
    pub regime: String,
    /// Annualized realized volatility.
    pub volatility: f64,
    /// Realized Sharpe ratio; absent for a flat series.
    pub sharpe: Option<f64>,
    /// Realized 95% shortfall of daily returns.
    pub shortfall_95: f64,
}

/// Realized volatility, Sharpe ratio, and 95% shortfall per strategy and
/// regime. Regimes are labeled lists of inclusive date ranges; membership is
/// assigned by date.
pub fn realized_stats_table(
    report: &BacktestReport,
    regimes: &[(String, Vec<(NaiveDate, NaiveDate)>)],
) -> Result<Vec<RealizedStats>> {
    let mut strategies: Vec<(String, &[f64])> = vec![
        ("index".to_string(), report.index_returns.as_slice()),
        ("minvar".to_string(), report.min_variance_returns.as_slice()),
    ];
    for (c, p) in report.confidences.iter().enumerate() {
        strategies.push((
            format!("xsf{}", confidence_label(*p)),
            report.min_shortfall_returns[c].as_slice(),
        ));
    }
    for (c, p) in report.confidences.iter().enumerate() {
        strategies.push((
            format!("active{}", confidence_label(*p)),
            report.active_returns[c].as_slice(),
        ));
    }

    let mut table = Vec::new();
    for (regime_label, ranges) in regimes {
        let mask: Vec<usize> = report
            .dates
            .iter()
            .enumerate()
            .filter(|(_, d)| ranges.iter().any(|(lo, hi)| *d >= lo && *d <= hi))
            .map(|(i, _)| i)
            .collect();
        if mask.is_empty() {
            return Err(Error::EmptyRegime(format!(
                "regime '{regime_label}' covers no backtest dates"
            )));
        }
        for (strategy, series) in &strategies {
            let returns: Vec<f64> = mask.iter().map(|&i| series[i]).collect();
            let volatility = realized_volatility(&returns, PERIODS_PER_YEAR)?;
            let sharpe = match sharpe_ratio(&returns, PERIODS_PER_YEAR) {
                Ok(v) => Some(v),
                Err(Error::ZeroVolatility) => None,
                Err(e) => return Err(e),
            };
            let shortfall_95 =
                empirical_shortfall(&returns, REALIZED_SHORTFALL_CONFIDENCE)?.value;
            table.push(RealizedStats {
                strategy: strategy.clone(),
                regime: regime_label.clone(),
                volatility,
                sharpe,
                shortfall_95,
            });
        }
    }
    Ok(table)
}
