//! The `shortfall` command-line front end.
//!
//! Four subcommands wrap the library workflows and emit plot-ready CSV and
//! JSON artifacts into an output directory:
//!
//! - `optimize` — solve minimum-variance and minimum-shortfall portfolios at
//!   one analysis date.
//! - `backtest` — the rolling-rebalance comparison with attribution, realized
//!   statistics, and rolling betas.
//! - `esterror` — the Monte Carlo estimation-error study grid.
//! - `nn` — non-normality statistics with bootstrap persistence tests across
//!   two periods.
//!
//! Exit codes: 0 success, 2 input error, 3 infeasible, 4 numerical failure.
//! Failures print one machine-readable JSON line on standard error. All
//! output is deterministic given (inputs, config, seed), regardless of
//! `--threads`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backtest::{
    confidence_label, realized_stats_table, return_attribution, run_backtest, BacktestConfig,
    BacktestReport,
};
use crate::covariance::ewma_covariance;
use crate::data::{load_panel, AnalysisConfig, ReturnPanel};
use crate::error::{Error, Result};
use crate::esterror::{boundary_angle, random_weight_baseline, run_estimation_study};
use crate::math::derive_seed;
use crate::optimize::{
    maximize_mean_variance_shortfall, minimize_shortfall, minimize_variance, ConstraintSet,
    ObjectiveSpec, OptimizationRecord,
};
use crate::risk::{bootstrap_nn_ci, Tail};
use crate::scenario::{forecast_scenarios, normalize_history};

/// Version tag embedded in every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "shortfall",
    version,
    about = "Shortfall-optimized portfolio construction toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve portfolio optimizations at one analysis date
    Optimize(OptimizeArgs),
    /// Run the rolling min-shortfall vs min-variance backtest
    Backtest(BacktestArgs),
    /// Run the Monte Carlo estimation-error study
    Esterror(EsterrorArgs),
    /// Compute non-normality statistics with bootstrap persistence tests
    Nn(NnArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Override the seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 keeps the library default. Results are identical
    /// for every setting.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Suppress progress messages
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Return panel CSV
    #[arg(long)]
    panel: PathBuf,
    /// Constraint specification TOML
    #[arg(long)]
    constraints: PathBuf,
    /// Analysis date (ISO-8601)
    #[arg(long)]
    date: String,
    /// Shortfall aversion for an additional combined solve
    #[arg(long)]
    shortfall_aversion: Option<f64>,
    /// Variance aversion for an additional combined solve
    #[arg(long)]
    variance_aversion: Option<f64>,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Return panel CSV
    #[arg(long)]
    panel: PathBuf,
    /// Override the configured start date
    #[arg(long)]
    start: Option<String>,
    /// Override the configured end date
    #[arg(long)]
    end: Option<String>,
    /// Override the configured index column
    #[arg(long)]
    index_column: Option<String>,
    /// Override the configured style bound
    #[arg(long)]
    style_bound: Option<f64>,
}

#[derive(Args)]
struct EsterrorArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the configured asset count
    #[arg(long)]
    n_assets: Option<usize>,
    /// Override the configured replication count
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Args)]
struct NnArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Return panel CSV
    #[arg(long)]
    panel: PathBuf,
    /// Split the panel into two periods at this date instead of using the
    /// config's period list
    #[arg(long)]
    split: Option<String>,
}

// ---------------------------------------------------------------------------
// config file sections
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct CliConfig {
    #[serde(flatten)]
    analysis: AnalysisConfig,
    backtest: Option<BacktestSection>,
    esterror: Option<EsterrorSection>,
    nn: Option<NnSection>,
}

#[derive(Debug, Deserialize)]
struct BacktestSection {
    start_date: NaiveDate,
    end_date: NaiveDate,
    index_column: String,
    #[serde(default = "default_style_bound")]
    style_bound: f64,
    #[serde(default)]
    regimes: Vec<RegimeSpec>,
}

fn default_style_bound() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
struct RegimeSpec {
    label: String,
    ranges: Vec<(NaiveDate, NaiveDate)>,
}

#[derive(Debug, Deserialize)]
struct EsterrorSection {
    n_assets: usize,
    sample_lengths: Vec<usize>,
    replications: usize,
    #[serde(default = "default_baseline_samples")]
    baseline_samples: usize,
}

fn default_baseline_samples() -> usize {
    100_000
}

#[derive(Debug, Deserialize)]
struct NnSection {
    #[serde(default)]
    periods: Vec<PeriodSpec>,
    #[serde(default = "default_replications")]
    replications: usize,
}

fn default_replications() -> usize {
    500
}

#[derive(Debug, Clone, Deserialize, Serialize)]
struct PeriodSpec {
    label: String,
    start: NaiveDate,
    end: NaiveDate,
}

fn load_cli_config(path: &Path) -> Result<CliConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let config: CliConfig = toml::from_str(&text)
        .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
    config.analysis.validate()?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// constraint specification
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct ConstraintFile {
    #[serde(default)]
    equality: Vec<RowSpec>,
    #[serde(default)]
    inequality: Vec<RowSpec>,
    #[serde(default)]
    bounds: BTreeMap<String, (f64, f64)>,
    style: Option<StyleSpec>,
}

#[derive(Debug, Deserialize)]
struct RowSpec {
    coeffs: BTreeMap<String, f64>,
    rhs: f64,
}

#[derive(Debug, Deserialize)]
struct StyleSpec {
    index_column: String,
    #[serde(default = "default_style_bound")]
    style_bound: f64,
}

fn build_constraints(path: &Path, names: &[String]) -> Result<ConstraintSet> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Validation(format!("cannot read constraints {}: {e}", path.display()))
    })?;
    let spec: ConstraintFile = toml::from_str(&text)
        .map_err(|e| Error::Validation(format!("constraints {}: {e}", path.display())))?;
    let position = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Validation(format!("unknown column '{name}' in constraints")))
    };
    let mut set = match &spec.style {
        Some(style) => {
            let index = position(&style.index_column)?;
            ConstraintSet::market_style(names.len(), index, style.style_bound)?
        }
        None => ConstraintSet::new(names.len()),
    };
    let expand = |row: &RowSpec| -> Result<Vec<f64>> {
        let mut coeffs = vec![0.0; names.len()];
        for (name, c) in &row.coeffs {
            coeffs[position(name)?] = *c;
        }
        Ok(coeffs)
    };
    for row in &spec.equality {
        set.add_equality(expand(row)?, row.rhs)?;
    }
    for row in &spec.inequality {
        set.add_inequality(expand(row)?, row.rhs)?;
    }
    for (name, (lo, hi)) in &spec.bounds {
        set.set_bounds(position(name)?, *lo, *hi)?;
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// output helpers
// ---------------------------------------------------------------------------

fn write_text(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("serializing {name}: {e}")))?;
    text.push('\n');
    write_text(dir, name, &text)
}

fn series_csv(dates: &[NaiveDate], columns: &[(&str, &[f64])]) -> String {
    let mut out = String::from("date");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, d) in dates.iter().enumerate() {
        let _ = write!(out, "{d}");
        for (_, values) in columns {
            let _ = write!(out, ",{}", values[i]);
        }
        out.push('\n');
    }
    out
}

fn parse_date(text: &str) -> Result<NaiveDate> {
    text.parse::<NaiveDate>()
        .map_err(|e| Error::Validation(format!("invalid date '{text}': {e}")))
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct OptimizeOutput {
    schema_version: u32,
    analysis_date: NaiveDate,
    names: Vec<String>,
    scenario_count: usize,
    results: BTreeMap<String, OptimizationRecord>,
}

fn cmd_optimize(args: &OptimizeArgs, config: &CliConfig) -> Result<()> {
    let panel = load_panel(&args.panel)?;
    let analysis_date = parse_date(&args.date)?;
    let constraints = build_constraints(&args.constraints, panel.names())?;
    let analysis = &config.analysis;

    let scenarios = forecast_scenarios(&panel, analysis_date, analysis)?;
    let covariance = ewma_covariance(&panel, analysis.half_life_days, analysis_date)?;

    let mut results = BTreeMap::new();
    let names = panel.names().to_vec();
    let minvar = minimize_variance(&covariance, &constraints)?;
    results.insert("minvar".to_string(), minvar.to_record(&names));
    for &p in &analysis.confidence_levels {
        let sf = minimize_shortfall(&scenarios, p, &constraints)?;
        results.insert(format!("xsf{}", confidence_label(p)), sf.to_record(&names));
    }
    let big_lambda = args.shortfall_aversion.unwrap_or(0.0);
    let lam = args.variance_aversion.unwrap_or(0.0);
    if big_lambda > 0.0 || lam > 0.0 {
        let spec = ObjectiveSpec {
            alpha: nalgebra::DVector::zeros(panel.width()),
            shortfall_aversion: big_lambda,
            variance_aversion: lam,
            confidence: analysis.confidence_levels[0],
        };
        let combined =
            maximize_mean_variance_shortfall(&scenarios, &covariance, &spec, &constraints)?;
        results.insert("combined".to_string(), combined.to_record(&names));
    }

    write_json(
        &args.common.out,
        "optimize.json",
        &OptimizeOutput {
            schema_version: SCHEMA_VERSION,
            analysis_date,
            names,
            scenario_count: scenarios.len(),
            results,
        },
    )
}

#[derive(Serialize)]
struct BacktestSummary {
    schema_version: u32,
    start_date: NaiveDate,
    end_date: NaiveDate,
    index_column: String,
    confidences: Vec<f64>,
    rebalance_count: usize,
    day_count: usize,
    realized_stats: Vec<crate::backtest::RealizedStats>,
}

fn cmd_backtest(args: &BacktestArgs, config: &CliConfig) -> Result<()> {
    let panel = load_panel(&args.panel)?;
    let section = config
        .backtest
        .as_ref()
        .ok_or_else(|| Error::Validation("config is missing a [backtest] section".into()))?;
    let analysis = &config.analysis;
    let bt_config = BacktestConfig {
        confidences: analysis.confidence_levels.clone(),
        rebalance_frequency: analysis.rebalance_frequency,
        half_life_days: analysis.half_life_days,
        start_date: match &args.start {
            Some(s) => parse_date(s)?,
            None => section.start_date,
        },
        end_date: match &args.end {
            Some(s) => parse_date(s)?,
            None => section.end_date,
        },
        index_column: args
            .index_column
            .clone()
            .unwrap_or_else(|| section.index_column.clone()),
        style_bound: args.style_bound.unwrap_or(section.style_bound),
        warmup_observations: analysis.warmup_observations,
        eigen_floor: analysis.eigen_floor,
    };
    let report = run_backtest(&panel, &bt_config)?;
    let out = &args.common.out;

    write_returns_files(out, &report)?;
    write_weights_files(out, &report)?;
    for &p in &report.confidences {
        let attribution = return_attribution(&report, p)?;
        let mut columns: Vec<(&str, Vec<f64>)> = Vec::new();
        for (j, name) in attribution.names.iter().enumerate() {
            columns.push((name, attribution.cumulative.column(j).iter().cloned().collect()));
        }
        let views: Vec<(&str, &[f64])> =
            columns.iter().map(|(n, v)| (*n, v.as_slice())).collect();
        write_text(
            out,
            &format!("attribution_xsf{}.csv", confidence_label(p)),
            &series_csv(&attribution.dates, &views),
        )?;
    }
    write_betas_file(out, &report)?;

    let regimes: Vec<(String, Vec<(NaiveDate, NaiveDate)>)> = if section.regimes.is_empty() {
        vec![(
            "full".to_string(),
            vec![(report.dates[0], *report.dates.last().unwrap())],
        )]
    } else {
        section
            .regimes
            .iter()
            .map(|r| (r.label.clone(), r.ranges.clone()))
            .collect()
    };
    let realized_stats = realized_stats_table(&report, &regimes)?;
    write_json(
        out,
        "summary.json",
        &BacktestSummary {
            schema_version: SCHEMA_VERSION,
            start_date: bt_config.start_date,
            end_date: bt_config.end_date,
            index_column: bt_config.index_column.clone(),
            confidences: report.confidences.clone(),
            rebalance_count: report.rebalances.len(),
            day_count: report.dates.len(),
            realized_stats,
        },
    )
}

fn write_returns_files(out: &Path, report: &BacktestReport) -> Result<()> {
    let mut files: Vec<(String, &[f64])> = vec![
        ("returns_index.csv".to_string(), report.index_returns.as_slice()),
        ("returns_minvar.csv".to_string(), report.min_variance_returns.as_slice()),
    ];
    for (c, p) in report.confidences.iter().enumerate() {
        files.push((
            format!("returns_xsf{}.csv", confidence_label(*p)),
            report.min_shortfall_returns[c].as_slice(),
        ));
        files.push((
            format!("returns_active{}.csv", confidence_label(*p)),
            report.active_returns[c].as_slice(),
        ));
    }
    for (name, series) in files {
        let simple = BacktestReport::cumulative_simple(series);
        let compounded = BacktestReport::cumulative_compounded(series);
        let csv = series_csv(
            &report.dates,
            &[
                ("return", series),
                ("cumulative_simple", &simple),
                ("cumulative_compounded", &compounded),
            ],
        );
        write_text(out, &name, &csv)?;
    }
    Ok(())
}

fn write_weights_files(out: &Path, report: &BacktestReport) -> Result<()> {
    let header = {
        let mut h = String::from("date");
        for name in &report.names {
            h.push(',');
            h.push_str(name);
        }
        h.push('\n');
        h
    };
    let mut minvar = header.clone();
    for reb in &report.rebalances {
        let _ = write!(minvar, "{}", reb.date);
        for w in reb.min_variance_weights.iter() {
            let _ = write!(minvar, ",{w}");
        }
        minvar.push('\n');
    }
    write_text(out, "weights_minvar.csv", &minvar)?;
    for (c, p) in report.confidences.iter().enumerate() {
        let mut text = header.clone();
        for reb in &report.rebalances {
            let _ = write!(text, "{}", reb.date);
            for w in reb.min_shortfall_weights[c].iter() {
                let _ = write!(text, ",{w}");
            }
            text.push('\n');
        }
        write_text(out, &format!("weights_xsf{}.csv", confidence_label(*p)), &text)?;
    }
    Ok(())
}

fn write_betas_file(out: &Path, report: &BacktestReport) -> Result<()> {
    let mut columns: Vec<(String, &[f64])> =
        vec![("minvar".to_string(), report.min_variance_beta.as_slice())];
    for (c, p) in report.confidences.iter().enumerate() {
        columns.push((
            format!("xsf{}", confidence_label(*p)),
            report.min_shortfall_beta[c].as_slice(),
        ));
    }
    let views: Vec<(&str, &[f64])> = columns.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    write_text(out, "betas.csv", &series_csv(&report.beta_dates, &views))
}

#[derive(Serialize)]
struct EsterrorSummary {
    schema_version: u32,
    n_assets: usize,
    sample_lengths: Vec<usize>,
    confidences: Vec<f64>,
    replications: usize,
    boundary_angle_deg: f64,
    random_baseline_deg: f64,
}

fn cmd_esterror(args: &EsterrorArgs, config: &CliConfig) -> Result<()> {
    let section = config
        .esterror
        .as_ref()
        .ok_or_else(|| Error::Validation("config is missing an [esterror] section".into()))?;
    let analysis = &config.analysis;
    let n_assets = args.n_assets.unwrap_or(section.n_assets);
    let replications = args.replications.unwrap_or(section.replications);
    let confidences = analysis.confidence_levels.clone();

    let reports = run_estimation_study(
        n_assets,
        &section.sample_lengths,
        &confidences,
        replications,
        analysis.seed,
    )?;

    // one CSV per metric: rows = sample lengths, columns = confidences
    let mut header = String::from("sample_length");
    for p in &confidences {
        let _ = write!(header, ",{p}");
    }
    header.push('\n');
    let mut risk_csv = header.clone();
    let mut weight_csv = header;
    for &t in &section.sample_lengths {
        let _ = write!(risk_csv, "{t}");
        let _ = write!(weight_csv, "{t}");
        for &p in &confidences {
            let report = reports
                .iter()
                .find(|r| r.sample_length == t && (r.confidence - p).abs() < 1e-12)
                .expect("report for every grid cell");
            let _ = write!(risk_csv, ",{}", report.mean_risk_error);
            let _ = write!(weight_csv, ",{}", report.mean_weight_error_deg);
        }
        risk_csv.push('\n');
        weight_csv.push('\n');
    }
    let out = &args.common.out;
    write_text(out, "risk_error.csv", &risk_csv)?;
    write_text(out, "weight_error.csv", &weight_csv)?;

    write_json(
        out,
        "summary.json",
        &EsterrorSummary {
            schema_version: SCHEMA_VERSION,
            n_assets,
            sample_lengths: section.sample_lengths.clone(),
            confidences,
            replications,
            boundary_angle_deg: boundary_angle(n_assets - 1)?,
            random_baseline_deg: random_weight_baseline(
                n_assets,
                section.baseline_samples,
                derive_seed(analysis.seed, 0xBA5E),
            )?,
        },
    )
}

#[derive(Serialize)]
struct NnSummary {
    schema_version: u32,
    periods: Vec<PeriodSpec>,
    replications: usize,
    confidences: Vec<f64>,
}

fn cmd_nn(args: &NnArgs, config: &CliConfig) -> Result<()> {
    let panel = load_panel(&args.panel)?;
    let analysis = &config.analysis;
    let replications = config.nn.as_ref().map(|s| s.replications).unwrap_or(500);

    let periods: Vec<PeriodSpec> = if let Some(split) = &args.split {
        let split = parse_date(split)?;
        let first = panel.dates()[0];
        let last = *panel.dates().last().unwrap();
        if split <= first || split > last {
            return Err(Error::Validation(format!(
                "split date {split} outside the panel range {first}..{last}"
            )));
        }
        vec![
            PeriodSpec {
                label: "period1".into(),
                start: first,
                end: split - chrono::Duration::days(1),
            },
            PeriodSpec { label: "period2".into(), start: split, end: last },
        ]
    } else {
        config
            .nn
            .as_ref()
            .map(|s| s.periods.clone())
            .unwrap_or_default()
    };
    if periods.len() != 2 {
        return Err(Error::Validation(
            "the nn command compares exactly two periods: pass --split or configure [nn] with two periods".into(),
        ));
    }

    // per factor: normalize each period's slice independently, then compare
    let mut rows = String::from(
        "name,tail,confidence,nn_a,ci_low_a,ci_high_a,nn_b,ci_low_b,ci_high_b,diff_low,diff_high,persistent\n",
    );
    for (j, name) in panel.names().iter().enumerate() {
        let mut period_residuals = Vec::new();
        for period in &periods {
            let g = period_residuals_for(&panel, j, period, analysis)?;
            period_residuals.push(g);
        }
        for (t_idx, tail) in [Tail::Loss, Tail::Gain].iter().enumerate() {
            for (p_idx, &p) in analysis.confidence_levels.iter().enumerate() {
                let stream = (j as u64) << 32 | (t_idx as u64) << 16 | p_idx as u64;
                let comparison = bootstrap_nn_ci(
                    &period_residuals[0],
                    &period_residuals[1],
                    p,
                    *tail,
                    replications,
                    derive_seed(analysis.seed, stream),
                )?;
                let a = &comparison.report_a;
                let b = &comparison.report_b;
                let _ = writeln!(
                    rows,
                    "{name},{},{p},{},{},{},{},{},{},{},{},{}",
                    tail.label(),
                    a.nn,
                    a.ci_low,
                    a.ci_high,
                    b.nn,
                    b.ci_low,
                    b.ci_high,
                    comparison.difference_ci.0,
                    comparison.difference_ci.1,
                    comparison.persistent
                );
            }
        }
    }
    let out = &args.common.out;
    write_text(out, "nn_report.csv", &rows)?;
    write_json(
        out,
        "summary.json",
        &NnSummary {
            schema_version: SCHEMA_VERSION,
            periods,
            replications,
            confidences: analysis.confidence_levels.clone(),
        },
    )
}

// Volatility-normalized residuals of one column over one period: the
// univariate specialization of the scenario normalization.
fn period_residuals_for(
    panel: &ReturnPanel,
    column: usize,
    period: &PeriodSpec,
    analysis: &AnalysisConfig,
) -> Result<Vec<f64>> {
    let lo = panel.dates().partition_point(|d| *d < period.start);
    let hi = panel.dates().partition_point(|d| *d <= period.end);
    if lo >= hi {
        return Err(Error::EmptyWindow(format!(
            "period '{}' covers no panel dates",
            period.label
        )));
    }
    let sub = ReturnPanel::new(
        panel.dates()[lo..hi].to_vec(),
        vec![panel.names()[column].clone()],
        panel.returns().view((lo, column), (hi - lo, 1)).into_owned(),
    )?;
    let normalized = normalize_history(
        &sub,
        analysis.half_life_days,
        analysis.warmup_observations,
        analysis.eigen_floor,
    )
    .map_err(|e| match e {
        Error::InsufficientHistory(m) => {
            Error::InsufficientHistory(format!("period '{}': {m}", period.label))
        }
        other => other,
    })?;
    Ok(normalized.returns().column(0).iter().cloned().collect())
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

fn dispatch(cli: &Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Optimize(a) => &a.common,
        Command::Backtest(a) => &a.common,
        Command::Esterror(a) => &a.common,
        Command::Nn(a) => &a.common,
    };
    let mut config = load_cli_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.analysis.seed = seed;
    }
    std::fs::create_dir_all(&common.out)?;

    let body = || -> Result<()> {
        match &cli.command {
            Command::Optimize(a) => cmd_optimize(a, &config),
            Command::Backtest(a) => cmd_backtest(a, &config),
            Command::Esterror(a) => cmd_esterror(a, &config),
            Command::Nn(a) => cmd_nn(a, &config),
        }
    };
    let result = if common.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
        pool.install(body)
    } else {
        body()
    };
    if result.is_ok() && !common.quiet {
        eprintln!("wrote results to {}", common.out.display());
    }
    result
}

/// Parses arguments and runs the requested command, returning the process
/// exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let payload = serde_json::json!({
                "error": {
                    "category": e.category(),
                    "message": e.to_string(),
                }
            });
            eprintln!("{payload}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_file_parses_with_style_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            r#"
[style]
index_column = "MKT"
style_bound = 1.5

[[inequality]]
coeffs = { S1 = 1.0 }
rhs = 0.5

[bounds]
S2 = [-0.25, 0.25]
"#,
        )
        .unwrap();
        let names = vec!["MKT".to_string(), "S1".to_string(), "S2".to_string()];
        let set = build_constraints(&path, &names).unwrap();
        assert_eq!(set.equalities().len(), 2);
        assert_eq!(set.inequalities().len(), 1);
        assert_eq!(set.bounds()[2], (-0.25, 0.25));
        assert_eq!(set.bounds()[1], (-1.5, 1.5));
    }

    #[test]
    fn constraint_file_rejects_unknown_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[[equality]]\ncoeffs = { NOPE = 1.0 }\nrhs = 0.0\n").unwrap();
        let names = vec!["MKT".to_string()];
        assert!(matches!(
            build_constraints(&path, &names),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn cli_config_flattens_analysis_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(
            &path,
            r#"
confidence_levels = [0.6, 0.95]
half_life_days = 21
rebalance_frequency = "monthly"
eigen_floor = 0.0
seed = 7
warmup_observations = 10

[backtest]
start_date = "2020-06-01"
end_date = "2020-12-31"
index_column = "MKT"
"#,
        )
        .unwrap();
        let config = load_cli_config(&path).unwrap();
        assert_eq!(config.analysis.seed, 7);
        let bt = config.backtest.unwrap();
        assert_eq!(bt.index_column, "MKT");
        assert_eq!(bt.style_bound, 2.0);
    }
}
