//! Dated return panels and run configuration.
//!
//! Everything downstream consumes a validated [`ReturnPanel`]: dates strictly
//! increasing, no missing values, unique column names. The panel never invents
//! calendar dates — the trading calendar is whatever the input file contains.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dated T×N matrix of simple per-period returns (0.01 = 1%).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    names: Vec<String>,
    returns: DMatrix<f64>,
}

impl ReturnPanel {
    /// Builds a panel, enforcing the structural invariants.
    pub fn new(dates: Vec<NaiveDate>, names: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        if dates.is_empty() || names.is_empty() {
            return Err(Error::Validation("panel must have T >= 1 and N >= 1".into()));
        }
        if dates.len() != returns.nrows() {
            return Err(Error::Validation(format!(
                "{} dates but {} return rows",
                dates.len(),
                returns.nrows()
            )));
        }
        if names.len() != returns.ncols() {
            return Err(Error::Validation(format!(
                "{} names but {} return columns",
                names.len(),
                returns.ncols()
            )));
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation(format!(
                    "dates not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Validation(format!("column {} has an empty name", i + 1)));
            }
            if names[..i].contains(name) {
                return Err(Error::Validation(format!("duplicate column name '{name}'")));
            }
        }
        if let Some(bad) = returns.iter().position(|v| !v.is_finite()) {
            let (r, c) = (bad % returns.nrows(), bad / returns.nrows());
            return Err(Error::Validation(format!(
                "non-finite return at date {}, column '{}'",
                dates[r], names[c]
            )));
        }
        Ok(Self { dates, names, returns })
    }

    /// Calendar dates, one per row, strictly increasing.
    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// Column identifiers in file order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// The T×N return matrix.
    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    /// Number of observations T.
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    /// True when the panel holds no rows (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Number of columns N.
    pub fn width(&self) -> usize {
        self.names.len()
    }

    /// Position of a named column.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Number of rows dated strictly before `date`.
    pub fn rows_before(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }
}

/// Returns all rows dated strictly before `end_date` (an expanding window),
/// truncated to the most recent `max_length` rows when given.
///
/// The strict inequality is the no-look-ahead convention: data dated on the
/// analysis date is never visible to that date's estimates.
pub fn slice_window(
    panel: &ReturnPanel,
    end_date: NaiveDate,
    max_length: Option<usize>,
) -> Result<ReturnPanel> {
    if let Some(0) = max_length {
        return Err(Error::InvalidParameter("max_length must be positive".into()));
    }
    let end = panel.rows_before(end_date);
    if end == 0 {
        return Err(Error::EmptyWindow(format!("no observations before {end_date}")));
    }
    let start = match max_length {
        Some(m) => end.saturating_sub(m),
        None => 0,
    };
    ReturnPanel::new(
        panel.dates[start..end].to_vec(),
        panel.names.clone(),
        panel.returns.rows(start, end - start).into_owned(),
    )
}

/// Reads a `date,<name1>,...,<nameN>` CSV file into a validated panel.
pub fn load_panel(path: &Path) -> Result<ReturnPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Validation(format!("cannot open {}: {e}", path.display())),
            _ => Error::Parse {
                row: 0,
                column: 1,
                column_name: String::new(),
                message: e.to_string(),
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: 1,
            column_name: String::new(),
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || !headers[0].eq_ignore_ascii_case("date") {
        return Err(Error::Parse {
            row: 0,
            column: 1,
            column_name: headers.get(0).unwrap_or("").to_string(),
            message: "first header column must be 'date'".into(),
        });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::Validation("panel has no return columns".into()));
    }

    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 1,
            column_name: "date".into(),
            message: e.to_string(),
        })?;
        if record.len() != names.len() + 1 {
            return Err(Error::Parse {
                row,
                column: record.len(),
                column_name: String::new(),
                message: format!("expected {} fields, found {}", names.len() + 1, record.len()),
            });
        }
        let date = record[0].parse::<NaiveDate>().map_err(|e| Error::Parse {
            row,
            column: 1,
            column_name: "date".into(),
            message: format!("invalid ISO-8601 date '{}': {e}", &record[0]),
        })?;
        dates.push(date);
        for (j, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                return Err(Error::Parse {
                    row,
                    column: j + 2,
                    column_name: names[j].clone(),
                    message: "empty cell".into(),
                });
            }
            let v = cell.parse::<f64>().map_err(|e| Error::Parse {
                row,
                column: j + 2,
                column_name: names[j].clone(),
                message: format!("invalid number '{cell}': {e}"),
            })?;
            values.push(v);
        }
    }
    if dates.is_empty() {
        return Err(Error::Validation("panel has no data rows".into()));
    }
    let returns = DMatrix::from_row_slice(dates.len(), names.len(), &values);
    ReturnPanel::new(dates, names, returns)
}

/// Writes a panel in the same CSV layout `load_panel` reads.
///
/// Values are written in shortest round-trip form, so reload reproduces them
/// bit for bit.
pub fn save_panel(panel: &ReturnPanel, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("date");
    for name in panel.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, date) in panel.dates().iter().enumerate() {
        let _ = write!(out, "{date}");
        for j in 0..panel.width() {
            let _ = write!(out, ",{}", panel.returns()[(i, j)]);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// How often the backtest re-solves for new weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RebalanceFrequency {
    Daily,
    Weekly,
    Monthly,
    Quarterly,
}

/// Parameters shared by all analysis workflows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Shortfall confidence levels, each in (0, 1).
    pub confidence_levels: Vec<f64>,
    /// EWMA half-life in observations.
    pub half_life_days: usize,
    /// Rebalancing cadence for backtests.
    pub rebalance_frequency: RebalanceFrequency,
    /// Absolute eigenvalue floor for covariance square roots; 0 selects the
    /// automatic relative floor of 1e-12 times the largest eigenvalue.
    pub eigen_floor: f64,
    /// Master seed for every stochastic procedure.
    pub seed: u64,
    /// Observations consumed to seed the first trailing covariance.
    pub warmup_observations: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            confidence_levels: vec![0.60, 0.95],
            half_life_days: 21,
            rebalance_frequency: RebalanceFrequency::Monthly,
            eigen_floor: 0.0,
            seed: 0,
            warmup_observations: 252,
        }
    }
}

impl AnalysisConfig {
    /// Checks the field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.confidence_levels.is_empty() {
            return Err(Error::InvalidParameter("confidence_levels must be nonempty".into()));
        }
        for &p in &self.confidence_levels {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "confidence level {p} outside (0, 1)"
                )));
            }
        }
        if self.half_life_days < 1 {
            return Err(Error::InvalidParameter("half_life_days must be >= 1".into()));
        }
        if self.warmup_observations < 2 {
            return Err(Error::InvalidParameter("warmup_observations must be >= 2".into()));
        }
        if !(self.eigen_floor >= 0.0 && self.eigen_floor.is_finite()) {
            return Err(Error::InvalidParameter("eigen_floor must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Loads and validates a flat TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: AnalysisConfig = toml::from_str(&text)
            .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn panel_10x1() -> ReturnPanel {
        let dates: Vec<NaiveDate> = (1..=10).map(|d| date(&format!("2020-01-{d:02}"))).collect();
        ReturnPanel::new(
            dates,
            vec!["a".into()],
            DMatrix::from_fn(10, 1, |i, _| 0.001 * (i + 1) as f64),
        )
        .unwrap()
    }

    #[test]
    fn well_formed_csv_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "date,a,b\n2020-01-01,0.01,-0.02\n2020-01-02,0.0,0.005\n2020-01-03,0.003,0.004\n").unwrap();
        let panel = load_panel(&path).unwrap();
        assert_eq!(panel.len(), 3);
        assert_eq!(panel.width(), 2);
        assert_eq!(panel.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(panel.returns()[(0, 1)], -0.02);
    }

    #[test]
    fn out_of_order_dates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "date,a\n2020-01-02,0.01\n2020-01-01,0.02\n").unwrap();
        match load_panel(&path) {
            Err(Error::Validation(msg)) => assert!(msg.contains("strictly increasing"), "{msg}"),
            other => panic!("expected ValidationError, got {other:?}"),
        }
    }

    #[test]
    fn empty_cell_names_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "date,a,b\n2020-01-01,0.01,\n").unwrap();
        match load_panel(&path) {
            Err(Error::Parse { row, column, column_name, .. }) => {
                assert_eq!((row, column), (1, 3));
                assert_eq!(column_name, "b");
            }
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn nan_cell_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "date,a\n2020-01-01,NaN\n").unwrap();
        assert!(matches!(load_panel(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let dates = vec![date("2020-01-01")];
        let err = ReturnPanel::new(
            dates,
            vec!["a".into(), "a".into()],
            DMatrix::from_row_slice(1, 2, &[0.0, 0.0]),
        );
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn slice_window_full_and_strict_boundary() {
        let panel = panel_10x1();
        let all = slice_window(&panel, date("2020-02-01"), None).unwrap();
        assert_eq!(all.len(), 10);

        // end_date equal to row 5's date keeps rows 1..4 only
        let w = slice_window(&panel, date("2020-01-05"), None).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(*w.dates().last().unwrap(), date("2020-01-04"));
    }

    #[test]
    fn slice_window_max_length() {
        let panel = panel_10x1();
        let w = slice_window(&panel, date("2020-02-01"), Some(3)).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.dates()[0], date("2020-01-08"));
    }

    #[test]
    fn slice_window_empty_errors() {
        let panel = panel_10x1();
        assert!(matches!(
            slice_window(&panel, date("2020-01-01"), None),
            Err(Error::EmptyWindow(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let dates = vec![date("2020-01-01"), date("2020-01-02"), date("2020-01-03")];
        let returns = DMatrix::from_row_slice(
            3,
            2,
            &[0.1, -0.25e-3, 1.0 / 3.0, f64::MIN_POSITIVE, -1.2345678901234567e-5, 0.0],
        );
        let panel = ReturnPanel::new(dates, vec!["x".into(), "y".into()], returns).unwrap();
        save_panel(&panel, &path).unwrap();
        let reloaded = load_panel(&path).unwrap();
        assert_eq!(reloaded.dates(), panel.dates());
        assert_eq!(reloaded.names(), panel.names());
        for (a, b) in reloaded.returns().iter().zip(panel.returns().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = AnalysisConfig::default();
        cfg.validate().unwrap();
        cfg.confidence_levels = vec![1.0];
        assert!(cfg.validate().is_err());
        cfg.confidence_levels = vec![0.95];
        cfg.warmup_observations = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let text = "confidence_levels = [0.6, 0.95]\nhalf_life_days = 21\nrebalance_frequency = \"monthly\"\neigen_floor = 0.0\nseed = 42\nwarmup_observations = 252\n";
        let cfg: AnalysisConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.rebalance_frequency, RebalanceFrequency::Monthly);
    }
}
