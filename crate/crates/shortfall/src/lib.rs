//! Portfolio construction by expected-shortfall minimization.
//!
//! The crate covers the full workflow around shortfall-optimized portfolios:
//!
//! - [`data`] — dated return panels, validation, windowing, CSV and TOML I/O.
//! - [`covariance`] — zero-mean EWMA covariance and symmetric square-root /
//!   inverse-square-root kernels.
//! - [`scenario`] — covariance-normalized forecast scenarios: strip each
//!   historical observation of its trailing covariance, re-impose the
//!   current one.
//! - [`risk`] — empirical and Gaussian shortfall, the non-normality (NN)
//!   statistic with bootstrap confidence intervals, and realized-performance
//!   statistics.
//! - [`optimize`] — minimum-shortfall portfolios via a cutting-plane LP over
//!   the tail-sum linearization, minimum-variance via an active-set QP, the
//!   combined mean–variance–shortfall objective, and a brute-force grid
//!   oracle for small instances.
//! - [`esterror`] — the Monte Carlo estimation-error laboratory with the
//!   analytic feasibility-simplex boundary angle.
//! - [`backtest`] — rolling-rebalance comparison of minimum-shortfall and
//!   minimum-variance portfolios with attribution, realized-risk tables, and
//!   rolling betas.
//! - [`cli`] — the `shortfall` command-line front end.
//!
//! Every stochastic routine takes an explicit seed and produces identical
//! results regardless of thread count. See the `examples/` directory for one
//! runnable walkthrough per capability.

pub mod backtest;
pub mod cli;
pub mod covariance;
pub mod data;
pub mod error;
pub mod esterror;
pub mod math;
pub mod optimize;
pub mod risk;
pub mod scenario;
mod solver;

pub use crate::covariance::{ewma_covariance, matrix_inv_sqrt, matrix_sqrt, CovarianceEstimate};
pub use crate::data::{load_panel, save_panel, slice_window, AnalysisConfig, RebalanceFrequency, ReturnPanel};
pub use crate::error::{Error, Result};
pub use crate::optimize::{
    brute_force_shortfall, maximize_mean_variance_shortfall, minimize_shortfall,
    minimize_variance, ConstraintSet, ObjectiveSpec, OptimizationResult,
};
pub use crate::risk::{
    bootstrap_nn_ci, empirical_shortfall, nn_statistic, normal_shortfall, realized_volatility,
    rolling_beta, sharpe_ratio, NNReport, ShortfallValue, Tail,
};
pub use crate::scenario::{forecast_scenarios, normalize_history, ScenarioSet};
