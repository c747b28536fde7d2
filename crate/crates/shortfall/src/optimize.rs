//! Constrained portfolio optimization.
//!
//! Minimum shortfall solves the tail-sum linearization of the empirical
//! estimator: the epigraph master problem accumulates cuts of the form
//! `u >= -(1/K) sum_{i in S} w'r_i`, one per tail set S encountered, and the
//! separation oracle is a partial sort of the portfolio returns. The master
//! value is a lower bound on the true minimum and the estimator at the master
//! point is an upper bound, so the loop carries its own optimality
//! certificate. Minimum variance is an active-set QP with a KKT certificate.
//!
//! Weights beyond `TRUST_BOX` in magnitude are treated as unbounded: the
//! master problems box every variable there, and a solution resting on the
//! box reports `Error::Unbounded`.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::covariance::CovarianceEstimate;
use crate::error::{Error, Result};
use crate::risk::{self, ShortfallValue};
use crate::scenario::ScenarioSet;
use crate::solver::{qp, simplex};

const TRUST_BOX: f64 = 1e3;
const FEASIBILITY_TOL: f64 = 1e-7;
const GAP_REL_TOL: f64 = 1e-9;
const MAX_CUTS: usize = 2_000;

/// Linear equalities, inequalities, and per-variable bounds on weights.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    n: usize,
    equalities: Vec<(DVector<f64>, f64)>,
    inequalities: Vec<(DVector<f64>, f64)>,
    bounds: Vec<(f64, f64)>,
}

impl ConstraintSet {
    /// An empty constraint set over `n` unbounded variables.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
        }
    }

    /// Number of variables.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds `coeffs'w = rhs`.
    pub fn add_equality(&mut self, coeffs: Vec<f64>, rhs: f64) -> Result<()> {
        self.check_row(&coeffs, rhs)?;
        self.equalities.push((DVector::from_vec(coeffs), rhs));
        Ok(())
    }

    /// Adds `coeffs'w <= rhs`.
    pub fn add_inequality(&mut self, coeffs: Vec<f64>, rhs: f64) -> Result<()> {
        self.check_row(&coeffs, rhs)?;
        self.inequalities.push((DVector::from_vec(coeffs), rhs));
        Ok(())
    }

    fn check_row(&self, coeffs: &[f64], rhs: f64) -> Result<()> {
        if coeffs.len() != self.n {
            return Err(Error::Validation(format!(
                "constraint has {} coefficients for {} variables",
                coeffs.len(),
                self.n
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) || !rhs.is_finite() {
            return Err(Error::Validation("constraint coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Sets `lower <= w[var] <= upper`; infinities leave a side open.
    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> Result<()> {
        if var >= self.n {
            return Err(Error::Validation(format!("variable {var} out of range")));
        }
        if lower > upper {
            return Err(Error::Validation(format!(
                "bounds for variable {var}: lower {lower} > upper {upper}"
            )));
        }
        self.bounds[var] = (lower, upper);
        Ok(())
    }

    /// Full investment: weights sum to one.
    pub fn full_investment(n: usize) -> Self {
        let mut c = Self::new(n);
        c.add_equality(vec![1.0; n], 1.0).expect("valid row");
        c
    }

    /// Full investment with nonnegative weights.
    pub fn full_investment_long_only(n: usize) -> Self {
        let mut c = Self::full_investment(n);
        for j in 0..n {
            c.set_bounds(j, 0.0, f64::INFINITY).expect("valid bounds");
        }
        c
    }

    /// The market-plus-style-factor constraint set: the index weight is fixed
    /// at one, each style exposure lies in `[-style_bound, style_bound]`, and
    /// style exposures sum to zero (dollar-neutral active bets).
    pub fn market_style(n: usize, index: usize, style_bound: f64) -> Result<Self> {
        if index >= n {
            return Err(Error::Validation(format!("index position {index} out of range")));
        }
        if !(style_bound > 0.0) {
            return Err(Error::InvalidParameter("style_bound must be positive".into()));
        }
        let mut c = Self::new(n);
        let mut index_row = vec![0.0; n];
        index_row[index] = 1.0;
        c.add_equality(index_row, 1.0)?;
        if n > 1 {
            let mut style_sum = vec![1.0; n];
            style_sum[index] = 0.0;
            c.add_equality(style_sum, 0.0)?;
        }
        for j in 0..n {
            if j != index {
                c.set_bounds(j, -style_bound, style_bound)?;
            }
        }
        Ok(c)
    }

    /// Equality rows.
    pub fn equalities(&self) -> &[(DVector<f64>, f64)] {
        &self.equalities
    }

    /// Inequality rows.
    pub fn inequalities(&self) -> &[(DVector<f64>, f64)] {
        &self.inequalities
    }

    /// Per-variable bounds.
    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Largest violation of any equality, inequality, or bound at `w`.
    pub fn violation(&self, w: &DVector<f64>) -> f64 {
        let mut worst = 0.0_f64;
        for (a, b) in &self.equalities {
            worst = worst.max((a.dot(w) - b).abs());
        }
        for (a, b) in &self.inequalities {
            worst = worst.max(a.dot(w) - b);
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            worst = worst.max(lo - w[j]).max(w[j] - hi);
        }
        worst
    }
}

/// Objective weights for the combined mean–variance–shortfall problem.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    /// Expected returns; all zeros for pure risk minimization.
    pub alpha: DVector<f64>,
    /// Shortfall aversion Λ.
    pub shortfall_aversion: f64,
    /// Variance aversion λ.
    pub variance_aversion: f64,
    /// Shortfall confidence level p.
    pub confidence: f64,
}

impl ObjectiveSpec {
    fn validate(&self, n: usize) -> Result<()> {
        if self.alpha.len() != n {
            return Err(Error::Validation(format!(
                "alpha has {} entries for {} variables",
                self.alpha.len(),
                n
            )));
        }
        if !(self.shortfall_aversion >= 0.0 && self.variance_aversion >= 0.0) {
            return Err(Error::InvalidParameter("aversion parameters must be >= 0".into()));
        }
        let alpha_zero = self.alpha.iter().all(|a| *a == 0.0);
        if alpha_zero && self.shortfall_aversion == 0.0 && self.variance_aversion == 0.0 {
            return Err(Error::InvalidParameter(
                "pure risk minimization needs a positive aversion parameter".into(),
            ));
        }
        Ok(())
    }
}

/// Solver quality diagnostics attached to every result.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// Largest constraint violation at the returned weights.
    pub feasibility_residual: f64,
    /// Optimality certificate: the bound gap for cutting-plane solves, the
    /// KKT stationarity residual for QP solves; absent for the grid oracle.
    pub optimality_gap: Option<f64>,
    /// Iterations of the underlying method.
    pub iterations: usize,
}

/// Optimal weights with objective value and certificates.
#[derive(Debug, Clone)]
pub struct OptimizationResult {
    /// Optimal weight vector.
    pub weights: DVector<f64>,
    /// Value of the solved objective (shortfall for [`minimize_shortfall`],
    /// variance for [`minimize_variance`], the maximized combined objective
    /// for [`maximize_mean_variance_shortfall`]).
    pub objective_value: f64,
    /// Empirical shortfall at the returned weights, when scenarios were part
    /// of the problem.
    pub shortfall: Option<ShortfallValue>,
    /// `w'Σw` at the returned weights, when a covariance was part of the
    /// problem.
    pub variance: Option<f64>,
    /// Quality certificates.
    pub diagnostics: Diagnostics,
}

/// Flat serializable form of a result, keyed by column names.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizationRecord {
    /// Weights by column name.
    pub weights: BTreeMap<String, f64>,
    /// Objective value.
    pub objective_value: f64,
    /// Empirical shortfall, when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shortfall: Option<ShortfallValue>,
    /// Portfolio variance, when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    /// Solver diagnostics.
    pub diagnostics: Diagnostics,
}

impl OptimizationResult {
    /// Flattens the result into a record keyed by the given names.
    pub fn to_record(&self, names: &[String]) -> OptimizationRecord {
        let weights = names
            .iter()
            .cloned()
            .zip(self.weights.iter().cloned())
            .collect();
        OptimizationRecord {
            weights,
            objective_value: self.objective_value,
            shortfall: self.shortfall,
            variance: self.variance,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// cutting-plane engine
// ---------------------------------------------------------------------------

struct CutEngine<'a> {
    scenarios: &'a DMatrix<f64>,
    k: usize,
    alpha: Option<&'a DVector<f64>>,
    shortfall_aversion: f64,
    quad: Option<(&'a DMatrix<f64>, f64)>,
    constraints: &'a ConstraintSet,
}

impl CutEngine<'_> {
    fn boxed_bounds(&self) -> Vec<(f64, f64)> {
        self.constraints
            .bounds()
            .iter()
            .map(|&(lo, hi)| (lo.max(-TRUST_BOX), hi.min(TRUST_BOX)))
            .collect()
    }

    // Tail set of the K smallest portfolio returns at w; ties broken by
    // scenario index so the set is unique.
    fn tail_set(&self, w: &DVector<f64>) -> (Vec<usize>, f64) {
        let returns = self.scenarios * w;
        let mut order: Vec<usize> = (0..returns.len()).collect();
        order.select_nth_unstable_by(self.k - 1, |&a, &b| {
            returns[a].total_cmp(&returns[b]).then(a.cmp(&b))
        });
        let mut tail: Vec<usize> = order[..self.k].to_vec();
        tail.sort_unstable();
        let sum: f64 = tail.iter().map(|&i| returns[i]).sum();
        (tail, -sum / self.k as f64)
    }

    fn cut_vector(&self, tail: &[usize]) -> DVector<f64> {
        let n = self.scenarios.ncols();
        let mut h = DVector::zeros(n);
        for &i in tail {
            h += self.scenarios.row(i).transpose();
        }
        h / -(self.k as f64)
    }

    // Minimization objective F(w) = -alpha'w + Lambda * s_p(w) + lambda * w'Sigma w.
    fn objective_at(&self, w: &DVector<f64>, shortfall: f64) -> f64 {
        let mut f = self.shortfall_aversion * shortfall;
        if let Some(alpha) = self.alpha {
            f -= alpha.dot(w);
        }
        if let Some((sigma, lam)) = self.quad {
            f += lam * (w.transpose() * sigma * w)[(0, 0)];
        }
        f
    }

    fn initial_point(&self) -> Result<DVector<f64>> {
        let lp = simplex::LinearProgram {
            objective: vec![0.0; self.constraints.n()],
            eq: self
                .constraints
                .equalities()
                .iter()
                .map(|(a, b)| (a.iter().cloned().collect(), *b))
                .collect(),
            ub: self
                .constraints
                .inequalities()
                .iter()
                .map(|(a, b)| (a.iter().cloned().collect(), *b))
                .collect(),
            bounds: self.boxed_bounds(),
        };
        Ok(DVector::from_vec(simplex::solve(&lp)?.x))
    }

    // Master over (w, u): minimize -alpha'w + Lambda*u + lambda*w'Sigma w
    // subject to the user constraints, the trust box, and cuts u >= h'w.
    fn solve_master(
        &self,
        cuts: &[DVector<f64>],
        warm: &DVector<f64>,
    ) -> Result<(DVector<f64>, f64)> {
        let n = self.constraints.n();
        match self.quad {
            None => {
                let mut objective = vec![0.0; n + 1];
                if let Some(alpha) = self.alpha {
                    for j in 0..n {
                        objective[j] = -alpha[j];
                    }
                }
                objective[n] = self.shortfall_aversion;
                let widen = |a: &DVector<f64>, u_coef: f64| -> Vec<f64> {
                    let mut row: Vec<f64> = a.iter().cloned().collect();
                    row.push(u_coef);
                    row
                };
                let mut ub: Vec<(Vec<f64>, f64)> = self
                    .constraints
                    .inequalities()
                    .iter()
                    .map(|(a, b)| (widen(a, 0.0), *b))
                    .collect();
                for h in cuts {
                    ub.push((widen(h, -1.0), 0.0));
                }
                let mut bounds = self.boxed_bounds();
                bounds.push((f64::NEG_INFINITY, f64::INFINITY));
                let lp = simplex::LinearProgram {
                    objective,
                    eq: self
                        .constraints
                        .equalities()
                        .iter()
                        .map(|(a, b)| (widen(a, 0.0), *b))
                        .collect(),
                    ub,
                    bounds,
                };
                let sol = simplex::solve(&lp)?;
                let w = DVector::from_iterator(n, sol.x[..n].iter().cloned());
                Ok((w, sol.objective))
            }
            Some((sigma, lam)) => {
                let mut hessian = DMatrix::zeros(n + 1, n + 1);
                hessian.view_mut((0, 0), (n, n)).copy_from(&(sigma * (2.0 * lam)));
                let mut gradient = DVector::zeros(n + 1);
                if let Some(alpha) = self.alpha {
                    for j in 0..n {
                        gradient[j] = -alpha[j];
                    }
                }
                gradient[n] = self.shortfall_aversion;

                let widen = |a: &DVector<f64>, u_coef: f64| -> DVector<f64> {
                    let mut row = DVector::zeros(n + 1);
                    row.view_mut((0, 0), (n, 1)).copy_from(a);
                    row[n] = u_coef;
                    row
                };
                let mut ub: Vec<(DVector<f64>, f64)> = self
                    .constraints
                    .inequalities()
                    .iter()
                    .map(|(a, b)| (widen(a, 0.0), *b))
                    .collect();
                for h in cuts {
                    ub.push((widen(h, -1.0), 0.0));
                }
                let mut bounds = self.boxed_bounds();
                bounds.push((f64::NEG_INFINITY, f64::INFINITY));

                // Feasible start: the incumbent weights with u at the cut envelope.
                let u0 = cuts
                    .iter()
                    .map(|h| h.dot(warm))
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut start = DVector::zeros(n + 1);
                start.view_mut((0, 0), (n, 1)).copy_from(warm);
                start[n] = u0;

                let qp = qp::QuadraticProgram {
                    hessian,
                    gradient,
                    eq: self
                        .constraints
                        .equalities()
                        .iter()
                        .map(|(a, b)| (widen(a, 0.0), *b))
                        .collect(),
                    ub,
                    bounds,
                    start,
                };
                let sol = qp::solve(&qp)?;
                let w = DVector::from_iterator(n, sol.x.view((0, 0), (n, 1)).iter().cloned());
                let value = 0.5 * (sol.x.transpose() * &qp.hessian * &sol.x)[(0, 0)]
                    + qp.gradient.dot(&sol.x);
                Ok((w, value))
            }
        }
    }

    fn solve(&self) -> Result<(DVector<f64>, f64, Diagnostics)> {
        let w0 = self.initial_point()?;
        let (tail, s0) = self.tail_set(&w0);
        let mut cuts = vec![self.cut_vector(&tail)];
        let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
        seen.insert(tail);

        let mut best_w = w0;
        let mut best_shortfall = s0;
        let mut best_ub = self.objective_at(&best_w, s0);
        let mut gap = f64::INFINITY;
        let mut iterations = 0;

        for _ in 0..MAX_CUTS {
            iterations += 1;
            let (w, lower) = self.solve_master(&cuts, &best_w)?;
            let (tail, shortfall) = self.tail_set(&w);
            let ub = self.objective_at(&w, shortfall);
            if ub < best_ub {
                best_ub = ub;
                best_w = w;
                best_shortfall = shortfall;
            }
            gap = (best_ub - lower).max(0.0);
            if gap <= GAP_REL_TOL * (1.0 + best_ub.abs()) {
                break;
            }
            // A repeated tail set means the master already contains the
            // binding cut; the remaining gap is floating-point noise.
            if !seen.insert(tail.clone()) {
                break;
            }
            cuts.push(self.cut_vector(&tail));
        }

        if gap > FEASIBILITY_TOL * (1.0 + best_ub.abs()) {
            return Err(Error::Numerical(format!(
                "cutting-plane gap {gap:.3e} exceeds certificate tolerance after {iterations} iterations"
            )));
        }
        for (j, w) in best_w.iter().enumerate() {
            let (lo, hi) = self.constraints.bounds()[j];
            if w.abs() >= TRUST_BOX * (1.0 - 1e-9) && (lo < -TRUST_BOX || hi > TRUST_BOX) {
                return Err(Error::Unbounded(format!(
                    "optimal weight {j} rests on the internal trust box at {w}"
                )));
            }
        }
        let feasibility = self.constraints.violation(&best_w);
        if feasibility > FEASIBILITY_TOL {
            return Err(Error::Numerical(format!(
                "solution violates constraints by {feasibility:.3e}"
            )));
        }
        Ok((
            best_w,
            best_shortfall,
            Diagnostics {
                feasibility_residual: feasibility,
                optimality_gap: Some(gap),
                iterations,
            },
        ))
    }
}

// ---------------------------------------------------------------------------
// public operations
// ---------------------------------------------------------------------------

fn check_dims(label: &str, actual: usize, constraints: &ConstraintSet) -> Result<()> {
    if actual != constraints.n() {
        return Err(Error::Validation(format!(
            "{label} has {actual} columns but the constraint set has {} variables",
            constraints.n()
        )));
    }
    Ok(())
}

fn feasible_vertex(constraints: &ConstraintSet) -> Result<DVector<f64>> {
    let lp = simplex::LinearProgram {
        objective: vec![0.0; constraints.n()],
        eq: constraints
            .equalities()
            .iter()
            .map(|(a, b)| (a.iter().cloned().collect(), *b))
            .collect(),
        ub: constraints
            .inequalities()
            .iter()
            .map(|(a, b)| (a.iter().cloned().collect(), *b))
            .collect(),
        bounds: constraints.bounds().to_vec(),
    };
    Ok(DVector::from_vec(simplex::solve(&lp)?.x))
}

/// Minimizes the empirical shortfall estimator over the constraint set via
/// the tail-sum linearization.
///
/// The reported shortfall is the estimator evaluated at the returned weights;
/// the `optimality_gap` diagnostic certifies it against the master lower
/// bound.
pub fn minimize_shortfall(
    scenarios: &ScenarioSet,
    confidence: f64,
    constraints: &ConstraintSet,
) -> Result<OptimizationResult> {
    check_dims("scenario set", scenarios.width(), constraints)?;
    let k = risk::tail_count(scenarios.len(), confidence)?;
    let engine = CutEngine {
        scenarios: scenarios.scenarios(),
        k,
        alpha: None,
        shortfall_aversion: 1.0,
        quad: None,
        constraints,
    };
    let (weights, _, diagnostics) = engine.solve()?;
    let returns = scenarios.scenarios() * &weights;
    let shortfall = risk::empirical_shortfall(returns.as_slice(), confidence)?;
    Ok(OptimizationResult {
        objective_value: shortfall.value,
        shortfall: Some(shortfall),
        variance: None,
        weights,
        diagnostics,
    })
}

/// Minimizes `w'Σw` over the constraint set with an active-set QP.
///
/// The `optimality_gap` diagnostic reports the KKT stationarity residual.
pub fn minimize_variance(
    covariance: &CovarianceEstimate,
    constraints: &ConstraintSet,
) -> Result<OptimizationResult> {
    check_dims("covariance", covariance.dim(), constraints)?;
    let start = feasible_vertex(constraints)?;
    let qp = qp::QuadraticProgram {
        hessian: covariance.matrix() * 2.0,
        gradient: DVector::zeros(constraints.n()),
        eq: constraints.equalities().to_vec(),
        ub: constraints.inequalities().to_vec(),
        bounds: constraints.bounds().to_vec(),
        start,
    };
    let sol = qp::solve(&qp)?;
    if sol.kkt_residual > FEASIBILITY_TOL {
        return Err(Error::Numerical(format!(
            "KKT residual {:.3e} exceeds tolerance",
            sol.kkt_residual
        )));
    }
    let feasibility = constraints.violation(&sol.x);
    if feasibility > FEASIBILITY_TOL {
        return Err(Error::Numerical(format!(
            "solution violates constraints by {feasibility:.3e}"
        )));
    }
    let variance = (sol.x.transpose() * covariance.matrix() * &sol.x)[(0, 0)];
    Ok(OptimizationResult {
        weights: sol.x,
        objective_value: variance,
        shortfall: None,
        variance: Some(variance),
        diagnostics: Diagnostics {
            feasibility_residual: feasibility,
            optimality_gap: Some(sol.kkt_residual),
            iterations: sol.iterations,
        },
    })
}

/// Maximizes `w'α - Λ s_p(w) - λ w'Σw` over the constraint set.
///
/// With `λ = 0` this reduces to shortfall optimization, with `Λ = 0` to
/// mean-variance; both terms active makes the master problems quadratic.
pub fn maximize_mean_variance_shortfall(
    scenarios: &ScenarioSet,
    covariance: &CovarianceEstimate,
    objective: &ObjectiveSpec,
    constraints: &ConstraintSet,
) -> Result<OptimizationResult> {
    check_dims("scenario set", scenarios.width(), constraints)?;
    check_dims("covariance", covariance.dim(), constraints)?;
    objective.validate(constraints.n())?;
    let confidence = objective.confidence;
    let k = risk::tail_count(scenarios.len(), confidence)?;
    let lam = objective.variance_aversion;
    let big_lambda = objective.shortfall_aversion;

    let (weights, diagnostics) = if big_lambda > 0.0 {
        let engine = CutEngine {
            scenarios: scenarios.scenarios(),
            k,
            alpha: Some(&objective.alpha),
            shortfall_aversion: big_lambda,
            quad: (lam > 0.0).then_some((covariance.matrix(), lam)),
            constraints,
        };
        let (w, _, d) = engine.solve()?;
        (w, d)
    } else if lam > 0.0 {
        // pure mean-variance: max alpha'w - lambda w'Sigma w
        let start = feasible_vertex(constraints)?;
        let qp = qp::QuadraticProgram {
            hessian: covariance.matrix() * (2.0 * lam),
            gradient: -objective.alpha.clone(),
            eq: constraints.equalities().to_vec(),
            ub: constraints.inequalities().to_vec(),
            bounds: constraints.bounds().to_vec(),
            start,
        };
        let sol = qp::solve(&qp)?;
        if sol.kkt_residual > FEASIBILITY_TOL {
            return Err(Error::Numerical(format!(
                "KKT residual {:.3e} exceeds tolerance",
                sol.kkt_residual
            )));
        }
        let d = Diagnostics {
            feasibility_residual: constraints.violation(&sol.x),
            optimality_gap: Some(sol.kkt_residual),
            iterations: sol.iterations,
        };
        (sol.x, d)
    } else {
        // alpha-only LP
        let lp = simplex::LinearProgram {
            objective: objective.alpha.iter().map(|a| -a).collect(),
            eq: constraints
                .equalities()
                .iter()
                .map(|(a, b)| (a.iter().cloned().collect(), *b))
                .collect(),
            ub: constraints
                .inequalities()
                .iter()
                .map(|(a, b)| (a.iter().cloned().collect(), *b))
                .collect(),
            bounds: constraints.bounds().to_vec(),
        };
        let sol = simplex::solve(&lp)?;
        let w = DVector::from_vec(sol.x);
        let d = Diagnostics {
            feasibility_residual: constraints.violation(&w),
            optimality_gap: Some(0.0),
            iterations: sol.iterations,
        };
        (w, d)
    };

    let feasibility = diagnostics.feasibility_residual;
    if feasibility > FEASIBILITY_TOL {
        return Err(Error::Numerical(format!(
            "solution violates constraints by {feasibility:.3e}"
        )));
    }
    let returns = scenarios.scenarios() * &weights;
    let shortfall = risk::empirical_shortfall(returns.as_slice(), confidence)?;
    let variance = (weights.transpose() * covariance.matrix() * &weights)[(0, 0)];
    let objective_value =
        objective.alpha.dot(&weights) - big_lambda * shortfall.value - lam * variance;
    Ok(OptimizationResult {
        weights,
        objective_value,
        shortfall: Some(shortfall),
        variance: Some(variance),
        diagnostics,
    })
}

// Per-variable enumeration ranges for the grid oracle. Bounds come first;
// an equality inference pass closes ranges like the full-investment simplex,
// where upper bounds are implied rather than stated.
fn grid_ranges(constraints: &ConstraintSet) -> Result<Vec<(f64, f64)>> {
    let n = constraints.n();
    let mut ranges: Vec<(f64, f64)> = constraints.bounds().to_vec();
    for _ in 0..2 {
        for (a, b) in constraints.equalities() {
            for j in 0..n {
                if a[j] == 0.0 {
                    continue;
                }
                // extremes of sum_{k != j} a_k w_k over current ranges
                let mut rest_min = 0.0;
                let mut rest_max = 0.0;
                let mut min_ok = true;
                let mut max_ok = true;
                for k in 0..n {
                    if k == j || a[k] == 0.0 {
                        continue;
                    }
                    let (lo, hi) = ranges[k];
                    let (term_min, term_max) = if a[k] > 0.0 {
                        (a[k] * lo, a[k] * hi)
                    } else {
                        (a[k] * hi, a[k] * lo)
                    };
                    if term_min.is_finite() {
                        rest_min += term_min;
                    } else {
                        min_ok = false;
                    }
                    if term_max.is_finite() {
                        rest_max += term_max;
                    } else {
                        max_ok = false;
                    }
                }
                // a_j w_j = b - rest
                let (lo_b, hi_b) = if a[j] > 0.0 {
                    (
                        max_ok.then(|| (b - rest_max) / a[j]),
                        min_ok.then(|| (b - rest_min) / a[j]),
                    )
                } else {
                    (
                        min_ok.then(|| (b - rest_min) / a[j]),
                        max_ok.then(|| (b - rest_max) / a[j]),
                    )
                };
                if let Some(lo) = lo_b {
                    ranges[j].0 = ranges[j].0.max(lo);
                }
                if let Some(hi) = hi_b {
                    ranges[j].1 = ranges[j].1.min(hi);
                }
            }
        }
    }
    for (j, &(lo, hi)) in ranges.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Unbounded(format!(
                "grid enumeration needs a finite range for variable {j}"
            )));
        }
    }
    Ok(ranges)
}

/// Exhaustive grid oracle: enumerates the feasible grid of the given step and
/// returns the point with the smallest empirical shortfall. Exponential in N;
/// intended for tests on instances with at most 4 variables.
pub fn brute_force_shortfall(
    scenarios: &ScenarioSet,
    confidence: f64,
    constraints: &ConstraintSet,
    grid_step: f64,
) -> Result<OptimizationResult> {
    check_dims("scenario set", scenarios.width(), constraints)?;
    let n = constraints.n();
    if n > 4 {
        return Err(Error::InvalidParameter(format!(
            "grid oracle supports at most 4 variables, got {n}"
        )));
    }
    if !(grid_step > 0.0) {
        return Err(Error::InvalidParameter("grid_step must be positive".into()));
    }
    let k = risk::tail_count(scenarios.len(), confidence)?;
    let ranges = grid_ranges(constraints)?;
    let counts: Vec<usize> = ranges
        .iter()
        .map(|&(lo, hi)| ((hi - lo) / grid_step + 1e-9).floor() as usize + 1)
        .collect();
    let total: usize = counts.iter().product();
    if total > 20_000_000 {
        return Err(Error::InvalidParameter(format!(
            "grid of {total} points is too large"
        )));
    }

    let matrix = scenarios.scenarios();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut evaluated = 0usize;
    let mut odometer = vec![0usize; n];
    let mut w = DVector::zeros(n);
    'outer: loop {
        for j in 0..n {
            w[j] = ranges[j].0 + odometer[j] as f64 * grid_step;
        }
        let feasible = constraints
            .equalities()
            .iter()
            .all(|(a, b)| (a.dot(&w) - b).abs() <= 1e-9)
            && constraints
                .inequalities()
                .iter()
                .all(|(a, b)| a.dot(&w) <= b + 1e-9);
        if feasible {
            evaluated += 1;
            let returns = matrix * &w;
            let value = -risk::sum_k_smallest(returns.as_slice(), k) / k as f64;
            if best.as_ref().map_or(true, |(b, _)| value < *b) {
                best = Some((value, w.clone()));
            }
        }
        // odometer increment
        for j in 0..=n {
            if j == n {
                break 'outer;
            }
            odometer[j] += 1;
            if odometer[j] < counts[j] {
                break;
            }
            odometer[j] = 0;
        }
    }

    let (_, weights) = best.ok_or_else(|| {
        Error::Infeasible("no grid point satisfies the constraints".into())
    })?;
    let returns = matrix * &weights;
    let shortfall = risk::empirical_shortfall(returns.as_slice(), confidence)?;
    Ok(OptimizationResult {
        objective_value: shortfall.value,
        shortfall: Some(shortfall),
        variance: None,
        diagnostics: Diagnostics {
            feasibility_residual: constraints.violation(&weights),
            optimality_gap: None,
            iterations: evaluated,
        },
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn scen(rows: &[&[f64]]) -> ScenarioSet {
        let t = rows.len();
        let n = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().cloned()).collect();
        ScenarioSet::synthetic(DMatrix::from_row_slice(t, n, &flat))
    }

    fn gaussian_scenarios(t: usize, n: usize, seed: u64) -> ScenarioSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScenarioSet::synthetic(DMatrix::from_fn(t, n, |_, _| {
            rng.sample::<f64, _>(StandardNormal) * 0.01
        }))
    }

    fn cov(matrix: DMatrix<f64>) -> CovarianceEstimate {
        CovarianceEstimate::new(
            matrix,
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            21,
            100,
        )
        .unwrap()
    }

    #[test]
    fn dominant_asset_takes_full_weight() {
        // asset 0 beats asset 1 in every scenario
        let s = scen(&[
            &[0.02, 0.01],
            &[-0.01, -0.03],
            &[0.015, 0.002],
            &[-0.02, -0.04],
            &[0.01, 0.005],
        ]);
        let c = ConstraintSet::full_investment_long_only(2);
        let r = minimize_shortfall(&s, 0.6, &c).unwrap();
        assert_relative_eq!(r.weights[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(r.weights[1], 0.0, epsilon = 1e-7);
        let grid = brute_force_shortfall(&s, 0.6, &c, 0.01).unwrap();
        assert!(r.objective_value <= grid.objective_value + 1e-6);
    }

    #[test]
    fn perfect_hedge_splits_evenly() {
        let a = [0.05, -0.03, 0.02, -0.04, 0.01, -0.02, 0.03, -0.05];
        let rows: Vec<Vec<f64>> = a.iter().map(|&x| vec![x, -x]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = scen(&refs);
        let c = ConstraintSet::full_investment(2);
        let r = minimize_shortfall(&s, 0.6, &c).unwrap();
        assert_relative_eq!(r.weights[0], 0.5, epsilon = 1e-7);
        assert_relative_eq!(r.weights[1], 0.5, epsilon = 1e-7);
        assert!(r.shortfall.unwrap().value.abs() < 1e-9);
    }

    #[test]
    fn degenerate_identical_scenarios() {
        let row: &[f64] = &[0.01, -0.02];
        let s = scen(&[row; 10]);
        let c = ConstraintSet::full_investment_long_only(2);
        let r = minimize_shortfall(&s, 0.6, &c).unwrap();
        // portfolio return is w'r for the common row; best is all weight on 0
        assert_relative_eq!(r.weights[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(r.objective_value, -0.01, epsilon = 1e-9);
    }

    #[test]
    fn lp_matches_grid_oracle_on_random_instances() {
        for seed in 0..20 {
            let s = gaussian_scenarios(50, 3, 1000 + seed);
            let c = ConstraintSet::full_investment_long_only(3);
            let lp = minimize_shortfall(&s, 0.9, &c).unwrap();
            let grid = brute_force_shortfall(&s, 0.9, &c, 0.01).unwrap();
            assert!(
                lp.objective_value <= grid.objective_value + 1e-6,
                "seed {seed}: LP {} vs grid {}",
                lp.objective_value,
                grid.objective_value
            );
            // consistency of the reported value with the estimator
            let returns = s.scenarios() * &lp.weights;
            let est = risk::empirical_shortfall(returns.as_slice(), 0.9).unwrap();
            assert!((lp.objective_value - est.value).abs() <= 1e-8);
            assert!(
                lp.diagnostics.optimality_gap.unwrap()
                    <= 1e-7 * (1.0 + lp.objective_value.abs())
            );
        }
    }

    #[test]
    fn adding_constraints_cannot_improve() {
        let s = gaussian_scenarios(200, 3, 7);
        let base = ConstraintSet::full_investment(3);
        let tighter = ConstraintSet::full_investment_long_only(3);
        let loose = minimize_shortfall(&s, 0.9, &base).unwrap();
        let tight = minimize_shortfall(&s, 0.9, &tighter).unwrap();
        assert!(loose.objective_value <= tight.objective_value + 1e-9);
    }

    #[test]
    fn scale_invariance_of_argmin() {
        let s = gaussian_scenarios(300, 3, 11);
        let scaled = ScenarioSet::synthetic(s.scenarios() * 4.0);
        let c = ConstraintSet::full_investment_long_only(3);
        let a = minimize_shortfall(&s, 0.9, &c).unwrap();
        let b = minimize_shortfall(&scaled, 0.9, &c).unwrap();
        assert_relative_eq!(b.objective_value, 4.0 * a.objective_value, max_relative = 1e-6);
        // argmin unchanged: a's weights achieve the optimal value under scaling
        let returns = scaled.scenarios() * &a.weights;
        let est = risk::empirical_shortfall(returns.as_slice(), 0.9).unwrap();
        assert!((est.value - b.objective_value).abs() <= 1e-8 * (1.0 + est.value.abs()));
    }

    #[test]
    fn unbounded_shortfall_detected() {
        // no constraints at all: scaling any profitable direction is unbounded
        let s = scen(&[&[0.01], &[0.02], &[0.03], &[0.015]]);
        let c = ConstraintSet::new(1);
        assert!(matches!(
            minimize_shortfall(&s, 0.6, &c),
            Err(Error::Unbounded(_))
        ));
    }

    #[test]
    fn infeasible_constraints_detected() {
        let s = gaussian_scenarios(30, 2, 3);
        let mut c = ConstraintSet::full_investment(2);
        c.add_equality(vec![1.0, 1.0], 2.0).unwrap();
        assert!(matches!(
            minimize_shortfall(&s, 0.8, &c),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn variance_identity_gives_equal_weights() {
        let c = cov(DMatrix::identity(4, 4));
        let cs = ConstraintSet::full_investment(4);
        let r = minimize_variance(&c, &cs).unwrap();
        for j in 0..4 {
            assert_relative_eq!(r.weights[j], 0.25, epsilon = 1e-9);
        }
        assert!(r.diagnostics.optimality_gap.unwrap() <= 1e-7);
    }

    #[test]
    fn variance_two_asset_closed_form() {
        let (s1, s2) = (0.04_f64, 0.01_f64); // variances
        let c = cov(DMatrix::from_row_slice(2, 2, &[s1, 0.0, 0.0, s2]));
        let cs = ConstraintSet::full_investment(2);
        let r = minimize_variance(&c, &cs).unwrap();
        assert_relative_eq!(r.weights[0], s2 / (s1 + s2), epsilon = 1e-9);
        assert_relative_eq!(r.weights[1], s1 / (s1 + s2), epsilon = 1e-9);
        assert_relative_eq!(r.objective_value, s1 * s2 / (s1 + s2), max_relative = 1e-9);
    }

    #[test]
    fn variance_matches_grid_on_market_style_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let b = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let sigma = &b * b.transpose() * 1e-4 + DMatrix::identity(3, 3) * 1e-5;
            let c = cov(sigma.clone());
            let cs = ConstraintSet::market_style(3, 0, 2.0).unwrap();
            let r = minimize_variance(&c, &cs).unwrap();
            // a single free parameter: w = (1, e, -e)
            let mut best = f64::INFINITY;
            let steps = 4000;
            for i in 0..=steps {
                let e = -2.0 + 4.0 * i as f64 / steps as f64;
                let w = DVector::from_vec(vec![1.0, e, -e]);
                best = best.min((w.transpose() * &sigma * &w)[(0, 0)]);
            }
            assert!(
                r.objective_value <= best + 1e-5,
                "qp {} vs grid {}",
                r.objective_value,
                best
            );
        }
    }

    #[test]
    fn combined_reduces_to_each_pure_problem() {
        let s = gaussian_scenarios(400, 3, 21);
        let m = s.scenarios();
        let sample = m.transpose() * m / s.len() as f64;
        let c = cov(0.5 * (&sample + sample.transpose()));
        let cs = ConstraintSet::full_investment_long_only(3);

        let pure_sf = minimize_shortfall(&s, 0.9, &cs).unwrap();
        let red_sf = maximize_mean_variance_shortfall(
            &s,
            &c,
            &ObjectiveSpec {
                alpha: DVector::zeros(3),
                shortfall_aversion: 1.0,
                variance_aversion: 0.0,
                confidence: 0.9,
            },
            &cs,
        )
        .unwrap();
        for j in 0..3 {
            assert_relative_eq!(pure_sf.weights[j], red_sf.weights[j], epsilon = 1e-6);
        }

        let pure_var = minimize_variance(&c, &cs).unwrap();
        let red_var = maximize_mean_variance_shortfall(
            &s,
            &c,
            &ObjectiveSpec {
                alpha: DVector::zeros(3),
                shortfall_aversion: 0.0,
                variance_aversion: 1.0,
                confidence: 0.9,
            },
            &cs,
        )
        .unwrap();
        for j in 0..3 {
            assert_relative_eq!(pure_var.weights[j], red_var.weights[j], epsilon = 1e-6);
        }
    }

    #[test]
    fn combined_matches_grid_oracle() {
        let s = gaussian_scenarios(150, 3, 33);
        let m = s.scenarios();
        let sample = m.transpose() * m / s.len() as f64;
        let sigma = 0.5 * (&sample + sample.transpose());
        let c = cov(sigma.clone());
        let cs = ConstraintSet::full_investment_long_only(3);
        let spec = ObjectiveSpec {
            alpha: DVector::from_vec(vec![0.001, -0.0005, 0.0002]),
            shortfall_aversion: 0.7,
            variance_aversion: 25.0,
            confidence: 0.9,
        };
        let r = maximize_mean_variance_shortfall(&s, &c, &spec, &cs).unwrap();

        // grid over the 2-simplex
        let steps = 100;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let w = DVector::from_vec(vec![
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    (steps - i - j) as f64 / steps as f64,
                ]);
                let returns = m * &w;
                let sf = risk::empirical_shortfall(returns.as_slice(), 0.9).unwrap().value;
                let var = (w.transpose() * &sigma * &w)[(0, 0)];
                let val = spec.alpha.dot(&w) - 0.7 * sf - 25.0 * var;
                best = best.max(val);
            }
        }
        assert!(
            r.objective_value >= best - 1e-8,
            "solver {} vs grid {}",
            r.objective_value,
            best
        );
        assert!(
            r.objective_value <= best + 1e-3,
            "solver {} improbably far above grid {}",
            r.objective_value,
            best
        );
    }

    #[test]
    fn grid_oracle_basics() {
        // single weight on [0,1], all scenarios positive so shortfall falls as w grows
        let s = scen(&[&[0.01], &[0.03], &[0.005], &[0.02]]);
        let mut c = ConstraintSet::new(1);
        c.set_bounds(0, 0.0, 1.0).unwrap();
        let r = brute_force_shortfall(&s, 0.7, &c, 0.01).unwrap();
        assert_relative_eq!(r.weights[0], 1.0, epsilon = 1e-12);

        // perfect hedge optimum is on the grid
        let a = [0.05, -0.03, 0.02, -0.04, 0.01, -0.02, 0.03, -0.05];
        let rows: Vec<Vec<f64>> = a.iter().map(|&x| vec![x, -x]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = scen(&refs);
        let mut c = ConstraintSet::full_investment(2);
        c.set_bounds(0, 0.0, 1.0).unwrap();
        c.set_bounds(1, 0.0, 1.0).unwrap();
        let r = brute_force_shortfall(&s, 0.6, &c, 0.01).unwrap();
        assert_relative_eq!(r.weights[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn grid_infers_simplex_ranges() {
        let s = gaussian_scenarios(40, 3, 77);
        let c = ConstraintSet::full_investment_long_only(3);
        let r = brute_force_shortfall(&s, 0.9, &c, 0.25).unwrap();
        assert!(r.diagnostics.iterations > 0);
        assert!(r.diagnostics.feasibility_residual <= 1e-9);
    }

    #[test]
    fn gaussian_equivalence_small_angle() {
        // correlated Gaussian scenarios: min-shortfall and min-variance agree
        let n = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sigma_pop = &b * b.transpose() * 1e-4 + DMatrix::identity(n, n) * 5e-5;
        let l = sigma_pop.clone().cholesky().unwrap().l();
        let t = 30_000;
        let mut m = DMatrix::zeros(t, n);
        for i in 0..t {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            m.set_row(i, &(&l * z).transpose());
        }
        let sample = m.transpose() * &m / t as f64;
        let s = ScenarioSet::synthetic(m);
        let c = cov(0.5 * (&sample + sample.transpose()));
        let cs = ConstraintSet::full_investment(n);
        let mv = minimize_variance(&c, &cs).unwrap();
        for &p in &[0.60, 0.95] {
            let sf = minimize_shortfall(&s, p, &cs).unwrap();
            let cosine = sf.weights.dot(&mv.weights) / (sf.weights.norm() * mv.weights.norm());
            let angle = cosine.clamp(-1.0, 1.0).acos().to_degrees();
            assert!(angle < 5.0, "angle {angle} at p = {p}");
        }
    }
}
