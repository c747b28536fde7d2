//! Active-set solver for small convex quadratic programs.
//!
//! Minimizes `1/2 x'Hx + g'x` with H symmetric positive semidefinite, subject
//! to linear equalities, inequalities, and bounds. Steps are computed in the
//! null space of the working set; flat directions (zero curvature) fall back
//! to gradient rays, so singular Hessians are handled as long as the feasible
//! set blocks every unbounded ray.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const TOL_ACTIVE: f64 = 1e-9;
const TOL_STEP: f64 = 1e-13;

/// A convex QP in general form, plus a feasible starting point.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    /// Symmetric PSD Hessian of the quadratic term `1/2 x'Hx`.
    pub hessian: DMatrix<f64>,
    /// Linear term g.
    pub gradient: DVector<f64>,
    /// Equality rows `a'x = b`.
    pub eq: Vec<(DVector<f64>, f64)>,
    /// Inequality rows `a'x <= b`.
    pub ub: Vec<(DVector<f64>, f64)>,
    /// Per-variable `(lower, upper)`, infinities allowed.
    pub bounds: Vec<(f64, f64)>,
    /// Feasible starting point (from an LP phase 1).
    pub start: DVector<f64>,
}

/// Output of the active-set iteration.
#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Final iterate.
    pub x: DVector<f64>,
    /// Active-set iterations performed.
    pub iterations: usize,
    /// KKT stationarity residual with nonnegative inequality multipliers.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Equality,
    Inequality,
}

struct Row {
    a: DVector<f64>,
    b: f64,
    kind: RowKind,
}

// Orthonormal basis of the null space of the given rows, by modified
// Gram-Schmidt with one re-orthogonalization pass.
fn null_space(rows: &[&DVector<f64>], n: usize) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for r in rows {
        let mut v = (*r).clone();
        for _ in 0..2 {
            for b in &basis {
                let coef = v.dot(b);
                v -= b * coef;
            }
        }
        let norm = v.norm();
        if norm > 1e-10 * (1.0 + r.norm()) {
            basis.push(v / norm);
        }
    }
    let mut z: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        for _ in 0..2 {
            for b in basis.iter().chain(z.iter()) {
                let coef = v.dot(b);
                v -= b * coef;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            z.push(v / norm);
        }
    }
    z
}

fn gather_rows(qp: &QuadraticProgram) -> Vec<Row> {
    let n = qp.gradient.len();
    let mut rows = Vec::new();
    for (a, b) in &qp.eq {
        rows.push(Row { a: a.clone(), b: *b, kind: RowKind::Equality });
    }
    for (a, b) in &qp.ub {
        rows.push(Row { a: a.clone(), b: *b, kind: RowKind::Inequality });
    }
    for (j, &(lo, hi)) in qp.bounds.iter().enumerate() {
        if hi.is_finite() {
            let mut a = DVector::zeros(n);
            a[j] = 1.0;
            rows.push(Row { a, b: hi, kind: RowKind::Inequality });
        }
        if lo.is_finite() {
            let mut a = DVector::zeros(n);
            a[j] = -1.0;
            rows.push(Row { a, b: -lo, kind: RowKind::Inequality });
        }
    }
    rows
}

// Least-squares multipliers for `sum_i lambda_i a_i = -grad`.
fn multipliers(active: &[usize], rows: &[Row], grad: &DVector<f64>) -> Option<DVector<f64>> {
    if active.is_empty() {
        return Some(DVector::zeros(0));
    }
    let n = grad.len();
    let mut at = DMatrix::zeros(n, active.len());
    for (k, &idx) in active.iter().enumerate() {
        at.set_column(k, &rows[idx].a);
    }
    let svd = at.clone().svd(true, true);
    svd.solve(&(-grad), 1e-12).ok().map(|m| m.column(0).into_owned())
}

/// Runs the active-set method from the supplied feasible point.
pub fn solve(qp: &QuadraticProgram) -> Result<QpSolution> {
    let n = qp.gradient.len();
    debug_assert_eq!(qp.hessian.nrows(), n);
    debug_assert_eq!(qp.hessian.ncols(), n);
    debug_assert_eq!(qp.start.len(), n);

    let rows = gather_rows(qp);
    let mut x = qp.start.clone();
    let scale = 1.0 + x.amax();

    // working set: all equalities plus inequalities active at the start
    let mut active: Vec<usize> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let slack = row.b - row.a.dot(&x);
        match row.kind {
            RowKind::Equality => active.push(i),
            RowKind::Inequality => {
                if slack.abs() <= TOL_ACTIVE * scale {
                    active.push(i);
                }
            }
        }
    }

    let max_iter = 100 * (n + rows.len()) + 50;
    let mut last_dropped: Option<usize> = None;
    for iteration in 0..max_iter {
        let grad = &qp.hessian * &x + &qp.gradient;
        let grad_scale = 1.0 + grad.amax();

        let active_rows: Vec<&DVector<f64>> = active.iter().map(|&i| &rows[i].a).collect();
        let z = null_space(&active_rows, n);

        // Direction in the null space of the working set.
        let mut direction: Option<(DVector<f64>, bool)> = None; // (d, is_ray)
        if !z.is_empty() {
            let k = z.len();
            let mut zmat = DMatrix::zeros(n, k);
            for (j, col) in z.iter().enumerate() {
                zmat.set_column(j, col);
            }
            let reduced_h = zmat.transpose() * &qp.hessian * &zmat;
            let gz = zmat.transpose() * &grad;
            let eig = nalgebra::SymmetricEigen::try_new(reduced_h, f64::EPSILON, 10_000)
                .ok_or_else(|| Error::Numerical("QP reduced Hessian eigendecomposition failed".into()))?;
            let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
            let curv_floor = 1e-12 * max_eig.max(1e-30);
            let gu = eig.eigenvectors.transpose() * &gz;

            // Gradient component along flat (zero-curvature) directions.
            let mut flat = DVector::zeros(k);
            let mut curved = DVector::zeros(k);
            for i in 0..k {
                if eig.eigenvalues[i] > curv_floor {
                    curved[i] = -gu[i] / eig.eigenvalues[i];
                } else {
                    flat[i] = -gu[i];
                }
            }
            if flat.amax() > 1e-10 * grad_scale {
                let d = &zmat * (&eig.eigenvectors * flat);
                direction = Some((d, true));
            } else {
                let v = &eig.eigenvectors * curved;
                let d = &zmat * v;
                if d.amax() > TOL_STEP * (1.0 + x.amax()) {
                    direction = Some((d, false));
                }
            }
        }

        match direction {
            Some((d, is_ray)) => {
                // Ratio test against inactive inequalities.
                let mut step = if is_ray { f64::INFINITY } else { 1.0 };
                let mut blocking = None;
                for (i, row) in rows.iter().enumerate() {
                    if active.contains(&i) || row.kind == RowKind::Equality {
                        continue;
                    }
                    let ad = row.a.dot(&d);
                    if ad > 1e-12 * (1.0 + row.a.norm()) * (1.0 + d.norm()) {
                        let slack = row.b - row.a.dot(&x);
                        let alpha = (slack / ad).max(0.0);
                        if alpha < step - 1e-15 {
                            step = alpha;
                            blocking = Some(i);
                        }
                    }
                }
                if is_ray && blocking.is_none() {
                    return Err(Error::Unbounded(
                        "QP objective decreases along an unblocked flat direction".into(),
                    ));
                }
                x += &d * step;
                if let Some(b) = blocking {
                    // A constraint dropped and immediately re-blocking with a
                    // zero step would cycle; detect and stop honestly.
                    if step == 0.0 && last_dropped == Some(b) {
                        return Err(Error::Numerical("QP active-set cycling detected".into()));
                    }
                    active.push(b);
                }
                last_dropped = None;
            }
            None => {
                // Stationary on the working-set manifold: check multipliers.
                let grad = &qp.hessian * &x + &qp.gradient;
                let lambda = multipliers(&active, &rows, &grad)
                    .ok_or_else(|| Error::Numerical("QP multiplier solve failed".into()))?;
                let mut worst: Option<(usize, f64)> = None;
                for (k, &idx) in active.iter().enumerate() {
                    if rows[idx].kind == RowKind::Inequality {
                        let l = lambda[k];
                        if l < -1e-9 * grad_scale && worst.map_or(true, |(_, w)| l < w) {
                            worst = Some((k, l));
                        }
                    }
                }
                match worst {
                    Some((k, _)) => {
                        last_dropped = Some(active.remove(k));
                    }
                    None => {
                        // Optimal: report the KKT residual with multipliers
                        // clamped to the feasible cone.
                        let mut resid = grad.clone();
                        for (k, &idx) in active.iter().enumerate() {
                            let l = match rows[idx].kind {
                                RowKind::Equality => lambda[k],
                                RowKind::Inequality => lambda[k].max(0.0),
                            };
                            resid += &rows[idx].a * l;
                        }
                        return Ok(QpSolution {
                            x,
                            iterations: iteration + 1,
                            kkt_residual: resid.amax(),
                        });
                    }
                }
            }
        }
    }
    Err(Error::Numerical("QP active-set iteration limit exceeded".into()))
}
