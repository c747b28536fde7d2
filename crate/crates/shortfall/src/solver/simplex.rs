//! Dense two-phase primal simplex.
//!
//! General form: minimize `c'x` subject to `A_eq x = b_eq`, `A_ub x <= b_ub`,
//! and per-variable bounds that may be infinite on either side. Variables are
//! shifted, reflected, or split into nonnegative standard-form variables;
//! finite upper bounds on shifted variables become extra rows.

use crate::error::{Error, Result};

const EPS_PIVOT: f64 = 1e-9;
const EPS_COST: f64 = 1e-9;
const EPS_FEAS: f64 = 1e-8;
const MAX_ITERATIONS: usize = 50_000;
// After this many Dantzig pivots, switch to Bland's rule to rule out cycling.
const BLAND_AFTER: usize = 5_000;

/// A linear program in general form.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    /// Minimized cost vector, one entry per variable.
    pub objective: Vec<f64>,
    /// Equality rows `a'x = b`.
    pub eq: Vec<(Vec<f64>, f64)>,
    /// Inequality rows `a'x <= b`.
    pub ub: Vec<(Vec<f64>, f64)>,
    /// Per-variable `(lower, upper)`; use infinities for unbounded sides.
    pub bounds: Vec<(f64, f64)>,
}

/// Optimal vertex returned by the solver.
#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Optimal point in the original variable space.
    pub x: Vec<f64>,
    /// Objective value `c'x`.
    pub objective: f64,
    /// Total simplex pivots over both phases.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    // x = lower + y[col]
    Shifted { col: usize, lower: f64 },
    // x = upper - y[col]
    Reflected { col: usize, upper: f64 },
    // x = y[pos] - y[neg]
    Split { pos: usize, neg: usize },
}

struct Tableau {
    ncols: usize,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    cost: Vec<f64>,
    iterations: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, jc: usize) {
        let piv = self.rows[r][jc];
        debug_assert!(piv.abs() > EPS_PIVOT);
        let inv = 1.0 / piv;
        for v in self.rows[r].iter_mut() {
            *v *= inv;
        }
        self.rhs[r] *= inv;
        self.rows[r][jc] = 1.0;

        let pivot_row = self.rows[r].clone();
        let pivot_rhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][jc];
            if f != 0.0 {
                for (v, p) in self.rows[i].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                self.rows[i][jc] = 0.0;
                self.rhs[i] -= f * pivot_rhs;
                if self.rhs[i].abs() < 1e-13 {
                    self.rhs[i] = 0.0;
                }
            }
        }
        let f = self.cost[jc];
        if f != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            self.cost[jc] = 0.0;
        }
        self.basis[r] = jc;
        self.iterations += 1;
    }

    // Subtract basic-variable costs so reduced costs of the basis are zero.
    fn price_out(&mut self, raw_cost: &[f64]) {
        self.cost = raw_cost.to_vec();
        for r in 0..self.rows.len() {
            let cb = raw_cost[self.basis[r]];
            if cb != 0.0 {
                let row = self.rows[r].clone();
                for (v, p) in self.cost.iter_mut().zip(&row) {
                    *v -= cb * p;
                }
            }
        }
    }

    fn entering(&self, limit: usize) -> Option<usize> {
        if self.iterations > BLAND_AFTER {
            return (0..limit).find(|&j| self.cost[j] < -EPS_COST);
        }
        let mut best = None;
        let mut best_cost = -EPS_COST;
        for j in 0..limit {
            if self.cost[j] < best_cost {
                best_cost = self.cost[j];
                best = Some(j);
            }
        }
        best
    }

    fn leaving(&self, jc: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.rows.len() {
            let a = self.rows[r][jc];
            if a > EPS_PIVOT {
                let ratio = self.rhs[r] / a;
                match best {
                    None => best = Some((r, ratio)),
                    Some((br, bratio)) => {
                        if ratio < bratio - 1e-12
                            || (ratio < bratio + 1e-12 && self.basis[r] < self.basis[br])
                        {
                            best = Some((r, ratio));
                        }
                    }
                }
            }
        }
        best.map(|(r, _)| r)
    }

    // Runs the simplex loop over the first `limit` columns; returns false on
    // unboundedness.
    fn run(&mut self, limit: usize) -> Result<bool> {
        loop {
            if self.iterations > MAX_ITERATIONS {
                return Err(Error::Numerical("simplex iteration limit exceeded".into()));
            }
            let Some(jc) = self.entering(limit) else {
                return Ok(true);
            };
            let Some(r) = self.leaving(jc) else {
                return Ok(false);
            };
            self.pivot(r, jc);
        }
    }

    fn solution(&self, limit: usize) -> Vec<f64> {
        let mut y = vec![0.0; limit];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < limit {
                y[b] = self.rhs[r];
            }
        }
        y
    }
}

/// Solves the program, returning an optimal vertex.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.objective.len();
    for (a, _) in lp.eq.iter().chain(lp.ub.iter()) {
        debug_assert_eq!(a.len(), n, "constraint arity mismatch");
    }
    debug_assert_eq!(lp.bounds.len(), n);

    // Map original variables onto nonnegative standard-form variables.
    let mut var_map = Vec::with_capacity(n);
    let mut n_std = 0usize;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new(); // (std col, upper-lower)
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if lo > hi {
            return Err(Error::Infeasible(format!("variable {j} has lower {lo} > upper {hi}")));
        }
        if lo.is_finite() {
            var_map.push(VarMap::Shifted { col: n_std, lower: lo });
            if hi.is_finite() {
                extra_rows.push((n_std, hi - lo));
            }
            n_std += 1;
        } else if hi.is_finite() {
            var_map.push(VarMap::Reflected { col: n_std, upper: hi });
            n_std += 1;
        } else {
            var_map.push(VarMap::Split { pos: n_std, neg: n_std + 1 });
            n_std += 2;
        }
    }

    let to_std = |coeffs: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut row = vec![0.0; n_std];
        let mut b = rhs;
        for (j, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            match var_map[j] {
                VarMap::Shifted { col, lower } => {
                    row[col] += c;
                    b -= c * lower;
                }
                VarMap::Reflected { col, upper } => {
                    row[col] -= c;
                    b -= c * upper;
                }
                VarMap::Split { pos, neg } => {
                    row[pos] += c;
                    row[neg] -= c;
                }
            }
        }
        (row, b)
    };

    // Assemble rows: equalities, general inequalities, then bound rows.
    let mut rows_std: Vec<(Vec<f64>, f64, bool)> = Vec::new(); // (row, rhs, is_eq)
    for (a, b) in &lp.eq {
        let (row, rhs) = to_std(a, *b);
        rows_std.push((row, rhs, true));
    }
    for (a, b) in &lp.ub {
        let (row, rhs) = to_std(a, *b);
        rows_std.push((row, rhs, false));
    }
    for &(col, cap) in &extra_rows {
        let mut row = vec![0.0; n_std];
        row[col] = 1.0;
        rows_std.push((row, cap, false));
    }

    let m = rows_std.len();
    let n_slack = rows_std.iter().filter(|(_, _, is_eq)| !is_eq).count();
    let ncols_no_art = n_std + n_slack;

    // Build the tableau with slacks; negate rows to make every rhs >= 0, then
    // add artificials where no slack can serve as the initial basis.
    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    let mut slack_col = 0usize;
    let mut needs_artificial = Vec::with_capacity(m);
    for (row_std, b, is_eq) in &rows_std {
        let mut row = vec![0.0; ncols_no_art];
        row[..n_std].copy_from_slice(row_std);
        let mut b = *b;
        let mut slack_sign = 0.0;
        if !is_eq {
            row[n_std + slack_col] = 1.0;
            slack_sign = 1.0;
            slack_col += 1;
        }
        if b < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
            b = -b;
            slack_sign = -slack_sign;
        }
        needs_artificial.push(slack_sign <= 0.0);
        rows.push(row);
        rhs.push(b);
    }

    let n_art = needs_artificial.iter().filter(|&&x| x).count();
    let ncols = ncols_no_art + n_art;
    let mut basis = vec![0usize; m];
    let mut art_col = ncols_no_art;
    for (r, row) in rows.iter_mut().enumerate() {
        row.resize(ncols, 0.0);
        if needs_artificial[r] {
            row[art_col] = 1.0;
            basis[r] = art_col;
            art_col += 1;
        } else {
            // the slack column is the last nonzero this row added
            let col = row[..ncols_no_art]
                .iter()
                .rposition(|&v| v == 1.0)
                .expect("slack column present");
            basis[r] = col;
        }
    }

    let mut tableau = Tableau {
        ncols,
        rows,
        rhs,
        basis,
        cost: vec![0.0; ncols],
        iterations: 0,
    };

    // Phase 1: drive artificials to zero.
    if n_art > 0 {
        let mut phase1 = vec![0.0; ncols];
        for c in phase1.iter_mut().skip(ncols_no_art) {
            *c = 1.0;
        }
        tableau.price_out(&phase1);
        tableau.run(tableau.ncols).map(|_| ())?; // phase 1 is never unbounded
        let infeasibility: f64 = tableau
            .basis
            .iter()
            .zip(&tableau.rhs)
            .filter(|(b, _)| **b >= ncols_no_art)
            .map(|(_, v)| v.abs())
            .sum();
        if infeasibility > EPS_FEAS {
            return Err(Error::Infeasible(format!(
                "phase-1 residual {infeasibility:.3e}"
            )));
        }
        // Pivot out artificials basic at zero; drop redundant rows.
        let mut r = 0;
        while r < tableau.rows.len() {
            if tableau.basis[r] >= ncols_no_art {
                if let Some(jc) = (0..ncols_no_art)
                    .find(|&j| tableau.rows[r][j].abs() > EPS_PIVOT)
                {
                    tableau.pivot(r, jc);
                    r += 1;
                } else {
                    tableau.rows.remove(r);
                    tableau.rhs.remove(r);
                    tableau.basis.remove(r);
                }
            } else {
                r += 1;
            }
        }
    }

    // Phase 2 over non-artificial columns.
    let mut phase2 = vec![0.0; tableau.ncols];
    for (j, map) in var_map.iter().enumerate() {
        let c = lp.objective[j];
        match *map {
            VarMap::Shifted { col, .. } => phase2[col] += c,
            VarMap::Reflected { col, .. } => phase2[col] -= c,
            VarMap::Split { pos, neg } => {
                phase2[pos] += c;
                phase2[neg] -= c;
            }
        }
    }
    tableau.price_out(&phase2);
    if !tableau.run(ncols_no_art)? {
        return Err(Error::Unbounded("objective decreases along a feasible ray".into()));
    }

    let y = tableau.solution(ncols_no_art);
    let mut x = vec![0.0; n];
    for (j, map) in var_map.iter().enumerate() {
        x[j] = match *map {
            VarMap::Shifted { col, lower } => lower + y[col],
            VarMap::Reflected { col, upper } => upper - y[col],
            VarMap::Split { pos, neg } => y[pos] - y[neg],
        };
    }
    let objective = lp
        .objective
        .iter()
        .zip(&x)
        .map(|(c, v)| c * v)
        .sum::<f64>();
    Ok(LpSolution { x, objective, iterations: tableau.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn simple_bounded_min() {
        // min -x - 2y st x + y <= 4, x <= 3, y <= 2, x,y >= 0
        let lp = LinearProgram {
            objective: vec![-1.0, -2.0],
            eq: vec![],
            ub: vec![(vec![1.0, 1.0], 4.0)],
            bounds: vec![(0.0, 3.0), (0.0, 2.0)],
        };
        let sol = solve(&lp).unwrap();
        assert_relative_eq!(sol.objective, -6.0, epsilon = 1e-9);
        assert_relative_eq!(sol.x[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn equality_with_free_variable() {
        // min x + y st x + y = 1, x free, y >= 0 -> objective 1 everywhere on the line
        let lp = LinearProgram {
            objective: vec![1.0, 1.0],
            eq: vec![(vec![1.0, 1.0], 1.0)],
            ub: vec![],
            bounds: vec![(-INF, INF), (0.0, INF)],
        };
        let sol = solve(&lp).unwrap();
        assert_relative_eq!(sol.objective, 1.0, epsilon = 1e-9);
        assert_relative_eq!(sol.x[0] + sol.x[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn negative_bounds_and_negative_rhs() {
        // min x st x >= -5 (as bound), -x <= 3 i.e. x >= -3
        let lp = LinearProgram {
            objective: vec![1.0],
            eq: vec![],
            ub: vec![(vec![-1.0], 3.0)],
            bounds: vec![(-5.0, INF)],
        };
        let sol = solve(&lp).unwrap();
        assert_relative_eq!(sol.x[0], -3.0, epsilon = 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        let lp = LinearProgram {
            objective: vec![0.0],
            eq: vec![(vec![1.0], 2.0)],
            ub: vec![(vec![1.0], 1.0)],
            bounds: vec![(0.0, INF)],
        };
        assert!(matches!(solve(&lp), Err(Error::Infeasible(_))));
    }

    #[test]
    fn detects_unbounded() {
        let lp = LinearProgram {
            objective: vec![-1.0],
            eq: vec![],
            ub: vec![],
            bounds: vec![(0.0, INF)],
        };
        assert!(matches!(solve(&lp), Err(Error::Unbounded(_))));
    }

    #[test]
    fn free_variable_goes_negative() {
        // min x st x >= -2 via inequality -x <= 2, x free
        let lp = LinearProgram {
            objective: vec![1.0],
            eq: vec![],
            ub: vec![(vec![-1.0], 2.0)],
            bounds: vec![(-INF, INF)],
        };
        let sol = solve(&lp).unwrap();
        assert_relative_eq!(sol.x[0], -2.0, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_equalities() {
        // duplicated equality rows must not break phase 1
        let lp = LinearProgram {
            objective: vec![1.0, 1.0],
            eq: vec![(vec![1.0, 1.0], 1.0), (vec![1.0, 1.0], 1.0)],
            ub: vec![],
            bounds: vec![(0.0, INF), (0.0, INF)],
        };
        let sol = solve(&lp).unwrap();
        assert_relative_eq!(sol.objective, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn reflected_variable_only_upper() {
        // min -x st x <= 7, x unbounded below
        let lp = LinearProgram {
            objective: vec![-1.0],
            eq: vec![],
            ub: vec![],
            bounds: vec![(-INF, 7.0)],
        };
        let sol = solve(&lp).unwrap();
        assert_relative_eq!(sol.x[0], 7.0, epsilon = 1e-9);
    }

    #[test]
    fn random_lps_agree_with_box_enumeration() {
        // min c'x over a box with one extra inequality: the optimum sits at a
        // vertex of the arrangement; enumerate box corners and clip.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
            let b = rng.gen_range(0.5..2.5);
            let lp = LinearProgram {
                objective: c.clone(),
                eq: vec![],
                ub: vec![(a.clone(), b)],
                bounds: vec![(0.0, 1.0); 3],
            };
            let sol = solve(&lp).unwrap();
            // brute force on a fine grid
            let mut best = f64::INFINITY;
            let steps = 40;
            for i in 0..=steps {
                for j in 0..=steps {
                    for k in 0..=steps {
                        let x = [
                            i as f64 / steps as f64,
                            j as f64 / steps as f64,
                            k as f64 / steps as f64,
                        ];
                        let lhs: f64 = a.iter().zip(&x).map(|(p, q)| p * q).sum();
                        if lhs <= b + 1e-12 {
                            let val: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();
                            best = best.min(val);
                        }
                    }
                }
            }
            assert!(
                sol.objective <= best + 1e-7,
                "lp {} vs grid {}",
                sol.objective,
                best
            );
        }
    }
}
