//! Dense two-phase primal simplex for `min c'x  s.t.  A x = b, x >= 0`.
//!
//! Equality-only standard form; callers split free variables and add slack
//! columns themselves. Dantzig pricing with a deterministic Bland fallback
//! after a run of degenerate pivots, so cycling cannot occur. The tableau
//! is refactorized from the original data whenever a phase stalls, which
//! keeps accumulated pivot error from masking improving directions;
//! feasibility is judged on true residuals, never on tableau values.
//! Artificial columns are kept through phase 2, which makes the dual
//! values readable off their reduced costs.

use super::Mat;

/// Entering threshold: a column is an improvement candidate when its
/// reduced cost is below `-RC_TOL`.
const RC_TOL: f64 = 1e-10;
/// Minimum magnitude accepted for a pivot element.
const PIVOT_TOL: f64 = 1e-11;
/// Maximum true constraint residual of a feasible solution.
const FEAS_TOL: f64 = 1e-9;
/// Refactorization rounds per phase.
const MAX_REFRESH: usize = 4;

#[derive(Debug, Clone)]
pub struct StandardLp {
    /// Objective coefficients, minimized.
    pub costs: Vec<f64>,
    /// Equality constraint matrix.
    pub a: Mat,
    /// Right-hand side, one entry per row of `a`.
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// Dual value per original constraint row.
    pub duals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
}

struct Tableau {
    /// `m x (n + m + 1)` tableau: original columns, artificial columns, rhs.
    t: Mat,
    /// Reduced-cost row for the active phase (length `n + m + 1`; the last
    /// entry carries minus the objective value).
    z: Vec<f64>,
    basis: Vec<usize>,
    n: usize,
    m: usize,
    /// Row sign applied to reach `b >= 0`, remembered for dual recovery.
    row_sign: Vec<f64>,
    /// Signed copies of the original data for refactorization.
    sa: Mat,
    sb: Vec<f64>,
}

impl Tableau {
    fn new(lp: &StandardLp) -> Self {
        let m = lp.a.rows();
        let n = lp.a.cols();
        let mut sa = Mat::zeros(m, n);
        let mut sb = vec![0.0; m];
        let mut row_sign = vec![1.0; m];
        for i in 0..m {
            let sign = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
            row_sign[i] = sign;
            for j in 0..n {
                sa.set(i, j, sign * lp.a.get(i, j));
            }
            sb[i] = sign * lp.b[i];
        }
        let mut tab = Tableau {
            t: Mat::zeros(m, n + m + 1),
            z: vec![0.0; n + m + 1],
            basis: (n..n + m).collect(),
            n,
            m,
            row_sign,
            sa,
            sb,
        };
        tab.refactorize();
        tab
    }

    fn width(&self) -> usize {
        self.n + self.m + 1
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t.get(i, self.n + self.m)
    }

    /// Rebuild the tableau from the original data by eliminating on the
    /// current basis columns; wipes out accumulated pivot error. The
    /// basis-to-row assignment is re-derived greedily by largest pivot.
    fn refactorize(&mut self) {
        let (m, n, w) = (self.m, self.n, self.width());
        let mut t = Mat::zeros(m, w);
        for i in 0..m {
            for j in 0..n {
                t.set(i, j, self.sa.get(i, j));
            }
            t.set(i, n + i, 1.0);
            t.set(i, n + m, self.sb[i]);
        }
        let cols: Vec<usize> = self.basis.clone();
        let mut assigned = vec![usize::MAX; m];
        let mut row_used = vec![false; m];
        for &col in &cols {
            let mut best = 0.0;
            let mut pick = None;
            for r in 0..m {
                if !row_used[r] {
                    let v = t.get(r, col).abs();
                    if v > best {
                        best = v;
                        pick = Some(r);
                    }
                }
            }
            // A vanishing pivot cannot happen for an independent basis;
            // fall back to leaving the artificial of an unused row basic.
            let Some(r) = pick else { continue };
            row_used[r] = true;
            assigned[r] = col;
            let piv = t.get(r, col);
            let inv = 1.0 / piv;
            for j in 0..w {
                t.set(r, j, t.get(r, j) * inv);
            }
            for i in 0..m {
                if i != r {
                    let f = t.get(i, col);
                    if f != 0.0 {
                        for j in 0..w {
                            let v = t.get(i, j) - f * t.get(r, j);
                            t.set(i, j, v);
                        }
                    }
                }
            }
        }
        for r in 0..m {
            if assigned[r] == usize::MAX {
                assigned[r] = n + r;
            }
        }
        self.t = t;
        self.basis = assigned;
    }

    /// Reduced costs for the cost vector `(costs, artificial_cost)`.
    fn rebuild_z(&mut self, costs: &[f64], artificial_cost: f64) {
        let (m, n, w) = (self.m, self.n, self.width());
        let mut z = vec![0.0; w];
        z[..n].copy_from_slice(costs);
        for j in n..n + m {
            z[j] = artificial_cost;
        }
        for i in 0..m {
            let cb = if self.basis[i] < n {
                costs[self.basis[i]]
            } else {
                artificial_cost
            };
            if cb != 0.0 {
                for j in 0..w {
                    z[j] -= cb * self.t.get(i, j);
                }
            }
        }
        self.z = z;
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width();
        let piv = self.t.get(row, col);
        let inv = 1.0 / piv;
        for j in 0..w {
            let v = self.t.get(row, j) * inv;
            self.t.set(row, j, v);
        }
        for i in 0..self.m {
            if i == row {
                continue;
            }
            let f = self.t.get(i, col);
            if f == 0.0 {
                continue;
            }
            for j in 0..w {
                let v = self.t.get(i, j) - f * self.t.get(row, j);
                self.t.set(i, j, v);
            }
        }
        let f = self.z[col];
        if f != 0.0 {
            for j in 0..w {
                self.z[j] -= f * self.t.get(row, j);
            }
        }
        self.basis[row] = col;
    }

    /// One simplex phase: price, ratio test, pivot, until optimal.
    /// `allowed` bounds the column range that may enter. Returns the
    /// number of pivots performed.
    fn run_phase(&mut self, allowed: usize, max_iter: usize) -> Result<usize, LpError> {
        let mut degenerate_run = 0usize;
        let bland_after = 10 * (self.m + allowed);
        let mut pivots = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate_run > bland_after;
            let mut enter: Option<usize> = None;
            if bland {
                for j in 0..allowed {
                    if self.z[j] < -RC_TOL {
                        enter = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = -RC_TOL;
                for j in 0..allowed {
                    if self.z[j] < best {
                        best = self.z[j];
                        enter = Some(j);
                    }
                }
            }
            let Some(col) = enter else {
                return Ok(pivots);
            };

            // Ratio test; ties resolved toward the smallest basis index,
            // which together with the Bland fallback excludes cycling.
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.m {
                let a = self.t.get(i, col);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    let better = ratio < best_ratio - 1e-12
                        || (ratio < best_ratio + 1e-12
                            && leave.is_some_and(|l| self.basis[i] < self.basis[l]));
                    if better {
                        best_ratio = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(row) = leave else {
                return Err(LpError::Unbounded);
            };
            if best_ratio.abs() < 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(row, col);
            pivots += 1;
        }
        Err(LpError::IterationLimit)
    }

    /// Run a phase to optimality with refactorization between rounds, so
    /// stale tableau entries cannot end a phase early. `allowed` bounds
    /// the entering columns: phase 1 prices the artificials too (it
    /// minimizes the true L1 infeasibility, and near-feasible systems
    /// need artificial re-entry to reach it), phase 2 bars them.
    fn run_phase_refreshed(
        &mut self,
        costs: &[f64],
        artificial_cost: f64,
        allowed: usize,
        max_iter: usize,
    ) -> Result<(), LpError> {
        for round in 0..MAX_REFRESH {
            if round > 0 {
                self.refactorize();
            }
            self.rebuild_z(costs, artificial_cost);
            let pivots = self.run_phase(allowed, max_iter)?;
            if round > 0 && pivots == 0 {
                return Ok(());
            }
        }
        Ok(())
    }

    /// Basic solution restricted to the original columns.
    fn solution(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for i in 0..self.m {
            if self.basis[i] < self.n {
                x[self.basis[i]] = self.rhs(i).max(0.0);
            }
        }
        x
    }

    /// Largest true constraint violation of `x` against the original data.
    fn true_residual(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.m {
            let mut acc = 0.0;
            for j in 0..self.n {
                acc += self.sa.get(i, j) * x[j];
            }
            worst = worst.max((acc - self.sb[i]).abs());
        }
        worst
    }
}

/// Solve the standard-form program. Returns the optimal solution together
/// with duals for every original row.
pub fn solve(lp: &StandardLp) -> Result<LpSolution, LpError> {
    let m = lp.a.rows();
    let n = lp.a.cols();
    assert_eq!(lp.b.len(), m);
    assert_eq!(lp.costs.len(), n);

    let mut tab = Tableau::new(lp);
    let max_iter = 50_000 + 200 * (n + m);

    // Phase 1: minimize the artificial mass; judge feasibility on the true
    // residual of the resulting point.
    let zero_costs = vec![0.0; n];
    tab.run_phase_refreshed(&zero_costs, 1.0, n + m, max_iter)?;
    let x1 = tab.solution();
    if tab.true_residual(&x1) > FEAS_TOL {
        return Err(LpError::Infeasible);
    }

    // Drive any residual artificial out of the basis, pivoting on the
    // largest available element; a row with no eligible pivot is a
    // redundant constraint and can sit at zero.
    tab.rebuild_z(&zero_costs, 1.0);
    for i in 0..m {
        if tab.basis[i] >= n {
            let mut pivot_col = None;
            let mut best = PIVOT_TOL;
            for j in 0..n {
                let a = tab.t.get(i, j).abs();
                if a > best {
                    best = a;
                    pivot_col = Some(j);
                }
            }
            if let Some(j) = pivot_col {
                tab.pivot(i, j);
            }
        }
    }

    // Phase 2 with the real objective.
    tab.run_phase_refreshed(&lp.costs, 0.0, n, max_iter)?;

    let x = tab.solution();
    let value: f64 = lp.costs.iter().zip(&x).map(|(c, xi)| c * xi).sum();
    // Dual of original row i: minus the reduced cost of its artificial
    // column, times the sign flip applied to the row.
    tab.rebuild_z(&lp.costs, 0.0);
    let duals: Vec<f64> = (0..m)
        .map(|i| -tab.z[n + i] * tab.row_sign[i])
        .collect();
    Ok(LpSolution { x, value, duals })
}

/// Feasibility check: is there an `x >= 0` with `A x = b`? Returns a
/// feasible point when one exists.
pub fn feasible_point(a: Mat, b: Vec<f64>) -> Result<Option<Vec<f64>>, LpError> {
    let costs = vec![0.0; a.cols()];
    match solve(&StandardLp { costs, a, b }) {
        Ok(sol) => Ok(Some(sol.x)),
        Err(LpError::Infeasible) => Ok(None),
        Err(e) => Err(e),
    }
}
