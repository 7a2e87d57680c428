//! Thin wrapper over the interior-point backend.
//!
//! Everything convex in this crate — membership feasibility programs, vertex
//! normal-cone tests, and the receding-horizon program — funnels through
//! [`solve_qp`] so tolerances and status mapping live in one place.
//!
//! Default tolerances are far tighter than the backend's: tightened
//! constraints are active at the optimum in normal operation, and realized
//! states inherit the solver residual, so the residual must sit well below
//! the 1e-8 membership tolerance used by the verification checks.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

/// Sparse row: list of (variable index, coefficient).
pub type LinComb = Vec<(usize, f64)>;

/// `min Σ quad[(i,j)]·xᵢxⱼ + lin·x  s.t.  eq: a·x = b,  ineq: a·x ≤ b`.
///
/// `quad` holds upper-triangular entries (i ≤ j) of the objective's
/// coefficient matrix; it must be positive semidefinite.
#[derive(Debug, Clone, Default)]
pub struct QpProblem {
    pub num_vars: usize,
    pub quad: Vec<(usize, usize, f64)>,
    pub lin: Vec<f64>,
    pub eq: Vec<(LinComb, f64)>,
    pub ineq: Vec<(LinComb, f64)>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub enum SolveOutcome {
    Optimal(QpSolution),
    Infeasible,
    Failed(String),
}

/// Builds a CSC matrix from (row, col, value) triplets. Duplicate entries sum.
fn csc_from_triplets(
    nrows: usize,
    ncols: usize,
    triplets: &[(usize, usize, f64)],
) -> CscMatrix<f64> {
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ncols];
    for &(r, c, v) in triplets {
        debug_assert!(r < nrows && c < ncols);
        cols[c].push((r, v));
    }
    let mut colptr = Vec::with_capacity(ncols + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &mut cols {
        col.sort_by_key(|&(r, _)| r);
        let mut last: Option<usize> = None;
        for &(r, v) in col.iter() {
            if last == Some(r) {
                *nzval.last_mut().unwrap() += v;
            } else {
                rowval.push(r);
                nzval.push(v);
                last = Some(r);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
}

impl QpProblem {
    pub fn new(num_vars: usize) -> Self {
        QpProblem {
            num_vars,
            quad: Vec::new(),
            lin: vec![0.0; num_vars],
            eq: Vec::new(),
            ineq: Vec::new(),
        }
    }

    /// Objective value of the original problem at `x`.
    fn objective_at(&self, x: &[f64]) -> f64 {
        let mut obj = 0.0;
        for &(i, j, c) in &self.quad {
            obj += c * x[i] * x[j];
        }
        for (i, &q) in self.lin.iter().enumerate() {
            obj += q * x[i];
        }
        obj
    }
}

/// Solves the problem at the given feasibility/gap tolerance.
pub fn solve_qp_tol(p: &QpProblem, tol: f64) -> SolveOutcome {
    let n = p.num_vars;

    // Objective: backend minimizes (1/2)x'Px + q'x with P upper-triangular.
    // Coefficient c on xᵢxⱼ maps to P_ij = c (i < j) and P_ii = 2c.
    let mut ptrip = Vec::with_capacity(p.quad.len());
    for &(i, j, c) in &p.quad {
        debug_assert!(i <= j);
        ptrip.push((i, j, if i == j { 2.0 * c } else { c }));
    }
    let pmat = csc_from_triplets(n, n, &ptrip);

    // Constraints stacked as Ax + s = b with s in ZeroCone × NonnegativeCone.
    let mut atrip = Vec::new();
    let mut b = Vec::with_capacity(p.eq.len() + p.ineq.len());
    for (row, (comb, rhs)) in p.eq.iter().chain(p.ineq.iter()).enumerate() {
        for &(var, coef) in comb {
            atrip.push((row, var, coef));
        }
        b.push(*rhs);
    }
    let amat = csc_from_triplets(p.eq.len() + p.ineq.len(), n, &atrip);

    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if !p.eq.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(p.eq.len()));
    }
    if !p.ineq.is_empty() {
        cones.push(SupportedConeT::NonnegativeConeT(p.ineq.len()));
    }

    let settings = match DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_feas(tol)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .max_iter(200)
        .build()
    {
        Ok(s) => s,
        Err(e) => return SolveOutcome::Failed(format!("settings: {e:?}")),
    };

    let mut solver = match DefaultSolver::new(&pmat, &p.lin, &amat, &b, &cones, settings) {
        Ok(s) => s,
        Err(e) => return SolveOutcome::Failed(format!("setup: {e:?}")),
    };
    solver.solve();

    let status = solver.solution.status;
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let x = solver.solution.x.clone();
            let objective = p.objective_at(&x);
            SolveOutcome::Optimal(QpSolution { x, objective })
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveOutcome::Infeasible
        }
        other => SolveOutcome::Failed(format!("{other:?}")),
    }
}

/// Solves with the crate-default tolerance 1e-12.
pub fn solve_qp(p: &QpProblem) -> SolveOutcome {
    solve_qp_tol(p, 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_quadratic_minimum() {
        // min (x-1)² + (y+2)² = x² - 2x + y² + 4y + 5
        let mut p = QpProblem::new(2);
        p.quad = vec![(0, 0, 1.0), (1, 1, 1.0)];
        p.lin = vec![-2.0, 4.0];
        match solve_qp(&p) {
            SolveOutcome::Optimal(sol) => {
                assert!((sol.x[0] - 1.0).abs() < 1e-9);
                assert!((sol.x[1] + 2.0).abs() < 1e-9);
                assert!((sol.objective + 5.0).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn lp_with_active_bound() {
        // min -x s.t. x <= 3, x >= 0  → x* = 3
        let mut p = QpProblem::new(1);
        p.lin = vec![-1.0];
        p.ineq = vec![(vec![(0, 1.0)], 3.0), (vec![(0, -1.0)], 0.0)];
        match solve_qp(&p) {
            SolveOutcome::Optimal(sol) => assert!((sol.x[0] - 3.0).abs() < 1e-10),
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn infeasible_is_reported() {
        // x <= -1 and x >= 1
        let mut p = QpProblem::new(1);
        p.ineq = vec![(vec![(0, 1.0)], -1.0), (vec![(0, -1.0)], -1.0)];
        match solve_qp(&p) {
            SolveOutcome::Infeasible => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn equality_and_inequality_mix() {
        // min x² + y² s.t. x + y = 2, x <= 0.5 → x = 0.5, y = 1.5
        let mut p = QpProblem::new(2);
        p.quad = vec![(0, 0, 1.0), (1, 1, 1.0)];
        p.eq = vec![(vec![(0, 1.0), (1, 1.0)], 2.0)];
        p.ineq = vec![(vec![(0, 1.0)], 0.5)];
        match solve_qp(&p) {
            SolveOutcome::Optimal(sol) => {
                assert!((sol.x[0] - 0.5).abs() < 1e-9);
                assert!((sol.x[1] - 1.5).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }
}
