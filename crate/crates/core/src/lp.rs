//! Dense two-phase primal simplex in standard form `min cᵀx, Ax = b, x ≥ 0`.
//!
//! Built for many tiny, often degenerate programs (barycentric-coordinate
//! systems and pricing subproblems), so it prioritizes determinism over
//! speed: Bland's anti-cycling rule, lowest-index tie breaking in the ratio
//! test, and a fresh LU factorization of the basis at every pivot. Optimal
//! results are always basic feasible solutions, i.e. vertices of the
//! feasible polyhedron.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default primal feasibility tolerance.
pub const DEFAULT_FEAS_TOL: f64 = 1e-7;

const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LpError {
    #[error("simplex exceeded the deterministic pivot cap of {0}")]
    MaxPivotsExceeded(usize),
    #[error("numerical breakdown: singular basis or pivot below tolerance")]
    NumericalBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpProblem {
    /// Constraint matrix, m×k.
    pub a: DMatrix<f64>,
    /// Right-hand side, length m.
    pub b: DVector<f64>,
    /// Objective (minimized), length k.
    pub c: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    /// Primal solution over the original columns; zero off the basis.
    pub x: DVector<f64>,
    /// Basic column indices (into the original columns) on `Optimal`.
    pub basis: Vec<usize>,
    pub objective: f64,
}

struct Tableau {
    a: DMatrix<f64>,
    b: DVector<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn basis_matrix(&self) -> DMatrix<f64> {
        let m = self.a.nrows();
        let mut bm = DMatrix::zeros(m, m);
        for (col, &j) in self.basis.iter().enumerate() {
            bm.set_column(col, &self.a.column(j));
        }
        bm
    }
}

/// Runs the simplex loop over the allowed entering columns.
///
/// Returns `Ok(None)` at optimality, `Ok(Some(enter))` when column `enter`
/// proves the problem unbounded.
fn simplex_loop(
    t: &mut Tableau,
    c: &DVector<f64>,
    enterable: &[bool],
    pivots_left: &mut usize,
    cap: usize,
) -> Result<Option<usize>, LpError> {
    let m = t.a.nrows();
    let cost_tol = 1e-9 * (1.0 + c.amax());
    loop {
        if *pivots_left == 0 {
            return Err(LpError::MaxPivotsExceeded(cap));
        }
        *pivots_left -= 1;

        let basis_matrix = t.basis_matrix();
        let lu = basis_matrix.clone().lu();
        let xb = lu
            .solve(&t.b)
            .ok_or(LpError::NumericalBreakdown)?;
        let cb = DVector::from_iterator(m, t.basis.iter().map(|&j| c[j]));
        let duals = basis_matrix
            .transpose()
            .lu()
            .solve(&cb)
            .ok_or(LpError::NumericalBreakdown)?;

        // Bland: entering column is the lowest index with a negative reduced cost.
        let mut entering = None;
        for j in 0..t.a.ncols() {
            if !enterable[j] || t.basis.contains(&j) {
                continue;
            }
            let reduced = c[j] - duals.dot(&t.a.column(j).into_owned());
            if reduced < -cost_tol {
                entering = Some(j);
                break;
            }
        }
        let Some(enter) = entering else {
            return Ok(None);
        };

        let direction = lu
            .solve(&t.a.column(enter).into_owned())
            .ok_or(LpError::NumericalBreakdown)?;

        // Ratio test; ties broken by the lowest basic-variable index.
        let mut leave_row: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            if direction[i] > PIVOT_TOL {
                let ratio = xb[i].max(0.0) / direction[i];
                let better = match leave_row {
                    None => true,
                    Some(r) => {
                        ratio < best_ratio - 1e-12
                            || (ratio <= best_ratio + 1e-12 && t.basis[i] < t.basis[r])
                    }
                };
                if better {
                    best_ratio = ratio;
                    leave_row = Some(i);
                }
            }
        }
        let Some(row) = leave_row else {
            return Ok(Some(enter));
        };
        t.basis[row] = enter;
    }
}

fn current_solution(t: &Tableau, ncols: usize) -> Result<DVector<f64>, LpError> {
    let xb = t
        .basis_matrix()
        .lu()
        .solve(&t.b)
        .ok_or(LpError::NumericalBreakdown)?;
    let mut x = DVector::zeros(ncols);
    for (row, &j) in t.basis.iter().enumerate() {
        if j < ncols {
            x[j] = xb[row];
        }
    }
    Ok(x)
}

/// Two-phase primal simplex. On `Optimal` the returned point is a vertex:
/// nonbasic components are exactly zero and the basis columns are linearly
/// independent.
pub fn solve_lp(prob: &LpProblem, feas_tol: f64) -> Result<LpResult, LpError> {
    assert!(feas_tol > 0.0, "feasibility tolerance must be positive");
    let m = prob.a.nrows();
    let k = prob.a.ncols();
    assert_eq!(prob.b.len(), m);
    assert_eq!(prob.c.len(), k);

    let cap = 50 * (m + k).max(1);
    let mut pivots_left = cap;

    // Phase one: orient rows so b ≥ 0, append an artificial identity block.
    let mut a1 = DMatrix::zeros(m, k + m);
    let mut b1 = DVector::zeros(m);
    for i in 0..m {
        let sign = if prob.b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..k {
            a1[(i, j)] = sign * prob.a[(i, j)];
        }
        a1[(i, k + i)] = 1.0;
        b1[i] = sign * prob.b[i];
    }
    let mut c1 = DVector::zeros(k + m);
    for j in k..k + m {
        c1[j] = 1.0;
    }
    let mut t = Tableau {
        a: a1,
        b: b1,
        basis: (k..k + m).collect(),
    };
    let enterable = vec![true; k + m];
    let unbounded = simplex_loop(&mut t, &c1, &enterable, &mut pivots_left, cap)?;
    debug_assert!(unbounded.is_none(), "phase one is bounded below by zero");

    let x1 = current_solution(&t, k + m)?;
    let artificial_sum: f64 = (k..k + m).map(|j| x1[j]).sum();
    let b_scale = 1.0 + prob.b.amax();
    if artificial_sum > feas_tol * b_scale {
        return Ok(LpResult {
            status: LpStatus::Infeasible,
            x: DVector::zeros(k),
            basis: Vec::new(),
            objective: artificial_sum,
        });
    }

    // Drive remaining artificials out of the basis; rows where that is
    // impossible are redundant and get dropped.
    let mut keep_rows: Vec<usize> = Vec::new();
    {
        let lu = t.basis_matrix().lu();
        for row in 0..m {
            if t.basis[row] < k {
                keep_rows.push(row);
                continue;
            }
            let mut replaced = false;
            for j in 0..k {
                if t.basis.contains(&j) {
                    continue;
                }
                let dir = lu
                    .solve(&t.a.column(j).into_owned())
                    .ok_or(LpError::NumericalBreakdown)?;
                if dir[row].abs() > 1e-9 {
                    t.basis[row] = j;
                    replaced = true;
                    break;
                }
            }
            if replaced {
                keep_rows.push(row);
            }
        }
    }
    if keep_rows.len() < m {
        let rows: Vec<usize> = keep_rows;
        let mut a_red = DMatrix::zeros(rows.len(), k + m);
        let mut b_red = DVector::zeros(rows.len());
        for (new_i, &i) in rows.iter().enumerate() {
            for j in 0..k + m {
                a_red[(new_i, j)] = t.a[(i, j)];
            }
            b_red[new_i] = t.b[i];
        }
        t.basis = rows.iter().map(|&i| t.basis[i]).collect();
        t.a = a_red;
        t.b = b_red;
    }

    // Phase two over the original columns only.
    let mut c2 = DVector::zeros(k + m);
    for j in 0..k {
        c2[j] = prob.c[j];
    }
    let mut enterable2 = vec![false; k + m];
    for e in enterable2.iter_mut().take(k) {
        *e = true;
    }
    let unbounded = simplex_loop(&mut t, &c2, &enterable2, &mut pivots_left, cap)?;

    let x = current_solution(&t, k)?;
    if let Some(enter) = unbounded {
        debug_assert!(ray_certificate(prob, &t, enter));
        return Ok(LpResult {
            status: LpStatus::Unbounded,
            x,
            basis: t.basis.clone(),
            objective: f64::NEG_INFINITY,
        });
    }

    let residual = (&prob.a * &x - &prob.b).amax();
    if residual > feas_tol * b_scale || x.min() < -feas_tol * b_scale {
        return Err(LpError::NumericalBreakdown);
    }
    let objective = prob.c.dot(&x);
    Ok(LpResult {
        status: LpStatus::Optimal,
        x,
        basis: t.basis.clone(),
        objective,
    })
}

/// Checks the unboundedness certificate: a ray direction d with Ad = 0,
/// d ≥ 0 and cᵀd < 0.
fn ray_certificate(prob: &LpProblem, t: &Tableau, enter: usize) -> bool {
    let Some(dir) = t.basis_matrix().lu().solve(&t.a.column(enter).into_owned()) else {
        return false;
    };
    let k = prob.a.ncols();
    let mut d = DVector::zeros(k);
    if enter < k {
        d[enter] = 1.0;
    }
    for (row, &j) in t.basis.iter().enumerate() {
        if j < k {
            d[j] = -dir[row];
        }
    }
    (&prob.a * &d).amax() <= 1e-7 && d.min() >= -1e-9 && prob.c.dot(&d) < 0.0
}
