//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize     1/2 x' D x - d' x
//!     subject to   A_eq x  = b_eq
//!                  A_ineq x >= b_ineq
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani. The method starts
//! from the unconstrained minimum and adds violated constraints one at a time,
//! keeping the iterate dual feasible. `D` must be positive definite; callers
//! holding a merely semidefinite matrix shift it first (see
//! [`crate::mv_optimizer::regularize`]).
//!
//! Pivoting is deterministic: equality constraints enter in index order, then
//! the most violated inequality enters, lowest index first on ties; the
//! constraint dropped on a partial step is the lowest-index minimizer of the
//! ratio test.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Feasibility tolerance reported by [`QpSolution`] checks.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Violation below which a constraint is considered satisfied while pivoting.
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("iteration cap of {0} reached")]
    MaxIterations(usize),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// A convex quadratic program in the `1/2 x'Dx - d'x` form.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub quad: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
}

impl QuadraticProgram {
    /// Unconstrained program; add constraints with the builder methods.
    pub fn new(quad: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            quad,
            linear,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    /// `sum(x) = 1, x >= 0`, appended after any existing constraints.
    pub fn on_simplex(self) -> Self {
        let n = self.dim();
        let a_eq = self.a_eq.clone().insert_rows(self.a_eq.nrows(), 1, 1.0);
        let b_eq = self.b_eq.clone().push(1.0);
        let k = self.a_ineq.nrows();
        let mut a_ineq = self.a_ineq.clone().insert_rows(k, n, 0.0);
        for i in 0..n {
            a_ineq[(k + i, i)] = 1.0;
        }
        let b_ineq = self.b_ineq.clone().insert_rows(k, n, 0.0);
        Self {
            a_eq,
            b_eq,
            a_ineq,
            b_ineq,
            ..self
        }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.quad * x)) - self.linear.dot(x)
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        if n == 0 {
            return Err(QpError::Dimension("empty program".into()));
        }
        if self.quad.shape() != (n, n) {
            return Err(QpError::Dimension(format!(
                "quadratic term is {:?}, expected ({n}, {n})",
                self.quad.shape()
            )));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(QpError::Dimension("equality constraints".into()));
        }
        if self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return Err(QpError::Dimension("inequality constraints".into()));
        }
        let scale = self.quad.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.quad[(i, j)] - self.quad[(j, i)]).abs() > 1e-12 * scale {
                    return Err(QpError::Dimension(format!(
                        "quadratic term not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Binding constraints, numbered equalities first then inequalities.
    pub active_set: Vec<usize>,
    /// Lagrange multipliers in the same numbering; zero for inactive constraints.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
}

impl QpSolution {
    /// Infinity norm of `Dx - d - A' u`.
    pub fn stationarity_residual(&self, qp: &QuadraticProgram) -> f64 {
        let m_eq = qp.a_eq.nrows();
        let mut g = &qp.quad * &self.x - &qp.linear;
        for i in 0..m_eq {
            g -= qp.a_eq.row(i).transpose() * self.multipliers[i];
        }
        for i in 0..qp.a_ineq.nrows() {
            g -= qp.a_ineq.row(i).transpose() * self.multipliers[m_eq + i];
        }
        g.amax()
    }

    /// Largest constraint violation.
    pub fn max_violation(&self, qp: &QuadraticProgram) -> f64 {
        let eq = (&qp.a_eq * &self.x - &qp.b_eq).amax();
        let ineq = (&qp.a_ineq * &self.x - &qp.b_ineq)
            .iter()
            .fold(0.0_f64, |acc, &s| acc.max(-s));
        if qp.a_eq.nrows() == 0 {
            ineq
        } else {
            eq.max(ineq)
        }
    }
}

/// Working factorization: `J = L^{-T} Q` and the upper triangular `R`.
struct Factor {
    n: usize,
    j: DMatrix<f64>,
    r: Vec<Vec<f64>>,
}

impl Factor {
    fn q(&self) -> usize {
        self.r.len()
    }

    fn rotate_columns(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for row in 0..self.n {
            let x = self.j[(row, a)];
            let y = self.j[(row, b)];
            self.j[(row, a)] = c * x + s * y;
            self.j[(row, b)] = -s * x + c * y;
        }
    }

    /// Adds a constraint whose transformed normal is `d = J' n`.
    fn add(&mut self, mut d: DVector<f64>) {
        let q = self.q();
        for i in (q + 1..self.n).rev() {
            let (a, b) = (d[i - 1], d[i]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[i - 1] = h;
            d[i] = 0.0;
            self.rotate_columns(i - 1, i, c, s);
        }
        // R is stored column-wise
        self.r.push(d.rows(0, q + 1).iter().copied().collect());
    }

    /// Removes the active constraint at position `k`.
    fn drop(&mut self, k: usize) {
        self.r.remove(k);
        let q = self.q();
        for col in k..q {
            let (a, b) = (self.r[col][col], self.r[col][col + 1]);
            let h = a.hypot(b);
            let (c, s) = if h == 0.0 { (1.0, 0.0) } else { (a / h, b / h) };
            for later in col..q {
                let x = self.r[later][col];
                let y = self.r[later][col + 1];
                self.r[later][col] = c * x + s * y;
                self.r[later][col + 1] = -s * x + c * y;
            }
            self.r[col].pop();
            self.rotate_columns(col, col + 1, c, s);
        }
    }

    /// Solves `R r = rhs` by back substitution.
    fn back_solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let q = self.q();
        let mut out = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = rhs[i];
            for k in i + 1..q {
                acc -= self.r[k][i] * out[k];
            }
            let diag = self.r[i][i];
            if diag == 0.0 || !diag.is_finite() {
                return None;
            }
            out[i] = acc / diag;
        }
        Some(out)
    }
}

/// One constraint row in the combined numbering, sign-adjusted for equalities.
#[derive(Clone, Copy)]
struct Active {
    index: usize,
    equality: bool,
    sign: f64,
}

/// Solves a strictly convex quadratic program.
pub fn solve_qp(qp: &QuadraticProgram) -> Result<QpSolution, QpError> {
    qp.validate()?;
    let n = qp.dim();
    let m_eq = qp.a_eq.nrows();
    let m_in = qp.a_ineq.nrows();
    let max_iter = 100 * n;

    let chol = nalgebra::Cholesky::new(qp.quad.clone())
        .ok_or(QpError::NumericalBreakdown("quadratic term is not positive definite"))?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NumericalBreakdown("singular Cholesky factor"))?;
    let mut factor = Factor {
        n,
        j: l_inv.transpose(),
        r: Vec::new(),
    };

    let mut x = chol.solve(&qp.linear);
    let mut active: Vec<Active> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m_eq + m_in];
    let mut iterations = 0;
    let mut next_eq = 0;

    let normal = |idx: usize| -> DVector<f64> {
        if idx < m_eq {
            qp.a_eq.row(idx).transpose()
        } else {
            qp.a_ineq.row(idx - m_eq).transpose()
        }
    };
    let rhs = |idx: usize| -> f64 {
        if idx < m_eq {
            qp.b_eq[idx]
        } else {
            qp.b_ineq[idx - m_eq]
        }
    };

    loop {
        // choose the entering constraint
        let entering = if next_eq < m_eq {
            let idx = next_eq;
            next_eq += 1;
            let s = normal(idx).dot(&x) - rhs(idx);
            Some(Active {
                index: idx,
                equality: true,
                sign: if s > 0.0 { -1.0 } else { 1.0 },
            })
        } else {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..m_in {
                let idx = m_eq + i;
                if is_active[idx] {
                    continue;
                }
                let s = qp.a_ineq.row(i).transpose().dot(&x) - qp.b_ineq[i];
                let tol = PIVOT_TOL * (1.0 + qp.b_ineq[i].abs());
                if s < -tol && best.is_none_or(|(_, sb)| s < sb) {
                    best = Some((idx, s));
                }
            }
            best.map(|(idx, _)| Active {
                index: idx,
                equality: false,
                sign: 1.0,
            })
        };
        let Some(p) = entering else { break };
        let np = normal(p.index) * p.sign;
        let bp = rhs(p.index) * p.sign;
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::MaxIterations(max_iter));
            }
            let q = factor.q();
            let d = factor.j.transpose() * &np;
            let d_norm2 = d.norm_squared();
            let tail2: f64 = d.rows(q, n - q).norm_squared();
            let mut z = DVector::zeros(n);
            for i in q..n {
                z.axpy(d[i], &factor.j.column(i), 1.0);
            }
            let r = factor
                .back_solve(d.as_slice())
                .ok_or(QpError::NumericalBreakdown("singular working-set system"))?;

            // dual step: lowest-index minimizer of u_j / r_j over droppable constraints
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, a) in active.iter().enumerate() {
                if a.equality || r[k] <= 0.0 {
                    continue;
                }
                let ratio = u[k] / r[k];
                if ratio < t1 {
                    t1 = ratio;
                    drop_at = Some(k);
                }
            }

            let s_p = np.dot(&x) - bp;
            let t2 = if tail2 <= 1e-24 * d_norm2.max(f64::MIN_POSITIVE) {
                f64::INFINITY
            } else {
                -s_p / tail2
            };

            if t2.is_infinite() {
                if p.equality && s_p.abs() <= PIVOT_TOL * (1.0 + bp.abs()) && drop_at.is_none() {
                    // dependent equality already satisfied
                    break;
                }
                let Some(k) = drop_at else {
                    return Err(QpError::Infeasible);
                };
                for (uk, rk) in u.iter_mut().zip(&r) {
                    *uk -= t1 * rk;
                }
                u_p += t1;
                remove_active(&mut factor, &mut active, &mut u, &mut is_active, k);
                continue;
            }

            let t = t1.min(t2);
            x.axpy(t, &z, 1.0);
            for (uk, rk) in u.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            u_p += t;

            if t2 <= t1 {
                factor.add(d);
                active.push(p);
                u.push(u_p);
                is_active[p.index] = true;
                break;
            }
            let k = drop_at.expect("finite t1 has a drop candidate");
            remove_active(&mut factor, &mut active, &mut u, &mut is_active, k);
        }
    }

    let mut multipliers = DVector::zeros(m_eq + m_in);
    for (a, &ua) in active.iter().zip(&u) {
        multipliers[a.index] = ua * a.sign;
    }
    let mut active_set: Vec<usize> = active.iter().map(|a| a.index).collect();
    active_set.sort_unstable();
    let objective = qp.objective(&x);
    Ok(QpSolution {
        x,
        objective,
        active_set,
        multipliers,
        iterations,
    })
}

fn remove_active(
    factor: &mut Factor,
    active: &mut Vec<Active>,
    u: &mut Vec<f64>,
    is_active: &mut [bool],
    k: usize,
) {
    factor.drop(k);
    is_active[active[k].index] = false;
    active.remove(k);
    u.remove(k);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn active_lower_bound() {
        // min x^2  s.t. x >= 3, i.e. 1/2 (2) x^2
        let qp = QuadraticProgram::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1))
            .with_inequalities(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 3.0));
        let sol = solve_qp(&qp).unwrap();
        assert_abs_diff_eq!(sol.x[0], 3.0, epsilon = 1e-12);
        assert_eq!(sol.active_set, vec![0]);
        assert_abs_diff_eq!(sol.multipliers[0], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn unconstrained_minimum() {
        let quad = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let qp = QuadraticProgram::new(quad, DVector::from_vec(vec![2.0, 4.0]));
        let sol = solve_qp(&qp).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-14);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn two_asset_minimum_variance() {
        let quad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let qp = QuadraticProgram::new(quad, DVector::zeros(2)).on_simplex();
        let sol = solve_qp(&qp).unwrap();
        assert_abs_diff_eq!(sol.x[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 0.2, epsilon = 1e-12);
        let variance = sol.x.dot(&(&qp.quad * &sol.x));
        assert_abs_diff_eq!(variance, 0.8, epsilon = 1e-12);
        assert!(sol.stationarity_residual(&qp) < 1e-10);
    }

    #[test]
    fn bound_becomes_active_on_simplex() {
        // linear pull toward asset 0 is strong enough to zero asset 1
        let quad = DMatrix::identity(2, 2);
        let qp = QuadraticProgram::new(quad, DVector::from_vec(vec![5.0, 0.0])).on_simplex();
        let sol = solve_qp(&qp).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 0.0, epsilon = 1e-12);
        assert_eq!(sol.active_set, vec![0, 2]);
        assert!(sol.multipliers[2] >= 0.0);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let qp = QuadraticProgram::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_inequalities(
                DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
                DVector::from_vec(vec![2.0, -1.0]),
            );
        assert_eq!(solve_qp(&qp), Err(QpError::Infeasible));
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_equalities(
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
                DVector::from_vec(vec![1.0, 2.0]),
            );
        assert_eq!(solve_qp(&qp), Err(QpError::Infeasible));
    }

    #[test]
    fn repeated_equality_is_tolerated() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_equalities(
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
                DVector::from_vec(vec![1.0, 2.0]),
            );
        let sol = solve_qp(&qp).unwrap();
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn singular_quadratic_is_rejected() {
        let qp = QuadraticProgram::new(DMatrix::zeros(2, 2), DVector::zeros(2));
        assert!(matches!(solve_qp(&qp), Err(QpError::NumericalBreakdown(_))));
    }

    #[test]
    fn asymmetric_quadratic_is_rejected() {
        let quad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let qp = QuadraticProgram::new(quad, DVector::zeros(2));
        assert!(matches!(solve_qp(&qp), Err(QpError::Dimension(_))));
    }

    #[test]
    fn constraint_dropped_on_partial_step() {
        // x >= 0 and y >= 0 enter, then the sum equality forces a reshuffle
        let quad = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let linear = DVector::from_vec(vec![-1.0, 2.0, 0.5]);
        let qp = QuadraticProgram::new(quad, linear)
            .with_inequalities(
                DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0]),
                DVector::from_vec(vec![0.0, 0.0, 1.5]),
            );
        let sol = solve_qp(&qp).unwrap();
        assert!(sol.max_violation(&qp) < 1e-10);
        assert!(sol.stationarity_residual(&qp) < 1e-10);
        for i in 0..3 {
            assert!(sol.multipliers[i] >= -1e-12);
        }
    }
}
