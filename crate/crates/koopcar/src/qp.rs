//! Dense convex QP solver (dual active-set, Goldfarb–Idnani scheme):
//!
//! ```text
//! minimize    1/2 x' H x + f' x
//! subject to  G x <= g,  A x = b (optional)
//! ```
//!
//! H must be symmetric positive definite. Starts from the unconstrained
//! (or equality-constrained) minimizer and adds violated inequalities one
//! at a time, taking dual steps to keep multipliers nonnegative. Each
//! working-set subproblem is solved through a dense KKT system; problem
//! sizes here are tiny, so no factorization updating is attempted.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const FEAS_TOL: f64 = 1e-10;
const ZERO_STEP_TOL: f64 = 1e-11;

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// Inequality rows: ineq_mat * x <= ineq_rhs.
    pub ineq_mat: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    /// Optional equality rows: eq_mat * x = eq_rhs.
    pub eq_mat: Option<DMatrix<f64>>,
    pub eq_rhs: Option<DVector<f64>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

impl QpProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.linear.len();
        if self.hessian.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{n} hessian"),
                got: format!("{:?}", self.hessian.shape()),
            });
        }
        let scale = self.hessian.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.hessian[(i, j)] - self.hessian[(j, i)]).abs() > 1e-8 * scale {
                    return Err(Error::QpFailure("hessian is not symmetric".into()));
                }
            }
        }
        if self.ineq_mat.nrows() != self.ineq_rhs.len() || self.ineq_mat.ncols() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("inequality rows of width {n}"),
                got: format!("{:?}", self.ineq_mat.shape()),
            });
        }
        match (&self.eq_mat, &self.eq_rhs) {
            (None, None) => {}
            (Some(a), Some(b)) if a.nrows() == b.len() && a.ncols() == n => {}
            _ => {
                return Err(Error::ShapeMismatch {
                    expected: "consistent equality rows".into(),
                    got: "mismatched equality matrices".into(),
                })
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.hessian * x)[(0, 0)] + self.linear.dot(x)
    }
}

/// Solve the working-set KKT system
/// [H N'; N 0] [z; r] = [rhs_top; rhs_bot].
fn kkt_solve(
    hessian: &DMatrix<f64>,
    normals: &[DVector<f64>],
    rhs_top: &DVector<f64>,
    rhs_bot: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = hessian.nrows();
    let k = normals.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(hessian);
    for (j, nj) in normals.iter().enumerate() {
        for i in 0..n {
            kkt[(i, n + j)] = nj[i];
            kkt[(n + j, i)] = nj[i];
        }
    }
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(rhs_top);
    rhs.rows_mut(n, k).copy_from(rhs_bot);
    let lu = kkt.full_piv_lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::QpFailure("singular working-set KKT system".into()))?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

pub fn qp_solve(problem: &QpProblem) -> Result<QpSolution> {
    problem.validate()?;
    let n = problem.linear.len();
    let m = problem.ineq_rhs.len();
    let n_eq = problem.eq_rhs.as_ref().map_or(0, |b| b.len());

    // Positive definiteness gate; the dual method requires it.
    if nalgebra::Cholesky::new(problem.hessian.clone()).is_none() {
        return Err(Error::QpFailure("hessian is not positive definite".into()));
    }

    let eq_normals: Vec<DVector<f64>> = (0..n_eq)
        .map(|i| problem.eq_mat.as_ref().unwrap().row(i).transpose())
        .collect();

    // Start at the equality-constrained (or unconstrained) minimizer.
    let (mut x, mut eq_mults) = kkt_solve(
        &problem.hessian,
        &eq_normals,
        &(-&problem.linear),
        &problem
            .eq_rhs
            .clone()
            .unwrap_or_else(|| DVector::zeros(0)),
    )?;

    let mut lambda = DVector::zeros(m);
    let mut active: Vec<usize> = Vec::new();
    let max_iter = 50 * (n + m + 10);
    let mut iterations = 0;

    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::QpMaxIterations(max_iter));
        }

        // Most violated inactive inequality; lowest index on ties.
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let v = problem.ineq_mat.row(i).transpose().dot(&x) - problem.ineq_rhs[i];
            let tol = FEAS_TOL * (1.0 + problem.ineq_rhs[i].abs());
            if v > tol && worst.map_or(true, |(_, wv)| v > wv) {
                worst = Some((i, v));
            }
        }
        let Some((p, mut violation)) = worst else {
            break;
        };
        let n_p: DVector<f64> = problem.ineq_mat.row(p).transpose();
        let mut lambda_p = 0.0;

        // Inner loop: drive constraint p to feasibility, dropping blocking
        // active constraints along the way.
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::QpMaxIterations(max_iter));
            }
            let mut normals = eq_normals.clone();
            for &j in &active {
                normals.push(problem.ineq_mat.row(j).transpose());
            }
            let zeros = DVector::zeros(normals.len());
            let (z, r) = kkt_solve(&problem.hessian, &normals, &n_p, &zeros)?;
            let step_curvature = n_p.dot(&z);

            // Blocking dual step among active inequalities (r entries after
            // the equality block).
            let mut t2 = f64::INFINITY;
            let mut blocker: Option<usize> = None;
            for (slot, &j) in active.iter().enumerate() {
                let rj = r[n_eq + slot];
                if rj > ZERO_STEP_TOL {
                    let t = lambda[j] / rj;
                    if t < t2 {
                        t2 = t;
                        blocker = Some(slot);
                    }
                }
            }

            if z.norm() <= ZERO_STEP_TOL * (1.0 + n_p.norm()) {
                // Constraint normal lies in the span of the working set.
                let Some(slot) = blocker else {
                    return Err(Error::QpInfeasible(format!(
                        "constraint {p} conflicts with the working set"
                    )));
                };
                // Pure dual step.
                for (s, &j) in active.iter().enumerate() {
                    lambda[j] -= t2 * r[n_eq + s];
                }
                for e in 0..n_eq {
                    eq_mults[e] -= t2 * r[e];
                }
                lambda_p += t2;
                let dropped = active.remove(slot);
                lambda[dropped] = 0.0;
                continue;
            }

            let t1 = violation / step_curvature;
            let t = t1.min(t2);
            x -= t * &z;
            for (s, &j) in active.iter().enumerate() {
                lambda[j] -= t * r[n_eq + s];
            }
            for e in 0..n_eq {
                eq_mults[e] -= t * r[e];
            }
            lambda_p += t;
            violation -= t * step_curvature;

            if t2 < t1 {
                let dropped = active.remove(blocker.expect("finite t2 implies blocker"));
                lambda[dropped] = 0.0;
                continue;
            }
            active.push(p);
            lambda[p] = lambda_p;
            break;
        }
    }

    let kkt = compute_residuals(problem, &x, &lambda, &eq_mults);
    Ok(QpSolution {
        objective: problem.objective(&x),
        x,
        ineq_multipliers: lambda,
        eq_multipliers: eq_mults,
        iterations,
        kkt,
    })
}

fn compute_residuals(
    problem: &QpProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    eq_mults: &DVector<f64>,
) -> KktResiduals {
    let mut stat = &problem.hessian * x + &problem.linear;
    if lambda.len() > 0 {
        stat += problem.ineq_mat.transpose() * lambda;
    }
    if let Some(a) = &problem.eq_mat {
        stat += a.transpose() * eq_mults;
    }
    let mut primal: f64 = 0.0;
    let mut compl: f64 = 0.0;
    for i in 0..lambda.len() {
        let slack = problem.ineq_mat.row(i).transpose().dot(x) - problem.ineq_rhs[i];
        primal = primal.max(slack);
        compl = compl.max((lambda[i] * slack).abs());
    }
    if let (Some(a), Some(b)) = (&problem.eq_mat, &problem.eq_rhs) {
        let res = a * x - b;
        primal = primal.max(res.amax());
    }
    let dual = lambda.iter().fold(0.0f64, |acc, &l| acc.max(-l));
    KktResiduals {
        stationarity: stat.amax(),
        primal: primal.max(0.0),
        dual,
        complementarity: compl,
    }
}
