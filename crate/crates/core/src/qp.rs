//! Dense strictly convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' H x + f' x
//!     subject to  A x <= b
//! ```
//!
//! with `H` symmetric positive definite, using the dual active-set method of
//! Goldfarb and Idnani. The method starts from the unconstrained minimizer and
//! adds violated constraints one at a time while keeping the iterate optimal for
//! the current active set, so the objective never decreases along the way.
//! `H^{-1} = J J'` and `J1' N = R` (for the active normals `N`) are kept up to
//! date with Givens rotations.
//!
//! Every returned solution carries scaled KKT residuals (see [`KktResiduals`]).

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::inf_norm;
use crate::{Error, Result};

/// Optional starting information. It only affects which violated constraint
/// is added first, never the optimum.
#[derive(Debug, Clone, PartialEq)]
pub enum WarmStart {
    /// Constraints active (within tolerance) at this point are tried first.
    Primal(DVector<f64>),
    /// Constraints with a positive multiplier are tried first.
    Dual(DVector<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSpec {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// One row per inequality `a_i' x <= b_i`.
    pub constraints: DMatrix<f64>,
    pub bounds: DVector<f64>,
    pub warm_start: Option<WarmStart>,
}

impl QpSpec {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        constraints: DMatrix<f64>,
        bounds: DVector<f64>,
    ) -> Result<Self> {
        let d = linear.len();
        if hessian.shape() != (d, d) {
            return Err(Error::dim("hessian", d, hessian.nrows()));
        }
        if constraints.ncols() != d && constraints.nrows() > 0 {
            return Err(Error::dim("constraint columns", d, constraints.ncols()));
        }
        if constraints.nrows() != bounds.len() {
            return Err(Error::dim("constraint bounds", constraints.nrows(), bounds.len()));
        }
        let scale = hessian.amax().max(1.0);
        if (&hessian - hessian.transpose()).amax() > 1e-12 * scale {
            return Err(Error::param("hessian", "not symmetric"));
        }
        let constraints = if constraints.nrows() == 0 {
            DMatrix::zeros(0, d)
        } else {
            constraints
        };
        Ok(Self {
            hessian,
            linear,
            constraints,
            bounds,
            warm_start: None,
        })
    }

    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let d = linear.len();
        Self::new(hessian, linear, DMatrix::zeros(0, d), DVector::zeros(0))
    }

    pub fn with_warm_start(mut self, warm_start: WarmStart) -> Self {
        self.warm_start = Some(warm_start);
        self
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.bounds.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Lagrange dual function `-1/2 (f + A' mu)' H^{-1} (f + A' mu) - b' mu`.
    pub fn dual_objective(&self, mu: &DVector<f64>) -> Result<f64> {
        let chol = self
            .hessian
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Solver("hessian is not positive definite".into()))?;
        let w = &self.linear + self.constraints.tr_mul(mu);
        let hw = chol.solve(&w);
        Ok(-0.5 * w.dot(&hw) - self.bounds.dot(mu))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    MaxIterations,
    Infeasible,
    NumericalError,
}

/// Scaled KKT residuals of a primal/dual pair.
///
/// Each residual is divided by the magnitude of the terms it is built from, so
/// that problems with large weights are judged at machine-precision level:
///
/// - `stationarity = |Hx + f + A'mu|_inf / (1 + max(|Hx|_inf, |f|_inf, |A'mu|_inf))`
/// - `complementarity = |mu'(Ax - b)| / (1 + |mu|_inf (1 + |b|_inf))`
/// - `infeasibility = max_i (a_i'x - b_i)_+ / (1 + |b_i|)`
/// - `dual_infeasibility = max_i (-mu_i)_+ / (1 + |mu|_inf)`
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub complementarity: f64,
    pub infeasibility: f64,
    pub dual_infeasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.complementarity)
            .max(self.infeasibility)
            .max(self.dual_infeasibility)
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.max() <= tolerance
    }
}

pub fn kkt_residuals(spec: &QpSpec, x: &DVector<f64>, mu: &DVector<f64>) -> KktResiduals {
    let hx = &spec.hessian * x;
    let atmu = spec.constraints.tr_mul(mu);
    let grad = &hx + &spec.linear + &atmu;
    let stationarity = inf_norm(&grad)
        / (1.0 + inf_norm(&hx).max(inf_norm(&spec.linear)).max(inf_norm(&atmu)));

    let slack = &spec.constraints * x - &spec.bounds;
    let mu_max = inf_norm(mu);
    let b_max = inf_norm(&spec.bounds);
    let complementarity = mu.dot(&slack).abs() / (1.0 + mu_max * (1.0 + b_max));
    let infeasibility = slack
        .iter()
        .zip(spec.bounds.iter())
        .map(|(s, b)| s.max(0.0) / (1.0 + b.abs()))
        .fold(0.0, f64::max);
    let dual_infeasibility = mu.iter().map(|m| (-m).max(0.0)).fold(0.0, f64::max) / (1.0 + mu_max);
    KktResiduals {
        stationarity,
        complementarity,
        infeasibility,
        dual_infeasibility,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub mu: DVector<f64>,
    pub objective: f64,
    pub status: Status,
    pub residuals: KktResiduals,
    pub iterations: usize,
    pub wall_time: Duration,
    /// Indices of the constraints in the final active set.
    pub active_set: Vec<usize>,
    /// Negated objective after each iteration; non-increasing for this method.
    pub merit_trace: Vec<f64>,
}

/// Minimizer of the problem with the inequality system ignored, via Cholesky.
pub fn solve_unconstrained(spec: &QpSpec, settings: &Settings) -> QpSolution {
    let start = Instant::now();
    let d = spec.dim();
    let relaxed = QpSpec {
        constraints: DMatrix::zeros(0, d),
        bounds: DVector::zeros(0),
        warm_start: None,
        ..spec.clone()
    };
    let (x, status) = match spec.hessian.clone().cholesky() {
        Some(chol) => (-chol.solve(&spec.linear), Status::Optimal),
        None => (DVector::zeros(d), Status::NumericalError),
    };
    let residuals = kkt_residuals(&relaxed, &x, &DVector::zeros(0));
    let status = match status {
        Status::Optimal if !residuals.within(settings.tolerance) => Status::NumericalError,
        s => s,
    };
    QpSolution {
        objective: spec.objective(&x),
        mu: DVector::zeros(spec.num_constraints()),
        x,
        status,
        residuals,
        iterations: 0,
        wall_time: start.elapsed(),
        active_set: Vec::new(),
        merit_trace: Vec::new(),
    }
}

/// Solves the inequality-constrained problem.
///
/// Never panics on valid input: non-convergence is reported through
/// [`QpSolution::status`] with the best iterate and its residuals.
pub fn solve(spec: &QpSpec, settings: &Settings) -> QpSolution {
    let start = Instant::now();
    let mut solver = match DualActiveSet::new(spec, settings) {
        Some(s) => s,
        None => {
            let mut sol = solve_unconstrained(spec, settings);
            sol.status = Status::NumericalError;
            sol.wall_time = start.elapsed();
            return sol;
        }
    };
    let mut status = solver.run();
    let x = solver.x.clone();
    let mut mu = DVector::zeros(spec.num_constraints());
    for (&i, &u) in solver.active.iter().zip(&solver.u) {
        mu[i] = u;
    }
    let residuals = kkt_residuals(spec, &x, &mu);
    if status == Status::Optimal && !residuals.within(settings.tolerance) {
        status = Status::NumericalError;
    }
    QpSolution {
        objective: spec.objective(&x),
        x,
        mu,
        status,
        residuals,
        iterations: solver.iterations,
        wall_time: start.elapsed(),
        active_set: solver.active.clone(),
        merit_trace: solver.merit_trace,
    }
}

/// Relative size below which a primal direction counts as zero.
const DEPENDENCE_TOLERANCE: f64 = 1e-13;

struct DualActiveSet<'a> {
    spec: &'a QpSpec,
    settings: &'a Settings,
    /// `H^{-1} = J J'`; the first `q` columns span the active normals.
    j: DMatrix<f64>,
    /// Upper triangular, leading `q x q` block in use.
    r: DMatrix<f64>,
    x: DVector<f64>,
    objective: f64,
    active: Vec<usize>,
    u: Vec<f64>,
    is_active: Vec<bool>,
    hints: Vec<bool>,
    iterations: usize,
    merit_trace: Vec<f64>,
}

impl<'a> DualActiveSet<'a> {
    fn new(spec: &'a QpSpec, settings: &'a Settings) -> Option<Self> {
        let d = spec.dim();
        let chol = spec.hessian.clone().cholesky()?;
        let l = chol.l();
        // J = L^{-T}
        let l_inv = l.solve_lower_triangular(&DMatrix::identity(d, d))?;
        let j = l_inv.transpose();
        let jtf = j.tr_mul(&spec.linear);
        let x = -(&j * &jtf);
        let objective = -0.5 * jtf.norm_squared();
        let k = spec.num_constraints();
        let mut hints = vec![false; k];
        let tol = settings.tolerance;
        match &spec.warm_start {
            Some(WarmStart::Primal(x0)) if x0.len() == d => {
                let ax = &spec.constraints * x0;
                for i in 0..k {
                    hints[i] = ax[i] >= spec.bounds[i] - tol * (1.0 + spec.bounds[i].abs());
                }
            }
            Some(WarmStart::Dual(mu0)) if mu0.len() == k => {
                for i in 0..k {
                    hints[i] = mu0[i] > 0.0;
                }
            }
            _ => {}
        }
        Some(Self {
            spec,
            settings,
            j,
            r: DMatrix::zeros(d, d),
            x,
            objective,
            active: Vec::new(),
            u: Vec::new(),
            is_active: vec![false; k],
            hints,
            iterations: 0,
            merit_trace: vec![-objective],
        })
    }

    fn violation_threshold(&self, i: usize) -> f64 {
        0.1 * self.settings.tolerance * (1.0 + self.spec.bounds[i].abs())
    }

    /// `b_i - a_i' x`; negative when violated.
    fn slack(&self, i: usize) -> f64 {
        self.spec.bounds[i] - self.spec.constraints.row(i).dot(&self.x.transpose())
    }

    /// The most violated inactive constraint, preferring warm-start hints.
    fn pick_violated(&self) -> Option<(usize, f64)> {
        let k = self.spec.num_constraints();
        if k == 0 {
            return None;
        }
        let ax = &self.spec.constraints * &self.x;
        let mut best: Option<(usize, f64, bool)> = None;
        for i in 0..k {
            if self.is_active[i] {
                continue;
            }
            let s = self.spec.bounds[i] - ax[i];
            if s >= -self.violation_threshold(i) {
                continue;
            }
            let score = s / (1.0 + self.spec.bounds[i].abs());
            let hint = self.hints[i];
            let better = match best {
                None => true,
                Some((_, best_score, best_hint)) => {
                    (hint && !best_hint) || (hint == best_hint && score < best_score)
                }
            };
            if better {
                best = Some((i, score, hint));
            }
        }
        best.map(|(i, _, _)| (i, self.spec.bounds[i] - ax[i]))
    }

    fn run(&mut self) -> Status {
        let d = self.spec.dim();
        loop {
            let Some((p, mut s_p)) = self.pick_violated() else {
                return Status::Optimal;
            };
            // GI works with n' x >= b'; here n = -a_p.
            let normal: DVector<f64> = -self.spec.constraints.row(p).transpose();
            let mut u_plus = 0.0;
            loop {
                self.iterations += 1;
                if self.iterations > self.settings.max_iterations {
                    return Status::MaxIterations;
                }
                let q = self.active.len();
                let dv = self.j.tr_mul(&normal);
                let z = if q < d {
                    self.j.columns(q, d - q) * dv.rows(q, d - q)
                } else {
                    DVector::zeros(d)
                };
                let mut rdir = DVector::zeros(q);
                if q > 0 {
                    rdir.copy_from(&dv.rows(0, q));
                    let rq = self.r.view((0, 0), (q, q));
                    if !rq.solve_upper_triangular_mut(&mut rdir) {
                        return Status::NumericalError;
                    }
                }

                // Dual step keeping the multipliers non-negative.
                let mut t1 = f64::INFINITY;
                let mut drop_idx = None;
                for jdx in 0..q {
                    if rdir[jdx] > 0.0 {
                        let ratio = self.u[jdx] / rdir[jdx];
                        if ratio < t1 {
                            t1 = ratio;
                            drop_idx = Some(jdx);
                        }
                    }
                }
                let tail = if q < d { dv.rows(q, d - q).norm_squared() } else { 0.0 };
                let dependent = tail <= DEPENDENCE_TOLERANCE * dv.norm_squared().max(f64::MIN_POSITIVE);
                let zn = z.dot(&normal);
                let t2 = if dependent || zn <= 0.0 {
                    f64::INFINITY
                } else {
                    -s_p / zn
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return Status::Infeasible;
                }

                if t2.is_infinite() {
                    for jdx in 0..q {
                        self.u[jdx] -= t * rdir[jdx];
                    }
                    u_plus += t;
                    self.drop_constraint(drop_idx.expect("finite t1 has an index"));
                    self.merit_trace.push(-self.objective);
                    continue;
                }

                self.x += t * &z;
                self.objective += t * zn * (0.5 * t + u_plus);
                for jdx in 0..q {
                    self.u[jdx] -= t * rdir[jdx];
                }
                u_plus += t;
                self.merit_trace.push(-self.objective);

                if t2 <= t1 {
                    self.add_constraint(p, u_plus, dv);
                    break;
                }
                self.drop_constraint(drop_idx.expect("partial step has an index"));
                s_p = self.slack(p);
            }
        }
    }

    fn add_constraint(&mut self, p: usize, u_plus: f64, mut dv: DVector<f64>) {
        let d = self.spec.dim();
        let q = self.active.len();
        for i in (q + 1..d).rev() {
            if dv[i] == 0.0 {
                continue;
            }
            let h = dv[i - 1].hypot(dv[i]);
            let (c, s) = (dv[i - 1] / h, dv[i] / h);
            dv[i - 1] = h;
            dv[i] = 0.0;
            rotate_columns(&mut self.j, i - 1, c, s);
        }
        for row in 0..=q {
            self.r[(row, q)] = dv[row];
        }
        self.active.push(p);
        self.u.push(u_plus);
        self.is_active[p] = true;
    }

    fn drop_constraint(&mut self, k: usize) {
        let q = self.active.len();
        let removed = self.active.remove(k);
        self.u.remove(k);
        self.is_active[removed] = false;
        for col in k..q - 1 {
            for row in 0..=col + 1 {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for jdx in k..q - 1 {
            let a = self.r[(jdx, jdx)];
            let b = self.r[(jdx + 1, jdx)];
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in jdx..q - 1 {
                let top = self.r[(jdx, col)];
                let bottom = self.r[(jdx + 1, col)];
                self.r[(jdx, col)] = c * top + s * bottom;
                self.r[(jdx + 1, col)] = -s * top + c * bottom;
            }
            self.r[(jdx + 1, jdx)] = 0.0;
            rotate_columns(&mut self.j, jdx, c, s);
        }
        for col in 0..q {
            self.r[(q - 1, col)] = 0.0;
        }
    }
}

/// Replaces columns `(i, i+1)` of `m` by `(c m_i + s m_{i+1}, -s m_i + c m_{i+1})`.
fn rotate_columns(m: &mut DMatrix<f64>, i: usize, c: f64, s: f64) {
    let rows = m.nrows();
    let data = m.as_mut_slice();
    let (left, right) = data.split_at_mut((i + 1) * rows);
    let a = &mut left[i * rows..];
    let b = &mut right[..rows];
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa + s * yb;
        *y = -s * xa + c * yb;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(h: f64, f: f64, a: f64, b: f64) -> QpSpec {
        QpSpec::new(
            DMatrix::from_element(1, 1, h),
            DVector::from_element(1, f),
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, b),
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_shift() {
        let d = 4;
        let spec = QpSpec::unconstrained(DMatrix::identity(d, d) * 2.0, DVector::from_element(d, -2.0)).unwrap();
        let sol = solve(&spec, &Settings::default());
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.x.add_scalar(-1.0)).amax() < 1e-14);
        let fast = solve_unconstrained(&spec, &Settings::default());
        assert!((fast.x - &sol.x).amax() < 1e-14);
    }

    #[test]
    fn active_bound_has_analytic_multiplier() {
        // min x^2 s.t. x <= -1
        let sol = solve(&one_d(2.0, 0.0, 1.0, -1.0), &Settings::default());
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.x[0] + 1.0).abs() < 1e-14);
        assert!((sol.mu[0] - 2.0).abs() < 1e-14);

        // min (g-1)^2 s.t. g <= 0
        let sol = solve(&one_d(2.0, -2.0, 1.0, 0.0), &Settings::default());
        assert!(sol.x[0].abs() < 1e-14);
        assert!((sol.mu[0] - 2.0).abs() < 1e-14);
        assert!(sol.residuals.max() < 1e-14);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let spec = QpSpec::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DVector::from_column_slice(&[-1.0, -1.0]),
        )
        .unwrap();
        assert_eq!(solve(&spec, &Settings::default()).status, Status::Infeasible);
    }

    #[test]
    fn rejects_asymmetric_hessian_and_bad_dims() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QpSpec::unconstrained(h, DVector::zeros(2)).is_err());
        assert!(QpSpec::unconstrained(DMatrix::identity(2, 2), DVector::zeros(3)).is_err());
    }

    #[test]
    fn indefinite_hessian_is_a_numerical_error() {
        let spec = QpSpec::unconstrained(-DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert_eq!(solve(&spec, &Settings::default()).status, Status::NumericalError);
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let spec = QpSpec::new(
            DMatrix::identity(2, 2),
            DVector::from_column_slice(&[-5.0, -5.0]),
            DMatrix::identity(2, 2),
            DVector::from_column_slice(&[1.0, 1.0]),
        )
        .unwrap();
        let sol = solve(
            &spec,
            &Settings {
                tolerance: 1e-8,
                max_iterations: 1,
            },
        );
        assert_eq!(sol.status, Status::MaxIterations);
        assert!(sol.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn degenerate_duplicate_constraints() {
        let spec = QpSpec::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::from_column_slice(&[-4.0, -4.0]),
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0]),
            DVector::from_column_slice(&[1.0, 1.0, 2.0]),
        )
        .unwrap();
        let sol = solve(&spec, &Settings::default());
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.x[0] - 0.5).abs() < 1e-12 && (sol.x[1] - 0.5).abs() < 1e-12);
    }
}
