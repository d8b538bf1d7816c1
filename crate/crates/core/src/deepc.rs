//! Data-enabled predictive control on full and reduced libraries.
//!
//! A library is any matrix whose rows follow the layout `[U_p; U_f; Y_p; Y_f]`:
//! the full input stack above the full output stack, each split into the first
//! `T_ini` and the last `N` samples. The Hankel library `[H_L(u); H_L(y)]`, its
//! SVD reduction `H_bar = H V1` and a column truncation all share this layout,
//! so one assembly routine serves every variant.
//!
//! The controller eliminates `u, y, sigma_u, sigma_y` and solves the condensed
//! problem
//!
//! ```text
//!     minimize    |H g - b|_P^2 + lambda_g |g|^2
//!     subject to  C g <= c
//! ```
//!
//! with `b = [u_ini; 0; y_ini; y_r]`, `P = blkdiag(lambda_u I, R, lambda_y I, Q)`
//! and `C` collecting the input/output constraints through `U_f` and `Y_f`.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{BlockMatrix, Trajectory};
use crate::linalg::{inf_norm, spectral_norm};
use crate::plant::{BoxSet, LtiSystem};
use crate::qp::{self, KktResiduals, QpSpec, Settings, Status, WarmStart};
use crate::reduction::ReducedLibrary;
use crate::{Error, Result};

/// Row blocks of a library.
#[derive(Debug, Clone, PartialEq)]
pub struct LibraryPartition {
    pub u_p: DMatrix<f64>,
    pub u_f: DMatrix<f64>,
    pub y_p: DMatrix<f64>,
    pub y_f: DMatrix<f64>,
    pub t_ini: usize,
    pub horizon: usize,
    pub m: usize,
    pub p: usize,
}

impl LibraryPartition {
    pub fn new(library: &DMatrix<f64>, t_ini: usize, horizon: usize, m: usize, p: usize) -> Result<Self> {
        if t_ini == 0 || horizon == 0 {
            return Err(Error::param("horizons", "T_ini and N must be positive"));
        }
        let depth = t_ini + horizon;
        let expected = (m + p) * depth;
        if library.nrows() != expected {
            return Err(Error::dim("library rows", expected, library.nrows()));
        }
        let cols = library.ncols();
        let rows = |start: usize, len: usize| library.view((start, 0), (len, cols)).into_owned();
        let y0 = m * depth;
        Ok(Self {
            u_p: rows(0, m * t_ini),
            u_f: rows(m * t_ini, m * horizon),
            y_p: rows(y0, p * t_ini),
            y_f: rows(y0 + p * t_ini, p * horizon),
            t_ini,
            horizon,
            m,
            p,
        })
    }

    pub fn from_block(library: &BlockMatrix, t_ini: usize, horizon: usize, m: usize, p: usize) -> Result<Self> {
        Self::new(library.matrix(), t_ini, horizon, m, p)
    }

    pub fn cols(&self) -> usize {
        self.u_p.ncols()
    }

    pub fn depth(&self) -> usize {
        self.t_ini + self.horizon
    }

    /// Stacks the blocks back into `[U_p; U_f; Y_p; Y_f]`.
    pub fn restack(&self) -> DMatrix<f64> {
        let cols = self.cols();
        let rows = (self.m + self.p) * self.depth();
        let mut out = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for block in [&self.u_p, &self.u_f, &self.y_p, &self.y_f] {
            out.view_mut((at, 0), block.shape()).copy_from(block);
            at += block.nrows();
        }
        out
    }
}

/// `G v <= h` over a stacked horizon vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub matrix: DMatrix<f64>,
    pub bound: DVector<f64>,
}

impl Polytope {
    pub fn new(matrix: DMatrix<f64>, bound: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != bound.len() {
            return Err(Error::dim("polytope bound", matrix.nrows(), bound.len()));
        }
        Ok(Self { matrix, bound })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(0, dim),
            bound: DVector::zeros(0),
        }
    }

    /// Repeats a per-sample box over `horizon` samples. Infinite sides produce no row.
    pub fn from_box(set: &BoxSet, horizon: usize) -> Self {
        let c = set.dim();
        let dim = c * horizon;
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for k in 0..horizon {
            for i in 0..c {
                if set.high[i].is_finite() {
                    rows.push((k * c + i, 1.0, set.high[i]));
                }
                if set.low[i].is_finite() {
                    rows.push((k * c + i, -1.0, -set.low[i]));
                }
            }
        }
        let mut matrix = DMatrix::zeros(rows.len(), dim);
        let mut bound = DVector::zeros(rows.len());
        for (r, &(col, sign, b)) in rows.iter().enumerate() {
            matrix[(r, col)] = sign;
            bound[r] = b;
        }
        Self { matrix, bound }
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rows(&self) -> usize {
        self.bound.len()
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        (&self.matrix * v - &self.bound).iter().all(|&s| s <= tol)
    }
}

/// Admissible set for one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSet {
    Unbounded,
    /// Per-sample box, repeated over the horizon.
    Box(BoxSet),
    /// Constraint on the whole stacked horizon vector.
    Polytope(Polytope),
}

impl SignalSet {
    pub fn to_polytope(&self, channels: usize, horizon: usize) -> Result<Polytope> {
        match self {
            SignalSet::Unbounded => Ok(Polytope::unbounded(channels * horizon)),
            SignalSet::Box(b) => {
                if b.dim() != channels {
                    return Err(Error::dim("box channels", channels, b.dim()));
                }
                Ok(Polytope::from_box(b, horizon))
            }
            SignalSet::Polytope(p) => {
                if p.dim() != channels * horizon {
                    return Err(Error::dim("polytope columns", channels * horizon, p.dim()));
                }
                Ok(p.clone())
            }
        }
    }

    /// Projects a sample onto a box; other sets pass it through.
    pub fn clip(&self, v: &mut [f64]) {
        if let SignalSet::Box(b) = self {
            for ((x, l), h) in v.iter_mut().zip(&b.low).zip(&b.high) {
                *x = x.clamp(*l, *h);
            }
        }
    }
}

/// Output reference over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Setpoint { value: Vec<f64> },
    /// Sampled reference; the last sample is held past the end.
    Trajectory { samples: Vec<Vec<f64>> },
}

impl Reference {
    pub fn setpoint(value: &[f64]) -> Self {
        Reference::Setpoint { value: value.to_vec() }
    }

    pub fn channels(&self) -> usize {
        match self {
            Reference::Setpoint { value } => value.len(),
            Reference::Trajectory { samples } => samples.first().map_or(0, Vec::len),
        }
    }

    pub fn at(&self, t: usize) -> DVector<f64> {
        match self {
            Reference::Setpoint { value } => DVector::from_column_slice(value),
            Reference::Trajectory { samples } => {
                let k = t.min(samples.len().saturating_sub(1));
                DVector::from_column_slice(&samples[k])
            }
        }
    }

    /// `[y_r(t); ...; y_r(t+N-1)]`.
    pub fn stack(&self, t: usize, horizon: usize) -> DVector<f64> {
        let p = self.channels();
        let mut out = DVector::zeros(p * horizon);
        for k in 0..horizon {
            out.rows_mut(k * p, p).copy_from(&self.at(t + k));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepcConfig {
    pub t_ini: usize,
    pub horizon: usize,
    pub m: usize,
    pub p: usize,
    /// `pN x pN`.
    pub q: DMatrix<f64>,
    /// `mN x mN`.
    pub r: DMatrix<f64>,
    pub lambda_u: f64,
    pub lambda_y: f64,
    pub lambda_g: f64,
    pub input_set: SignalSet,
    pub output_set: SignalSet,
    /// Inputs applied per solve, `1 <= l < N`.
    pub apply_steps: usize,
    pub reference: Reference,
}

impl DeepcConfig {
    /// Diagonal weights `Q = q I`, `R = r I`, box constraints and a constant setpoint.
    #[allow(clippy::too_many_arguments)]
    pub fn with_scaled_weights(
        m: usize,
        p: usize,
        t_ini: usize,
        horizon: usize,
        q_scale: f64,
        r_scale: f64,
        lambdas: [f64; 3],
        input_set: SignalSet,
        output_set: SignalSet,
        setpoint: &[f64],
    ) -> Result<Self> {
        let config = Self {
            t_ini,
            horizon,
            m,
            p,
            q: DMatrix::identity(p * horizon, p * horizon) * q_scale,
            r: DMatrix::identity(m * horizon, m * horizon) * r_scale,
            lambda_u: lambdas[0],
            lambda_y: lambdas[1],
            lambda_g: lambdas[2],
            input_set,
            output_set,
            apply_steps: 1,
            reference: Reference::setpoint(setpoint),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_ini == 0 || self.horizon == 0 {
            return Err(Error::param("horizons", "T_ini and N must be positive"));
        }
        let (pn, mn) = (self.p * self.horizon, self.m * self.horizon);
        if self.q.shape() != (pn, pn) {
            return Err(Error::dim("Q", pn, self.q.nrows()));
        }
        if self.r.shape() != (mn, mn) {
            return Err(Error::dim("R", mn, self.r.nrows()));
        }
        for (name, w) in [("Q", &self.q), ("R", &self.r)] {
            if (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) {
                return Err(Error::param(if name == "Q" { "q" } else { "r" }, "weight is not symmetric"));
            }
        }
        for (name, v) in [
            ("lambda_u", self.lambda_u),
            ("lambda_y", self.lambda_y),
            ("lambda_g", self.lambda_g),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if self.apply_steps == 0 || (self.apply_steps >= self.horizon && self.horizon > 1) {
            return Err(Error::param("apply_steps", "need 1 <= l < N"));
        }
        if self.reference.channels() != self.p {
            return Err(Error::dim("reference channels", self.p, self.reference.channels()));
        }
        self.input_set.to_polytope(self.m, self.horizon)?;
        self.output_set.to_polytope(self.p, self.horizon)?;
        Ok(())
    }

    /// Per-sample blocks `(Q_1, R_1)` used by the stage cost.
    pub fn stage_weights(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            self.q.view((0, 0), (self.p, self.p)).into_owned(),
            self.r.view((0, 0), (self.m, self.m)).into_owned(),
        )
    }
}

/// `u, y, sigma_u, sigma_y` implied by a decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub sigma_u: DVector<f64>,
    pub sigma_y: DVector<f64>,
}

impl Recovered {
    /// Largest componentwise gap relative to `1 + |self|_inf`.
    pub fn distance(&self, other: &Recovered) -> f64 {
        [
            (&self.u, &other.u),
            (&self.y, &other.y),
            (&self.sigma_u, &other.sigma_u),
            (&self.sigma_y, &other.sigma_y),
        ]
        .iter()
        .map(|(a, b)| inf_norm(&(*a - *b)) / (1.0 + inf_norm(a)))
        .fold(0.0, f64::max)
    }
}

/// Condensed QP `min 1/2 g'Hg + f'g + constant  s.t.  C g <= c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub constraints: DMatrix<f64>,
    pub bounds: DVector<f64>,
    pub partition: LibraryPartition,
    pub library: DMatrix<f64>,
    /// `[u_ini; 0; y_ini; y_r]`.
    pub target: DVector<f64>,
    /// Diagonal blocks of `P` in row order.
    pub weights: [DMatrix<f64>; 4],
    pub lambda_g: f64,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn u_ini(&self) -> DVector<f64> {
        self.target.rows(0, self.partition.u_p.nrows()).into_owned()
    }

    pub fn y_ini(&self) -> DVector<f64> {
        let start = self.partition.u_p.nrows() + self.partition.u_f.nrows();
        self.target.rows(start, self.partition.y_p.nrows()).into_owned()
    }

    pub fn recover(&self, g: &DVector<f64>) -> Recovered {
        let pt = &self.partition;
        Recovered {
            u: &pt.u_f * g,
            y: &pt.y_f * g,
            sigma_u: &pt.u_p * g - self.u_ini(),
            sigma_y: &pt.y_p * g - self.y_ini(),
        }
    }

    /// `|H g - b|_P^2 + lambda_g |g|^2`.
    pub fn objective(&self, g: &DVector<f64>) -> f64 {
        0.5 * g.dot(&(&self.hessian * g)) + self.linear.dot(g) + self.constant
    }

    /// Tracking part `|y - y_r|_Q^2 + |u|_R^2` of the objective.
    pub fn tracking_cost(&self, g: &DVector<f64>) -> f64 {
        let rec = self.recover(g);
        let y_r = self.target.rows(self.target.len() - rec.y.len(), rec.y.len());
        let ey = &rec.y - y_r;
        ey.dot(&(&self.weights[3] * &ey)) + rec.u.dot(&(&self.weights[1] * &rec.u))
    }

    pub fn spec(&self) -> QpSpec {
        QpSpec {
            hessian: self.hessian.clone(),
            linear: self.linear.clone(),
            constraints: self.constraints.clone(),
            bounds: self.bounds.clone(),
            warm_start: None,
        }
    }

    pub fn solve(&self, settings: &Settings, warm_start: Option<WarmStart>) -> SolveCertificate {
        let mut spec = self.spec();
        spec.warm_start = warm_start;
        let sol = qp::solve(&spec, settings);
        let mut cert = SolveCertificate {
            g: sol.x,
            mu: sol.mu,
            residuals: KktResiduals::default(),
            status: sol.status,
            iterations: sol.iterations,
            wall_time: sol.wall_time,
        };
        cert.residuals = kkt_residuals(self, &cert);
        cert
    }

    fn weighted(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        let mut at = 0;
        for w in &self.weights {
            let k = w.nrows();
            out.rows_mut(at, k).copy_from(&(w * v.rows(at, k)));
            at += k;
        }
        out
    }
}

/// Primal/dual pair returned by a solve, with residuals of the optimality system.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveCertificate {
    pub g: DVector<f64>,
    pub mu: DVector<f64>,
    pub residuals: KktResiduals,
    pub status: Status,
    pub iterations: usize,
    pub wall_time: Duration,
}

/// Residuals of `2H'P(Hg - b) + 2 lambda_g g + C'mu = 0`, `mu'(Cg - c) = 0`,
/// `Cg <= c`, `mu >= 0`, scaled as in [`qp::kkt_residuals`].
pub fn kkt_residuals(problem: &QpProblem, cert: &SolveCertificate) -> KktResiduals {
    let g = &cert.g;
    let fit = &problem.library * g;
    let pr = problem.weighted(&fit);
    let pb = problem.weighted(&problem.target);
    let quad = problem.library.tr_mul(&pr) * 2.0;
    let lin = problem.library.tr_mul(&pb) * 2.0;
    let reg = g * (2.0 * problem.lambda_g);
    let dual = problem.constraints.tr_mul(&cert.mu);
    let grad = &quad - &lin + &reg + &dual;
    let scale = 1.0
        + inf_norm(&quad)
            .max(inf_norm(&lin))
            .max(inf_norm(&reg))
            .max(inf_norm(&dual));
    let mut res = qp::kkt_residuals(&problem.spec(), g, &cert.mu);
    res.stationarity = inf_norm(&grad) / scale;
    res
}

/// Builds the condensed problem for any library in `[U_p; U_f; Y_p; Y_f]` layout.
pub fn assemble(
    partition: &LibraryPartition,
    config: &DeepcConfig,
    u_ini: &DVector<f64>,
    y_ini: &DVector<f64>,
    y_r: &DVector<f64>,
) -> Result<QpProblem> {
    config.validate()?;
    let pt = partition;
    if (pt.t_ini, pt.horizon, pt.m, pt.p) != (config.t_ini, config.horizon, config.m, config.p) {
        return Err(Error::param("partition", "horizons or channel counts differ from the config"));
    }
    let (m, p, t_ini, n) = (pt.m, pt.p, pt.t_ini, pt.horizon);
    if u_ini.len() != m * t_ini {
        return Err(Error::dim("u_ini", m * t_ini, u_ini.len()));
    }
    if y_ini.len() != p * t_ini {
        return Err(Error::dim("y_ini", p * t_ini, y_ini.len()));
    }
    if y_r.len() != p * n {
        return Err(Error::dim("y_r", p * n, y_r.len()));
    }

    let library = pt.restack();
    let d = library.ncols();
    let weights = [
        DMatrix::identity(m * t_ini, m * t_ini) * config.lambda_u,
        config.r.clone(),
        DMatrix::identity(p * t_ini, p * t_ini) * config.lambda_y,
        config.q.clone(),
    ];
    let mut target = DVector::zeros(library.nrows());
    target.rows_mut(0, m * t_ini).copy_from(u_ini);
    let y0 = m * (t_ini + n);
    target.rows_mut(y0, p * t_ini).copy_from(y_ini);
    target.rows_mut(y0 + p * t_ini, p * n).copy_from(y_r);

    // P H and P b block by block; the scalar blocks skip the matrix product.
    let mut ph = DMatrix::zeros(library.nrows(), d);
    let mut pb = DVector::zeros(library.nrows());
    let mut at = 0;
    for (k, block) in [&pt.u_p, &pt.u_f, &pt.y_p, &pt.y_f].into_iter().enumerate() {
        let rows = block.nrows();
        let tb = target.rows(at, rows);
        match k {
            0 | 2 => {
                let s = if k == 0 { config.lambda_u } else { config.lambda_y };
                ph.view_mut((at, 0), (rows, d)).copy_from(&(block * s));
                pb.rows_mut(at, rows).copy_from(&(tb * s));
            }
            _ => {
                ph.view_mut((at, 0), (rows, d)).copy_from(&(&weights[k] * block));
                pb.rows_mut(at, rows).copy_from(&(&weights[k] * tb));
            }
        }
        at += rows;
    }
    let mut hessian = library.tr_mul(&ph) * 2.0;
    for i in 0..d {
        hessian[(i, i)] += 2.0 * config.lambda_g;
    }
    let hessian = (&hessian + hessian.transpose()) * 0.5;
    let linear = library.tr_mul(&pb) * -2.0;
    let constant = target.dot(&pb);

    let pu = config.input_set.to_polytope(m, n)?;
    let py = config.output_set.to_polytope(p, n)?;
    let k = pu.rows() + py.rows();
    let mut constraints = DMatrix::zeros(k, d);
    let mut bounds = DVector::zeros(k);
    if pu.rows() > 0 {
        constraints.view_mut((0, 0), (pu.rows(), d)).copy_from(&(&pu.matrix * &pt.u_f));
        bounds.rows_mut(0, pu.rows()).copy_from(&pu.bound);
    }
    if py.rows() > 0 {
        constraints
            .view_mut((pu.rows(), 0), (py.rows(), d))
            .copy_from(&(&py.matrix * &pt.y_f));
        bounds.rows_mut(pu.rows(), py.rows()).copy_from(&py.bound);
    }

    Ok(QpProblem {
        hessian,
        linear,
        constant,
        constraints,
        bounds,
        partition: pt.clone(),
        library,
        target,
        weights,
        lambda_g: config.lambda_g,
    })
}

/// The problem over the Hankel library itself.
pub fn assemble_full(
    partition: &LibraryPartition,
    config: &DeepcConfig,
    u_ini: &DVector<f64>,
    y_ini: &DVector<f64>,
    y_r: &DVector<f64>,
) -> Result<QpProblem> {
    assemble(partition, config, u_ini, y_ini, y_r)
}

/// The minimum-dimension problem over `H_bar`.
pub fn assemble_reduced(
    reduced: &ReducedLibrary,
    config: &DeepcConfig,
    u_ini: &DVector<f64>,
    y_ini: &DVector<f64>,
    y_r: &DVector<f64>,
) -> Result<QpProblem> {
    let partition = LibraryPartition::new(reduced.h_bar.matrix(), config.t_ini, config.horizon, config.m, config.p)?;
    assemble(&partition, config, u_ini, y_ini, y_r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    /// `|g_bar - V1' g| / (1 + |g|)`.
    pub coordinate_error: f64,
    /// Largest relative gap between recovered `(u, y, sigma_u, sigma_y)`.
    pub recovery_error: f64,
    /// `|H g - H_bar g_bar|_inf / (1 + |H g|_inf)`.
    pub prediction_error: f64,
    /// `|H - H_bar V1'| / |H|`; the hypothesis needs this at rounding level.
    pub range_gap: f64,
    pub hypothesis_violated: bool,
    pub full_status: Status,
    pub reduced_status: Status,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative gap above which `H_bar` is not treated as sharing the range of `H`.
pub const RANGE_GAP_TOLERANCE: f64 = 1e-9;

/// Solves both problems and compares them.
///
/// A reduction that drops part of the range of `H` violates the hypothesis;
/// the comparison is still made, but `passed` is then false and
/// `hypothesis_violated` is set rather than an error being raised.
pub fn verify_theorem1(
    full: &QpProblem,
    reduced: &QpProblem,
    v1: &DMatrix<f64>,
    tolerance: f64,
    settings: &Settings,
) -> Result<Theorem1Report> {
    if v1.shape() != (full.dim(), reduced.dim()) {
        return Err(Error::dim("V1 rows", full.dim(), v1.nrows()));
    }
    let h_norm = spectral_norm(&full.library);
    let range_gap = if h_norm > 0.0 {
        spectral_norm(&(&full.library - &reduced.library * v1.transpose())) / h_norm
    } else {
        0.0
    };
    let full_cert = full.solve(settings, None);
    let reduced_cert = reduced.solve(settings, None);
    for cert in [&full_cert, &reduced_cert] {
        if matches!(cert.status, Status::Infeasible | Status::NumericalError) {
            return Err(Error::Solver(format!("solve ended with status {:?}", cert.status)));
        }
    }
    let g = &full_cert.g;
    let g_bar = &reduced_cert.g;
    let coordinate_error = (g_bar - v1.tr_mul(g)).norm() / (1.0 + g.norm());
    let recovery_error = full.recover(g).distance(&reduced.recover(g_bar));
    let hg = &full.library * g;
    let prediction_error = inf_norm(&(&hg - &reduced.library * g_bar)) / (1.0 + inf_norm(&hg));
    let hypothesis_violated = range_gap > RANGE_GAP_TOLERANCE;
    let passed = !hypothesis_violated
        && full_cert.status == Status::Optimal
        && reduced_cert.status == Status::Optimal
        && coordinate_error <= tolerance
        && recovery_error <= tolerance
        && prediction_error <= tolerance;
    Ok(Theorem1Report {
        coordinate_error,
        recovery_error,
        prediction_error,
        range_gap,
        hypothesis_violated,
        full_status: full_cert.status,
        reduced_status: reduced_cert.status,
        tolerance,
        passed,
    })
}

/// Something that consumes inputs and produces outputs.
pub trait Plant {
    fn inputs(&self) -> usize;
    fn outputs(&self) -> usize;
    /// Output at the current time if `u` is applied, without advancing.
    fn output(&self, u: &DVector<f64>) -> DVector<f64>;
    /// Output as recorded by the controller; defaults to [`Plant::output`].
    fn measure(&mut self, u: &DVector<f64>) -> DVector<f64> {
        self.output(u)
    }
    fn advance(&mut self, u: &DVector<f64>);
}

/// An [`LtiSystem`] with its current state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPlant {
    pub system: LtiSystem,
    pub state: DVector<f64>,
}

impl SimulatedPlant {
    pub fn new(system: LtiSystem, state: DVector<f64>) -> Result<Self> {
        if state.len() != system.n() {
            return Err(Error::dim("initial state", system.n(), state.len()));
        }
        Ok(Self { system, state })
    }

    pub fn at_rest(system: LtiSystem) -> Self {
        let state = DVector::zeros(system.n());
        Self { system, state }
    }
}

impl Plant for SimulatedPlant {
    fn inputs(&self) -> usize {
        self.system.m()
    }

    fn outputs(&self) -> usize {
        self.system.p()
    }

    fn output(&self, u: &DVector<f64>) -> DVector<f64> {
        self.system.output(&self.state, u)
    }

    fn advance(&mut self, u: &DVector<f64>) {
        self.state = self.system.next_state(&self.state, u);
    }
}

/// One solve of the receding-horizon loop.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonPlan {
    pub problem: QpProblem,
    pub certificate: SolveCertificate,
    /// First `l` optimal inputs.
    pub inputs: Vec<DVector<f64>>,
    /// Assembly plus solve.
    pub solve_time: Duration,
}

/// One applied input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub u: Vec<f64>,
    /// Plant response `y(t+1)` to `u(t)`.
    pub y: Vec<f64>,
    /// Output `y(t)` recorded into the controller window with `u(t)`.
    pub measured: Vec<f64>,
    pub stage_cost: f64,
    /// Zero for inputs taken from an earlier solve.
    pub solve_ms: f64,
    pub iterations: usize,
}

/// Receding-horizon DeePC controller over a fixed library.
#[derive(Debug, Clone)]
pub struct Controller {
    partition: LibraryPartition,
    config: DeepcConfig,
    settings: Settings,
    u_window: VecDeque<DVector<f64>>,
    y_window: VecDeque<DVector<f64>>,
    last_mu: Option<DVector<f64>>,
}

impl Controller {
    pub fn new(library: &DMatrix<f64>, config: DeepcConfig, settings: Settings) -> Result<Self> {
        config.validate()?;
        let partition = LibraryPartition::new(library, config.t_ini, config.horizon, config.m, config.p)?;
        Ok(Self {
            partition,
            config,
            settings,
            u_window: VecDeque::new(),
            y_window: VecDeque::new(),
            last_mu: None,
        })
    }

    pub fn config(&self) -> &DeepcConfig {
        &self.config
    }

    pub fn partition(&self) -> &LibraryPartition {
        &self.partition
    }

    pub fn dimension(&self) -> usize {
        self.partition.cols()
    }

    /// True once `T_ini` samples have been recorded.
    pub fn is_warm(&self) -> bool {
        self.u_window.len() == self.config.t_ini
    }

    /// Appends a measured pair `(u(t), y(t))` to the sliding window.
    pub fn record(&mut self, u: DVector<f64>, y: DVector<f64>) -> Result<()> {
        if u.len() != self.config.m {
            return Err(Error::dim("recorded input", self.config.m, u.len()));
        }
        if y.len() != self.config.p {
            return Err(Error::dim("recorded output", self.config.p, y.len()));
        }
        self.u_window.push_back(u);
        self.y_window.push_back(y);
        if self.u_window.len() > self.config.t_ini {
            self.u_window.pop_front();
            self.y_window.pop_front();
        }
        Ok(())
    }

    pub fn u_ini(&self) -> DVector<f64> {
        stack_window(&self.u_window)
    }

    pub fn y_ini(&self) -> DVector<f64> {
        stack_window(&self.y_window)
    }

    /// Assembles and solves the problem for time `t` from the current window.
    pub fn plan(&mut self, t: usize) -> Result<HorizonPlan> {
        if !self.is_warm() {
            return Err(Error::param("controller", "fewer than T_ini samples recorded"));
        }
        let start = Instant::now();
        let y_r = self.config.reference.stack(t, self.config.horizon);
        let problem = assemble(&self.partition, &self.config, &self.u_ini(), &self.y_ini(), &y_r)?;
        let warm = self.last_mu.clone().map(WarmStart::Dual);
        let certificate = problem.solve(&self.settings, warm);
        let solve_time = start.elapsed();
        if certificate.status != Status::Optimal {
            return Err(Error::Solver(format!(
                "step {t}: status {:?} after {} iterations, residuals {:?}",
                certificate.status, certificate.iterations, certificate.residuals
            )));
        }
        self.last_mu = Some(certificate.mu.clone());
        let u = &self.partition.u_f * &certificate.g;
        let m = self.config.m;
        let inputs = (0..self.config.apply_steps)
            .map(|k| u.rows(k * m, m).into_owned())
            .collect();
        Ok(HorizonPlan {
            problem,
            certificate,
            inputs,
            solve_time,
        })
    }

    /// Solves once, applies the first `l` inputs to `plant` and slides the window.
    pub fn receding_horizon_step(&mut self, plant: &mut dyn Plant, t: usize) -> Result<Vec<StepRecord>> {
        self.receding_horizon_step_limited(plant, t, usize::MAX)
    }

    fn receding_horizon_step_limited(
        &mut self,
        plant: &mut dyn Plant,
        t: usize,
        max_inputs: usize,
    ) -> Result<Vec<StepRecord>> {
        let plan = self.plan(t)?;
        let (q1, r1) = self.config.stage_weights();
        let mut records = Vec::new();
        for (k, u) in plan.inputs.into_iter().take(max_inputs).enumerate() {
            let y = plant.measure(&u);
            plant.advance(&u);
            let response = plant.output(&u);
            let e = &response - self.config.reference.at(t + k + 1);
            let stage_cost = e.dot(&(&q1 * &e)) + u.dot(&(&r1 * &u));
            records.push(StepRecord {
                t: t + k,
                u: u.as_slice().to_vec(),
                y: response.as_slice().to_vec(),
                measured: y.as_slice().to_vec(),
                stage_cost,
                solve_ms: if k == 0 { plan.solve_time.as_secs_f64() * 1e3 } else { 0.0 },
                iterations: if k == 0 { plan.certificate.iterations } else { 0 },
            });
            self.record(u, y)?;
        }
        Ok(records)
    }
}

fn stack_window(window: &VecDeque<DVector<f64>>) -> DVector<f64> {
    let mut out = Vec::new();
    for v in window {
        out.extend_from_slice(v.as_slice());
    }
    DVector::from_vec(out)
}

/// How a closed-loop run is started and how long it lasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSpec {
    /// Number of applied control inputs.
    pub steps: usize,
    pub seed: u64,
    /// Warm-up inputs are uniform in `[-a, a]`, clipped to the input box.
    pub warmup_amplitude: f64,
    /// Optional additive noise on the outputs fed back to the controller.
    #[serde(default)]
    pub measurement_noise: Option<BoxSet>,
}

impl Default for ClosedLoopSpec {
    fn default() -> Self {
        Self {
            steps: 100,
            seed: 0,
            warmup_amplitude: 0.1,
            measurement_noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopLog {
    pub label: String,
    pub dimension: usize,
    pub seed: u64,
    pub warmup_u: Vec<Vec<f64>>,
    pub warmup_y: Vec<Vec<f64>>,
    pub records: Vec<StepRecord>,
}

impl ClosedLoopLog {
    /// `sum(|y - y_r|_Q^2 + |u|_R^2)` over the control steps.
    pub fn accumulated_cost(&self) -> f64 {
        self.records.iter().map(|r| r.stage_cost).sum()
    }

    /// Solve times in milliseconds, one per solve.
    pub fn solve_times_ms(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.solve_ms > 0.0 || r.iterations > 0)
            .map(|r| r.solve_ms)
            .collect()
    }

    pub fn timing(&self) -> TimingStats {
        TimingStats::from_samples(&self.solve_times_ms())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let (m, p) = self
            .records
            .first()
            .map_or((0, 0), |r| (r.u.len(), r.y.len()));
        let mut header = vec!["t".to_string()];
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend((0..p).map(|i| format!("y{i}")));
        header.extend(["stage_cost", "solve_ms", "iters"].map(String::from));
        w.write_record(&header).map_err(csv_error)?;
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            row.extend(r.u.iter().chain(&r.y).map(|v| v.to_string()));
            row.push(r.stage_cost.to_string());
            row.push(r.solve_ms.to_string());
            row.push(r.iterations.to_string());
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::Parse {
            what: "closed-loop csv",
            reason: e.to_string(),
        })?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse {
        what: "closed-loop csv",
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingStats {
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let p95 = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            count: n,
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            median_ms: median,
            p95_ms: p95,
        }
    }
}

/// Drives `plant` with `T_ini` seeded warm-up inputs, then runs `spec.steps`
/// controlled steps.
pub fn run_closed_loop(
    plant: &mut dyn Plant,
    controller: &mut Controller,
    spec: &ClosedLoopSpec,
    label: &str,
) -> Result<ClosedLoopLog> {
    if spec.steps == 0 {
        return Err(Error::param("steps", "must be at least 1"));
    }
    let config = controller.config().clone();
    if plant.inputs() != config.m || plant.outputs() != config.p {
        return Err(Error::dim("plant channels", config.m + config.p, plant.inputs() + plant.outputs()));
    }
    let mut rng = crate::rng_from_seed(spec.seed);
    let a = spec.warmup_amplitude;
    let mut warmup_u = Vec::new();
    let mut warmup_y = Vec::new();
    for _ in 0..config.t_ini {
        let mut u: Vec<f64> = (0..config.m).map(|_| rng.random_range(-a..=a)).collect();
        config.input_set.clip(&mut u);
        let u = DVector::from_vec(u);
        let y = match &spec.measurement_noise {
            Some(noise) => plant.output(&u) + DVector::from_vec(noise.sample(&mut rng)),
            None => plant.output(&u),
        };
        plant.advance(&u);
        warmup_u.push(u.as_slice().to_vec());
        warmup_y.push(y.as_slice().to_vec());
        controller.record(u, y)?;
    }

    let mut records = Vec::with_capacity(spec.steps);
    let mut noisy = NoisyPlant {
        inner: plant,
        noise: spec.measurement_noise.as_ref(),
        rng: &mut rng,
    };
    let mut t = 0;
    while t < spec.steps {
        let batch = controller.receding_horizon_step_limited(&mut noisy, t, spec.steps - t)?;
        t += batch.len();
        records.extend(batch);
    }
    Ok(ClosedLoopLog {
        label: label.to_string(),
        dimension: controller.dimension(),
        seed: spec.seed,
        warmup_u,
        warmup_y,
        records,
    })
}

/// Adds measurement noise to the outputs the controller records. The response
/// logged for the stage cost stays noise-free.
struct NoisyPlant<'a> {
    inner: &'a mut dyn Plant,
    noise: Option<&'a BoxSet>,
    rng: &'a mut crate::Rng,
}

impl Plant for NoisyPlant<'_> {
    fn inputs(&self) -> usize {
        self.inner.inputs()
    }

    fn outputs(&self) -> usize {
        self.inner.outputs()
    }

    fn output(&self, u: &DVector<f64>) -> DVector<f64> {
        self.inner.output(u)
    }

    fn measure(&mut self, u: &DVector<f64>) -> DVector<f64> {
        let y = self.inner.measure(u);
        match self.noise {
            Some(n) => y + DVector::from_vec(n.sample(self.rng)),
            None => y,
        }
    }

    fn advance(&mut self, u: &DVector<f64>) {
        self.inner.advance(u);
    }
}

/// Hankel library `[H_L(u); H_L(y)]` with depth `T_ini + N`.
pub fn hankel_library(u: &Trajectory, y: &Trajectory, depth: usize) -> Result<BlockMatrix> {
    let hu = crate::data::build_hankel(u, depth)?;
    let hy = crate::data::build_hankel(y, depth)?;
    BlockMatrix::stack(&hu, &hy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_library(rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4)
    }

    #[test]
    fn partition_of_four_rows() {
        let lib = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let pt = LibraryPartition::new(&lib, 1, 1, 1, 1).unwrap();
        assert_eq!(pt.u_p.row(0)[1], 2.0);
        assert_eq!(pt.u_f.row(0)[0], 3.0);
        assert_eq!(pt.y_p.row(0)[0], 5.0);
        assert_eq!(pt.y_f.row(0)[1], 8.0);
        assert_eq!(pt.restack(), lib);
        assert!(matches!(
            LibraryPartition::new(&lib, 2, 1, 1, 1),
            Err(Error::Dimension { expected: 6, actual: 4, .. })
        ));
    }

    fn toy_config(lambda_g: f64) -> DeepcConfig {
        DeepcConfig::with_scaled_weights(
            1,
            1,
            1,
            2,
            1.0,
            0.1,
            [10.0, 10.0, lambda_g],
            SignalSet::Box(BoxSet::uniform(1, -1.0, 1.0).unwrap()),
            SignalSet::Unbounded,
            &[0.5],
        )
        .unwrap()
    }

    #[test]
    fn nonpositive_regularization_is_rejected() {
        let mut c = toy_config(1.0);
        c.lambda_g = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hessian_is_bounded_below_by_regularization() {
        let lib = toy_library(6, 5);
        let cfg = toy_config(0.3);
        let pt = LibraryPartition::new(&lib, 1, 2, 1, 1).unwrap();
        let prob = assemble(&pt, &cfg, &DVector::from_element(1, 0.2), &DVector::from_element(1, 0.1), &DVector::from_element(2, 0.5)).unwrap();
        let eig = prob.hessian.clone().symmetric_eigenvalues();
        assert!(eig.min() >= 2.0 * 0.3 - 1e-12);
        // the condensed objective equals the weighted least-squares form
        let g = DVector::from_fn(5, |i, _| i as f64 * 0.1 - 0.2);
        let resid = &prob.library * &g - &prob.target;
        let direct = resid.dot(&prob.weighted(&resid)) + 0.3 * g.norm_squared();
        assert!((prob.objective(&g) - direct).abs() < 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn zero_target_without_active_constraints_gives_zero() {
        let lib = toy_library(6, 5);
        let mut cfg = toy_config(1.0);
        cfg.reference = Reference::setpoint(&[0.0]);
        let pt = LibraryPartition::new(&lib, 1, 2, 1, 1).unwrap();
        let z1 = DVector::zeros(1);
        let prob = assemble(&pt, &cfg, &z1, &z1, &DVector::zeros(2)).unwrap();
        let cert = prob.solve(&Settings::default(), None);
        assert_eq!(cert.status, Status::Optimal);
        assert!(cert.g.amax() < 1e-14);
    }

    #[test]
    fn timing_stats_order() {
        let s = TimingStats::from_samples(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.median_ms, 2.5);
        assert_eq!(s.mean_ms, 2.5);
        assert_eq!(s.p95_ms, 4.0);
    }
}
