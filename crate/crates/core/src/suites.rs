//! Randomized property suites.
//!
//! Each suite draws its own instances from a seed and returns a
//! [`SuiteReport`] with pass/fail counts and the worst residual seen.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_hankel, build_mosaic_hankel, build_page, check_collective_excitation, check_page_excitation,
    check_persistent_excitation, membership_residual, BlockMatrix, Trajectory, DEFAULT_RANK_TOLERANCE,
};
use crate::deepc::{assemble, verify_theorem1, DeepcConfig, LibraryPartition, SignalSet};
use crate::plant::{BoxSet, LtiSystem};
use crate::qp::{self, QpSpec, Settings, Status};
use crate::reduction::{reduce_with_svd, svd, RankRule};
use crate::{rng_from_seed, Error, Result, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub trials: usize,
    pub passed: usize,
    pub failed: usize,
    /// Largest residual or error observed, in the suite's own metric.
    pub worst: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub hypothesis_violated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Suite-specific counters.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

impl SuiteReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            trials: 0,
            passed: 0,
            failed: 0,
            worst: 0.0,
            tolerance,
            hypothesis_violated: false,
            notes: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    fn record(&mut self, value: f64, ok: bool) {
        self.trials += 1;
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        if value.is_nan() || value > self.worst {
            self.worst = value;
        }
    }

    fn check(&mut self, value: f64) {
        let ok = value <= self.tolerance;
        self.record(value, ok);
    }

    pub fn ok(&self) -> bool {
        self.failed == 0 && self.trials > 0 && !self.hypothesis_violated
    }
}

/// Random stable plant that is controllable and observable.
pub fn random_minimal_plant(n: usize, m: usize, p: usize, rng: &mut Rng) -> LtiSystem {
    loop {
        let sys = LtiSystem::random_stable(n, m, p, rng);
        if sys.is_controllable(1e-8) && sys.observability_index(1e-8).is_ok() {
            return sys;
        }
    }
}

fn uniform_trajectory(channels: usize, len: usize, amplitude: f64, rng: &mut Rng) -> Trajectory {
    let data = (0..channels * len).map(|_| rng.random_range(-amplitude..amplitude)).collect();
    Trajectory::new(channels, data).expect("whole samples")
}

fn random_state(n: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// A fresh length-`depth` trajectory stacked as `[u; y]`.
fn probe_trajectory(sys: &LtiSystem, depth: usize, rng: &mut Rng) -> Result<DVector<f64>> {
    let u = uniform_trajectory(sys.m(), depth, 1.0, rng);
    let (_, y) = sys.simulate(&random_state(sys.n(), rng), &u)?;
    let mut v = u.stacked(0, depth).as_slice().to_vec();
    v.extend_from_slice(y.stacked(0, depth).as_slice());
    Ok(DVector::from_vec(v))
}

fn relative_membership(library: &BlockMatrix, v: &DVector<f64>) -> Result<f64> {
    let scale = 1.0 + v.norm();
    Ok(membership_residual(library.matrix(), v)? / scale)
}

#[derive(Debug, Clone, Copy)]
struct SmallPlant {
    n: usize,
    m: usize,
    p: usize,
    depth: usize,
}

fn small_plant(rng: &mut Rng) -> SmallPlant {
    SmallPlant {
        n: rng.random_range(1..=4),
        m: rng.random_range(1..=2),
        p: rng.random_range(1..=2),
        depth: rng.random_range(2..=5),
    }
}

/// Noise-free trajectories lie in the range of Hankel, Page and mosaic-Hankel
/// libraries built under the matching excitation condition.
///
/// Returns one report per structure.
pub fn membership_suites(trials: usize, seed: u64, tolerance: f64) -> Result<[SuiteReport; 3]> {
    let mut hankel = SuiteReport::new("membership_hankel", tolerance);
    let mut page = SuiteReport::new("membership_page", tolerance);
    let mut mosaic = SuiteReport::new("membership_mosaic", tolerance);
    let mut rng = rng_from_seed(seed);
    let mut skipped = 0;
    for _ in 0..trials {
        let SmallPlant { n, m, p, depth } = small_plant(&mut rng);
        let sys = random_minimal_plant(n, m, p, &mut rng);
        let x0 = random_state(n, &mut rng);

        // Hankel, persistently exciting of order n + L.
        let t = (m + 1) * (n + depth) - 1 + 10;
        let u = uniform_trajectory(m, t, 1.0, &mut rng);
        let (_, y) = sys.simulate(&x0, &u)?;
        if check_persistent_excitation(&u, n + depth, DEFAULT_RANK_TOLERANCE)?.satisfied {
            let lib = BlockMatrix::stack(&build_hankel(&u, depth)?, &build_hankel(&y, depth)?)?;
            hankel.check(relative_membership(&lib, &probe_trajectory(&sys, depth, &mut rng)?)?);
        } else {
            skipped += 1;
        }

        // Page, L-Page exciting of order n + 1.
        let t = depth * ((m * depth + 1) * (n + 1) - 1) + 3 * depth;
        let u = uniform_trajectory(m, t, 1.0, &mut rng);
        let (_, y) = sys.simulate(&x0, &u)?;
        if check_page_excitation(&u, depth, n + 1, DEFAULT_RANK_TOLERANCE)?.satisfied {
            let lib = BlockMatrix::stack(&build_page(&u, depth)?, &build_page(&y, depth)?)?;
            page.check(relative_membership(&lib, &probe_trajectory(&sys, depth, &mut rng)?)?);
        } else {
            skipped += 1;
        }

        // Mosaic, collectively persistently exciting of order n + L.
        let order = n + depth;
        let pieces = 3;
        let each = order + (m * order).div_ceil(pieces) + 2;
        let mut us = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..pieces {
            let u = uniform_trajectory(m, each, 1.0, &mut rng);
            let (_, y) = sys.simulate(&random_state(n, &mut rng), &u)?;
            us.push(u);
            ys.push(y);
        }
        if check_collective_excitation(&us, order, DEFAULT_RANK_TOLERANCE)?.satisfied {
            let lib = BlockMatrix::stack(&build_mosaic_hankel(&us, depth)?, &build_mosaic_hankel(&ys, depth)?)?;
            mosaic.check(relative_membership(&lib, &probe_trajectory(&sys, depth, &mut rng)?)?);
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        for r in [&mut hankel, &mut page, &mut mosaic] {
            r.notes.push(format!("{skipped} draws lacked excitation and were skipped"));
        }
    }
    Ok([hankel, page, mosaic])
}

/// The noise-free stacked Hankel library has rank `mL + n` exactly when `L`
/// reaches the observability index, and `mL + rank(O_L)` below it.
pub fn rank_suite(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("hankel_rank", 0.0);
    let mut rng = rng_from_seed(seed);
    let mut below = 0;
    for _ in 0..trials {
        let n = rng.random_range(2..=5);
        let m = rng.random_range(1..=2);
        let p = rng.random_range(1..=2);
        let sys = random_minimal_plant(n, m, p, &mut rng);
        let index = sys.observability_index(1e-8)?;
        let depth = rng.random_range(1..=index + 2);
        let t = (m + 1) * (n + depth) - 1 + 15;
        let u = uniform_trajectory(m, t, 1.0, &mut rng);
        let (_, y) = sys.simulate(&random_state(n, &mut rng), &u)?;
        let lib = BlockMatrix::stack(&build_hankel(&u, depth)?, &build_hankel(&y, depth)?)?;
        let sigma = svd(lib.matrix())?.singular_values;
        let rank = crate::linalg::numerical_rank(&sigma, DEFAULT_RANK_TOLERANCE);
        let obs_rank = crate::linalg::numerical_rank(
            &crate::linalg::singular_values(&sys.extended_observability(depth)),
            DEFAULT_RANK_TOLERANCE,
        );
        let expected = m * depth + obs_rank;
        if depth < index {
            below += 1;
        }
        // rank(O_L) = n exactly when L reaches the index
        let ok = rank == expected && (expected == m * depth + n) == (depth >= index);
        report.record((rank as f64 - expected as f64).abs(), ok);
    }
    report.metrics.insert("below_observability_index".into(), below as f64);
    Ok(report)
}

/// `[H_L(u); H_L(y)] = [[I, 0], [T_L, O_L]] [H_L(u); H_1(x)]` on noise-free data.
pub fn factorization_suite(plants: usize, seed: u64, tolerance: f64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("factorization_identity", tolerance);
    let mut rng = rng_from_seed(seed);
    for _ in 0..plants {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=3);
        let p = rng.random_range(1..=3);
        let sys = random_minimal_plant(n, m, p, &mut rng);
        let depth = rng.random_range(2..=8);
        let t = (m + 1) * (n + depth) + 20;
        let u = uniform_trajectory(m, t, 1.0, &mut rng);
        let (x, y) = sys.simulate(&random_state(n, &mut rng), &u)?;
        report.check(factorization_error(&sys, &u, &x, &y, depth)?);
    }
    Ok(report)
}

/// Relative max-entry error of the factorization identity.
pub fn factorization_error(
    sys: &LtiSystem,
    u: &Trajectory,
    x: &Trajectory,
    y: &Trajectory,
    depth: usize,
) -> Result<f64> {
    let hu = build_hankel(u, depth)?;
    let lhs = BlockMatrix::stack(&hu, &build_hankel(y, depth)?)?;
    let states = build_hankel(&x.window(0, x.len() - depth + 1)?, 1)?;
    let right = BlockMatrix::stack(&hu, &states)?;
    let rhs = sys.structural_factors(depth)?.left_factor() * right.matrix();
    Ok((lhs.matrix() - rhs).amax() / lhs.matrix().amax().max(f64::MIN_POSITIVE))
}

/// Excitation of the configured input data at order `n + L`.
pub fn excitation_suite(u: &Trajectory, n: usize, depth: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("persistent_excitation", 0.0);
    let order = n + depth;
    let m = u.channels();
    let bound = (m + 1) * (n + depth) - 1;
    if u.len() < order {
        report.record(f64::INFINITY, false);
        report
            .notes
            .push(format!("T = {} is shorter than the order {order}; need T >= {bound}", u.len()));
        return Ok(report);
    }
    let r = check_persistent_excitation(u, order, DEFAULT_RANK_TOLERANCE)?;
    report.record((r.required_rank - r.computed_rank) as f64, r.satisfied);
    report.notes.push(format!(
        "order {order}: rank {} of {} required; Hankel columns {} (T = {}, bound T >= {bound})",
        r.computed_rank,
        r.required_rank,
        u.len() - order + 1,
        u.len(),
    ));
    if let Some(s) = r.shortfall {
        report.notes.push(format!(
            "shortfall: {} columns available, {} required",
            s.columns_available, s.columns_required
        ));
    }
    Ok(report)
}

/// Options for [`theorem1_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Options {
    pub trials: usize,
    pub tolerance: f64,
    /// `(lambda_u, lambda_y, lambda_g)`; drawn per trial when absent.
    pub lambdas: Option<[f64; 3]>,
}

impl Default for Theorem1Options {
    fn default() -> Self {
        Self {
            trials: 50,
            tolerance: 1e-6,
            lambdas: None,
        }
    }
}

fn log_uniform(lo: f64, hi: f64, rng: &mut Rng) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

/// Full and reduced problems share their optimal `(u, y, sigma_u, sigma_y)`
/// on random noise-free instances with `r` equal to the numerical rank.
///
/// Every other trial uses a tight input box so that constraints are active.
pub fn theorem1_suite(options: &Theorem1Options, seed: u64, settings: &Settings) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("theorem1_equivalence", options.tolerance);
    if let Some(l) = options.lambdas {
        if l.iter().any(|v| !(*v > 0.0)) {
            report.hypothesis_violated = true;
            report.record(f64::INFINITY, false);
            report.notes.push(format!(
                "hypothesis violated: lambda_u, lambda_y, lambda_g must be positive, got {l:?}"
            ));
            return Ok(report);
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut with_active = 0;
    let mut hypothesis_failures = 0;
    for trial in 0..options.trials {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(1..=2);
        let p = rng.random_range(1..=2);
        let sys = random_minimal_plant(n, m, p, &mut rng);
        let t_ini = sys.observability_index(1e-8)? + rng.random_range(0..=1);
        let horizon = rng.random_range(3..=6);
        let depth = t_ini + horizon;
        let t = (m + 1) * (n + depth) - 1 + 20;
        let u = uniform_trajectory(m, t, 1.0, &mut rng);
        let (_, y) = sys.simulate(&random_state(n, &mut rng), &u)?;
        let library = BlockMatrix::stack(&build_hankel(&u, depth)?, &build_hankel(&y, depth)?)?;
        let bundle = svd(library.matrix())?;
        let reduced = reduce_with_svd(
            library.matrix(),
            &bundle,
            RankRule::Threshold {
                rel_tol: DEFAULT_RANK_TOLERANCE,
            },
        )?;

        let lambdas = options.lambdas.unwrap_or_else(|| {
            [
                log_uniform(1.0, 1e3, &mut rng),
                log_uniform(1.0, 1e3, &mut rng),
                log_uniform(1e-2, 10.0, &mut rng),
            ]
        });
        let tight = trial % 2 == 0;
        let u_bound = if tight { 0.05 } else { 50.0 };
        let setpoint: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let config = DeepcConfig::with_scaled_weights(
            m,
            p,
            t_ini,
            horizon,
            log_uniform(0.1, 100.0, &mut rng),
            log_uniform(1e-3, 1.0, &mut rng),
            lambdas,
            SignalSet::Box(BoxSet::uniform(m, -u_bound, u_bound)?),
            SignalSet::Box(BoxSet::uniform(p, -50.0, 50.0)?),
            &setpoint,
        )?;

        // past window from a fresh trajectory of the same plant
        let u_past = uniform_trajectory(m, t_ini, 0.5, &mut rng);
        let (_, y_past) = sys.simulate(&random_state(n, &mut rng), &u_past)?;
        let u_ini = u_past.stacked(0, t_ini);
        let y_ini = y_past.stacked(0, t_ini);
        let y_r = config.reference.stack(0, horizon);

        let full_pt = LibraryPartition::from_block(&library, t_ini, horizon, m, p)?;
        let red_pt = LibraryPartition::from_block(&reduced.h_bar, t_ini, horizon, m, p)?;
        let full = assemble(&full_pt, &config, &u_ini, &y_ini, &y_r)?;
        let red = assemble(&red_pt, &config, &u_ini, &y_ini, &y_r)?;
        let check = verify_theorem1(&full, &red, &reduced.v1, options.tolerance, settings)?;
        let cert = full.solve(settings, None);
        if cert.mu.iter().any(|&v| v > 0.0) {
            with_active += 1;
        }
        if check.hypothesis_violated {
            hypothesis_failures += 1;
        }
        let worst = check
            .coordinate_error
            .max(check.recovery_error)
            .max(check.prediction_error);
        report.record(worst, check.passed);
    }
    report.notes.push(format!(
        "{with_active} of {} instances had active constraints",
        options.trials
    ));
    report.metrics.insert("active_instances".into(), with_active as f64);
    if hypothesis_failures > 0 {
        report.hypothesis_violated = true;
        report
            .notes
            .push(format!("{hypothesis_failures} reductions did not preserve the range"));
    }
    Ok(report)
}

/// A random strictly convex QP with `k` inequality rows.
pub fn random_qp(d: usize, k: usize, rng: &mut Rng) -> QpSpec {
    let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let h = g.tr_mul(&g) + DMatrix::identity(d, d) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let f = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
    let a = DMatrix::from_fn(k, d, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(k, |_, _| rng.random_range(-0.5..1.0));
    QpSpec::new(h, f, a, b).expect("consistent dimensions")
}

/// Solver returns at `status = optimal` satisfy the KKT conditions and close
/// the duality gap.
pub fn kkt_suite(instances: usize, seed: u64, settings: &Settings) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("qp_kkt_residuals", settings.tolerance);
    let mut rng = rng_from_seed(seed);
    let mut non_optimal = 0;
    for _ in 0..instances {
        let d = rng.random_range(1..=10);
        let k = rng.random_range(0..=8);
        let spec = random_qp(d, k, &mut rng);
        let sol = qp::solve(&spec, settings);
        match sol.status {
            Status::Optimal => {
                let dual = spec.dual_objective(&sol.mu)?;
                let gap = (sol.objective - dual).abs() / (1.0 + sol.objective.abs());
                report.check(sol.residuals.max().max(gap));
            }
            Status::Infeasible => report.record(0.0, true),
            _ => {
                non_optimal += 1;
                report.record(sol.residuals.max(), false);
            }
        }
    }
    if non_optimal > 0 {
        report.notes.push(format!("{non_optimal} solves did not reach optimality"));
    }
    Ok(report)
}

/// Aggregated result of several suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

impl CheckReport {
    pub fn new(suites: Vec<SuiteReport>) -> Self {
        Self {
            passed: suites.iter().all(SuiteReport::ok),
            suites,
        }
    }
}

/// Wraps a suite that could not run as a failed report.
pub fn failed_suite(name: &str, err: &Error) -> SuiteReport {
    let mut r = SuiteReport::new(name, 0.0);
    r.record(f64::INFINITY, false);
    if matches!(err, Error::InvalidParameter { .. }) {
        r.hypothesis_violated = true;
    }
    r.notes.push(err.to_string());
    r
}
