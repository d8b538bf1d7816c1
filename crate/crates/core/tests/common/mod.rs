#![allow(dead_code)]

use deepc::qp::QpSpec;
use nalgebra::{DMatrix, DVector};

/// Brute-force active-set enumeration for a strictly convex QP.
///
/// Solves the equality-constrained KKT system for every subset of the
/// inequalities and returns the primal/dual pair that is primal and dual
/// feasible, or `None` when no subset is.
pub fn enumerate_qp(spec: &QpSpec) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = spec.dim();
    let k = spec.num_constraints();
    let a = &spec.constraints;
    let b = &spec.bounds;
    let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let q = active.len();
        let mut kkt = DMatrix::zeros(d + q, d + q);
        kkt.view_mut((0, 0), (d, d)).copy_from(&spec.hessian);
        let mut rhs = DVector::zeros(d + q);
        rhs.rows_mut(0, d).copy_from(&(-&spec.linear));
        for (j, &i) in active.iter().enumerate() {
            for c in 0..d {
                kkt[(d + j, c)] = a[(i, c)];
                kkt[(c, d + j)] = a[(i, c)];
            }
            rhs[d + j] = b[i];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
            continue;
        }
        let x = sol.rows(0, d).into_owned();
        let mut mu = DVector::zeros(k);
        for (j, &i) in active.iter().enumerate() {
            mu[i] = sol[d + j];
        }
        let slack = a * &x - b;
        let primal_ok = slack.iter().zip(b.iter()).all(|(s, bi)| *s <= 1e-9 * (1.0 + bi.abs()));
        let dual_ok = mu.iter().all(|&m| m >= -1e-9);
        if primal_ok && dual_ok {
            let obj = spec.objective(&x);
            if best.as_ref().is_none_or(|(_, _, o)| obj < *o) {
                best = Some((x, mu, obj));
            }
        }
    }
    best.map(|(x, mu, _)| (x, mu))
}

pub fn rel_inf(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / (1.0 + b.amax())
}

use deepc::deepc::{DeepcConfig, QpProblem, Recovered};
use deepc::experiment::{Experiment, Libraries};

/// The built-in four-state scenario with its collected libraries.
pub fn scenario() -> (Experiment, Libraries) {
    let exp = Experiment::builtin(std::env::temp_dir().join("deepc-scenario-unused"));
    let (u, y) = exp.collect().unwrap();
    let libs = exp.libraries(&u, &y).unwrap();
    (exp, libs)
}

/// The uncondensed problem over `z = [g; u; y; sigma_u; sigma_y]`:
/// `1/2 z'Hz + f'z + c` with equality constraints `E z = e`.
pub struct Expanded {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub sizes: [usize; 5],
}

pub fn expand(problem: &QpProblem, config: &DeepcConfig) -> Expanded {
    let pt = &problem.partition;
    let d = pt.cols();
    let (mn, pn) = (pt.u_f.nrows(), pt.y_f.nrows());
    let (mt, ptn) = (pt.u_p.nrows(), pt.y_p.nrows());
    let sizes = [d, mn, pn, mt, ptn];
    let total: usize = sizes.iter().sum();
    let offs = [0, d, d + mn, d + mn + pn, d + mn + pn + mt];
    let mut h = DMatrix::zeros(total, total);
    let blocks = [
        DMatrix::identity(d, d) * config.lambda_g,
        config.r.clone(),
        config.q.clone(),
        DMatrix::identity(mt, mt) * config.lambda_u,
        DMatrix::identity(ptn, ptn) * config.lambda_y,
    ];
    for (k, b) in blocks.iter().enumerate() {
        h.view_mut((offs[k], offs[k]), b.shape()).copy_from(&(b * 2.0));
    }
    let y_r = problem.target.rows(problem.target.len() - pn, pn).into_owned();
    let mut f = DVector::zeros(total);
    f.rows_mut(offs[2], pn).copy_from(&(&config.q * &y_r * -2.0));
    let constant = y_r.dot(&(&config.q * &y_r));

    // U_p g - sigma_u = u_ini, U_f g - u = 0, Y_p g - sigma_y = y_ini, Y_f g - y = 0
    let rows = mt + mn + ptn + pn;
    let mut e = DMatrix::zeros(rows, total);
    let mut rhs = DVector::zeros(rows);
    let mut r0 = 0;
    for (lib, var, target) in [
        (&pt.u_p, 3, Some(problem.u_ini())),
        (&pt.u_f, 1, None),
        (&pt.y_p, 4, Some(problem.y_ini())),
        (&pt.y_f, 2, None),
    ] {
        let k = lib.nrows();
        e.view_mut((r0, 0), (k, d)).copy_from(lib);
        for i in 0..k {
            e[(r0 + i, offs[var] + i)] = -1.0;
        }
        if let Some(t) = target {
            rhs.rows_mut(r0, k).copy_from(&t);
        }
        r0 += k;
    }
    Expanded {
        hessian: h,
        linear: f,
        constant,
        eq_matrix: e,
        eq_rhs: rhs,
        sizes,
    }
}

impl Expanded {
    /// Eliminates everything but `g` by substitution: `(H_g, f_g, c_g)`.
    pub fn condense(&self) -> (DMatrix<f64>, DVector<f64>, f64) {
        let [d, mn, pn, mt, ptn] = self.sizes;
        let total = self.hessian.nrows();
        // z = M g + z0
        let mut m = DMatrix::zeros(total, d);
        m.view_mut((0, 0), (d, d)).fill_with_identity();
        let mut z0 = DVector::zeros(total);
        // rows of E are [U_p; U_f; Y_p; Y_f] against g
        let lib = self.eq_matrix.columns(0, d);
        let (up, uf) = (lib.rows(0, mt), lib.rows(mt, mn));
        let (yp, yf) = (lib.rows(mt + mn, ptn), lib.rows(mt + mn + ptn, pn));
        m.view_mut((d, 0), (mn, d)).copy_from(&uf);
        m.view_mut((d + mn, 0), (pn, d)).copy_from(&yf);
        m.view_mut((d + mn + pn, 0), (mt, d)).copy_from(&up);
        m.view_mut((d + mn + pn + mt, 0), (ptn, d)).copy_from(&yp);
        z0.rows_mut(d + mn + pn, mt).copy_from(&(-self.eq_rhs.rows(0, mt)));
        z0.rows_mut(d + mn + pn + mt, ptn).copy_from(&(-self.eq_rhs.rows(mt + mn, ptn)));
        let hg = m.tr_mul(&(&self.hessian * &m));
        let fg = m.tr_mul(&(&self.hessian * &z0 + &self.linear));
        let cg = 0.5 * z0.dot(&(&self.hessian * &z0)) + self.linear.dot(&z0) + self.constant;
        (hg, fg, cg)
    }

    /// Minimizer over `z` subject only to the equalities, via the KKT system.
    pub fn solve_equality(&self) -> Recovered {
        let n = self.hessian.nrows();
        let k = self.eq_matrix.nrows();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.hessian);
        kkt.view_mut((n, 0), (k, n)).copy_from(&self.eq_matrix);
        kkt.view_mut((0, n), (n, k)).copy_from(&self.eq_matrix.transpose());
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&self.linear));
        rhs.rows_mut(n, k).copy_from(&self.eq_rhs);
        let z = kkt.lu().solve(&rhs).expect("nonsingular KKT system");
        let [d, mn, pn, mt, ptn] = self.sizes;
        Recovered {
            u: z.rows(d, mn).into_owned(),
            y: z.rows(d + mn, pn).into_owned(),
            sigma_u: z.rows(d + mn + pn, mt).into_owned(),
            sigma_y: z.rows(d + mn + pn + mt, ptn).into_owned(),
        }
    }
}
