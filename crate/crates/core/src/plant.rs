//! Discrete-time LTI plants `x(t+1) = A x(t) + B u(t)`, `y(t) = C x(t) + D u(t)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::linalg;
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::param("A", "state dimension must be positive"));
        }
        if a.ncols() != n {
            return Err(Error::dim("A columns", n, a.ncols()));
        }
        if b.nrows() != n {
            return Err(Error::dim("B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(Error::dim("C columns", n, c.ncols()));
        }
        if b.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::param("B/C", "input and output dimensions must be positive"));
        }
        if d.nrows() != c.nrows() {
            return Err(Error::dim("D rows", c.nrows(), d.nrows()));
        }
        if d.ncols() != b.ncols() {
            return Err(Error::dim("D columns", b.ncols(), d.ncols()));
        }
        Ok(Self { a, b, c, d })
    }

    /// The four-state, two-input, two-output coupled plant used in the linear case study.
    pub fn coupled_four_state() -> Self {
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(4, 4, &[
            0.921, 0.0,   0.041, 0.0,
            0.0,   0.918, 0.0,   0.033,
            0.0,   0.0,   0.924, 0.0,
            0.0,   0.0,   0.0,   0.937,
        ]);
        #[rustfmt::skip]
        let b = DMatrix::from_row_slice(4, 2, &[
            0.017, 0.001,
            0.001, 0.023,
            0.0,   0.061,
            0.072, 0.0,
        ]);
        #[rustfmt::skip]
        let c = DMatrix::from_row_slice(2, 4, &[
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
        ]);
        Self::new(a, b, c, DMatrix::zeros(2, 2)).expect("consistent dimensions")
    }

    /// A random plant with `|A|_2 <= 0.95` and entries of `B`, `C` uniform in `[-1, 1]`, `D = 0`.
    ///
    /// Generic draws are controllable and observable; callers that need the
    /// guarantee should check [`LtiSystem::is_controllable`] and
    /// [`LtiSystem::observability_index`].
    pub fn random_stable(n: usize, m: usize, p: usize, rng: &mut Rng) -> Self {
        let mut uniform = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let q = uniform(n, n).qr().q();
        let scales = DVector::from_fn(n, |_, _| 0.5 + 0.45 * rng.random::<f64>());
        let a = q * DMatrix::from_diagonal(&scales);
        let mut uniform = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let b = uniform(n, m);
        let c = uniform(p, n);
        Self::new(a, b, c, DMatrix::zeros(p, m)).expect("consistent dimensions")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Output dimension.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u
    }

    pub fn next_state(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    /// Simulates from `x0` under `u`, returning the state and output sequences
    /// `x(0..T)` and `y(0..T)`.
    pub fn simulate(&self, x0: &DVector<f64>, u: &Trajectory) -> Result<(Trajectory, Trajectory)> {
        if x0.len() != self.n() {
            return Err(Error::dim("initial state", self.n(), x0.len()));
        }
        if u.channels() != self.m() {
            return Err(Error::dim("input channels", self.m(), u.channels()));
        }
        let mut xs = Vec::with_capacity(u.len() * self.n());
        let mut ys = Vec::with_capacity(u.len() * self.p());
        let mut x = x0.clone();
        for ut in u.samples() {
            let ut = DVector::from_column_slice(ut);
            xs.extend(x.iter());
            ys.extend(self.output(&x, &ut).iter());
            x = self.next_state(&x, &ut);
        }
        Ok((Trajectory::new(self.n(), xs)?, Trajectory::new(self.p(), ys)?))
    }

    /// `[B, AB, ..., A^{n-1}B]` has rank `n`.
    pub fn is_controllable(&self, rank_tolerance: f64) -> bool {
        let n = self.n();
        let m = self.m();
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for k in 0..n {
            ctrb.columns_mut(k * m, m).copy_from(&block);
            block = &self.a * block;
        }
        linalg::numerical_rank(&linalg::singular_values(&ctrb), rank_tolerance) == n
    }

    /// Smallest `l` such that `[C; CA; ...; CA^{l-1}]` has rank `n`.
    pub fn observability_index(&self, rank_tolerance: f64) -> Result<usize> {
        let n = self.n();
        let mut rank = 0;
        for l in 1..=n {
            let o = self.extended_observability(l);
            rank = linalg::numerical_rank(&linalg::singular_values(&o), rank_tolerance);
            if rank == n {
                return Ok(l);
            }
        }
        Err(Error::Unobservable { rank, n })
    }

    /// `O_L = [C; CA; ...; CA^{L-1}]`.
    pub fn extended_observability(&self, depth: usize) -> DMatrix<f64> {
        let (n, p) = (self.n(), self.p());
        let mut o = DMatrix::zeros(p * depth, n);
        let mut block = self.c.clone();
        for i in 0..depth {
            o.rows_mut(i * p, p).copy_from(&block);
            block = &block * &self.a;
        }
        o
    }

    /// Block lower-triangular Toeplitz matrix with `D` on the diagonal and
    /// `C A^{i-j-1} B` below it.
    pub fn convolution_matrix(&self, depth: usize) -> DMatrix<f64> {
        let (m, p) = (self.m(), self.p());
        // markov[k] = C A^{k-1} B for k >= 1, markov[0] = D
        let mut markov = Vec::with_capacity(depth);
        markov.push(self.d.clone());
        let mut ak_b = self.b.clone();
        for _ in 1..depth {
            markov.push(&self.c * &ak_b);
            ak_b = &self.a * ak_b;
        }
        let mut t = DMatrix::zeros(p * depth, m * depth);
        for i in 0..depth {
            for j in 0..=i {
                t.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i - j]);
            }
        }
        t
    }

    pub fn structural_factors(&self, depth: usize) -> Result<StructuralFactors> {
        if depth == 0 {
            return Err(Error::param("depth", "must be at least 1"));
        }
        Ok(StructuralFactors {
            convolution: self.convolution_matrix(depth),
            observability: self.extended_observability(depth),
            depth,
        })
    }

    pub fn to_file_format(&self) -> PlantFile {
        let rows = |m: &DMatrix<f64>| {
            m.row_iter()
                .map(|r| r.iter().copied().collect())
                .collect::<Vec<Vec<f64>>>()
        };
        PlantFile {
            n: self.n(),
            m: self.m(),
            p: self.p(),
            a: rows(&self.a),
            b: rows(&self.b),
            c: rows(&self.c),
            d: rows(&self.d),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file_format()).expect("plant serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: PlantFile = toml::from_str(text).map_err(|e| Error::Parse {
            what: "plant file",
            reason: e.to_string(),
        })?;
        file.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

/// On-disk plant description: dimension header plus row-major matrix literals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantFile {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

impl TryFrom<PlantFile> for LtiSystem {
    type Error = Error;

    fn try_from(f: PlantFile) -> Result<Self> {
        fn matrix(name: &'static str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<DMatrix<f64>> {
            if rows.len() != r {
                return Err(Error::dim(name, r, rows.len()));
            }
            if let Some(bad) = rows.iter().find(|row| row.len() != c) {
                return Err(Error::dim(name, c, bad.len()));
            }
            Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
        }
        LtiSystem::new(
            matrix("A", &f.a, f.n, f.n)?,
            matrix("B", &f.b, f.n, f.m)?,
            matrix("C", &f.c, f.p, f.n)?,
            matrix("D", &f.d, f.p, f.m)?,
        )
    }
}

/// Factors of `[H_L(u); H_L(y)] = [[I, 0], [T_L, O_L]] [H_L(u); H_1(x)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralFactors {
    pub convolution: DMatrix<f64>,
    pub observability: DMatrix<f64>,
    pub depth: usize,
}

impl StructuralFactors {
    /// `[[I_{mL}, 0], [T_L, O_L]]`.
    pub fn left_factor(&self) -> DMatrix<f64> {
        let (pl, ml) = self.convolution.shape();
        let n = self.observability.ncols();
        let mut f = DMatrix::zeros(ml + pl, ml + n);
        f.view_mut((0, 0), (ml, ml)).fill_with_identity();
        f.view_mut((ml, 0), (pl, ml)).copy_from(&self.convolution);
        f.view_mut((ml, ml), (pl, n)).copy_from(&self.observability);
        f
    }
}

/// A closed interval per channel; `low == high` pins the channel to a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl BoxSet {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::dim("box bounds", low.len(), high.len()));
        }
        if low.iter().zip(&high).any(|(l, h)| l > h || l.is_nan() || h.is_nan()) {
            return Err(Error::param("box", "every lower bound must not exceed its upper bound"));
        }
        Ok(Self { low, high })
    }

    /// The same interval on each of `channels` channels.
    pub fn uniform(channels: usize, low: f64, high: f64) -> Result<Self> {
        Self::new(vec![low; channels], vec![high; channels])
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && v
                .iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(x, (l, h))| (l..=h).contains(&x))
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(&l, &h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }
}

/// Offline data collection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionSpec {
    pub length: usize,
    pub input: BoxSet,
    pub noise: BoxSet,
    /// Defaults to the zero state.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
}

/// Recorded input/output data plus the noise-free signals behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectedData {
    pub u: Trajectory,
    pub y: Trajectory,
    pub x: Trajectory,
    pub y_clean: Trajectory,
}

/// Drives `sys` with i.i.d. inputs drawn from `spec.input` and adds i.i.d.
/// noise from `spec.noise` to the outputs.
///
/// All inputs are drawn first, then all noise samples, from a generator
/// seeded with `seed`.
pub fn collect_data(sys: &LtiSystem, spec: &CollectionSpec, seed: u64) -> Result<CollectedData> {
    if spec.length == 0 {
        return Err(Error::param("length", "must be at least 1"));
    }
    if spec.input.dim() != sys.m() {
        return Err(Error::dim("input box", sys.m(), spec.input.dim()));
    }
    if spec.noise.dim() != sys.p() {
        return Err(Error::dim("noise box", sys.p(), spec.noise.dim()));
    }
    let x0 = match &spec.initial_state {
        Some(x) => DVector::from_column_slice(x),
        None => DVector::zeros(sys.n()),
    };
    let mut rng = crate::rng_from_seed(seed);
    let mut u = Vec::with_capacity(spec.length * sys.m());
    for _ in 0..spec.length {
        u.extend(spec.input.sample(&mut rng));
    }
    let u = Trajectory::new(sys.m(), u)?;
    let (x, y_clean) = sys.simulate(&x0, &u)?;
    let mut y = y_clean.as_slice().to_vec();
    for chunk in y.chunks_exact_mut(sys.p()) {
        for (v, e) in chunk.iter_mut().zip(spec.noise.sample(&mut rng)) {
            *v += e;
        }
    }
    let y = Trajectory::new(sys.p(), y)?;
    Ok(CollectedData { u, y, x, y_clean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DEFAULT_RANK_TOLERANCE;

    #[test]
    fn frozen_dynamics_hold_the_initial_state() {
        let sys = LtiSystem::new(
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 1),
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 1),
        )
        .unwrap();
        let x0 = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let u = Trajectory::scalar(&[3.0, 1.0, -4.0, 2.0]).unwrap();
        let (_, y) = sys.simulate(&x0, &u).unwrap();
        for s in y.samples() {
            assert_eq!(s, x0.as_slice());
        }
    }

    #[test]
    fn pure_feedthrough_passes_input() {
        let sys = LtiSystem::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 2, 1.0),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let u = Trajectory::from_samples(&[[1.0, 2.0], [-3.0, 0.25]]).unwrap();
        let (_, y) = sys.simulate(&DVector::zeros(1), &u).unwrap();
        assert_eq!(y, u);
    }

    #[test]
    fn impulse_response_of_coupled_plant() {
        let sys = LtiSystem::coupled_four_state();
        let u = Trajectory::from_samples(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let (_, y) = sys.simulate(&DVector::zeros(4), &u).unwrap();
        assert_eq!(y.sample(0), &[0.0, 0.0]);
        assert_eq!(y.sample(1), &[0.017, 0.001]);
    }

    #[test]
    fn dimension_errors() {
        let sys = LtiSystem::coupled_four_state();
        let u = Trajectory::scalar(&[1.0]).unwrap();
        assert!(sys.simulate(&DVector::zeros(4), &u).is_err());
        let u = Trajectory::from_samples(&[[1.0, 0.0]]).unwrap();
        assert!(sys.simulate(&DVector::zeros(3), &u).is_err());
        assert!(LtiSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1)
        )
        .is_err());
    }

    #[test]
    fn observability_indices() {
        let sys = LtiSystem::coupled_four_state();
        assert_eq!(sys.observability_index(DEFAULT_RANK_TOLERANCE).unwrap(), 2);
        assert!(sys.is_controllable(DEFAULT_RANK_TOLERANCE));

        let full = LtiSystem::new(
            sys.a().clone(),
            sys.b().clone(),
            DMatrix::identity(4, 4),
            DMatrix::zeros(4, 2),
        )
        .unwrap();
        assert_eq!(full.observability_index(DEFAULT_RANK_TOLERANCE).unwrap(), 1);

        let blind = LtiSystem::new(
            sys.a().clone(),
            sys.b().clone(),
            DMatrix::zeros(2, 4),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert!(matches!(
            blind.observability_index(DEFAULT_RANK_TOLERANCE),
            Err(Error::Unobservable { .. })
        ));
    }

    #[test]
    fn small_structural_factors() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.3]),
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DMatrix::from_element(1, 1, 0.7),
        )
        .unwrap();
        let f1 = sys.structural_factors(1).unwrap();
        assert_eq!(f1.convolution, *sys.d());
        assert_eq!(f1.observability, *sys.c());

        let f2 = sys.structural_factors(2).unwrap();
        let cb = sys.c() * sys.b();
        let expected_t = DMatrix::from_row_slice(2, 2, &[0.7, 0.0, cb[(0, 0)], 0.7]);
        assert_eq!(f2.convolution, expected_t);
        let ca = sys.c() * sys.a();
        assert_eq!(f2.observability.row(0), sys.c().row(0));
        assert_eq!(f2.observability.row(1), ca.row(0));
    }

    #[test]
    fn collection_is_deterministic_and_noise_free_when_asked() {
        let sys = LtiSystem::coupled_four_state();
        let spec = CollectionSpec {
            length: 50,
            input: BoxSet::uniform(2, 0.3, 0.3).unwrap(),
            noise: BoxSet::uniform(2, 0.0, 0.0).unwrap(),
            initial_state: None,
        };
        let d = collect_data(&sys, &spec, 9).unwrap();
        assert!(d.u.samples().all(|s| s == [0.3, 0.3]));
        let (_, y) = sys.simulate(&DVector::zeros(4), &d.u).unwrap();
        assert_eq!(d.y, y);

        let spec = CollectionSpec {
            length: 400,
            input: BoxSet::uniform(2, -3.0, 3.0).unwrap(),
            noise: BoxSet::uniform(2, -0.002, 0.002).unwrap(),
            initial_state: None,
        };
        let a = collect_data(&sys, &spec, 42).unwrap();
        let b = collect_data(&sys, &spec, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.u.len(), 400);
        assert!(a.u.samples().all(|s| spec.input.contains(s)));
        for (y, yc) in a.y.as_slice().iter().zip(a.y_clean.as_slice()) {
            assert!((y - yc).abs() <= 0.002);
        }
    }

    #[test]
    fn plant_file_round_trips_exactly() {
        let mut rng = crate::rng_from_seed(3);
        let sys = LtiSystem::random_stable(3, 2, 2, &mut rng);
        let text = sys.to_toml();
        assert_eq!(LtiSystem::from_toml(&text).unwrap(), sys);
        let bad = text.replace("n = 3", "n = 4");
        assert!(LtiSystem::from_toml(&bad).is_err());
    }
}
