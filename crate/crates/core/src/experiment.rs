//! Declarative experiments and the commands behind the `deepc` binary.
//!
//! An experiment is one TOML file (see [`TEMPLATE`]) whose defaults describe
//! the four-state coupled benchmark: `T = 400` samples collected with inputs
//! uniform in `[-3, 3]` and output noise uniform in `[-0.002, 0.002]`,
//! `T_ini = 10`, `N = 20`, `Q = 35 I`, `R = 1e-4 I`, `lambda = (1e6, 1e4, 1e2)`,
//! input and output boxes `[-2, 2]` and the setpoint `(0.65, 0.77)`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{BlockMatrix, Trajectory};
use crate::deepc::{
    assemble, hankel_library, run_closed_loop, ClosedLoopLog, ClosedLoopSpec, Controller, DeepcConfig,
    LibraryPartition, Reference, SignalSet, SimulatedPlant, TimingStats,
};
use crate::plant::{collect_data, BoxSet, CollectionSpec, LtiSystem};
use crate::qp::{Settings, Status, WarmStart};
use crate::reduction::{reduce_with_svd, svd, write_spectrum_csv, RankRule, ReducedLibrary, SvdBundle};
use crate::suites::{self, CheckReport, SuiteReport, Theorem1Options};
use crate::{derive_seed, rng_from_seed, Error, Result, RNG_ALGORITHM};

/// Seed streams derived from the master seed.
const STREAM_CLOSED_LOOP: u64 = 1;
const STREAM_CHECK: u64 = 2;
const STREAM_BENCH: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    Reduced,
    #[default]
    Both,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "reduced" => Ok(Variant::Reduced),
            "both" => Ok(Variant::Both),
            other => Err(Error::param("variant", format!("expected full|reduced|both, got `{other}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Reduced => "reduced",
            Variant::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectionConfig {
    pub length: usize,
    pub input: BoxSet,
    pub noise: BoxSet,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            length: 400,
            input: BoxSet::uniform(2, -3.0, 3.0).expect("ordered"),
            noise: BoxSet::uniform(2, -0.002, 0.002).expect("ordered"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Horizons {
    pub t_ini: usize,
    pub horizon: usize,
}

impl Default for Horizons {
    fn default() -> Self {
        Self { t_ini: 10, horizon: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub q_scale: f64,
    pub r_scale: f64,
    /// Full `pN x pN` matrix, overrides `q_scale`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    /// Full `mN x mN` matrix, overrides `r_scale`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    pub lambda_u: f64,
    pub lambda_y: f64,
    pub lambda_g: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            q_scale: 35.0,
            r_scale: 1e-4,
            q: None,
            r: None,
            lambda_u: 1e6,
            lambda_y: 1e4,
            lambda_g: 1e2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constraints {
    pub input: BoxSet,
    pub output: BoxSet,
}

impl Default for Constraints {
    fn default() -> Self {
        Self {
            input: BoxSet::uniform(2, -2.0, 2.0).expect("ordered"),
            output: BoxSet::uniform(2, -2.0, 2.0).expect("ordered"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub steps: usize,
    pub apply_steps: usize,
    pub setpoint: Vec<f64>,
    pub warmup_amplitude: f64,
    /// Also run the first-`r`-columns library next to the SVD reduction.
    pub truncation_baseline: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement_noise: Option<BoxSet>,
    /// Initial plant state; zero when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            apply_steps: 1,
            setpoint: vec![0.65, 0.77],
            warmup_amplitude: 0.1,
            truncation_baseline: true,
            measurement_noise: None,
            initial_state: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub theorem1_trials: usize,
    pub theorem1_tolerance: f64,
    pub membership_trials: usize,
    pub membership_tolerance: f64,
    pub rank_trials: usize,
    pub factorization_plants: usize,
    pub factorization_tolerance: f64,
    pub qp_instances: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            theorem1_trials: 50,
            theorem1_tolerance: 1e-6,
            membership_trials: 100,
            membership_tolerance: 1e-8,
            rank_trials: 20,
            factorization_plants: 10,
            factorization_tolerance: 1e-10,
            qp_instances: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Timed solves per variant.
    pub solves: usize,
    /// Untimed solves before measurement starts.
    pub warmup: usize,
    pub synthetic_lengths: Vec<usize>,
    pub synthetic_n: usize,
    pub synthetic_m: usize,
    pub synthetic_p: usize,
    pub synthetic_t_ini: usize,
    pub synthetic_horizon: usize,
    pub synthetic_noise: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            solves: 30,
            warmup: 5,
            synthetic_lengths: vec![200, 400, 800],
            synthetic_n: 8,
            synthetic_m: 2,
            synthetic_p: 2,
            synthetic_t_ini: 8,
            synthetic_horizon: 10,
            synthetic_noise: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub variant: Variant,
    /// Plant definition file, relative to the config file. The built-in
    /// four-state plant is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plant_file: Option<PathBuf>,
    pub collection: CollectionConfig,
    pub horizons: Horizons,
    pub weights: Weights,
    pub constraints: Constraints,
    pub reduction: RankRule,
    pub run: RunConfig,
    pub solver: Settings,
    pub check: CheckConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            variant: Variant::Both,
            plant_file: None,
            collection: CollectionConfig::default(),
            horizons: Horizons::default(),
            weights: Weights::default(),
            constraints: Constraints::default(),
            reduction: RankRule::default(),
            run: RunConfig::default(),
            solver: Settings::default(),
            check: CheckConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Commented config written by `deepc init`. Parses to [`ExperimentConfig::default`]
/// apart from `plant_file`.
pub const TEMPLATE: &str = r#"# DeePC experiment. Every key is optional; the values below are the defaults.

# Master seed. Collection, warm-up, check and bench draws derive from it.
seed = 1
# Where collect/reduce/run/check/bench write their files.
output_dir = "out"
# Controllers to run: "full", "reduced" or "both".
variant = "both"
# Plant definition (A, B, C, D), relative to this file.
plant_file = "plant.toml"

[collection]
# Number of offline samples T.
length = 400
# i.i.d. uniform inputs per channel.
input = { low = [-3.0, -3.0], high = [3.0, 3.0] }
# i.i.d. uniform additive output noise per channel.
noise = { low = [-0.002, -0.002], high = [0.002, 0.002] }

[horizons]
t_ini = 10
horizon = 20

[weights]
# Q = q_scale * I and R = r_scale * I unless full matrices `q` / `r` are given.
q_scale = 35.0
r_scale = 1e-4
# All three must be positive.
lambda_u = 1e6
lambda_y = 1e4
lambda_g = 1e2

[constraints]
# Per-sample boxes, repeated over the prediction horizon. Use inf for no bound.
input = { low = [-2.0, -2.0], high = [2.0, 2.0] }
output = { low = [-2.0, -2.0], high = [2.0, 2.0] }

[reduction]
# rule = "fixed"            rank = 64
# rule = "threshold"        rel_tol = 1e-9
# rule = "log_gap"          min_decades = 1.0, fallback_rel_tol = 1e-6
# rule = "structural"       ml_plus_n = 64
# rule = "truncate_columns" rank = 64     (first r columns, no SVD)
rule = "log_gap"
min_decades = 1.0
fallback_rel_tol = 1e-6

[run]
# Applied control inputs.
steps = 100
# Inputs applied per solve, 1 <= l < N.
apply_steps = 1
setpoint = [0.65, 0.77]
# Warm-up inputs are uniform in [-a, a] for T_ini steps.
warmup_amplitude = 0.1
truncation_baseline = true
# measurement_noise = { low = [-0.002, -0.002], high = [0.002, 0.002] }
# initial_state = [0.0, 0.0, 0.0, 0.0]

[solver]
tolerance = 1e-8
max_iterations = 10000

[check]
theorem1_trials = 50
theorem1_tolerance = 1e-6
membership_trials = 100
membership_tolerance = 1e-8
rank_trials = 20
factorization_plants = 10
factorization_tolerance = 1e-10
qp_instances = 200

[bench]
solves = 30
warmup = 5
# Synthetic plant family: random stable (n, m, p), noise-free except for
# synthetic_noise on the outputs.
synthetic_lengths = [200, 400, 800]
synthetic_n = 8
synthetic_m = 2
synthetic_p = 2
synthetic_t_ini = 8
synthetic_horizon = 10
synthetic_noise = 1e-3
"#;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "experiment config",
            reason: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn depth(&self) -> usize {
        self.horizons.t_ini + self.horizons.horizon
    }

    /// Controller settings for a plant with `m` inputs and `p` outputs.
    /// Regularization signs are checked at assembly, not here.
    pub fn deepc_config(&self, m: usize, p: usize) -> Result<DeepcConfig> {
        let Horizons { t_ini, horizon } = self.horizons;
        let w = &self.weights;
        let matrix = |rows: &Option<Vec<Vec<f64>>>, dim: usize, scale: f64, name: &'static str| -> Result<DMatrix<f64>> {
            match rows {
                None => Ok(DMatrix::identity(dim, dim) * scale),
                Some(rows) => {
                    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                        return Err(Error::dim(name, dim, rows.len()));
                    }
                    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
                }
            }
        };
        Ok(DeepcConfig {
            t_ini,
            horizon,
            m,
            p,
            q: matrix(&w.q, p * horizon, w.q_scale, "weights.q")?,
            r: matrix(&w.r, m * horizon, w.r_scale, "weights.r")?,
            lambda_u: w.lambda_u,
            lambda_y: w.lambda_y,
            lambda_g: w.lambda_g,
            input_set: SignalSet::Box(self.constraints.input.clone()),
            output_set: SignalSet::Box(self.constraints.output.clone()),
            apply_steps: self.run.apply_steps,
            reference: Reference::setpoint(&self.run.setpoint),
        })
    }
}

/// Global flags that override config values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub variant: Option<Variant>,
}

/// A loaded config with its plant and resolved paths.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub plant: LtiSystem,
    pub output_dir: PathBuf,
}

impl Experiment {
    /// The default experiment writing into `output_dir`.
    pub fn builtin(output_dir: impl Into<PathBuf>) -> Self {
        Self::from_config(ExperimentConfig::default(), LtiSystem::coupled_four_state(), output_dir.into())
    }

    pub fn from_config(config: ExperimentConfig, plant: LtiSystem, output_dir: PathBuf) -> Self {
        Self {
            config,
            plant,
            output_dir,
        }
    }

    /// Reads `path`, resolving the plant file and output directory relative to it.
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = ExperimentConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let plant = match &config.plant_file {
            Some(file) => LtiSystem::load(base.join(file))?,
            None => LtiSystem::coupled_four_state(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(variant) = overrides.variant {
            config.variant = variant;
        }
        let output_dir = match &overrides.out {
            Some(out) => out.clone(),
            None => base.join(&config.output_dir),
        };
        let exp = Self {
            config,
            plant,
            output_dir,
        };
        exp.validate()?;
        Ok(exp)
    }

    /// Dimension and range checks that do not depend on regularization signs.
    pub fn validate(&self) -> Result<()> {
        let (m, p) = (self.plant.m(), self.plant.p());
        let c = &self.config;
        if c.collection.input.dim() != m {
            return Err(Error::dim("collection.input", m, c.collection.input.dim()));
        }
        if c.collection.noise.dim() != p {
            return Err(Error::dim("collection.noise", p, c.collection.noise.dim()));
        }
        if c.constraints.input.dim() != m {
            return Err(Error::dim("constraints.input", m, c.constraints.input.dim()));
        }
        if c.constraints.output.dim() != p {
            return Err(Error::dim("constraints.output", p, c.constraints.output.dim()));
        }
        if c.run.setpoint.len() != p {
            return Err(Error::dim("run.setpoint", p, c.run.setpoint.len()));
        }
        if c.horizons.t_ini == 0 || c.horizons.horizon == 0 {
            return Err(Error::param("horizons", "T_ini and N must be positive"));
        }
        if c.collection.length < self.config.depth() {
            return Err(Error::param(
                "collection.length",
                format!("{} is shorter than T_ini + N = {}", c.collection.length, self.config.depth()),
            ));
        }
        if !(c.solver.tolerance > 0.0) || c.solver.max_iterations == 0 {
            return Err(Error::param("solver", "tolerance and max_iterations must be positive"));
        }
        if !(c.run.warmup_amplitude >= 0.0) {
            return Err(Error::param("run.warmup_amplitude", "must be non-negative"));
        }
        Ok(())
    }

    fn ensure_output_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn collection_spec(&self) -> CollectionSpec {
        CollectionSpec {
            length: self.config.collection.length,
            input: self.config.collection.input.clone(),
            noise: self.config.collection.noise.clone(),
            initial_state: None,
        }
    }

    /// Collected `(u, y)`; deterministic in the seed.
    pub fn collect(&self) -> Result<(Trajectory, Trajectory)> {
        let data = collect_data(&self.plant, &self.collection_spec(), self.config.seed)?;
        Ok((data.u, data.y))
    }

    /// Previously collected data from the output directory, or a fresh collection.
    pub fn load_or_collect(&self) -> Result<(Trajectory, Trajectory)> {
        let (up, yp) = (self.out("u.csv"), self.out("y.csv"));
        if up.exists() && yp.exists() {
            Ok((Trajectory::load(up)?, Trajectory::load(yp)?))
        } else {
            self.collect()
        }
    }

    /// Full library, its SVD and the configured reduction.
    pub fn libraries(&self, u: &Trajectory, y: &Trajectory) -> Result<Libraries> {
        let full = hankel_library(u, y, self.config.depth())?;
        let bundle = svd(full.matrix())?;
        let reduced = reduce_with_svd(full.matrix(), &bundle, self.config.reduction)?;
        Ok(Libraries { full, bundle, reduced })
    }

    pub fn closed_loop_spec(&self) -> ClosedLoopSpec {
        ClosedLoopSpec {
            steps: self.config.run.steps,
            seed: derive_seed(self.config.seed, STREAM_CLOSED_LOOP),
            warmup_amplitude: self.config.run.warmup_amplitude,
            measurement_noise: self.config.run.measurement_noise.clone(),
        }
    }

    fn initial_plant(&self) -> Result<SimulatedPlant> {
        let x0 = match &self.config.run.initial_state {
            Some(x) => DVector::from_column_slice(x),
            None => DVector::zeros(self.plant.n()),
        };
        SimulatedPlant::new(self.plant.clone(), x0)
    }

    /// Closed loop with `library` from the configured initial state.
    pub fn closed_loop(&self, library: &DMatrix<f64>, label: &str) -> Result<ClosedLoopLog> {
        let config = self.config.deepc_config(self.plant.m(), self.plant.p())?;
        let mut controller = Controller::new(library, config, self.config.solver)?;
        let mut plant = self.initial_plant()?;
        run_closed_loop(&mut plant, &mut controller, &self.closed_loop_spec(), label)
    }
}

/// Libraries derived from one data set.
#[derive(Debug, Clone)]
pub struct Libraries {
    pub full: BlockMatrix,
    pub bundle: SvdBundle,
    pub reduced: ReducedLibrary,
}

impl Libraries {
    /// The first `r` columns of the full library.
    pub fn truncated(&self, r: usize) -> DMatrix<f64> {
        self.full.matrix().columns(0, r.min(self.full.cols())).into_owned()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `experiment.toml` and `plant.toml` into `dir`.
pub fn cmd_init(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = dir.join("experiment.toml");
    let plant = dir.join("plant.toml");
    write_text(&config, TEMPLATE)?;
    LtiSystem::coupled_four_state().save(&plant)?;
    Ok(vec![config, plant])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectManifest {
    pub seed: u64,
    pub rng: String,
    pub plant_sha256: String,
    pub length: usize,
    pub input: BoxSet,
    pub noise: BoxSet,
    pub noise_model: String,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

pub fn plant_hash(plant: &LtiSystem) -> String {
    let digest = Sha256::digest(plant.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `u.csv`, `y.csv` and `manifest.json`.
pub fn cmd_collect(exp: &Experiment) -> Result<CollectManifest> {
    exp.ensure_output_dir()?;
    let (u, y) = exp.collect()?;
    u.save(exp.out("u.csv"))?;
    y.save(exp.out("y.csv"))?;
    let manifest = CollectManifest {
        seed: exp.config.seed,
        rng: RNG_ALGORITHM.to_string(),
        plant_sha256: plant_hash(&exp.plant),
        length: u.len(),
        input: exp.config.collection.input.clone(),
        noise: exp.config.collection.noise.clone(),
        noise_model: "i.i.d. uniform per channel, added to outputs only".to_string(),
        files: vec!["u.csv".into(), "y.csv".into()],
        config: exp.config.clone(),
    };
    write_json(&exp.out("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceReport {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub rule: RankRule,
    pub rule_description: String,
    /// Largest drop between consecutive singular values, in decades, and the
    /// count of values above it.
    pub largest_gap: Option<(usize, f64)>,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// Writes `reduced.json`, `spectrum.csv` and `reduce.json`.
pub fn cmd_reduce(exp: &Experiment) -> Result<ReduceReport> {
    exp.ensure_output_dir()?;
    let (u, y) = exp.load_or_collect()?;
    let libs = exp.libraries(&u, &y)?;
    libs.reduced.save(exp.out("reduced.json"))?;
    let spectrum = exp.out("spectrum.csv");
    let file = std::fs::File::create(&spectrum).map_err(|e| Error::io(&spectrum, e))?;
    write_spectrum_csv(&libs.bundle.singular_values, file)?;
    let report = ReduceReport {
        rows: libs.full.rows(),
        cols: libs.full.cols(),
        rank: libs.reduced.rank,
        rule: exp.config.reduction,
        rule_description: exp.config.reduction.to_string(),
        largest_gap: crate::reduction::largest_log_gap(&libs.bundle.singular_values),
        seed: exp.config.seed,
        config: exp.config.clone(),
    };
    write_json(&exp.out("reduce.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub label: String,
    pub dimension: usize,
    pub accumulated_cost: f64,
    pub steps: usize,
    pub timing: TimingStats,
    pub final_output: Vec<f64>,
}

impl VariantSummary {
    pub fn from_log(log: &ClosedLoopLog) -> Self {
        Self {
            label: log.label.clone(),
            dimension: log.dimension,
            accumulated_cost: log.accumulated_cost(),
            steps: log.records.len(),
            timing: log.timing(),
            final_output: log.records.last().map(|r| r.y.clone()).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub library_rows: usize,
    pub library_cols: usize,
    pub rank: usize,
    pub rule: String,
    pub seed: u64,
    pub closed_loop_seed: u64,
    pub variants: Vec<VariantSummary>,
    /// `|J_reduced - J_full| / J_full`, when both ran.
    pub relative_cost_gap: Option<f64>,
    /// Mean reduced solve time over mean full solve time, when both ran.
    pub time_ratio: Option<f64>,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub logs: Vec<ClosedLoopLog>,
}

impl RunReport {
    pub fn variant(&self, label: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.label == label)
    }

    /// Comparison table: variant, dimension, mean/median solve time, cost.
    pub fn comparison_csv(&self) -> String {
        let mut s = String::from("variant,dimension,mean_solve_ms,median_solve_ms,accumulated_cost\n");
        for v in &self.variants {
            s.push_str(&format!(
                "{},{},{:.4},{:.4},{:.6}\n",
                v.label, v.dimension, v.timing.mean_ms, v.timing.median_ms, v.accumulated_cost
            ));
        }
        s
    }
}

/// Runs the configured controllers without writing files.
pub fn run_variants(exp: &Experiment) -> Result<RunReport> {
    let (u, y) = exp.load_or_collect()?;
    let libs = exp.libraries(&u, &y)?;
    let mut logs = Vec::new();
    let variant = exp.config.variant;
    if matches!(variant, Variant::Full | Variant::Both) {
        logs.push(exp.closed_loop(libs.full.matrix(), "full")?);
    }
    if matches!(variant, Variant::Reduced | Variant::Both) {
        logs.push(exp.closed_loop(libs.reduced.h_bar.matrix(), "reduced")?);
    }
    if variant == Variant::Both && exp.config.run.truncation_baseline {
        logs.push(exp.closed_loop(&libs.truncated(libs.reduced.rank), "truncated")?);
    }
    let variants: Vec<_> = logs.iter().map(VariantSummary::from_log).collect();
    let find = |l: &str| variants.iter().find(|v| v.label == l);
    let (relative_cost_gap, time_ratio) = match (find("full"), find("reduced")) {
        (Some(f), Some(r)) => (
            Some((r.accumulated_cost - f.accumulated_cost).abs() / f.accumulated_cost.abs().max(f64::MIN_POSITIVE)),
            Some(r.timing.mean_ms / f.timing.mean_ms),
        ),
        _ => (None, None),
    };
    Ok(RunReport {
        library_rows: libs.full.rows(),
        library_cols: libs.full.cols(),
        rank: libs.reduced.rank,
        rule: exp.config.reduction.to_string(),
        seed: exp.config.seed,
        closed_loop_seed: exp.closed_loop_spec().seed,
        variants,
        relative_cost_gap,
        time_ratio,
        config: exp.config.clone(),
        logs,
    })
}

/// Writes `closed_loop_<variant>.csv`, `comparison.csv` and `run.json`.
pub fn cmd_run(exp: &Experiment) -> Result<RunReport> {
    exp.ensure_output_dir()?;
    let report = run_variants(exp)?;
    for log in &report.logs {
        log.save_csv(exp.out(&format!("closed_loop_{}.csv", log.label)))?;
    }
    write_text(&exp.out("comparison.csv"), &report.comparison_csv())?;
    write_json(&exp.out("run.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutput {
    #[serde(flatten)]
    pub report: CheckReport,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// Runs every property suite and writes `check.json`.
pub fn cmd_check(exp: &Experiment) -> Result<CheckOutput> {
    let c = &exp.config.check;
    let seed = derive_seed(exp.config.seed, STREAM_CHECK);
    let mut suites_out: Vec<SuiteReport> = Vec::new();
    let mut push = |name: &str, r: Result<SuiteReport>| match r {
        Ok(r) => suites_out.push(r),
        Err(e) => suites_out.push(suites::failed_suite(name, &e)),
    };

    let (u, _) = exp.load_or_collect()?;
    push("persistent_excitation", suites::excitation_suite(&u, exp.plant.n(), exp.config.depth()));
    match suites::membership_suites(c.membership_trials, seed, c.membership_tolerance) {
        Ok(rs) => rs.into_iter().for_each(|r| push("", Ok(r))),
        Err(e) => push("membership", Err(e)),
    }
    push("hankel_rank", suites::rank_suite(c.rank_trials, seed.wrapping_add(1)));
    push(
        "factorization_identity",
        suites::factorization_suite(c.factorization_plants, seed.wrapping_add(2), c.factorization_tolerance),
    );
    let w = &exp.config.weights;
    let options = Theorem1Options {
        trials: c.theorem1_trials,
        tolerance: c.theorem1_tolerance,
        lambdas: Some([w.lambda_u, w.lambda_y, w.lambda_g]).filter(|l| l.iter().any(|v| !(*v > 0.0))),
    };
    push(
        "theorem1_equivalence",
        suites::theorem1_suite(&options, seed.wrapping_add(3), &exp.config.solver),
    );
    push(
        "qp_kkt_residuals",
        suites::kkt_suite(c.qp_instances, seed.wrapping_add(4), &exp.config.solver),
    );

    let out = CheckOutput {
        report: CheckReport::new(suites_out),
        seed: exp.config.seed,
        config: exp.config.clone(),
    };
    exp.ensure_output_dir()?;
    write_json(&exp.out("check.json"), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub label: String,
    pub length: usize,
    pub full_dimension: usize,
    pub reduced_dimension: usize,
    pub full: TimingStats,
    pub reduced: TimingStats,
    /// Mean full time over mean reduced time.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: BenchCase,
    pub synthetic: Vec<BenchCase>,
    /// Speedup increases with `T` across the synthetic family.
    pub synthetic_trend_increasing: bool,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// Times assemble + solve for two libraries on the same windows.
///
/// Each window is solved once per library, alternating, after `warmup`
/// untimed solves; warm starts carry over between consecutive windows.
pub fn time_pair(
    full: &LibraryPartition,
    reduced: &LibraryPartition,
    config: &DeepcConfig,
    windows: &[(DVector<f64>, DVector<f64>)],
    warmup: usize,
    settings: &Settings,
) -> Result<(TimingStats, TimingStats)> {
    let y_r = config.reference.stack(0, config.horizon);
    let mut samples = [Vec::new(), Vec::new()];
    let mut warm: [Option<DVector<f64>>; 2] = [None, None];
    for (k, (u_ini, y_ini)) in windows.iter().enumerate() {
        for (idx, pt) in [full, reduced].into_iter().enumerate() {
            let start = Instant::now();
            let problem = assemble(pt, config, u_ini, y_ini, &y_r)?;
            let cert = problem.solve(settings, warm[idx].clone().map(WarmStart::Dual));
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            if cert.status != Status::Optimal {
                return Err(Error::Solver(format!("bench solve ended with {:?}", cert.status)));
            }
            warm[idx] = Some(cert.mu);
            if k >= warmup {
                samples[idx].push(elapsed);
            }
        }
    }
    Ok((
        TimingStats::from_samples(&samples[0]),
        TimingStats::from_samples(&samples[1]),
    ))
}

fn synthetic_windows(
    sys: &LtiSystem,
    t_ini: usize,
    count: usize,
    rng: &mut crate::Rng,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let len = t_ini + count;
    let u = Trajectory::new(
        sys.m(),
        (0..len * sys.m()).map(|_| rng.random_range(-0.5..0.5)).collect(),
    )?;
    let (_, y) = sys.simulate(&DVector::zeros(sys.n()), &u)?;
    Ok((0..count)
        .map(|k| (u.stacked(k, t_ini), y.stacked(k, t_ini)))
        .collect())
}

/// Times full vs reduced solves on the configured scenario and on a synthetic
/// plant family of growing data length. Writes `bench.json`.
pub fn cmd_bench(exp: &Experiment) -> Result<BenchReport> {
    let report = bench(exp)?;
    exp.ensure_output_dir()?;
    write_json(&exp.out("bench.json"), &report)?;
    Ok(report)
}

pub fn bench(exp: &Experiment) -> Result<BenchReport> {
    let b = &exp.config.bench;
    let count = b.solves + b.warmup;
    let (m, p) = (exp.plant.m(), exp.plant.p());
    let config = exp.config.deepc_config(m, p)?;
    let (u, y) = exp.load_or_collect()?;
    let libs = exp.libraries(&u, &y)?;

    // windows visited by the reduced controller in closed loop
    let mut short = exp.clone();
    short.config.run.steps = count;
    let log = short.closed_loop(libs.reduced.h_bar.matrix(), "reduced")?;
    let windows = closed_loop_windows(&log, config.t_ini);
    let full_pt = LibraryPartition::from_block(&libs.full, config.t_ini, config.horizon, m, p)?;
    let red_pt = LibraryPartition::from_block(&libs.reduced.h_bar, config.t_ini, config.horizon, m, p)?;
    let (tf, tr) = time_pair(&full_pt, &red_pt, &config, &windows[..count.min(windows.len())], b.warmup, &exp.config.solver)?;
    let scenario = BenchCase {
        label: "scenario".into(),
        length: u.len(),
        full_dimension: full_pt.cols(),
        reduced_dimension: red_pt.cols(),
        speedup: tf.mean_ms / tr.mean_ms,
        full: tf,
        reduced: tr,
    };

    let mut rng = rng_from_seed(derive_seed(exp.config.seed, STREAM_BENCH));
    let sys = suites::random_minimal_plant(b.synthetic_n, b.synthetic_m, b.synthetic_p, &mut rng);
    let mut synthetic = Vec::new();
    for &length in &b.synthetic_lengths {
        let case = synthetic_case(&sys, b, length, &exp.config.solver, &mut rng)?;
        synthetic.push(case);
    }
    let synthetic_trend_increasing = synthetic.windows(2).all(|w| w[1].speedup > w[0].speedup);
    Ok(BenchReport {
        scenario,
        synthetic,
        synthetic_trend_increasing,
        seed: exp.config.seed,
        config: exp.config.clone(),
    })
}

/// One member of the synthetic family: data of `length` samples, structural
/// rank `mL + n`.
pub fn synthetic_case(
    sys: &LtiSystem,
    b: &BenchConfig,
    length: usize,
    settings: &Settings,
    rng: &mut crate::Rng,
) -> Result<BenchCase> {
    let (m, p, n) = (sys.m(), sys.p(), sys.n());
    let (t_ini, horizon) = (b.synthetic_t_ini, b.synthetic_horizon);
    let depth = t_ini + horizon;
    let spec = CollectionSpec {
        length,
        input: BoxSet::uniform(m, -1.0, 1.0)?,
        noise: BoxSet::uniform(p, -b.synthetic_noise, b.synthetic_noise)?,
        initial_state: None,
    };
    let data = collect_data(sys, &spec, rng.random())?;
    let full = hankel_library(&data.u, &data.y, depth)?;
    let bundle = svd(full.matrix())?;
    let reduced = reduce_with_svd(full.matrix(), &bundle, RankRule::Structural { ml_plus_n: m * depth + n })?;
    let config = DeepcConfig::with_scaled_weights(
        m,
        p,
        t_ini,
        horizon,
        10.0,
        1e-2,
        [1e4, 1e3, 1.0],
        SignalSet::Box(BoxSet::uniform(m, -1.0, 1.0)?),
        SignalSet::Box(BoxSet::uniform(p, -5.0, 5.0)?),
        &vec![0.5; p],
    )?;
    let windows = synthetic_windows(sys, t_ini, b.solves + b.warmup, rng)?;
    let full_pt = LibraryPartition::from_block(&full, t_ini, horizon, m, p)?;
    let red_pt = LibraryPartition::from_block(&reduced.h_bar, t_ini, horizon, m, p)?;
    let (tf, tr) = time_pair(&full_pt, &red_pt, &config, &windows, b.warmup, settings)?;
    Ok(BenchCase {
        label: format!("synthetic_T{length}"),
        length,
        full_dimension: full_pt.cols(),
        reduced_dimension: red_pt.cols(),
        speedup: tf.mean_ms / tr.mean_ms,
        full: tf,
        reduced: tr,
    })
}

/// Every `(u_ini, y_ini)` window the controller solved for, in order, plus
/// the window after the last step.
pub fn closed_loop_windows(log: &ClosedLoopLog, t_ini: usize) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut us = log.warmup_u.clone();
    let mut ys = log.warmup_y.clone();
    for r in &log.records {
        us.push(r.u.clone());
        ys.push(r.measured.clone());
    }
    let stack = |v: &[Vec<f64>]| DVector::from_vec(v.iter().flatten().copied().collect());
    (0..=us.len().saturating_sub(t_ini))
        .map(|s| (stack(&us[s..s + t_ini]), stack(&ys[s..s + t_ini])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parses_to_defaults() {
        let cfg = ExperimentConfig::from_toml(TEMPLATE).unwrap();
        let expected = ExperimentConfig {
            plant_file: Some(PathBuf::from("plant.toml")),
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg, expected);
    }

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("sede = 3").is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("reduced".parse::<Variant>().unwrap(), Variant::Reduced);
        assert!("fast".parse::<Variant>().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
