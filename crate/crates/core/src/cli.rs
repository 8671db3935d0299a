//! JSON-configured experiments behind the `qtraj` binary.
//!
//! One document describes one experiment; command-line flags override its
//! seed, path count, output directory and path emission. Every mode writes
//! `summary.json` into the output directory; see the README for its keys.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::algebra::{hermitian_eigen, DensityMatrix, C64};
use crate::continuous::{
    integrate_lindblad, ContinuousRecord, DiffusionConvention, DiffusiveNoise, DiffusiveSde, JumpSde, LimitModel,
    SdeConfig, SdeScheme,
};
use crate::discrete::{DiscreteChain, MeasurementSetup, SetupKind};
use crate::ensemble::{self, channel, compare_ensembles, Checkpoints, EnsembleComparison, EnsembleSummary};
use crate::error::{Error, Result};
use crate::model::{build_unitary_blocks, matrix_from_pairs, matrix_to_pairs, ModelParams, Observable};
use crate::unraveling::{PureState, SseDiffusive, SseJump};
use crate::verify::{bloch_grid, generator_residual_scan, LimitKind, ResidualScan, TestFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    Discrete,
    Lindblad,
    SdeDiffusive,
    SdeJump,
    SseJump,
    SseDiffusive,
    VerifyGenerator,
    Compare,
}

/// Which measurements are performed around each interaction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measurement {
    None,
    Before,
    After,
    #[default]
    BeforeAfter,
}

/// Environment observable: computational basis unless `angle` (real
/// rotation) or `vector` (first eigenvector, `[re, im]` pairs) is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    #[serde(default = "default_eigenvalues")]
    pub eigenvalues: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<[[f64; 2]; 2]>,
}

fn default_eigenvalues() -> [f64; 2] {
    [1.0, -1.0]
}

impl Default for ObservableConfig {
    fn default() -> Self {
        ObservableConfig {
            eigenvalues: default_eigenvalues(),
            angle: None,
            vector: None,
        }
    }
}

impl ObservableConfig {
    pub fn build(&self) -> Result<Observable> {
        let [a0, a1] = self.eigenvalues;
        match (self.angle, self.vector) {
            (None, None) => Observable::diagonal(a0, a1),
            (Some(angle), None) => Observable::rotated(angle, a0, a1),
            (None, Some([u, v])) => Observable::from_vector([C64::new(u[0], u[1]), C64::new(v[0], v[1])], self.eigenvalues),
            (Some(_), Some(_)) => Err(Error::Config("observable: give at most one of `angle` and `vector`".into())),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupConfig {
    #[serde(default)]
    pub measurement: Measurement,
    #[serde(default)]
    pub observable: ObservableConfig,
}

impl SetupConfig {
    pub fn build(&self, p: f64) -> Result<MeasurementSetup> {
        let kind = match self.measurement {
            Measurement::None => SetupKind::NoMeasurement,
            Measurement::Before => SetupKind::BeforeOnly,
            Measurement::After => SetupKind::AfterOnly(self.observable.build()?),
            Measurement::BeforeAfter => SetupKind::BeforeAfter(self.observable.build()?),
        };
        MeasurementSetup::new(kind, p)
    }
}

/// Initial state: a Bloch vector, a density matrix or a state vector
/// (matrices as row-major `[re, im]` pairs). Defaults to the excited state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Bloch([f64; 3]),
    Rho(Vec<[f64; 2]>),
    Psi(Vec<[f64; 2]>),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Bloch([0.0, 0.0, -1.0])
    }
}

impl InitialState {
    pub fn density(&self) -> Result<DensityMatrix> {
        match self {
            InitialState::Bloch(r) => DensityMatrix::from_bloch(*r),
            InitialState::Rho(pairs) => DensityMatrix::new(matrix_from_pairs("initial_state.rho", pairs)?),
            InitialState::Psi(_) => Ok(self.pure()?.projector()),
        }
    }

    /// State vector; density inputs must be pure.
    pub fn pure(&self) -> Result<PureState> {
        if let InitialState::Psi(pairs) = self {
            return PureState::new(pairs.iter().map(|[re, im]| C64::new(*re, *im)).collect());
        }
        let rho = self.density()?;
        if (rho.purity() - 1.0).abs() > 1e-10 {
            return Err(Error::Config("unravelings need a pure initial state".into()));
        }
        let eig = hermitian_eigen(rho.matrix())?;
        let top = (0..eig.values.len())
            .max_by(|&a, &b| eig.values[a].total_cmp(&eig.values[b]))
            .expect("nonempty");
        let d = rho.dim();
        PureState::normalize((0..d).map(|r| eig.vectors[(r, top)]).collect())
    }
}

/// Settings of the generator-convergence scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_ns")]
    pub ns: Vec<u64>,
    /// Names from `x`, `z`, `z2`, `xz`.
    #[serde(default = "default_functions")]
    pub functions: Vec<String>,
    #[serde(default = "default_spacing")]
    pub grid_spacing: f64,
    #[serde(default = "default_radius")]
    pub grid_radius: f64,
    /// Drop the `p`, `1−p` weights from the jump intensities.
    #[serde(default)]
    pub unweighted_jumps: bool,
}

fn default_ns() -> Vec<u64> {
    vec![100, 400, 1600, 6400]
}

fn default_functions() -> Vec<String> {
    ["x", "z", "z2", "xz"].map(String::from).to_vec()
}

fn default_spacing() -> f64 {
    0.2
}

fn default_radius() -> f64 {
    0.9
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            ns: default_ns(),
            functions: default_functions(),
            grid_spacing: default_spacing(),
            grid_radius: default_radius(),
            unweighted_jumps: false,
        }
    }
}

fn test_function(name: &str) -> Result<TestFunction> {
    match name {
        "x" => Ok(TestFunction::x()),
        "z" => Ok(TestFunction::z()),
        "z2" => Ok(TestFunction::z_squared()),
        "xz" => Ok(TestFunction::xz()),
        other => Err(Error::Config(format!("unknown test function `{other}` (expected x, z, z2, xz)"))),
    }
}

fn default_paths() -> usize {
    1
}

fn default_checkpoints() -> usize {
    10
}

fn default_true() -> bool {
    true
}

/// One experiment. `T` is the horizon; the discrete chain uses `model.n`,
/// continuous modes use `dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub setup: SetupConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    #[serde(default)]
    pub scheme: SdeScheme,
    #[serde(default)]
    pub convention: DiffusionConvention,
    #[serde(default = "default_true")]
    pub renormalize: bool,
    /// Number of Brownian motions; derived from the setup when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<DiffusiveNoise>,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub emit_paths: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn dt(&self) -> Result<f64> {
        match self.dt {
            Some(dt) if dt > 0.0 && dt.is_finite() => Ok(dt),
            Some(dt) => Err(Error::Config(format!("`dt` must be positive, got {dt}"))),
            None => Err(Error::Config("this mode requires `dt`".into())),
        }
    }

    fn sde_config(&self) -> Result<SdeConfig> {
        Ok(SdeConfig {
            dt: self.dt()?,
            horizon: self.horizon,
            seed: self.seed,
            renormalize: self.renormalize,
            scheme: self.scheme,
        })
    }

    fn limit_model(&self) -> Result<LimitModel> {
        Ok(LimitModel::new(&self.model)?.with_convention(self.convention))
    }

    fn setup(&self) -> Result<MeasurementSetup> {
        self.setup.build(self.model.p()?)
    }

    fn checkpoints(&self, dt: f64) -> Result<Checkpoints> {
        let steps = ensemble::step_count(self.horizon, dt).map_err(as_config)?;
        Checkpoints::uniform(steps, self.checkpoints, dt).map_err(as_config)
    }

    /// Mode-independent validation.
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::Config("`paths` must be positive".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!("`T` must be positive, got {}", self.horizon)));
        }
        self.model.validate().map_err(as_config)?;
        self.setup().map_err(as_config)?;
        self.initial_state.density().map_err(as_config)?;
        Ok(())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(msg) => Error::Config(msg),
        other => other,
    }
}

/// Deterministic reference at the checkpoints.
#[derive(Clone, Debug, Serialize)]
pub struct LindbladPoint {
    pub t: f64,
    pub rho: Vec<[f64; 2]>,
    pub bloch: [f64; 3],
}

/// Content of `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub mode: Mode,
    pub seed: u64,
    pub paths: usize,
    pub p: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SdeScheme>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<LimitKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit_ensemble: Option<EnsembleSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lindblad: Option<Vec<LindbladPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lindblad_max_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<EnsembleComparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<Vec<ResidualScan>>,
}

impl Summary {
    fn new(mode: Mode, config: &ExperimentConfig) -> Result<Self> {
        Ok(Summary {
            mode,
            seed: config.seed,
            paths: config.paths,
            p: config.model.p()?,
            horizon: config.horizon,
            n: None,
            dt: None,
            scheme: None,
            limit: None,
            ensemble: None,
            limit_ensemble: None,
            lindblad: None,
            lindblad_max_z: None,
            comparison: None,
            residuals: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Lindblad states at the checkpoint steps of a grid of spacing `dt`.
fn lindblad_reference(config: &ExperimentConfig, dt: f64, checkpoints: &Checkpoints) -> Result<Vec<DensityMatrix>> {
    let model = config.limit_model()?;
    let path = integrate_lindblad(&config.initial_state.density()?, &model, dt, checkpoints.last_step())?;
    Ok(checkpoints.steps.iter().map(|&s| path[s].clone()).collect())
}

fn lindblad_points(checkpoints: &Checkpoints, states: &[DensityMatrix]) -> Vec<LindbladPoint> {
    checkpoints
        .times
        .iter()
        .zip(states)
        .map(|(&t, rho)| LindbladPoint {
            t,
            rho: matrix_to_pairs(rho.matrix()),
            bloch: rho.bloch(),
        })
        .collect()
}

fn diffusive_noise(config: &ExperimentConfig, setup: &MeasurementSetup) -> DiffusiveNoise {
    config.noise.unwrap_or(match LimitKind::for_setup(setup) {
        LimitKind::DiffusiveOneNoise => DiffusiveNoise::One,
        _ => DiffusiveNoise::Two,
    })
}

fn path_file(out: &Path, index: usize) -> Result<BufWriter<fs::File>> {
    let dir = out.join("paths");
    fs::create_dir_all(&dir)?;
    Ok(BufWriter::new(fs::File::create(dir.join(format!("path_{index:05}.csv")))?))
}

/// Run `mode` and write its artifacts into `out`.
pub fn run(mode: Mode, config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    config.validate()?;
    fs::create_dir_all(out)?;
    let mut summary = Summary::new(mode, config)?;
    let paths = config.paths;
    match mode {
        Mode::Discrete => {
            let n = config.model.n;
            let dt = 1.0 / n as f64;
            let chain = DiscreteChain::new(config.setup()?, build_unitary_blocks(&config.model)?)?;
            let checkpoints = config.checkpoints(dt)?;
            let rho0 = config.initial_state.density()?;
            let ens = chain.ensemble(&rho0, config.seed, paths, &checkpoints)?;
            let reference = lindblad_reference(config, dt, &checkpoints)?;
            if config.emit_paths {
                for i in 0..paths {
                    let mut rng = ensemble::path_rng(config.seed, i, channel::DISCRETE);
                    chain
                        .simulate_path(&rho0, checkpoints.last_step(), &mut rng)?
                        .write_csv(path_file(out, i)?)?;
                }
            }
            summary.n = Some(n);
            summary.limit = Some(LimitKind::for_setup(chain.setup()));
            summary.lindblad_max_z = Some(ens.max_z_against(&reference));
            summary.lindblad = Some(lindblad_points(&checkpoints, &reference));
            summary.ensemble = Some(ens);
        }
        Mode::Lindblad => {
            let dt = config.dt()?;
            let checkpoints = config.checkpoints(dt)?;
            let model = config.limit_model()?;
            let path = integrate_lindblad(&config.initial_state.density()?, &model, dt, checkpoints.last_step())?;
            if config.emit_paths {
                let rec = ContinuousRecord {
                    dt,
                    n1: vec![0; path.len()],
                    n2: vec![0; path.len()],
                    states: path.clone(),
                    ..Default::default()
                };
                rec.write_csv(path_file(out, 0)?)?;
            }
            let states: Vec<DensityMatrix> = checkpoints.steps.iter().map(|&s| path[s].clone()).collect();
            summary.dt = Some(dt);
            summary.lindblad = Some(lindblad_points(&checkpoints, &states));
        }
        Mode::SdeDiffusive | Mode::SdeJump | Mode::SseJump | Mode::SseDiffusive => {
            let sde = config.sde_config()?;
            let checkpoints = config.checkpoints(sde.dt)?;
            let model = config.limit_model()?;
            let ens = run_continuous(mode, config, &model, &sde, &checkpoints, out)?;
            let reference = lindblad_reference(config, sde.dt, &checkpoints)?;
            summary.dt = Some(sde.dt);
            if matches!(mode, Mode::SdeDiffusive | Mode::SdeJump) {
                summary.scheme = Some(sde.scheme);
            }
            summary.lindblad_max_z = Some(ens.max_z_against(&reference));
            summary.lindblad = Some(lindblad_points(&checkpoints, &reference));
            summary.ensemble = Some(ens);
        }
        Mode::VerifyGenerator => {
            let setup = config.setup()?;
            let kind = match LimitKind::for_setup(&setup) {
                LimitKind::Jump { .. } if config.verify.unweighted_jumps => LimitKind::Jump { weighted: false },
                k => k,
            };
            let functions = config
                .verify
                .functions
                .iter()
                .map(|f| test_function(f))
                .collect::<Result<Vec<_>>>()?;
            let grid = bloch_grid(config.verify.grid_spacing, config.verify.grid_radius).map_err(as_config)?;
            let scans =
                generator_residual_scan(&functions, &grid, &setup, &config.model, kind, &config.verify.ns).map_err(as_config)?;
            for scan in &scans {
                scan.write_csv(BufWriter::new(fs::File::create(out.join(format!("residuals_{}.csv", scan.function)))?))?;
            }
            summary.limit = Some(kind);
            summary.residuals = Some(scans);
        }
        Mode::Compare => {
            let n = config.model.n;
            let dt = config.dt()?;
            let chain = DiscreteChain::new(config.setup()?, build_unitary_blocks(&config.model)?)?;
            let disc_points = config.checkpoints(1.0 / n as f64)?;
            let cont_points = config.checkpoints(dt)?;
            let rho0 = config.initial_state.density()?;
            let ens = chain.ensemble(&rho0, config.seed, paths, &disc_points)?;
            let kind = LimitKind::for_setup(chain.setup());
            let model = config.limit_model()?;
            let sde = config.sde_config()?;
            let reference = lindblad_reference(config, dt, &cont_points)?;
            let limit = match kind {
                LimitKind::Deterministic => None,
                LimitKind::Jump { .. } => Some(JumpSde::new(model, sde.scheme, sde.renormalize).ensemble(
                    &rho0,
                    &sde,
                    paths,
                    &cont_points,
                )?),
                LimitKind::DiffusiveTwoNoise | LimitKind::DiffusiveOneNoise => {
                    let noise = diffusive_noise(config, chain.setup());
                    Some(DiffusiveSde::new(model, noise, sde.scheme, sde.renormalize)?.ensemble(&rho0, &sde, paths, &cont_points)?)
                }
            };
            summary.n = Some(n);
            summary.dt = Some(dt);
            summary.limit = Some(kind);
            summary.lindblad_max_z = Some(ens.max_z_against(&reference));
            summary.lindblad = Some(lindblad_points(&cont_points, &reference));
            if let Some(limit) = limit {
                summary.scheme = Some(sde.scheme);
                summary.comparison = Some(compare_ensembles(&ens, &limit)?);
                summary.limit_ensemble = Some(limit);
            }
            summary.ensemble = Some(ens);
        }
    }
    fs::write(out.join("summary.json"), summary.to_json()?)?;
    Ok(summary)
}

fn run_continuous(
    mode: Mode,
    config: &ExperimentConfig,
    model: &LimitModel,
    sde: &SdeConfig,
    checkpoints: &Checkpoints,
    out: &Path,
) -> Result<EnsembleSummary> {
    let paths = config.paths;
    match mode {
        Mode::SdeDiffusive => {
            let noise = diffusive_noise(config, &config.setup()?);
            let stepper = DiffusiveSde::new(model.clone(), noise, sde.scheme, sde.renormalize).map_err(as_config)?;
            let rho0 = config.initial_state.density()?;
            if config.emit_paths {
                for i in 0..paths {
                    stepper.simulate_path(&rho0, sde, i)?.write_csv(path_file(out, i)?)?;
                }
            }
            stepper.ensemble(&rho0, sde, paths, checkpoints)
        }
        Mode::SdeJump => {
            let stepper = JumpSde::new(model.clone(), sde.scheme, sde.renormalize);
            let rho0 = config.initial_state.density()?;
            if config.emit_paths {
                for i in 0..paths {
                    stepper.simulate_path(&rho0, sde, i)?.write_csv(path_file(out, i)?)?;
                }
            }
            stepper.ensemble(&rho0, sde, paths, checkpoints)
        }
        Mode::SseJump => {
            let stepper = SseJump::new(model.clone());
            let psi0 = config.initial_state.pure()?;
            if config.emit_paths {
                for i in 0..paths {
                    stepper.simulate_path(&psi0, sde, i)?.write_csv(path_file(out, i)?)?;
                }
            }
            stepper.ensemble(&psi0, sde, paths, checkpoints)
        }
        Mode::SseDiffusive => {
            let stepper = SseDiffusive::new(model.clone()).map_err(as_config)?;
            let psi0 = config.initial_state.pure()?;
            if config.emit_paths {
                for i in 0..paths {
                    stepper.simulate_path(&psi0, sde, i)?.write_csv(path_file(out, i)?)?;
                }
            }
            stepper.ensemble(&psi0, sde, paths, checkpoints)
        }
        _ => unreachable!("not a continuous stochastic mode"),
    }
}

#[derive(Debug, Parser)]
#[command(name = "qtraj", version, about = "Quantum trajectory experiments from a JSON configuration")]
pub struct Cli {
    pub mode: Mode,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub emit_paths: bool,
}

/// Process exit status for an error: 2 for configuration problems, 3 for
/// numerical failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Divergence { .. } | Error::ImpossibleOutcome { .. } | Error::IntensityResolution(_) => 3,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
    }
}

/// Load the configuration, apply flag overrides and run.
pub fn execute(cli: &Cli) -> Result<Summary> {
    let mut config = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(paths) = cli.paths {
        config.paths = paths;
    }
    config.emit_paths |= cli.emit_paths;
    let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    run(cli.mode, &config, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> serde_json::Value {
        serde_json::json!({
            "model": {
                "h0": [[0.5, 0.0], [0.0, 0.0], [0.0, 0.0], [-0.5, 0.0]],
                "c": [[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
                "gamma0": 0.0,
                "gamma1": 1.0,
                "p": 0.75,
                "n": 100
            },
            "T": 0.2,
            "dt": 0.01,
            "paths": 8,
            "checkpoints": 2,
            "seed": 3
        })
    }

    #[test]
    fn parses_with_defaults() {
        let config = ExperimentConfig::from_json(&base().to_string()).unwrap();
        assert_eq!(config.setup.measurement, Measurement::BeforeAfter);
        assert_eq!(config.initial_state, InitialState::Bloch([0.0, 0.0, -1.0]));
        assert_eq!(config.scheme, SdeScheme::EulerMaruyama);
        assert!(config.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_named() {
        let mut doc = base();
        doc["sead"] = 4.into();
        let err = ExperimentConfig::from_json(&doc.to_string()).unwrap_err();
        assert!(err.to_string().contains("sead"), "{err}");
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn syntax_errors_report_lines() {
        let err = ExperimentConfig::from_json("{\n  \"T\": 1.0,\n  oops\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn missing_dt_is_a_config_error() {
        let mut doc = base();
        doc.as_object_mut().unwrap().remove("dt");
        let config = ExperimentConfig::from_json(&doc.to_string()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = run(Mode::SdeJump, &config, dir.path()).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn observables_from_config() {
        assert!(ObservableConfig::default().build().unwrap().is_diagonal());
        let doc: SetupConfig = serde_json::from_str(r#"{"measurement": "after", "observable": {"angle": 0.7853981633974483}}"#).unwrap();
        let setup = doc.build(0.5).unwrap();
        assert!(!setup.observable().unwrap().is_diagonal());
        let doc: SetupConfig = serde_json::from_str(r#"{"observable": {}}"#).unwrap();
        assert!(doc.build(0.5).unwrap().classifies_events());
    }

    #[test]
    fn pure_initial_states() {
        let psi = InitialState::Bloch([1.0, 0.0, 0.0]).pure().unwrap();
        let rho = psi.projector();
        assert!(rho.matrix().distance(DensityMatrix::from_bloch([1.0, 0.0, 0.0]).unwrap().matrix()) <= 1e-12);
        assert!(InitialState::Bloch([0.5, 0.0, 0.0]).pure().is_err());
    }

    #[test]
    fn every_mode_writes_a_summary() {
        let config = ExperimentConfig::from_json(&base().to_string()).unwrap();
        for mode in Mode::value_variants() {
            let dir = tempfile::tempdir().unwrap();
            let mut config = config.clone();
            if *mode == Mode::VerifyGenerator {
                config.verify.ns = vec![50, 100];
                config.verify.grid_spacing = 0.45;
            }
            let summary = run(*mode, &config, dir.path()).unwrap();
            assert_eq!(summary.mode, *mode);
            assert!(dir.path().join("summary.json").exists());
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let mut config = ExperimentConfig::from_json(&base().to_string()).unwrap();
        config.emit_paths = true;
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run(Mode::SdeJump, &config, a.path()).unwrap();
        run(Mode::SdeJump, &config, b.path()).unwrap();
        for file in ["summary.json", "paths/path_00003.csv"] {
            assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap());
        }
    }

    #[test]
    fn lindblad_mode_reaches_fixed_point() {
        // populations relax at unit rate: e^{-30} is far below the tolerance
        let mut doc = base();
        doc["T"] = 30.0.into();
        let config = ExperimentConfig::from_json(&doc.to_string()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let summary = run(Mode::Lindblad, &config, dir.path()).unwrap();
        let last = summary.lindblad.unwrap().pop().unwrap();
        let rho = matrix_from_pairs("rho", &last.rho).unwrap();
        assert!(rho.distance(&crate::ComplexMatrix::real_diag(&[0.75, 0.25])) <= 1e-6);
    }
}
