//! Continuous-time limits: the heat-bath Lindblad equation and the
//! diffusive and jump stochastic master equations.
//!
//! With `p` the environment ground-state weight,
//!
//! ```text
//! 𝓛(ρ) = −i[H0,ρ] + p D[C](ρ) + (1−p) D[C†](ρ),
//! D[A](ρ) = AρA† − ½{A†A, ρ}.
//! ```
//!
//! The diffusion operators are built from `ℋ[A](ρ) = Aρ + ρA† − Tr(Aρ + ρA†)ρ`
//! with the channel operators `A = −iC` and `A' = −iC†`, the limits of
//! `√n L[1][0]` and `√n L[0][1]`:
//!
//! ```text
//! 𝒬 = √p ℋ[A],   𝒲 = √(1−p) ℋ[A'],   𝒢 = −ℋ[pA + (1−p)A'].
//! ```
//!
//! These are the coefficients for which `Df(𝓛) + ½D²f(𝒬,𝒬) + ½D²f(𝒲,𝒲)`
//! is the limit of the discrete generator. The variant with coefficients
//! `√(1−(1−p)²)`, `√(1−p²)` acting on `C`, `C†` is available as
//! [`DiffusionConvention::AsDisplayed`] for comparison.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::algebra::{project_to_state, ComplexMatrix, DensityMatrix, C64, I, ONE};
use crate::ensemble::{self, channel, CheckpointRecorder, Checkpoints, EnsembleSummary, PathSummary};
use crate::error::{Error, Result};
use crate::model::{channel_operators, ModelParams};

/// Jump targets with trace below this are treated as impossible.
pub const NEGLIGIBLE_TRACE: f64 = 1e-14;
/// Largest admissible `rate · dt` for the thinning sampler.
pub const MAX_RATE_DT: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionConvention {
    /// Coefficients matching the discrete generator (default).
    #[default]
    Matched,
    /// `√(1−(1−p)²)·ℋ[C]` and `√(1−p²)·ℋ[C†]`, and `−ℋ[pC + (1−p)C†]`.
    AsDisplayed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeScheme {
    /// Explicit Euler–Maruyama on `ρ`.
    #[default]
    EulerMaruyama,
    /// Classical RK4 for deterministic drifts (Lindblad, jump drift between jumps).
    Rk4Ode,
    /// `ρ ← MρM† / Tr` with the same `M` as the pure-state Euler step;
    /// positivity preserving and pathwise identical to the unraveling.
    Kraus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub seed: u64,
    /// Repair each Euler–Maruyama state with [`project_to_state`].
    pub renormalize: bool,
    pub scheme: SdeScheme,
}

impl SdeConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64) -> Self {
        SdeConfig {
            dt,
            horizon,
            seed,
            renormalize: true,
            scheme: SdeScheme::EulerMaruyama,
        }
    }

    pub fn with_scheme(mut self, scheme: SdeScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn steps(&self) -> Result<usize> {
        ensemble::step_count(self.horizon, self.dt)
    }
}

/// The limit model at a fixed environment weight `p`.
#[derive(Clone, Debug)]
pub struct LimitModel {
    h0: ComplexMatrix,
    c: ComplexMatrix,
    c_dag: ComplexMatrix,
    p: f64,
    convention: DiffusionConvention,
    cdc: ComplexMatrix,
    ccd: ComplexMatrix,
    /// Effective no-jump Hamiltonian part `−iH0 − ½(pC†C + (1−p)CC†)`.
    no_jump: ComplexMatrix,
    /// Monitored diffusive channels `√p A`, `√(1−p) A'`.
    monitored: [ComplexMatrix; 2],
    monitored_dd: [ComplexMatrix; 2],
    /// One-noise channel `pA + (1−p)A'` and its unobserved remainder.
    single: ComplexMatrix,
    single_dd: ComplexMatrix,
    remainder: ComplexMatrix,
    remainder_dd: ComplexMatrix,
}

impl LimitModel {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        Self::from_parts(params.h0.clone(), params.c.clone(), params.p()?)
    }

    pub fn from_parts(h0: ComplexMatrix, c: ComplexMatrix, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("p must lie in [0, 1], got {p}")));
        }
        if h0.dim() != c.dim() {
            return Err(Error::invalid("h0 and c dimensions differ"));
        }
        let c_dag = c.adjoint();
        let cdc = c_dag.matmul(&c);
        let ccd = c.matmul(&c_dag);
        let no_jump = h0
            .scale(-I)
            .add_scaled(&cdc, C64::new(-0.5 * p, 0.0))
            .add_scaled(&ccd, C64::new(-0.5 * (1.0 - p), 0.0));
        let (a, a_dag_channel) = channel_operators(&c);
        let monitored = [a.scale_real(p.sqrt()), a_dag_channel.scale_real((1.0 - p).sqrt())];
        let monitored_dd = [
            monitored[0].adjoint().matmul(&monitored[0]),
            monitored[1].adjoint().matmul(&monitored[1]),
        ];
        let single = a.scale_real(p).add_scaled(&a_dag_channel, C64::new(1.0 - p, 0.0));
        let remainder = (&a - &a_dag_channel).scale_real((p * (1.0 - p)).sqrt());
        Ok(LimitModel {
            single_dd: single.adjoint().matmul(&single),
            remainder_dd: remainder.adjoint().matmul(&remainder),
            h0,
            c,
            c_dag,
            p,
            convention: DiffusionConvention::Matched,
            cdc,
            ccd,
            no_jump,
            monitored,
            monitored_dd,
            single,
            remainder,
        })
    }

    pub fn with_convention(mut self, convention: DiffusionConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn convention(&self) -> DiffusionConvention {
        self.convention
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn coupling(&self) -> &ComplexMatrix {
        &self.c
    }

    pub fn hamiltonian(&self) -> &ComplexMatrix {
        &self.h0
    }

    /// `𝓛(ρ)`
    pub fn lindblad_rhs(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let p = self.p;
        let mut out = ComplexMatrix::commutator(&self.h0, rho).scale(-I);
        out.axpy_real(p, &rho.sandwich(&self.c));
        out.axpy_real(-0.5 * p, &ComplexMatrix::anticommutator(&self.cdc, rho));
        out.axpy_real(1.0 - p, &rho.sandwich(&self.c_dag));
        out.axpy_real(-0.5 * (1.0 - p), &ComplexMatrix::anticommutator(&self.ccd, rho));
        out
    }

    /// Emission intensity `p Tr[CρC†]`.
    pub fn emission_rate(&self, rho: &ComplexMatrix) -> f64 {
        self.p * ComplexMatrix::trace_product(&self.cdc, rho).re
    }

    /// Absorption intensity `(1−p) Tr[C†ρC]`.
    pub fn absorption_rate(&self, rho: &ComplexMatrix) -> f64 {
        (1.0 - self.p) * ComplexMatrix::trace_product(&self.ccd, rho).re
    }

    /// `CρC†/Tr`, or `None` when the trace is negligible.
    pub fn emission_target(&self, rho: &ComplexMatrix) -> Option<DensityMatrix> {
        jump_target(&rho.sandwich(&self.c))
    }

    /// `C†ρC/Tr`, or `None` when the trace is negligible.
    pub fn absorption_target(&self, rho: &ComplexMatrix) -> Option<DensityMatrix> {
        jump_target(&rho.sandwich(&self.c_dag))
    }

    /// Jump-equation drift
    /// `𝒯(ρ) = 𝓛(ρ) − pCρC† − (1−p)C†ρC + (pTr[CρC†] + (1−p)Tr[C†ρC])ρ`.
    pub fn jump_drift(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let rate = self.emission_rate(rho) + self.absorption_rate(rho);
        let mut out = self.no_jump.matmul(rho);
        out += &out.adjoint();
        out.axpy_real(rate, rho);
        out
    }

    fn h_op(a: &ComplexMatrix, rho: &ComplexMatrix) -> ComplexMatrix {
        let x = a.matmul(rho);
        let x = &x + &x.adjoint();
        let tr = x.trace().re;
        x.add_scaled(rho, C64::new(-tr, 0.0))
    }

    /// First diffusion operator `𝒬(ρ)`.
    pub fn diffusion_q(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        match self.convention {
            DiffusionConvention::Matched => Self::h_op(&self.monitored[0], rho),
            DiffusionConvention::AsDisplayed => {
                let q = 1.0 - (1.0 - self.p) * (1.0 - self.p);
                Self::h_op(&self.c, rho).scale_real(q.max(0.0).sqrt())
            }
        }
    }

    /// Second diffusion operator `𝒲(ρ)`.
    pub fn diffusion_w(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        match self.convention {
            DiffusionConvention::Matched => Self::h_op(&self.monitored[1], rho),
            DiffusionConvention::AsDisplayed => {
                let w = 1.0 - self.p * self.p;
                Self::h_op(&self.c_dag, rho).scale_real(w.max(0.0).sqrt())
            }
        }
    }

    /// One-noise diffusion operator `𝒢(ρ)`.
    pub fn diffusion_one_noise(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        match self.convention {
            DiffusionConvention::Matched => -&Self::h_op(&self.single, rho),
            DiffusionConvention::AsDisplayed => {
                let op = self.c.scale_real(self.p).add_scaled(&self.c_dag, C64::new(1.0 - self.p, 0.0));
                -&Self::h_op(&op, rho)
            }
        }
    }

    /// Euler increment `𝓛(ρ)dt + 𝒬(ρ)dW1 + 𝒲(ρ)dW2`.
    pub fn diffusive_two_noise_step(&self, rho: &ComplexMatrix, dw1: f64, dw2: f64, dt: f64) -> ComplexMatrix {
        let mut out = self.lindblad_rhs(rho).scale_real(dt);
        out.axpy_real(dw1, &self.diffusion_q(rho));
        out.axpy_real(dw2, &self.diffusion_w(rho));
        out
    }

    /// Euler increment `𝓛(ρ)dt + 𝒢(ρ)dW`.
    pub fn diffusive_one_noise_step(&self, rho: &ComplexMatrix, dw: f64, dt: f64) -> ComplexMatrix {
        let mut out = self.lindblad_rhs(rho).scale_real(dt);
        out.axpy_real(dw, &self.diffusion_one_noise(rho));
        out
    }

    /// Expectations `Re Tr[√p A ρ]` and `Re Tr[√(1−p) A' ρ]` of the monitored channels.
    pub fn monitored_means(&self, rho: &ComplexMatrix) -> [f64; 2] {
        [
            ComplexMatrix::trace_product(&self.monitored[0], rho).re,
            ComplexMatrix::trace_product(&self.monitored[1], rho).re,
        ]
    }

    /// Pure-state analogue of [`Self::monitored_means`].
    pub fn monitored_means_pure(&self, psi: &[C64]) -> [f64; 2] {
        [expect(&self.monitored[0], psi).re, expect(&self.monitored[1], psi).re]
    }

    /// Two-noise update operator
    /// `M = I + (−iH0 − ½Σ_k (L_k†L_k − 2x_k L_k + x_k²))dt + Σ_k (L_k − x_k) dW_k`.
    pub fn two_noise_update(&self, x: [f64; 2], dw: [f64; 2], dt: f64) -> ComplexMatrix {
        let d = self.dim();
        let mut m = ComplexMatrix::identity(d);
        m.axpy_complex(C64::new(0.0, -dt), &self.h0);
        for k in 0..2 {
            m.axpy_real(-0.5 * dt, &self.monitored_dd[k]);
            m.axpy_real(x[k] * dt + dw[k], &self.monitored[k]);
            m.add_identity(-0.5 * x[k] * x[k] * dt - x[k] * dw[k]);
        }
        m
    }

    /// One-noise update operator and the unobserved channel it leaves out.
    fn one_noise_update(&self, x: f64, dw: f64, dt: f64) -> ComplexMatrix {
        let d = self.dim();
        let mut m = ComplexMatrix::identity(d);
        m.axpy_complex(C64::new(0.0, -dt), &self.h0);
        m.axpy_real(-0.5 * dt, &self.single_dd);
        m.axpy_real(-0.5 * dt, &self.remainder_dd);
        // 𝒢 = −ℋ[L]: the innovation enters with the opposite sign
        m.axpy_real(x * dt - dw, &self.single);
        m.add_identity(-0.5 * x * x * dt + x * dw);
        m
    }

    /// No-jump update operator `I + (−iH0 − ½(pC†C + (1−p)CC†) + ½λ)dt`.
    pub fn no_jump_update(&self, total_rate: f64, dt: f64) -> ComplexMatrix {
        let mut m = ComplexMatrix::identity(self.dim());
        m.axpy_real(dt, &self.no_jump);
        m.add_identity(0.5 * total_rate * dt);
        m
    }

    pub(crate) fn coupling_adjoint(&self) -> &ComplexMatrix {
        &self.c_dag
    }

    pub(crate) fn cdc(&self) -> &ComplexMatrix {
        &self.cdc
    }

    pub(crate) fn ccd(&self) -> &ComplexMatrix {
        &self.ccd
    }
}

fn expect(a: &ComplexMatrix, psi: &[C64]) -> C64 {
    let ap = a.apply(psi);
    psi.iter().zip(&ap).map(|(x, y)| x.conj() * y).sum()
}

fn jump_target(m: &ComplexMatrix) -> Option<DensityMatrix> {
    let tr = m.trace().re;
    (tr >= NEGLIGIBLE_TRACE).then(|| DensityMatrix::normalized(m))
}

impl ComplexMatrix {
    pub(crate) fn add_identity(&mut self, s: f64) {
        for i in 0..self.dim() {
            self[(i, i)] += s;
        }
    }

    pub(crate) fn axpy_complex(&mut self, s: C64, other: &ComplexMatrix) {
        *self = self.add_scaled(other, s);
    }
}

fn rk4<F: Fn(&ComplexMatrix) -> ComplexMatrix>(f: F, rho: &ComplexMatrix, dt: f64) -> ComplexMatrix {
    let k1 = f(rho);
    let k2 = f(&rho.add_scaled(&k1, C64::new(0.5 * dt, 0.0)));
    let k3 = f(&rho.add_scaled(&k2, C64::new(0.5 * dt, 0.0)));
    let k4 = f(&rho.add_scaled(&k3, C64::new(dt, 0.0)));
    let mut out = rho.clone();
    out.axpy_real(dt / 6.0, &k1);
    out.axpy_real(dt / 3.0, &k2);
    out.axpy_real(dt / 3.0, &k3);
    out.axpy_real(dt / 6.0, &k4);
    out
}

/// Accept `m` as the next state: repaired if requested, otherwise checked
/// for divergence and kept as is. Returns the repair magnitude.
fn settle(m: ComplexMatrix, renormalize: bool, step: usize) -> Result<(DensityMatrix, f64)> {
    if renormalize {
        let r = project_to_state(&m, step)?;
        return Ok((r.state, r.magnitude));
    }
    let tr = m.trace();
    if !m.is_finite() || m.hermitian_defect() > 0.1 || (tr - ONE).norm() > 0.1 {
        return Err(Error::Divergence {
            path: None,
            step,
            detail: format!("state left the neighbourhood of the state space (trace {tr:.6})"),
        });
    }
    Ok((DensityMatrix::from_matrix_unchecked(m), 0.0))
}

/// RK4 on `dρ/dt = 𝓛(ρ)`, returning the states at every step `0..=steps`.
pub fn integrate_lindblad(rho0: &DensityMatrix, model: &LimitModel, dt: f64, steps: usize) -> Result<Vec<DensityMatrix>> {
    let mut path = Vec::with_capacity(steps + 1);
    integrate_lindblad_with(rho0, model, dt, steps, |_, rho| path.push(rho.clone()))?;
    Ok(path)
}

/// [`integrate_lindblad`] reporting each state to `observer` instead of storing it.
pub fn integrate_lindblad_with<F>(rho0: &DensityMatrix, model: &LimitModel, dt: f64, steps: usize, mut observer: F) -> Result<DensityMatrix>
where
    F: FnMut(usize, &DensityMatrix),
{
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let mut rho = rho0.clone();
    observer(0, &rho);
    for k in 1..=steps {
        let next = rk4(|r| model.lindblad_rhs(r), rho.matrix(), dt);
        let (state, _) = settle(next.hermitian_part(), false, k)?;
        rho = state;
        observer(k, &rho);
    }
    Ok(rho)
}

/// Number of independent noises of a diffusive equation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusiveNoise {
    /// Measurement before and after with a non-diagonal observable.
    #[default]
    Two,
    /// Gibbs environment, non-diagonal observable measured after only.
    One,
}

/// Gaussian increments, one stream per noise channel.
#[derive(Clone, Debug)]
pub struct BrownianDrivers {
    streams: [ChaCha8Rng; 2],
}

impl BrownianDrivers {
    pub fn new(streams: [ChaCha8Rng; 2]) -> Self {
        BrownianDrivers { streams }
    }

    pub fn for_path(seed: u64, path: usize) -> Self {
        Self::new([
            ensemble::path_rng(seed, path, channel::BROWNIAN_1),
            ensemble::path_rng(seed, path, channel::BROWNIAN_2),
        ])
    }

    #[inline]
    pub fn next(&mut self, dt: f64) -> [f64; 2] {
        let s = dt.sqrt();
        let a: f64 = self.streams[0].sample(StandardNormal);
        let b: f64 = self.streams[1].sample(StandardNormal);
        [a * s, b * s]
    }
}

/// Outcome of one diffusive step.
#[derive(Clone, Debug)]
pub struct DiffusiveStep {
    pub state: DensityMatrix,
    pub repair: f64,
}

/// Diffusive stochastic master equation stepper.
#[derive(Clone, Debug)]
pub struct DiffusiveSde {
    pub model: LimitModel,
    pub noise: DiffusiveNoise,
    pub scheme: SdeScheme,
    pub renormalize: bool,
}

impl DiffusiveSde {
    pub fn new(model: LimitModel, noise: DiffusiveNoise, scheme: SdeScheme, renormalize: bool) -> Result<Self> {
        match scheme {
            SdeScheme::Rk4Ode => {
                return Err(Error::invalid("rk4_ode integrates deterministic drifts only; use euler_maruyama or kraus"))
            }
            SdeScheme::Kraus if model.convention() != DiffusionConvention::Matched => {
                return Err(Error::invalid(
                    "the kraus scheme realizes the matched diffusion coefficients only",
                ))
            }
            _ => {}
        }
        Ok(DiffusiveSde {
            model,
            noise,
            scheme,
            renormalize,
        })
    }

    /// Advance by `dt` with Brownian increments `dw` (the second is unused
    /// for one-noise equations).
    pub fn step(&self, rho: &DensityMatrix, dw: [f64; 2], dt: f64, step: usize) -> Result<DiffusiveStep> {
        let m = rho.matrix();
        let next = match (self.scheme, self.noise) {
            (SdeScheme::EulerMaruyama, DiffusiveNoise::Two) => m + &self.model.diffusive_two_noise_step(m, dw[0], dw[1], dt),
            (SdeScheme::EulerMaruyama, DiffusiveNoise::One) => m + &self.model.diffusive_one_noise_step(m, dw[0], dt),
            (SdeScheme::Kraus, DiffusiveNoise::Two) => {
                let x = self.model.monitored_means(m);
                let u = self.model.two_noise_update(x, dw, dt);
                return Ok(DiffusiveStep {
                    state: DensityMatrix::normalized(&m.sandwich(&u)),
                    repair: 0.0,
                });
            }
            (SdeScheme::Kraus, DiffusiveNoise::One) => {
                let x = ComplexMatrix::trace_product(&self.model.single, m).re;
                let u = self.model.one_noise_update(x, dw[0], dt);
                let mut out = m.sandwich(&u);
                out.axpy_real(dt, &m.sandwich(&self.model.remainder));
                return Ok(DiffusiveStep {
                    state: DensityMatrix::normalized(&out),
                    repair: 0.0,
                });
            }
            (SdeScheme::Rk4Ode, _) => unreachable!("rejected at construction"),
        };
        let (state, repair) = settle(next, self.renormalize, step)?;
        Ok(DiffusiveStep { state, repair })
    }

    /// Run one path, reporting every state to `observer`.
    pub fn run_path<F>(&self, rho0: &DensityMatrix, dt: f64, steps: usize, drivers: &mut BrownianDrivers, mut observer: F) -> Result<f64>
    where
        F: FnMut(usize, &DensityMatrix),
    {
        let mut rho = rho0.clone();
        let mut max_repair: f64 = 0.0;
        observer(0, &rho);
        for k in 1..=steps {
            let dw = drivers.next(dt);
            let s = self.step(&rho, dw, dt, k)?;
            max_repair = max_repair.max(s.repair);
            rho = s.state;
            observer(k, &rho);
        }
        Ok(max_repair)
    }

    pub fn simulate_path(&self, rho0: &DensityMatrix, config: &SdeConfig, path: usize) -> Result<ContinuousRecord> {
        let steps = config.steps()?;
        let mut drivers = BrownianDrivers::for_path(config.seed, path);
        let mut rec = ContinuousRecord::with_capacity(config.dt, steps);
        let max_repair = self.run_path(rho0, config.dt, steps, &mut drivers, |_, rho| rec.push(rho, 0, 0))?;
        rec.max_repair = max_repair;
        Ok(rec)
    }

    /// Ensemble statistics at `checkpoints`, paths run in parallel.
    pub fn ensemble(&self, rho0: &DensityMatrix, config: &SdeConfig, paths: usize, checkpoints: &Checkpoints) -> Result<EnsembleSummary> {
        let steps = config.steps()?;
        check_checkpoints(checkpoints, steps)?;
        let per_path = ensemble::run_paths(paths, |i| {
            let mut drivers = BrownianDrivers::for_path(config.seed, i);
            let mut rec = CheckpointRecorder::new(checkpoints);
            let max_repair = self.run_path(rho0, config.dt, checkpoints.last_step(), &mut drivers, |k, rho| {
                rec.observe(k, rho.matrix(), 0, 0)
            })?;
            Ok(PathSummary {
                row: rec.finish(),
                max_repair,
                suppressed_jumps: 0,
            })
        })?;
        Ok(EnsembleSummary::from_paths(config.seed, checkpoints, &per_path))
    }
}

pub(crate) fn check_checkpoints(checkpoints: &Checkpoints, steps: usize) -> Result<()> {
    if checkpoints.is_empty() || checkpoints.last_step() > steps {
        return Err(Error::invalid("checkpoints must lie within the simulated horizon"));
    }
    Ok(())
}

/// Jump type of a counting process.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JumpKind {
    /// Intensity `p Tr[CρC†]`, target `CρC†/Tr`.
    Emission,
    /// Intensity `(1−p) Tr[C†ρC]`, target `C†ρC/Tr`.
    Absorption,
}

/// Two independent Poisson point processes on time × mark, realized per
/// step by thinning a bounding process of intensity `Λ = 1.5 (λ + 1)`.
#[derive(Clone, Debug)]
pub struct JumpDrivers {
    streams: [ChaCha8Rng; 2],
}

impl JumpDrivers {
    pub fn new(streams: [ChaCha8Rng; 2]) -> Self {
        JumpDrivers { streams }
    }

    pub fn for_path(seed: u64, path: usize) -> Self {
        Self::new([
            ensemble::path_rng(seed, path, channel::JUMP_1),
            ensemble::path_rng(seed, path, channel::JUMP_2),
        ])
    }

    /// Earliest accepted point in `[0, dt)` given the intensities at the
    /// start of the step, or `None`. Later accepted points in the same step
    /// are discarded.
    pub fn next(&mut self, rates: [f64; 2], dt: f64) -> Result<Option<(JumpKind, f64)>> {
        let mut earliest: Option<(JumpKind, f64)> = None;
        for (k, kind) in [JumpKind::Emission, JumpKind::Absorption].into_iter().enumerate() {
            let rate = rates[k].max(0.0);
            if rate * dt > MAX_RATE_DT {
                return Err(Error::IntensityResolution(rate * dt));
            }
            let bound = 1.5 * (rate + 1.0);
            let rng = &mut self.streams[k];
            let count = Poisson::new(bound * dt)
                .map_err(|e| Error::invalid(format!("bounding intensity: {e}")))?
                .sample(rng) as u64;
            for _ in 0..count {
                let time = rng.random::<f64>() * dt;
                let mark = rng.random::<f64>() * bound;
                if mark < rate && earliest.is_none_or(|(_, t)| time < t) {
                    earliest = Some((kind, time));
                }
            }
        }
        Ok(earliest)
    }
}

/// Two-counting-process jump stochastic master equation.
#[derive(Clone, Debug)]
pub struct JumpSde {
    pub model: LimitModel,
    pub scheme: SdeScheme,
    pub renormalize: bool,
}

/// Outcome of one jump step.
#[derive(Clone, Debug)]
pub struct JumpStep {
    pub state: DensityMatrix,
    pub jump: Option<JumpKind>,
    pub repair: f64,
    /// An accepted point was dropped because its target had vanishing trace.
    pub suppressed: bool,
}

impl JumpStep {
    pub fn counts(&self) -> (u64, u64) {
        match self.jump {
            Some(JumpKind::Emission) => (1, 0),
            Some(JumpKind::Absorption) => (0, 1),
            None => (0, 0),
        }
    }
}

impl JumpSde {
    pub fn new(model: LimitModel, scheme: SdeScheme, renormalize: bool) -> Self {
        JumpSde {
            model,
            scheme,
            renormalize,
        }
    }

    /// Drift part of a step.
    fn drift(&self, rho: &ComplexMatrix, rates: [f64; 2], dt: f64, step: usize) -> Result<(DensityMatrix, f64)> {
        match self.scheme {
            SdeScheme::EulerMaruyama => {
                let next = rho.add_scaled(&self.model.jump_drift(rho), C64::new(dt, 0.0));
                settle(next, self.renormalize, step)
            }
            SdeScheme::Rk4Ode => settle(rk4(|r| self.model.jump_drift(r), rho, dt), self.renormalize, step),
            SdeScheme::Kraus => {
                let u = self.model.no_jump_update(rates[0] + rates[1], dt);
                Ok((DensityMatrix::normalized(&rho.sandwich(&u)), 0.0))
            }
        }
    }

    /// One step driven by `drivers`; at most one jump is applied.
    pub fn jump_two_noise_step(&self, rho: &DensityMatrix, drivers: &mut JumpDrivers, dt: f64, step: usize) -> Result<JumpStep> {
        let m = rho.matrix();
        let rates = [self.model.emission_rate(m), self.model.absorption_rate(m)];
        let mut suppressed = false;
        if let Some((kind, _)) = drivers.next(rates, dt)? {
            let target = match kind {
                JumpKind::Emission => self.model.emission_target(m),
                JumpKind::Absorption => self.model.absorption_target(m),
            };
            match target {
                Some(state) => {
                    return Ok(JumpStep {
                        state,
                        jump: Some(kind),
                        repair: 0.0,
                        suppressed: false,
                    })
                }
                None => suppressed = true,
            }
        }
        let (state, repair) = self.drift(m, rates, dt, step)?;
        Ok(JumpStep {
            state,
            jump: None,
            repair,
            suppressed,
        })
    }

    /// Run one path, reporting `(step, state, N1, N2)` to `observer`.
    /// Returns the largest repair and the number of suppressed jumps.
    pub fn run_path<F>(&self, rho0: &DensityMatrix, dt: f64, steps: usize, drivers: &mut JumpDrivers, mut observer: F) -> Result<(f64, u64)>
    where
        F: FnMut(usize, &DensityMatrix, u64, u64),
    {
        let mut rho = rho0.clone();
        let (mut n1, mut n2) = (0u64, 0u64);
        let mut max_repair: f64 = 0.0;
        let mut suppressed = 0;
        observer(0, &rho, 0, 0);
        for k in 1..=steps {
            let s = self.jump_two_noise_step(&rho, drivers, dt, k)?;
            let (d1, d2) = s.counts();
            n1 += d1;
            n2 += d2;
            max_repair = max_repair.max(s.repair);
            suppressed += s.suppressed as u64;
            rho = s.state;
            observer(k, &rho, n1, n2);
        }
        Ok((max_repair, suppressed))
    }

    pub fn simulate_path(&self, rho0: &DensityMatrix, config: &SdeConfig, path: usize) -> Result<ContinuousRecord> {
        let steps = config.steps()?;
        let mut drivers = JumpDrivers::for_path(config.seed, path);
        let mut rec = ContinuousRecord::with_capacity(config.dt, steps);
        let (max_repair, suppressed) =
            self.run_path(rho0, config.dt, steps, &mut drivers, |_, rho, n1, n2| rec.push(rho, n1, n2))?;
        rec.max_repair = max_repair;
        rec.suppressed_jumps = suppressed;
        Ok(rec)
    }

    pub fn ensemble(&self, rho0: &DensityMatrix, config: &SdeConfig, paths: usize, checkpoints: &Checkpoints) -> Result<EnsembleSummary> {
        let steps = config.steps()?;
        check_checkpoints(checkpoints, steps)?;
        let per_path = ensemble::run_paths(paths, |i| {
            let mut drivers = JumpDrivers::for_path(config.seed, i);
            let mut rec = CheckpointRecorder::new(checkpoints);
            let (max_repair, suppressed_jumps) =
                self.run_path(rho0, config.dt, checkpoints.last_step(), &mut drivers, |k, rho, n1, n2| {
                    rec.observe(k, rho.matrix(), n1, n2)
                })?;
            Ok(PathSummary {
                row: rec.finish(),
                max_repair,
                suppressed_jumps,
            })
        })?;
        Ok(EnsembleSummary::from_paths(config.seed, checkpoints, &per_path))
    }
}

/// A stored continuous path; CSV rows are indexed by step with `t = step·dt`.
#[derive(Clone, Debug, Default)]
pub struct ContinuousRecord {
    pub dt: f64,
    pub states: Vec<DensityMatrix>,
    pub n1: Vec<u64>,
    pub n2: Vec<u64>,
    pub max_repair: f64,
    pub suppressed_jumps: u64,
}

impl ContinuousRecord {
    fn with_capacity(dt: f64, steps: usize) -> Self {
        ContinuousRecord {
            dt,
            states: Vec::with_capacity(steps + 1),
            n1: Vec::with_capacity(steps + 1),
            n2: Vec::with_capacity(steps + 1),
            ..Default::default()
        }
    }

    fn push(&mut self, rho: &DensityMatrix, n1: u64, n2: u64) {
        self.states.push(rho.clone());
        self.n1.push(n1);
        self.n2.push(n2);
    }

    /// Same columns as the discrete record; outcome and noise columns are empty.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        use crate::discrete::{density_fields, DENSITY_COLUMNS};
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step", "t"];
        header.extend(DENSITY_COLUMNS);
        header.extend(["outcome_before", "outcome_after", "X", "Y0", "Y1", "N1", "N2", "event"]);
        out.write_record(&header)?;
        for (k, state) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string(), (k as f64 * self.dt).to_string()];
            row.extend(density_fields(state));
            let event = match k.checked_sub(1) {
                None => String::new(),
                Some(prev) if self.n1[k] > self.n1[prev] => "emission".into(),
                Some(prev) if self.n2[k] > self.n2[prev] => "absorption".into(),
                Some(_) => "continuous".into(),
            };
            row.extend([String::new(), String::new(), String::new(), String::new(), String::new()]);
            row.extend([self.n1[k].to_string(), self.n2[k].to_string(), event]);
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}
