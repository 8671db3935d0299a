//! Pure-state unravelings: the discrete wave-function recursion, the jump
//! and diffusive stochastic Schrödinger equations, and Monte Carlo averaging
//! of their projectors.
//!
//! The continuous steppers use the same update operators as the
//! [`SdeScheme::Kraus`] density steppers, so with shared drivers
//! `|ψ_t⟩⟨ψ_t|` and `ρ_t` agree path by path up to rounding.

use std::io::Write;

use crate::algebra::{ComplexMatrix, DensityMatrix, C64, ZERO};
use crate::continuous::{
    check_checkpoints, BrownianDrivers, DiffusionConvention, JumpDrivers, JumpKind, LimitModel, SdeConfig, SdeScheme,
};
use crate::discrete::{projected_block, Label};
use crate::ensemble::{self, column_stats, CheckpointRecorder, Checkpoints, EnsembleSummary, PathSummary};
use crate::error::{Error, Result};
use crate::model::{Observable, UnitaryBlocks};

/// Norms below this make an outcome impossible.
pub const NEGLIGIBLE_NORM: f64 = 1e-14;

/// Unit vector `ψ`; its global phase carries no meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    psi: Vec<C64>,
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

impl PureState {
    /// Accept `psi` if its norm is 1 within `1e-12`.
    pub fn new(psi: Vec<C64>) -> Result<Self> {
        let n = norm(&psi);
        if psi.is_empty() || !((n - 1.0).abs() <= 1e-12) {
            return Err(Error::invalid(format!("state vector must have unit norm, got {n}")));
        }
        Ok(PureState { psi })
    }

    /// `v / ‖v‖`, or [`Error::ImpossibleOutcome`] when `‖v‖ < 1e-14`.
    pub fn normalize(v: Vec<C64>) -> Result<Self> {
        let n = norm(&v);
        if !(n >= NEGLIGIBLE_NORM) || !n.is_finite() {
            return Err(Error::ImpossibleOutcome { norm: n });
        }
        Ok(PureState {
            psi: v.into_iter().map(|z| z / n).collect(),
        })
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        let mut psi = vec![ZERO; dim];
        psi[k] = C64::new(1.0, 0.0);
        PureState { psi }
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.psi
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.psi)
    }

    /// `⟨ψ, Aψ⟩`
    pub fn expectation(&self, a: &ComplexMatrix) -> C64 {
        let ap = a.apply(&self.psi);
        self.psi.iter().zip(&ap).map(|(x, y)| x.conj() * y).sum()
    }

    pub fn projector_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::outer(&self.psi, &self.psi).hermitian_part()
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix::from_matrix_unchecked(self.projector_matrix())
    }
}

/// Unnormalized image `Σ_k conj(ϑ_j[k]) L[k][i] ψ` for before outcome `i`
/// and after outcome `j`.
fn discrete_image(psi: &PureState, label: Label, blocks: &UnitaryBlocks, observable: &Observable) -> Result<Vec<C64>> {
    let (Some(i), Some(j)) = (label.before, label.after) else {
        return Err(Error::invalid("the pure-state recursion needs both outcomes"));
    };
    let k = projected_block(blocks, &observable.theta[j as usize], i as usize);
    Ok(k.apply(psi.amplitudes()))
}

/// Probability of the outcome pair given the before weight `w_i`
/// (`p` for `i = 0`, `1−p` for `i = 1`).
pub fn discrete_pure_probability(
    psi: &PureState,
    label: Label,
    blocks: &UnitaryBlocks,
    observable: &Observable,
    p: f64,
) -> Result<f64> {
    let image = discrete_image(psi, label, blocks, observable)?;
    let w = if label.before == Some(0) { p } else { 1.0 - p };
    Ok(w * norm(&image).powi(2))
}

/// One step of the discrete wave-function recursion for a measurement
/// before and after the interaction.
pub fn discrete_pure_step(psi: &PureState, label: Label, blocks: &UnitaryBlocks, observable: &Observable) -> Result<PureState> {
    PureState::normalize(discrete_image(psi, label, blocks, observable)?)
}

fn apply_normalized(m: &ComplexMatrix, psi: &PureState) -> Result<(PureState, f64)> {
    let v = m.apply(psi.amplitudes());
    let n = norm(&v);
    Ok((PureState::normalize(v)?, n))
}

/// Outcome of one stochastic Schrödinger step.
#[derive(Clone, Debug)]
pub struct PureStep {
    pub state: PureState,
    pub jump: Option<JumpKind>,
    /// `|‖ψ_unnormalized‖ − 1|` before renormalization.
    pub norm_drift: f64,
    pub suppressed: bool,
}

impl PureStep {
    pub fn counts(&self) -> (u64, u64) {
        match self.jump {
            Some(JumpKind::Emission) => (1, 0),
            Some(JumpKind::Absorption) => (0, 1),
            None => (0, 0),
        }
    }
}

/// Diagnostics of one path.
#[derive(Clone, Copy, Debug, Default)]
pub struct PureDiagnostics {
    pub max_norm_drift: f64,
    pub suppressed_jumps: u64,
}

/// Jump stochastic Schrödinger equation: emission `ψ ← Cψ/√μ` at intensity
/// `pμ`, absorption `ψ ← C†ψ/√ν` at intensity `(1−p)ν`, and between jumps
/// `ψ ← (I + (−iH0 − ½(pC†C + (1−p)CC†) + ½λ)dt)ψ`, renormalized.
#[derive(Clone, Debug)]
pub struct SseJump {
    pub model: LimitModel,
}

impl SseJump {
    pub fn new(model: LimitModel) -> Self {
        SseJump { model }
    }

    pub fn rates(&self, psi: &PureState) -> [f64; 2] {
        let p = self.model.p();
        [
            p * psi.expectation(self.model.cdc()).re,
            (1.0 - p) * psi.expectation(self.model.ccd()).re,
        ]
    }

    pub fn step(&self, psi: &PureState, drivers: &mut JumpDrivers, dt: f64) -> Result<PureStep> {
        let rates = self.rates(psi);
        let mut suppressed = false;
        if let Some((kind, _)) = drivers.next(rates, dt)? {
            let op = match kind {
                JumpKind::Emission => self.model.coupling(),
                JumpKind::Absorption => self.model.coupling_adjoint(),
            };
            match PureState::normalize(op.apply(psi.amplitudes())) {
                Ok(state) => {
                    return Ok(PureStep {
                        state,
                        jump: Some(kind),
                        norm_drift: 0.0,
                        suppressed: false,
                    })
                }
                Err(Error::ImpossibleOutcome { .. }) => suppressed = true,
                Err(e) => return Err(e),
            }
        }
        let m = self.model.no_jump_update(rates[0] + rates[1], dt);
        let (state, n) = apply_normalized(&m, psi)?;
        Ok(PureStep {
            state,
            jump: None,
            norm_drift: (n - 1.0).abs(),
            suppressed,
        })
    }

    pub fn run_path<F>(&self, psi0: &PureState, dt: f64, steps: usize, drivers: &mut JumpDrivers, mut observer: F) -> Result<PureDiagnostics>
    where
        F: FnMut(usize, &PureState, u64, u64),
    {
        let mut psi = psi0.clone();
        let (mut n1, mut n2) = (0, 0);
        let mut diag = PureDiagnostics::default();
        observer(0, &psi, 0, 0);
        for k in 1..=steps {
            let s = self.step(&psi, drivers, dt).map_err(|e| at_step(e, k))?;
            let (d1, d2) = s.counts();
            n1 += d1;
            n2 += d2;
            diag.max_norm_drift = diag.max_norm_drift.max(s.norm_drift);
            diag.suppressed_jumps += s.suppressed as u64;
            psi = s.state;
            observer(k, &psi, n1, n2);
        }
        Ok(diag)
    }

    pub fn simulate_path(&self, psi0: &PureState, config: &SdeConfig, path: usize) -> Result<PureRecord> {
        let steps = config.steps()?;
        let mut drivers = JumpDrivers::for_path(config.seed, path);
        let mut rec = PureRecord::with_capacity(config.dt, steps);
        rec.diagnostics = self.run_path(psi0, config.dt, steps, &mut drivers, |_, psi, n1, n2| rec.push(psi, n1, n2))?;
        Ok(rec)
    }

    /// Projector statistics at `checkpoints` over `paths` paths.
    pub fn ensemble(&self, psi0: &PureState, config: &SdeConfig, paths: usize, checkpoints: &Checkpoints) -> Result<EnsembleSummary> {
        check_checkpoints(checkpoints, config.steps()?)?;
        let per_path = ensemble::run_paths(paths, |i| {
            let mut drivers = JumpDrivers::for_path(config.seed, i);
            let mut rec = CheckpointRecorder::new(checkpoints);
            let diag = self.run_path(psi0, config.dt, checkpoints.last_step(), &mut drivers, |k, psi, n1, n2| {
                rec.observe(k, &psi.projector_matrix(), n1, n2)
            })?;
            Ok(PathSummary {
                row: rec.finish(),
                max_repair: diag.max_norm_drift,
                suppressed_jumps: diag.suppressed_jumps,
            })
        })?;
        Ok(EnsembleSummary::from_paths(config.seed, checkpoints, &per_path))
    }
}

/// Diffusive stochastic Schrödinger equation with two monitored channels
/// `√p(−iC)` and `√(1−p)(−iC†)`:
/// `ψ ← Mψ/‖Mψ‖`, `M = I + (−iH0 − ½Σ(L_k†L_k − 2x_kL_k + x_k²))dt + Σ(L_k − x_k)dW_k`,
/// `x_k = Re⟨ψ, L_kψ⟩`.
#[derive(Clone, Debug)]
pub struct SseDiffusive {
    pub model: LimitModel,
}

impl SseDiffusive {
    pub fn new(model: LimitModel) -> Result<Self> {
        if model.convention() != DiffusionConvention::Matched {
            return Err(Error::invalid(
                "the diffusive unraveling is defined for the matched diffusion coefficients",
            ));
        }
        Ok(SseDiffusive { model })
    }

    pub fn step(&self, psi: &PureState, dw: [f64; 2], dt: f64) -> Result<PureStep> {
        let x = self.model.monitored_means_pure(psi.amplitudes());
        let m = self.model.two_noise_update(x, dw, dt);
        let (state, n) = apply_normalized(&m, psi)?;
        Ok(PureStep {
            state,
            jump: None,
            norm_drift: (n - 1.0).abs(),
            suppressed: false,
        })
    }

    pub fn run_path<F>(&self, psi0: &PureState, dt: f64, steps: usize, drivers: &mut BrownianDrivers, mut observer: F) -> Result<PureDiagnostics>
    where
        F: FnMut(usize, &PureState),
    {
        let mut psi = psi0.clone();
        let mut diag = PureDiagnostics::default();
        observer(0, &psi);
        for k in 1..=steps {
            let s = self.step(&psi, drivers.next(dt), dt).map_err(|e| at_step(e, k))?;
            diag.max_norm_drift = diag.max_norm_drift.max(s.norm_drift);
            psi = s.state;
            observer(k, &psi);
        }
        Ok(diag)
    }

    pub fn simulate_path(&self, psi0: &PureState, config: &SdeConfig, path: usize) -> Result<PureRecord> {
        let steps = config.steps()?;
        let mut drivers = BrownianDrivers::for_path(config.seed, path);
        let mut rec = PureRecord::with_capacity(config.dt, steps);
        rec.diagnostics = self.run_path(psi0, config.dt, steps, &mut drivers, |_, psi| rec.push(psi, 0, 0))?;
        Ok(rec)
    }

    pub fn ensemble(&self, psi0: &PureState, config: &SdeConfig, paths: usize, checkpoints: &Checkpoints) -> Result<EnsembleSummary> {
        check_checkpoints(checkpoints, config.steps()?)?;
        let per_path = ensemble::run_paths(paths, |i| {
            let mut drivers = BrownianDrivers::for_path(config.seed, i);
            let mut rec = CheckpointRecorder::new(checkpoints);
            let diag = self.run_path(psi0, config.dt, checkpoints.last_step(), &mut drivers, |k, psi| {
                rec.observe(k, &psi.projector_matrix(), 0, 0)
            })?;
            Ok(PathSummary {
                row: rec.finish(),
                max_repair: diag.max_norm_drift,
                suppressed_jumps: 0,
            })
        })?;
        Ok(EnsembleSummary::from_paths(config.seed, checkpoints, &per_path))
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::ImpossibleOutcome { norm } => Error::Divergence {
            path: None,
            step,
            detail: format!("state vector collapsed to norm {norm:e}"),
        },
        other => other,
    }
}

/// Matching density scheme for coupled comparisons.
pub const COUPLED_SCHEME: SdeScheme = SdeScheme::Kraus;

/// Pointwise mean of projectors with per-entry standard errors
/// (real and imaginary parts separately).
#[derive(Clone, Debug)]
pub struct MeanPath {
    pub mean: Vec<ComplexMatrix>,
    pub stderr: Vec<ComplexMatrix>,
}

/// Average `|ψ_t⟩⟨ψ_t|` over equally long paths.
pub fn mc_wavefunction_mean(paths: &[Vec<PureState>]) -> Result<MeanPath> {
    if paths.len() < 2 {
        return Err(Error::invalid("averaging needs at least two paths"));
    }
    let len = paths[0].len();
    let dim = paths[0].first().map_or(0, PureState::dim);
    if len == 0 || paths.iter().any(|p| p.len() != len || p.iter().any(|s| s.dim() != dim)) {
        return Err(Error::invalid("paths must be non-empty and share length and dimension"));
    }
    let width = 2 * dim * dim;
    let rows: Vec<Vec<f64>> = paths
        .iter()
        .map(|path| {
            let mut row = Vec::with_capacity(len * width);
            for psi in path {
                for z in psi.projector_matrix().entries() {
                    row.push(z.re);
                    row.push(z.im);
                }
            }
            row
        })
        .collect();
    let stats = column_stats(&rows);
    let collect = |k: usize, f: fn(&ensemble::SampleStats) -> f64| {
        let cells = &stats[k * width..(k + 1) * width];
        ComplexMatrix::from_row_major(dim, cells.chunks(2).map(|c| C64::new(f(&c[0]), f(&c[1]))).collect())
            .expect("square layout")
    };
    Ok(MeanPath {
        mean: (0..len).map(|k| collect(k, |s| s.mean)).collect(),
        stderr: (0..len).map(|k| collect(k, |s| s.stderr)).collect(),
    })
}

/// A stored pure-state path.
#[derive(Clone, Debug, Default)]
pub struct PureRecord {
    pub dt: f64,
    pub states: Vec<PureState>,
    pub n1: Vec<u64>,
    pub n2: Vec<u64>,
    pub diagnostics: PureDiagnostics,
}

impl PureRecord {
    fn with_capacity(dt: f64, steps: usize) -> Self {
        PureRecord {
            dt,
            states: Vec::with_capacity(steps + 1),
            n1: Vec::with_capacity(steps + 1),
            n2: Vec::with_capacity(steps + 1),
            ..Default::default()
        }
    }

    fn push(&mut self, psi: &PureState, n1: u64, n2: u64) {
        self.states.push(psi.clone());
        self.n1.push(n1);
        self.n2.push(n2);
    }

    /// Columns `step, t, psi0_re, psi0_im, psi1_re, psi1_im, N1, N2`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "t", "psi0_re", "psi0_im", "psi1_re", "psi1_im", "N1", "N2"])?;
        for (k, psi) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string(), (k as f64 * self.dt).to_string()];
            for z in psi.amplitudes() {
                row.push(z.re.to_string());
                row.push(z.im.to_string());
            }
            row.push(self.n1[k].to_string());
            row.push(self.n2[k].to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}
