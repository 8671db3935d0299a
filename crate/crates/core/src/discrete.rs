//! Discrete quantum trajectories: the Markov chain of post-measurement
//! states for the four measurement setups.
//!
//! With rank-one projectors `Q_j = |ϑ_j⟩⟨ϑ_j|` every branch map is a
//! weighted sum of Kraus conjugations. For before-index `i` and
//! after-index `j`,
//!
//! ```text
//! G_ij(ρ) = Σ_{k,l} Q_j[l][k] L[k][i] ρ L[l][i]† = K_ij ρ K_ij†,
//! K_ij    = Σ_k conj(ϑ_j[k]) L[k][i].
//! ```
//!
//! [`DiscreteChain`] precomputes these operators and the matching effects
//! `E = Σ w K†K`, so branch probabilities cost one trace each and only the
//! sampled branch is normalized.

use std::io::Write;

use rand::Rng;
use serde::Serialize;
use smallvec::{smallvec, SmallVec};

use crate::algebra::{ComplexMatrix, DensityMatrix, ZERO};
use crate::ensemble::{self, channel, CheckpointRecorder, Checkpoints, EnsembleSummary, PathSummary};
use crate::error::{Error, Result};
use crate::model::{Observable, UnitaryBlocks};

/// Branches below this probability are never sampled or normalized.
pub const NEGLIGIBLE: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub enum SetupKind {
    NoMeasurement,
    BeforeOnly,
    AfterOnly(Observable),
    BeforeAfter(Observable),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSetup {
    pub kind: SetupKind,
    /// Probability that an environment unit arrives in its ground state.
    pub p: f64,
}

impl MeasurementSetup {
    pub fn new(kind: SetupKind, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("p must lie in [0, 1], got {p}")));
        }
        Ok(MeasurementSetup { kind, p })
    }

    pub fn observable(&self) -> Option<&Observable> {
        match &self.kind {
            SetupKind::AfterOnly(b) | SetupKind::BeforeAfter(b) => Some(b),
            _ => None,
        }
    }

    /// Emission and absorption are only identifiable when both
    /// measurements run in the computational basis.
    pub fn classifies_events(&self) -> bool {
        matches!(&self.kind, SetupKind::BeforeAfter(b) if b.is_diagonal())
    }
}

/// Outcome of one interaction: environment index measured before and/or
/// after, `None` where no measurement happens. Ordered lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Label {
    pub before: Option<u8>,
    pub after: Option<u8>,
}

impl Label {
    pub const fn new(before: Option<u8>, after: Option<u8>) -> Self {
        Label { before, after }
    }
}

/// Physical reading of an outcome under a diagonal observable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Event {
    Continuous,
    /// Environment found in `e0` then `e1`: the system lost an excitation.
    Emission,
    /// Environment found in `e1` then `e0`.
    Absorption,
}

impl Event {
    pub fn of(label: Label, classify: bool) -> Self {
        match (classify, label.before, label.after) {
            (true, Some(0), Some(1)) => Event::Emission,
            (true, Some(1), Some(0)) => Event::Absorption,
            _ => Event::Continuous,
        }
    }
}

/// One outcome of the branch decomposition evaluated at a state.
#[derive(Clone, Debug)]
pub struct Branch {
    pub label: Label,
    /// Branch map applied to `ρ`, before any before-outcome weighting.
    pub unnormalized: ComplexMatrix,
    pub probability: f64,
}

/// `(probability, normalized state, label)`
#[derive(Clone, Debug)]
pub struct Outcome {
    pub probability: f64,
    pub state: DensityMatrix,
    pub label: Label,
}

#[derive(Clone, Debug)]
struct BranchOp {
    label: Label,
    /// `(w, K)` pairs; the branch matrix is `Σ w K ρ K†` and already
    /// carries the before-outcome weight.
    kraus: SmallVec<[(f64, ComplexMatrix); 2]>,
    effect: ComplexMatrix,
    /// Weight dividing the branch matrix to recover the map of the setup.
    map_weight: f64,
}

impl BranchOp {
    fn new(label: Label, kraus: SmallVec<[(f64, ComplexMatrix); 2]>, map_weight: f64) -> Self {
        let d = kraus[0].1.dim();
        let mut effect = ComplexMatrix::zeros(d);
        for (w, k) in &kraus {
            effect.axpy_real(*w, &k.adjoint().matmul(k));
        }
        BranchOp {
            label,
            kraus,
            effect: effect.hermitian_part(),
            map_weight,
        }
    }

    #[inline]
    fn probability(&self, rho: &ComplexMatrix) -> f64 {
        ComplexMatrix::trace_product(&self.effect, rho).re
    }

    fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(rho.dim());
        for (w, k) in &self.kraus {
            if *w != 0.0 {
                out.axpy_real(*w, &rho.sandwich(k));
            }
        }
        out
    }
}

/// `K = Σ_k conj(ϑ[k]) L[k][i]`
pub(crate) fn projected_block(blocks: &UnitaryBlocks, theta: &[crate::C64; 2], i: usize) -> ComplexMatrix {
    blocks.l[0][i]
        .scale(theta[0].conj())
        .add_scaled(&blocks.l[1][i], theta[1].conj())
}

/// `G_ij(ρ) = Σ_{k,l} Q[l][k] L[k][i] ρ L[l][i]†` in coefficient form.
pub fn g_map(blocks: &UnitaryBlocks, q: &ComplexMatrix, i: usize, rho: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(rho.dim());
    for k in 0..2 {
        for l in 0..2 {
            let coeff = q[(l, k)];
            if coeff == ZERO {
                continue;
            }
            out += &rho.conjugate_by(&blocks.l[k][i], &blocks.l[l][i]).scale(coeff);
        }
    }
    out
}

/// `R_i(ρ) = Σ_a L[a][i] ρ L[a][i]†`
pub fn r_map(blocks: &UnitaryBlocks, i: usize, rho: &ComplexMatrix) -> ComplexMatrix {
    &rho.sandwich(&blocks.l[0][i]) + &rho.sandwich(&blocks.l[1][i])
}

/// Measurement-free step `L(ρ) = p R_0(ρ) + (1−p) R_1(ρ)`, trace preserving.
pub fn deterministic_master_step(rho: &DensityMatrix, blocks: &UnitaryBlocks, p: f64) -> DensityMatrix {
    let m = r_map(blocks, 0, rho.matrix())
        .scale_real(p)
        .add_scaled(&r_map(blocks, 1, rho.matrix()), crate::C64::new(1.0 - p, 0.0));
    DensityMatrix::from_matrix_unchecked(m.hermitian_part())
}

/// Precomputed one-step kernel of the chain for a fixed setup and `n`.
#[derive(Clone, Debug)]
pub struct DiscreteChain {
    setup: MeasurementSetup,
    blocks: UnitaryBlocks,
    branches: Vec<BranchOp>,
    classify: bool,
}

impl DiscreteChain {
    pub fn new(setup: MeasurementSetup, blocks: UnitaryBlocks) -> Result<Self> {
        let p = setup.p;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("p must lie in [0, 1], got {p}")));
        }
        let weights = [p, 1.0 - p];
        let l = &blocks.l;
        let branches = match &setup.kind {
            SetupKind::NoMeasurement => vec![BranchOp::new(
                Label::default(),
                smallvec![
                    (p, l[0][0].clone()),
                    (p, l[1][0].clone()),
                    (1.0 - p, l[0][1].clone()),
                    (1.0 - p, l[1][1].clone())
                ],
                1.0,
            )],
            SetupKind::BeforeOnly => (0..2)
                .map(|i| {
                    BranchOp::new(
                        Label::new(Some(i as u8), None),
                        smallvec![(weights[i], l[0][i].clone()), (weights[i], l[1][i].clone())],
                        weights[i],
                    )
                })
                .collect(),
            SetupKind::AfterOnly(b) => (0..2)
                .map(|j| {
                    BranchOp::new(
                        Label::new(None, Some(j as u8)),
                        smallvec![
                            (p, projected_block(&blocks, &b.theta[j], 0)),
                            (1.0 - p, projected_block(&blocks, &b.theta[j], 1))
                        ],
                        1.0,
                    )
                })
                .collect(),
            SetupKind::BeforeAfter(b) => {
                let mut v = Vec::with_capacity(4);
                for i in 0..2 {
                    for j in 0..2 {
                        v.push(BranchOp::new(
                            Label::new(Some(i as u8), Some(j as u8)),
                            smallvec![(weights[i], projected_block(&blocks, &b.theta[j], i))],
                            weights[i],
                        ));
                    }
                }
                v
            }
        };
        let classify = setup.classifies_events();
        Ok(DiscreteChain {
            setup,
            blocks,
            branches,
            classify,
        })
    }

    pub fn setup(&self) -> &MeasurementSetup {
        &self.setup
    }

    pub fn blocks(&self) -> &UnitaryBlocks {
        &self.blocks
    }

    pub fn n(&self) -> u64 {
        self.blocks.n
    }

    pub fn p(&self) -> f64 {
        self.setup.p
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.branches.iter().map(|b| b.label)
    }

    /// Full branch decomposition at `rho`.
    pub fn branch_set(&self, rho: &DensityMatrix) -> Vec<Branch> {
        self.branches
            .iter()
            .map(|b| {
                let weighted = b.apply(rho.matrix());
                let probability = weighted.trace().re;
                let unnormalized = if b.map_weight > 0.0 {
                    weighted.scale_real(1.0 / b.map_weight)
                } else {
                    // zero-weight before outcome: evaluate the map directly
                    match (&self.setup.kind, b.label.before, b.label.after) {
                        (SetupKind::BeforeOnly, Some(i), _) => r_map(&self.blocks, i as usize, rho.matrix()),
                        (SetupKind::BeforeAfter(obs), Some(i), Some(j)) => {
                            g_map(&self.blocks, &obs.q[j as usize], i as usize, rho.matrix())
                        }
                        _ => weighted,
                    }
                };
                Branch {
                    label: b.label,
                    unnormalized,
                    probability,
                }
            })
            .collect()
    }

    /// Exact one-step law. Negligible branches keep `rho` as a placeholder.
    pub fn step_distribution(&self, rho: &DensityMatrix) -> Vec<Outcome> {
        self.branches
            .iter()
            .map(|b| {
                let probability = b.probability(rho.matrix());
                let state = if probability < NEGLIGIBLE {
                    rho.clone()
                } else {
                    DensityMatrix::normalized(&b.apply(rho.matrix()))
                };
                Outcome {
                    probability,
                    state,
                    label: b.label,
                }
            })
            .collect()
    }

    /// Branch probabilities in label order.
    pub fn probabilities(&self, rho: &DensityMatrix) -> SmallVec<[f64; 4]> {
        self.branches.iter().map(|b| b.probability(rho.matrix())).collect()
    }

    /// Draw one step by inverse CDF over the lexicographically ordered branches.
    pub fn sample_step<R: Rng + ?Sized>(&self, rho: &DensityMatrix, rng: &mut R) -> (DensityMatrix, Label) {
        let s = self.sample_with_probabilities(rho, rng);
        (s.state, s.label)
    }

    fn sample_with_probabilities<R: Rng + ?Sized>(&self, rho: &DensityMatrix, rng: &mut R) -> Sampled {
        let probs = self.probabilities(rho);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = None;
        for (idx, &pr) in probs.iter().enumerate() {
            if pr < NEGLIGIBLE {
                continue;
            }
            acc += pr;
            chosen = Some(idx);
            if u < acc {
                break;
            }
        }
        let idx = chosen.expect("a state always has a branch of positive probability");
        let b = &self.branches[idx];
        Sampled {
            state: DensityMatrix::normalized(&b.apply(rho.matrix())),
            label: b.label,
            index: idx,
            probs,
        }
    }

    /// Centered noise increments for an outcome given the branch
    /// probabilities at the pre-step state.
    pub fn noise_increments(&self, label: Label, probs: &[f64]) -> NoiseIncrements {
        let p = self.setup.p;
        let mut out = NoiseIncrements::default();
        let before_noise = |out: &mut NoiseIncrements| {
            let var = p * (1.0 - p);
            if var < NEGLIGIBLE {
                out.degenerate = true;
            } else {
                let hit = if label.before == Some(1) { 1.0 } else { 0.0 };
                out.x = (hit - (1.0 - p)) / var.sqrt();
            }
        };
        let centered = |hit: bool, pi: f64, out: &mut NoiseIncrements| -> f64 {
            let var = pi * (1.0 - pi);
            if var < NEGLIGIBLE {
                out.degenerate = true;
                0.0
            } else {
                ((hit as u8 as f64) - pi) / var.sqrt()
            }
        };
        match &self.setup.kind {
            SetupKind::NoMeasurement => {}
            SetupKind::BeforeOnly => before_noise(&mut out),
            SetupKind::AfterOnly(_) => {
                let pi1 = probs[1];
                out.x = centered(label.after == Some(1), pi1, &mut out);
            }
            SetupKind::BeforeAfter(_) => {
                before_noise(&mut out);
                // branch order (0,0), (0,1), (1,0), (1,1)
                out.y0 = centered(label == Label::new(Some(0), Some(1)), probs[1], &mut out);
                out.y1 = centered(label == Label::new(Some(1), Some(0)), probs[2], &mut out);
            }
        }
        out
    }

    /// Run one path, reporting the initial state and every step to `observer`.
    pub fn run_path<R, F>(&self, rho0: &DensityMatrix, steps: usize, rng: &mut R, mut observer: F)
    where
        R: Rng + ?Sized,
        F: FnMut(&StepRecord<'_>),
    {
        let n = self.blocks.n as f64;
        let mut rho = rho0.clone();
        let (mut n1, mut n2) = (0u64, 0u64);
        observer(&StepRecord {
            k: 0,
            t: 0.0,
            state: &rho,
            label: None,
            noise: NoiseIncrements::default(),
            n1,
            n2,
            event: None,
        });
        for k in 1..=steps {
            let s = self.sample_with_probabilities(&rho, rng);
            let noise = self.noise_increments(s.label, &s.probs);
            let event = Event::of(s.label, self.classify);
            match event {
                Event::Emission => n1 += 1,
                Event::Absorption => n2 += 1,
                Event::Continuous => {}
            }
            debug_assert!(s.index < self.branches.len());
            rho = s.state;
            observer(&StepRecord {
                k,
                t: k as f64 / n,
                state: &rho,
                label: Some(s.label),
                noise,
                n1,
                n2,
                event: Some(event),
            });
        }
    }

    /// Run one path and keep everything.
    pub fn simulate_path<R: Rng + ?Sized>(&self, rho0: &DensityMatrix, steps: usize, rng: &mut R) -> Result<TrajectoryRecord> {
        if steps == 0 {
            return Err(Error::invalid("a trajectory needs at least one step"));
        }
        let mut rec = TrajectoryRecord {
            n: self.blocks.n,
            states: Vec::with_capacity(steps + 1),
            outcomes: Vec::with_capacity(steps),
            x: Vec::with_capacity(steps),
            y0: Vec::with_capacity(steps),
            y1: Vec::with_capacity(steps),
            n1: Vec::with_capacity(steps + 1),
            n2: Vec::with_capacity(steps + 1),
            events: Vec::with_capacity(steps),
            degenerate_noise: false,
        };
        self.run_path(rho0, steps, rng, |s| {
            rec.states.push(s.state.clone());
            rec.n1.push(s.n1);
            rec.n2.push(s.n2);
            if let (Some(label), Some(event)) = (s.label, s.event) {
                rec.outcomes.push(label);
                rec.x.push(s.noise.x);
                rec.y0.push(s.noise.y0);
                rec.y1.push(s.noise.y1);
                rec.events.push(event);
                rec.degenerate_noise |= s.noise.degenerate;
            }
        });
        Ok(rec)
    }

    /// Ensemble statistics at `checkpoints` (steps of length `1/n`), one
    /// [`channel::DISCRETE`] stream per path.
    pub fn ensemble(&self, rho0: &DensityMatrix, seed: u64, paths: usize, checkpoints: &Checkpoints) -> Result<EnsembleSummary> {
        if checkpoints.is_empty() {
            return Err(Error::invalid("at least one checkpoint is required"));
        }
        let per_path = ensemble::run_paths(paths, |i| {
            let mut rng = ensemble::path_rng(seed, i, channel::DISCRETE);
            let mut rec = CheckpointRecorder::new(checkpoints);
            self.run_path(rho0, checkpoints.last_step(), &mut rng, |s| {
                rec.observe(s.k, s.state.matrix(), s.n1, s.n2)
            });
            Ok(PathSummary {
                row: rec.finish(),
                ..Default::default()
            })
        })?;
        Ok(EnsembleSummary::from_paths(seed, checkpoints, &per_path))
    }
}

struct Sampled {
    state: DensityMatrix,
    label: Label,
    index: usize,
    probs: SmallVec<[f64; 4]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseIncrements {
    pub x: f64,
    pub y0: f64,
    pub y1: f64,
    /// A variance factor vanished and the affected increment was set to 0.
    pub degenerate: bool,
}

/// What a path reports after each step; `label` and `event` are `None`
/// for the initial state.
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub k: usize,
    pub t: f64,
    pub state: &'a DensityMatrix,
    pub label: Option<Label>,
    pub noise: NoiseIncrements,
    pub n1: u64,
    pub n2: u64,
    pub event: Option<Event>,
}

/// A complete discrete trajectory. `states`, `n1`, `n2` have one entry per
/// time `k/n`, `k = 0..=K`; the per-step vectors have `K` entries.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub n: u64,
    pub states: Vec<DensityMatrix>,
    pub outcomes: Vec<Label>,
    pub x: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub n1: Vec<u64>,
    pub n2: Vec<u64>,
    pub events: Vec<Event>,
    pub degenerate_noise: bool,
}

/// Column names of a qubit density matrix in CSV output.
pub(crate) const DENSITY_COLUMNS: [&str; 8] = [
    "rho00_re", "rho00_im", "rho01_re", "rho01_im", "rho10_re", "rho10_im", "rho11_re", "rho11_im",
];

pub(crate) fn density_fields(rho: &DensityMatrix) -> impl Iterator<Item = String> + '_ {
    let m = rho.matrix();
    assert_eq!(m.dim(), 2, "CSV export is defined for qubits");
    m.entries().iter().flat_map(|z| [z.re.to_string(), z.im.to_string()])
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Event {
    pub fn as_str(self) -> &'static str {
        match self {
            Event::Continuous => "continuous",
            Event::Emission => "emission",
            Event::Absorption => "absorption",
        }
    }
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step", "t"];
        header.extend(DENSITY_COLUMNS);
        header.extend(["outcome_before", "outcome_after", "X", "Y0", "Y1", "N1", "N2", "event"]);
        out.write_record(&header)?;
        for (k, state) in self.states.iter().enumerate() {
            let step = k.checked_sub(1);
            let label = step.map(|s| self.outcomes[s]);
            let mut row = vec![k.to_string(), (k as f64 / self.n as f64).to_string()];
            row.extend(density_fields(state));
            row.extend([
                opt(label.and_then(|l| l.before)),
                opt(label.and_then(|l| l.after)),
                opt(step.map(|s| self.x[s])),
                opt(step.map(|s| self.y0[s])),
                opt(step.map(|s| self.y1[s])),
                self.n1[k].to_string(),
                self.n2[k].to_string(),
                opt(step.map(|s| self.events[s].as_str())),
            ]);
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{partial_trace_env, C64};
    use crate::model::{build_unitary_blocks, dipole_default, lowering, ModelParams, TemperatureSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut impl Rng) -> DensityMatrix {
        let g = ComplexMatrix::from_fn(2, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        DensityMatrix::normalized(&g.matmul(&g.adjoint()))
    }

    fn random_model(rng: &mut impl Rng, n: u64) -> ModelParams {
        let c = ComplexMatrix::from_fn(2, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let h0 = ComplexMatrix::from_fn(2, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .hermitian_part();
        ModelParams::new(h0, c, 0.1, 0.8, TemperatureSpec::P(0.5), n).unwrap()
    }

    fn complex_observable() -> Observable {
        Observable::from_vector([C64::new(0.6, 0.0), C64::new(0.48, 0.64)], [1.0, -1.0]).unwrap()
    }

    fn all_kinds() -> Vec<SetupKind> {
        vec![
            SetupKind::NoMeasurement,
            SetupKind::BeforeOnly,
            SetupKind::AfterOnly(Observable::diagonal(0.0, 1.0).unwrap()),
            SetupKind::AfterOnly(Observable::sigma_x()),
            SetupKind::AfterOnly(complex_observable()),
            SetupKind::BeforeAfter(Observable::diagonal(0.0, 1.0).unwrap()),
            SetupKind::BeforeAfter(Observable::sigma_x()),
            SetupKind::BeforeAfter(complex_observable()),
        ]
    }

    fn chain(kind: SetupKind, p: f64, params: &ModelParams) -> DiscreteChain {
        let blocks = build_unitary_blocks(params).unwrap();
        DiscreteChain::new(MeasurementSetup::new(kind, p).unwrap(), blocks).unwrap()
    }

    /// Joint-space oracle: U (ρ ⊗ |e_i⟩⟨e_i|) U†, project the environment, trace it out.
    fn g_oracle(params: &ModelParams, q: &ComplexMatrix, i: usize, rho: &ComplexMatrix) -> ComplexMatrix {
        let blocks = build_unitary_blocks(params).unwrap();
        let u = blocks.assemble();
        let joint = ComplexMatrix::kron_sys_env(rho, &ComplexMatrix::unit(2, i, i));
        let evolved = joint.sandwich(&u);
        let proj = ComplexMatrix::kron_sys_env(&ComplexMatrix::identity(2), q);
        partial_trace_env(&proj.matmul(&evolved).matmul(&proj), 2, 2).unwrap()
    }

    #[test]
    fn branch_maps_match_partial_trace_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let params = random_model(&mut rng, 50);
            let rho = random_state(&mut rng);
            let blocks = build_unitary_blocks(&params).unwrap();
            for obs in [Observable::sigma_x(), complex_observable(), Observable::diagonal(0.0, 1.0).unwrap()] {
                for i in 0..2 {
                    for j in 0..2 {
                        let oracle = g_oracle(&params, &obs.q[j], i, rho.matrix());
                        let coeff = g_map(&blocks, &obs.q[j], i, rho.matrix());
                        let kraus = rho.matrix().sandwich(&projected_block(&blocks, &obs.theta[j], i));
                        assert!(coeff.max_abs_diff(&oracle) < 1e-14);
                        assert!(kraus.max_abs_diff(&oracle) < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_mean_is_master_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for n in [100, 10_000] {
            let params = random_model(&mut rng, n);
            for kind in all_kinds() {
                for p in [0.0, 0.3, 1.0] {
                    let ch = chain(kind.clone(), p, &params);
                    for _ in 0..10 {
                        let rho = random_state(&mut rng);
                        let dist = ch.step_distribution(&rho);
                        let total: f64 = dist.iter().map(|o| o.probability).sum();
                        assert!((total - 1.0).abs() <= 1e-12);
                        let mut mean = ComplexMatrix::zeros(2);
                        for o in &dist {
                            assert!(o.probability >= -1e-14);
                            mean.axpy_real(o.probability, o.state.matrix());
                        }
                        let master = deterministic_master_step(&rho, ch.blocks(), p);
                        assert!(mean.distance(master.matrix()) <= 1e-12, "{kind:?} p={p}");
                        assert!((master.matrix().trace().re - 1.0).abs() <= 1e-13);
                        assert!(master.min_eigenvalue() >= -1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn branch_set_structure() {
        let params = dipole_default(0.75).with_n(100);
        let rho = DensityMatrix::from_bloch([0.1, 0.2, 0.3]).unwrap();
        let before = chain(SetupKind::BeforeOnly, 1.0, &params).branch_set(&rho);
        assert_eq!(before.len(), 2);
        assert_eq!(before[1].probability, 0.0);
        for b in &before {
            assert!((b.unnormalized.trace().re - 1.0).abs() <= 1e-13);
        }

        let diag = Observable::diagonal(0.0, 1.0).unwrap();
        let ch = chain(SetupKind::BeforeAfter(diag), 0.75, &params);
        let set = ch.branch_set(&rho);
        let l = &ch.blocks().l;
        let expected = [
            0.75 * rho.weight(&l[0][0]),
            0.75 * rho.weight(&l[1][0]),
            0.25 * rho.weight(&l[0][1]),
            0.25 * rho.weight(&l[1][1]),
        ];
        let labels: Vec<_> = set.iter().map(|b| b.label).collect();
        assert_eq!(
            labels,
            vec![
                Label::new(Some(0), Some(0)),
                Label::new(Some(0), Some(1)),
                Label::new(Some(1), Some(0)),
                Label::new(Some(1), Some(1))
            ]
        );
        for (b, e) in set.iter().zip(expected) {
            assert!((b.probability - e).abs() < 1e-15);
        }
    }

    #[test]
    fn ground_state_cannot_emit() {
        let params = dipole_default(0.75).with_n(100);
        let diag = Observable::diagonal(0.0, 1.0).unwrap();
        let ch = chain(SetupKind::BeforeAfter(diag), 0.75, &params);
        let probs = ch.probabilities(&DensityMatrix::basis(2, 0));
        // C|e0⟩ = 0 and the block structure keeps L[1][0]|e0⟩ exactly zero
        assert_eq!(probs[1], 0.0);
    }

    #[test]
    fn emission_probability_matches_intensity() {
        let n = 10_000u64;
        let params = dipole_default(1.0).with_n(n);
        let diag = Observable::diagonal(0.0, 1.0).unwrap();
        let ch = chain(SetupKind::BeforeAfter(diag), 1.0, &params);
        let probs = ch.probabilities(&DensityMatrix::basis(2, 1));
        let first_order = 1.0 / n as f64;
        assert!(((probs[1] - first_order) / first_order).abs() <= 10.0 / n as f64);
    }

    #[test]
    fn lindblad_fixed_point_is_nearly_invariant() {
        let p = 0.75;
        let n = 10_000u64;
        let blocks = build_unitary_blocks(&dipole_default(p).with_n(n)).unwrap();
        let star = DensityMatrix::new(ComplexMatrix::real_diag(&[p, 1.0 - p])).unwrap();
        let next = deterministic_master_step(&star, &blocks, p);
        assert!(next.matrix().distance(star.matrix()) <= 10.0 / (n * n) as f64);
    }

    #[test]
    fn noise_increments_are_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let params = random_model(&mut rng, 100);
        for kind in all_kinds() {
            let ch = chain(kind.clone(), 0.3, &params);
            for _ in 0..10 {
                let rho = random_state(&mut rng);
                let dist = ch.step_distribution(&rho);
                let probs = ch.probabilities(&rho);
                let (mut ex, mut ey0, mut ey1) = (0.0, 0.0, 0.0);
                for o in &dist {
                    let z = ch.noise_increments(o.label, &probs);
                    assert!(!z.degenerate);
                    ex += o.probability * z.x;
                    ey0 += o.probability * z.y0;
                    ey1 += o.probability * z.y1;
                }
                assert!(ex.abs() <= 1e-12 && ey0.abs() <= 1e-12 && ey1.abs() <= 1e-12, "{kind:?}");
            }
        }
    }

    #[test]
    fn degenerate_noise_is_flagged() {
        let params = dipole_default(1.0).with_n(100);
        let ch = chain(SetupKind::BeforeOnly, 1.0, &params);
        let rec = ch
            .simulate_path(&DensityMatrix::basis(2, 0), 5, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert!(rec.degenerate_noise);
        assert!(rec.x.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sampler_frequencies_match_probabilities() {
        let params = dipole_default(0.6).with_n(4);
        let ch = chain(SetupKind::BeforeAfter(Observable::sigma_x()), 0.6, &params);
        let rho = DensityMatrix::from_bloch([0.2, -0.3, 0.5]).unwrap();
        let probs = ch.probabilities(&rho);
        let labels: Vec<Label> = ch.labels().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let (_, label) = ch.sample_step(&rho, &mut rng);
            counts[labels.iter().position(|l| *l == label).unwrap()] += 1;
        }
        for k in 0..4 {
            let freq = counts[k] as f64 / draws as f64;
            let se = (probs[k] * (1.0 - probs[k]) / draws as f64).sqrt();
            assert!((freq - probs[k]).abs() <= 4.0 * se, "branch {k}: {freq} vs {}", probs[k]);
        }
    }

    #[test]
    fn degenerate_distribution_is_deterministic() {
        let params = dipole_default(0.5).with_n(100);
        let ch = chain(SetupKind::NoMeasurement, 0.5, &params);
        let rho = DensityMatrix::from_bloch([0.0, 0.0, 0.4]).unwrap();
        for seed in 0..5 {
            let (state, label) = ch.sample_step(&rho, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(label, Label::default());
            assert!(state.matrix().distance(deterministic_master_step(&rho, ch.blocks(), 0.5).matrix()) < 1e-15);
        }
    }

    #[test]
    fn paths_are_reproducible() {
        let params = dipole_default(0.75).with_n(50);
        let ch = chain(SetupKind::BeforeAfter(Observable::diagonal(0.0, 1.0).unwrap()), 0.75, &params);
        let rho0 = DensityMatrix::maximally_mixed(2);
        let a = ch.simulate_path(&rho0, 200, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = ch.simulate_path(&rho0, 200, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn zero_temperature_never_absorbs() {
        let params = dipole_default(1.0).with_n(20);
        let ch = chain(SetupKind::BeforeAfter(Observable::diagonal(0.0, 1.0).unwrap()), 1.0, &params);
        for seed in 0..20 {
            let rec = ch
                .simulate_path(&DensityMatrix::basis(2, 0), 200, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            assert!(rec.n2.iter().all(|&c| c == 0));
        }
    }

    #[test]
    fn events_land_on_basis_states_and_counters_are_consistent() {
        let params = dipole_default(0.6).with_n(10);
        let ch = chain(SetupKind::BeforeAfter(Observable::diagonal(0.0, 1.0).unwrap()), 0.6, &params);
        let rec = ch
            .simulate_path(&DensityMatrix::from_bloch([0.3, 0.1, 0.0]).unwrap(), 2_000, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        let mut seen = [0, 0];
        for (k, e) in rec.events.iter().enumerate() {
            let state = rec.states[k + 1].matrix();
            let dn1 = rec.n1[k + 1] - rec.n1[k];
            let dn2 = rec.n2[k + 1] - rec.n2[k];
            assert!(dn1 + dn2 <= 1);
            match e {
                Event::Emission => {
                    assert_eq!(state, &ComplexMatrix::unit(2, 0, 0));
                    assert_eq!(dn1, 1);
                    seen[0] += 1;
                }
                Event::Absorption => {
                    assert_eq!(state, &ComplexMatrix::unit(2, 1, 1));
                    assert_eq!(dn2, 1);
                    seen[1] += 1;
                }
                Event::Continuous => assert_eq!(dn1 + dn2, 0),
            }
        }
        assert!(seen[0] > 0 && seen[1] > 0);
    }

    #[test]
    fn csv_layout() {
        let params = dipole_default(0.75).with_n(10);
        let ch = chain(SetupKind::BeforeAfter(Observable::diagonal(0.0, 1.0).unwrap()), 0.75, &params);
        let rec = ch
            .simulate_path(&DensityMatrix::maximally_mixed(2), 3, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,t,rho00_re,rho00_im,rho01_re,rho01_im,rho10_re,rho10_im,rho11_re,rho11_im,\
             outcome_before,outcome_after,X,Y0,Y1,N1,N2,event"
        );
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn lowering_is_the_coupling() {
        assert_eq!(dipole_default(0.5).c, lowering());
    }
}
