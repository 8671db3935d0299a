//! Generator-level checks of the discrete-to-continuous limit.
//!
//! The discrete generator `𝒜_n f(ρ) = n Σ_b P_b (f(ρ_b) − f(ρ))` is evaluated
//! by exact enumeration of the one-step distribution and compared with the
//! limit generators on a grid of states. Test functions are polynomials of
//! degree at most two in the Bloch coordinates, so their derivatives are
//! exact.

use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{bloch_components, ComplexMatrix, DensityMatrix};
use crate::continuous::LimitModel;
use crate::discrete::{DiscreteChain, MeasurementSetup, SetupKind};
use crate::ensemble::{column_stats, z_score};
use crate::error::{Error, Result};
use crate::model::{build_unitary_blocks, ModelParams};

/// Jump contributions with target trace below this vanish.
const NEGLIGIBLE_TRACE: f64 = 1e-14;

/// `f(r) = c + g·r + rᵀ S r` in Bloch coordinates `r = (x, y, z)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestFunction {
    pub name: String,
    pub constant: f64,
    pub linear: [f64; 3],
    /// Symmetric.
    pub quadratic: [[f64; 3]; 3],
}

impl TestFunction {
    pub fn new(name: impl Into<String>, constant: f64, linear: [f64; 3], quadratic: [[f64; 3]; 3]) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                if quadratic[i][j] != quadratic[j][i] {
                    return Err(Error::invalid("quadratic part must be symmetric"));
                }
            }
        }
        Ok(TestFunction {
            name: name.into(),
            constant,
            linear,
            quadratic,
        })
    }

    pub fn constant(c: f64) -> Self {
        Self::new("const", c, [0.0; 3], [[0.0; 3]; 3]).unwrap()
    }

    pub fn x() -> Self {
        Self::new("x", 0.0, [1.0, 0.0, 0.0], [[0.0; 3]; 3]).unwrap()
    }

    pub fn z() -> Self {
        Self::new("z", 0.0, [0.0, 0.0, 1.0], [[0.0; 3]; 3]).unwrap()
    }

    pub fn z_squared() -> Self {
        let mut s = [[0.0; 3]; 3];
        s[2][2] = 1.0;
        Self::new("z2", 0.0, [0.0; 3], s).unwrap()
    }

    pub fn xz() -> Self {
        let mut s = [[0.0; 3]; 3];
        s[0][2] = 0.5;
        s[2][0] = 0.5;
        Self::new("xz", 0.0, [0.0; 3], s).unwrap()
    }

    /// The functions used by the convergence scans.
    pub fn standard_set() -> Vec<Self> {
        vec![Self::x(), Self::z(), Self::z_squared(), Self::xz()]
    }

    pub fn eval_bloch(&self, r: [f64; 3]) -> f64 {
        let mut v = self.constant;
        for i in 0..3 {
            v += self.linear[i] * r[i];
            for j in 0..3 {
                v += self.quadratic[i][j] * r[i] * r[j];
            }
        }
        v
    }

    pub fn gradient(&self, r: [f64; 3]) -> [f64; 3] {
        let mut g = self.linear;
        for i in 0..3 {
            for j in 0..3 {
                g[i] += 2.0 * self.quadratic[i][j] * r[j];
            }
        }
        g
    }

    pub fn hessian(&self) -> [[f64; 3]; 3] {
        self.quadratic.map(|row| row.map(|s| 2.0 * s))
    }

    pub fn eval(&self, rho: &ComplexMatrix) -> f64 {
        self.eval_bloch(bloch_components(rho))
    }

    /// `D_ρ f(Δ)` for a traceless Hermitian direction `Δ`.
    pub fn derivative(&self, rho: &ComplexMatrix, delta: &ComplexMatrix) -> f64 {
        let g = self.gradient(bloch_components(rho));
        let d = bloch_components(delta);
        (0..3).map(|i| g[i] * d[i]).sum()
    }

    /// `D²_ρ f(Δ, Δ)`
    pub fn second_derivative(&self, delta: &ComplexMatrix) -> f64 {
        let h = self.hessian();
        let d = bloch_components(delta);
        let mut v = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                v += h[i][j] * d[i] * d[j];
            }
        }
        v
    }
}

/// `𝒜_n f(ρ)` by exact enumeration of the one-step law.
pub fn discrete_generator(f: &TestFunction, rho: &DensityMatrix, chain: &DiscreteChain) -> f64 {
    let base = f.eval(rho.matrix());
    let mean: f64 = chain
        .step_distribution(rho)
        .iter()
        .map(|o| o.probability * (f.eval(o.state.matrix()) - base))
        .sum();
    chain.n() as f64 * mean
}

/// Limit generator families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    /// `Df(𝓛(ρ))`
    Deterministic,
    /// Two counting processes. With `weighted = false` the intensities drop
    /// the `p`, `1−p` factors; kept for comparison only.
    Jump { weighted: bool },
    /// `Df(𝓛(ρ)) + ½D²f(𝒬,𝒬) + ½D²f(𝒲,𝒲)`
    DiffusiveTwoNoise,
    /// `Df(𝓛(ρ)) + ½D²f(𝒢,𝒢)`
    DiffusiveOneNoise,
}

impl LimitKind {
    /// The limit the discrete chain converges to for this setup.
    pub fn for_setup(setup: &MeasurementSetup) -> Self {
        let extreme = setup.p == 0.0 || setup.p == 1.0;
        match &setup.kind {
            SetupKind::NoMeasurement | SetupKind::BeforeOnly => LimitKind::Deterministic,
            SetupKind::AfterOnly(b) if b.is_diagonal() && extreme => LimitKind::Jump { weighted: true },
            SetupKind::AfterOnly(b) if b.is_diagonal() => LimitKind::Deterministic,
            SetupKind::AfterOnly(_) => LimitKind::DiffusiveOneNoise,
            SetupKind::BeforeAfter(b) if b.is_diagonal() => LimitKind::Jump { weighted: true },
            SetupKind::BeforeAfter(_) => LimitKind::DiffusiveTwoNoise,
        }
    }
}

fn jump_term(f: &TestFunction, rho: &ComplexMatrix, image: &ComplexMatrix, weight: f64) -> f64 {
    let tr = image.trace().re;
    if tr < NEGLIGIBLE_TRACE || weight == 0.0 {
        return 0.0;
    }
    let target = image.div_real(tr);
    let delta = &target - rho;
    weight * tr * (f.eval(&target) - f.eval(rho) - f.derivative(rho, &delta))
}

/// `𝒜f(ρ)` for the chosen limit.
pub fn limit_generator(f: &TestFunction, rho: &DensityMatrix, kind: LimitKind, model: &LimitModel) -> f64 {
    let m = rho.matrix();
    let drift = f.derivative(m, &model.lindblad_rhs(m));
    match kind {
        LimitKind::Deterministic => drift,
        LimitKind::Jump { weighted } => {
            let p = model.p();
            let (w1, w2) = if weighted { (p, 1.0 - p) } else { (1.0, 1.0) };
            let c = model.coupling();
            drift + jump_term(f, m, &m.sandwich(c), w1) + jump_term(f, m, &m.sandwich(&c.adjoint()), w2)
        }
        LimitKind::DiffusiveTwoNoise => {
            drift
                + 0.5 * f.second_derivative(&model.diffusion_q(m))
                + 0.5 * f.second_derivative(&model.diffusion_w(m))
        }
        LimitKind::DiffusiveOneNoise => drift + 0.5 * f.second_derivative(&model.diffusion_one_noise(m)),
    }
}

/// States on a cubic lattice of the given spacing inside the Bloch ball of
/// radius `radius`.
pub fn bloch_grid(spacing: f64, radius: f64) -> Result<Vec<DensityMatrix>> {
    if !(spacing > 0.0) || !(0.0..=1.0).contains(&radius) {
        return Err(Error::invalid("grid needs positive spacing and radius in [0, 1]"));
    }
    let k = (radius / spacing).floor() as i64;
    let mut states = Vec::new();
    for i in -k..=k {
        for j in -k..=k {
            for l in -k..=k {
                let r = [i as f64 * spacing, j as f64 * spacing, l as f64 * spacing];
                if r.iter().map(|c| c * c).sum::<f64>() <= radius * radius + 1e-12 {
                    states.push(DensityMatrix::from_bloch(r)?);
                }
            }
        }
    }
    Ok(states)
}

/// One row of a residual scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualRow {
    pub n: u64,
    pub sup_residual: f64,
    /// Log-log slope against the previous row.
    pub slope_estimate: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualScan {
    pub function: String,
    pub rows: Vec<ResidualRow>,
    /// Least-squares log-log slope over all rows.
    pub slope: f64,
}

impl ResidualScan {
    pub fn first(&self) -> f64 {
        self.rows.first().map_or(f64::NAN, |r| r.sup_residual)
    }

    pub fn last(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.sup_residual)
    }

    /// Whether each residual is at most `1 + slack` times the previous one.
    pub fn is_decreasing(&self, slack: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].sup_residual <= (1.0 + slack) * w[0].sup_residual)
    }

    /// Columns `n, sup_residual, slope_estimate`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "sup_residual", "slope_estimate"])?;
        for r in &self.rows {
            out.write_record([
                r.n.to_string(),
                r.sup_residual.to_string(),
                r.slope_estimate.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Sup over `grid` of `|𝒜_n f − 𝒜f|` for each `n`, for every function in
/// `functions`. `setup.p` must match the model's `p`.
pub fn generator_residual_scan(
    functions: &[TestFunction],
    grid: &[DensityMatrix],
    setup: &MeasurementSetup,
    params: &ModelParams,
    kind: LimitKind,
    ns: &[u64],
) -> Result<Vec<ResidualScan>> {
    if ns.len() < 2 || grid.is_empty() {
        return Err(Error::invalid("a scan needs at least two n values and a non-empty grid"));
    }
    let model = LimitModel::new(params)?;
    if (model.p() - setup.p).abs() > 1e-15 {
        return Err(Error::invalid(format!(
            "setup p = {} differs from the model's p = {}",
            setup.p,
            model.p()
        )));
    }
    let limits: Vec<Vec<f64>> = functions
        .iter()
        .map(|f| grid.iter().map(|rho| limit_generator(f, rho, kind, &model)).collect())
        .collect();
    // sup[n][f]
    let sups: Vec<Vec<f64>> = ns
        .par_iter()
        .map(|&n| {
            let chain = DiscreteChain::new(setup.clone(), build_unitary_blocks(&params.with_n(n))?)?;
            Ok(functions
                .iter()
                .zip(&limits)
                .map(|(f, lim)| {
                    grid.iter()
                        .zip(lim)
                        .map(|(rho, l)| (discrete_generator(f, rho, &chain) - l).abs())
                        .fold(0.0, f64::max)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    Ok(functions
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let ys: Vec<f64> = sups.iter().map(|row| row[fi]).collect();
            let rows = ns
                .iter()
                .enumerate()
                .map(|(k, &n)| ResidualRow {
                    n,
                    sup_residual: ys[k],
                    slope_estimate: (k > 0).then(|| (ys[k] / ys[k - 1]).ln() / (nf[k] / nf[k - 1]).ln()),
                })
                .collect();
            ResidualScan {
                function: f.name.clone(),
                rows,
                slope: loglog_slope(&nf, &ys),
            }
        })
        .collect())
}

/// Window residuals `f(ρ_{t+s}) − f(ρ_t) − ∫_t^{t+s} 𝒜f(ρ_u)du` of one
/// path, with a left-point rule for the integral. Feed states in step
/// order through [`MartingalePath::observe`].
#[derive(Clone, Debug)]
pub struct MartingalePath<'a, G> {
    f: &'a TestFunction,
    generator: G,
    dt: f64,
    window_steps: usize,
    start_value: f64,
    integral: f64,
    residuals: Vec<f64>,
}

impl<'a, G: Fn(&DensityMatrix) -> f64> MartingalePath<'a, G> {
    pub fn new(f: &'a TestFunction, generator: G, dt: f64, window_steps: usize) -> Self {
        assert!(window_steps > 0, "windows must span at least one step");
        MartingalePath {
            f,
            generator,
            dt,
            window_steps,
            start_value: f64::NAN,
            integral: 0.0,
            residuals: Vec::new(),
        }
    }

    /// State at `step`; steps must arrive as `0, 1, 2, …`.
    pub fn observe(&mut self, step: usize, rho: &DensityMatrix) {
        let value = self.f.eval(rho.matrix());
        if step > 0 && step.is_multiple_of(self.window_steps) {
            self.residuals.push(value - self.start_value - self.integral);
        }
        if step.is_multiple_of(self.window_steps) {
            self.start_value = value;
            self.integral = 0.0;
        }
        self.integral += (self.generator)(rho) * self.dt;
    }

    pub fn finish(self) -> Vec<f64> {
        self.residuals
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WindowResidual {
    pub t_start: f64,
    pub t_end: f64,
    pub mean: f64,
    pub stderr: f64,
    pub z: f64,
}

/// Per-window ensemble z-scores from per-path residual rows.
pub fn martingale_residual(rows: &[Vec<f64>], dt: f64, window_steps: usize) -> Result<Vec<WindowResidual>> {
    if rows.len() < 2 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::invalid("need at least two paths with the same number of windows"));
    }
    let span = window_steps as f64 * dt;
    Ok(column_stats(rows)
        .into_iter()
        .enumerate()
        .map(|(k, s)| WindowResidual {
            t_start: k as f64 * span,
            t_end: (k + 1) as f64 * span,
            mean: s.mean,
            stderr: s.stderr,
            z: z_score(s.mean, s.stderr),
        })
        .collect())
}
