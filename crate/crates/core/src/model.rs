//! Physical model: system Hamiltonian, coupling, thermal weight, and the
//! exact interaction unitary `U(n) = exp(−i H_tot / n)` split into blocks.
//!
//! The coupling operator of the dipole model is the lowering operator
//! `C = |e0⟩⟨e1|`, so `CρC†/Tr = |e0⟩⟨e0|` is an emission (the system
//! falls to its ground state) and `C†ρC/Tr = |e1⟩⟨e1|` an absorption.
//!
//! Blocks are read off the action of `U` on environment basis vectors,
//! `U (x ⊗ e_b) = Σ_a (L[a][b] x) ⊗ e_a`, never from a displayed layout.

use serde::{Deserialize, Serialize};

use crate::algebra::{herm_expm, ComplexMatrix, C64, I, ONE, STRUCTURE_TOL, ZERO};
use crate::error::{Error, Result};

/// Either an inverse temperature or the ground-state weight directly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemperatureSpec {
    Beta(f64),
    P(f64),
}

/// Weight of the environment ground state in the Gibbs state
/// `e^{−β γ0} / (e^{−β γ0} + e^{−β γ1})`.
pub fn gibbs_p(beta: f64, gamma0: f64, gamma1: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("inverse temperature must be positive, got {beta}")));
    }
    // max-shifted ratio, written in terms of the gap so infinities cancel cleanly
    let x = beta * (gamma1 - gamma0);
    if x.is_nan() {
        return Err(Error::invalid("Gibbs weight is undefined for these energies"));
    }
    Ok(if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub h0: ComplexMatrix,
    pub c: ComplexMatrix,
    pub gamma0: f64,
    pub gamma1: f64,
    pub temperature: TemperatureSpec,
    /// Interactions per unit time; each lasts `1/n`.
    pub n: u64,
}

impl ModelParams {
    pub fn new(
        h0: ComplexMatrix,
        c: ComplexMatrix,
        gamma0: f64,
        gamma1: f64,
        temperature: TemperatureSpec,
        n: u64,
    ) -> Result<Self> {
        let params = ModelParams {
            h0,
            c,
            gamma0,
            gamma1,
            temperature,
            n,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.h0.dim();
        if d < 2 {
            return Err(Error::invalid("system dimension must be at least 2"));
        }
        if self.c.dim() != d {
            return Err(Error::invalid(format!(
                "coupling is {}x{} but the Hamiltonian is {d}x{d}",
                self.c.dim(),
                self.c.dim()
            )));
        }
        let defect = self.h0.hermitian_defect();
        if defect > STRUCTURE_TOL {
            return Err(Error::invalid(format!("h0 is not Hermitian (defect {defect:e})")));
        }
        if !self.h0.is_finite() || !self.c.is_finite() || !self.gamma0.is_finite() || !self.gamma1.is_finite() {
            return Err(Error::invalid("model parameters must be finite"));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        self.p().map(|_| ())
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    /// Resolved ground-state weight of the environment.
    pub fn p(&self) -> Result<f64> {
        match self.temperature {
            TemperatureSpec::Beta(beta) => gibbs_p(beta, self.gamma0, self.gamma1),
            TemperatureSpec::P(p) if (0.0..=1.0).contains(&p) => Ok(p),
            TemperatureSpec::P(p) => Err(Error::invalid(format!("p must lie in [0, 1], got {p}"))),
        }
    }

    pub fn with_n(&self, n: u64) -> Self {
        ModelParams { n, ..self.clone() }
    }

    pub fn with_p(&self, p: f64) -> Self {
        ModelParams {
            temperature: TemperatureSpec::P(p),
            ..self.clone()
        }
    }
}

/// Dipole interaction: `H0 = 0`, `C = |e0⟩⟨e1|`, `γ0 = 0`, `γ1 = 1`.
pub fn dipole_default(p: f64) -> ModelParams {
    ModelParams {
        h0: ComplexMatrix::zeros(2),
        c: lowering(),
        gamma0: 0.0,
        gamma1: 1.0,
        temperature: TemperatureSpec::P(p),
        n: 1,
    }
}

/// `|e0⟩⟨e1|`
pub fn lowering() -> ComplexMatrix {
    ComplexMatrix::unit(2, 0, 1)
}

/// `H_tot = H0⊗I + I⊗diag(γ0,γ1) + √n (C⊗|e1⟩⟨e0| + C†⊗|e0⟩⟨e1|)`
pub fn build_total_hamiltonian(params: &ModelParams) -> ComplexMatrix {
    let d = params.dim();
    let id_e = ComplexMatrix::identity(2);
    let id_h = ComplexMatrix::identity(d);
    let env = ComplexMatrix::real_diag(&[params.gamma0, params.gamma1]);
    let g = (params.n as f64).sqrt();
    let mut h = ComplexMatrix::kron_sys_env(&params.h0, &id_e);
    h += &ComplexMatrix::kron_sys_env(&id_h, &env);
    h += &ComplexMatrix::kron_sys_env(&params.c.scale_real(g), &ComplexMatrix::unit(2, 1, 0));
    h += &ComplexMatrix::kron_sys_env(&params.c.adjoint().scale_real(g), &ComplexMatrix::unit(2, 0, 1));
    h
}

/// The four system blocks of `U(n)`; `l[a][b]` maps environment `e_b` to `e_a`.
#[derive(Clone, Debug)]
pub struct UnitaryBlocks {
    pub l: [[ComplexMatrix; 2]; 2],
    pub n: u64,
}

impl UnitaryBlocks {
    pub fn dim(&self) -> usize {
        self.l[0][0].dim()
    }

    #[inline]
    pub fn block(&self, after: usize, before: usize) -> &ComplexMatrix {
        &self.l[after][before]
    }

    /// Reassemble the full unitary on `H ⊗ E`.
    pub fn assemble(&self) -> ComplexMatrix {
        let d = self.dim();
        let mut u = ComplexMatrix::zeros(2 * d);
        for a in 0..2 {
            for b in 0..2 {
                for s1 in 0..d {
                    for s2 in 0..d {
                        u[(s1 + d * a, s2 + d * b)] = self.l[a][b][(s1, s2)];
                    }
                }
            }
        }
        u
    }

    /// Largest deviation of `Σ_a L[a][b]† L[a][b']` from `δ_{bb'} I`.
    pub fn unitarity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for b in 0..2 {
            for b2 in 0..2 {
                let mut acc = ComplexMatrix::zeros(d);
                for a in 0..2 {
                    acc += &self.l[a][b].adjoint().matmul(&self.l[a][b2]);
                }
                if b == b2 {
                    acc -= &ComplexMatrix::identity(d);
                }
                worst = worst.max(acc.frobenius_norm());
            }
        }
        worst
    }
}

pub fn build_unitary_blocks(params: &ModelParams) -> Result<UnitaryBlocks> {
    params.validate()?;
    let h = build_total_hamiltonian(params);
    let u = herm_expm(&h, 1.0 / params.n as f64)?;
    let d = params.dim();
    let l = [
        [u.env_block(d, 0, 0), u.env_block(d, 0, 1)],
        [u.env_block(d, 1, 0), u.env_block(d, 1, 1)],
    ];
    Ok(UnitaryBlocks { l, n: params.n })
}

/// Two-outcome observable on the environment qubit, `B = α0 Q0 + α1 Q1`
/// with rank-one projectors `Q_j = |ϑ_j⟩⟨ϑ_j|`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    pub eigenvalues: [f64; 2],
    pub q: [ComplexMatrix; 2],
    /// Unit vectors spanning `Q0` and `Q1`.
    pub theta: [[C64; 2]; 2],
}

impl Observable {
    /// `A = α0 |e0⟩⟨e0| + α1 |e1⟩⟨e1|`
    pub fn diagonal(alpha0: f64, alpha1: f64) -> Result<Self> {
        Self::from_vector([ONE, ZERO], [alpha0, alpha1])
    }

    /// Real symmetric observable whose eigenbasis is the computational basis
    /// rotated by `angle`: `ϑ0 = (cos, sin)`, `ϑ1 = (−sin, cos)`.
    pub fn rotated(angle: f64, alpha0: f64, alpha1: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        Self::from_vector([C64::new(c, 0.0), C64::new(s, 0.0)], [alpha0, alpha1])
    }

    /// `σx`, eigenvectors `(e0 ± e1)/√2`.
    pub fn sigma_x() -> Self {
        Self::rotated(std::f64::consts::FRAC_PI_4, 1.0, -1.0).expect("valid observable")
    }

    /// Observable with `ϑ0 ∝ v` and `ϑ1` its orthogonal complement.
    pub fn from_vector(v: [C64; 2], eigenvalues: [f64; 2]) -> Result<Self> {
        let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::invalid("observable eigenvector must be nonzero"));
        }
        if eigenvalues[0] == eigenvalues[1] {
            return Err(Error::invalid("observable eigenvalues must differ"));
        }
        let t0 = [v[0] / norm, v[1] / norm];
        let t1 = [-t0[1].conj(), t0[0].conj()];
        let q = [ComplexMatrix::outer(&t0, &t0), ComplexMatrix::outer(&t1, &t1)];
        Ok(Observable {
            eigenvalues,
            q,
            theta: [t0, t1],
        })
    }

    /// Validate a pair of projectors and recover unit vectors from them.
    pub fn from_projectors(q0: ComplexMatrix, q1: ComplexMatrix, eigenvalues: [f64; 2]) -> Result<Self> {
        for q in [&q0, &q1] {
            if q.dim() != 2 {
                return Err(Error::invalid("environment projectors must be 2x2"));
            }
            if q.hermitian_defect() > STRUCTURE_TOL || q.matmul(q).distance(q) > STRUCTURE_TOL {
                return Err(Error::invalid("Q_j must be an orthogonal projector"));
            }
            if (q.trace().re - 1.0).abs() > STRUCTURE_TOL {
                return Err(Error::invalid("Q_j must have rank one"));
            }
        }
        if (&q0 + &q1).distance(&ComplexMatrix::identity(2)) > STRUCTURE_TOL {
            return Err(Error::invalid("Q0 + Q1 must equal the identity"));
        }
        if eigenvalues[0] == eigenvalues[1] {
            return Err(Error::invalid("observable eigenvalues must differ"));
        }
        let theta = [unit_column(&q0), unit_column(&q1)];
        Ok(Observable { eigenvalues, q: [q0, q1], theta })
    }

    /// Whether the projectors are the computational-basis ones.
    pub fn is_diagonal(&self) -> bool {
        self.q[0][(0, 1)].norm() <= STRUCTURE_TOL && self.q[0][(0, 0)].re > 0.5
    }
}

fn unit_column(q: &ComplexMatrix) -> [C64; 2] {
    let col = if q[(0, 0)].re >= q[(1, 1)].re { 0 } else { 1 };
    let v = [q[(0, col)], q[(1, col)]];
    let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    [v[0] / norm, v[1] / norm]
}

/// `−iC` and `−iC†`, the limits of `√n L[1][0]` and `√n L[0][1]`.
pub fn channel_operators(c: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    (c.scale(-I), c.adjoint().scale(-I))
}

// JSON form: complex matrices are row-major lists of `[re, im]` pairs.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelParamsDoc {
    h0: Vec<[f64; 2]>,
    c: Vec<[f64; 2]>,
    gamma0: f64,
    gamma1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    n: u64,
}

pub(crate) fn matrix_from_pairs(name: &str, pairs: &[[f64; 2]]) -> Result<ComplexMatrix> {
    let d = (pairs.len() as f64).sqrt().round() as usize;
    if d == 0 || d * d != pairs.len() {
        return Err(Error::Config(format!(
            "`{name}` must hold d*d complex entries, got {}",
            pairs.len()
        )));
    }
    ComplexMatrix::from_row_major(d, pairs.iter().map(|[re, im]| C64::new(*re, *im)).collect())
}

pub(crate) fn matrix_to_pairs(m: &ComplexMatrix) -> Vec<[f64; 2]> {
    m.entries().iter().map(|z| [z.re, z.im]).collect()
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (beta, p) = match self.temperature {
            TemperatureSpec::Beta(b) => (Some(b), None),
            TemperatureSpec::P(p) => (None, Some(p)),
        };
        ModelParamsDoc {
            h0: matrix_to_pairs(&self.h0),
            c: matrix_to_pairs(&self.c),
            gamma0: self.gamma0,
            gamma1: self.gamma1,
            beta,
            p,
            n: self.n,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = ModelParamsDoc::deserialize(d)?;
        let temperature = match (doc.beta, doc.p) {
            (Some(b), None) => TemperatureSpec::Beta(b),
            (None, Some(p)) => TemperatureSpec::P(p),
            _ => return Err(D::Error::custom("exactly one of `beta` and `p` must be given")),
        };
        let h0 = matrix_from_pairs("h0", &doc.h0).map_err(D::Error::custom)?;
        let c = matrix_from_pairs("c", &doc.c).map_err(D::Error::custom)?;
        ModelParams::new(h0, c, doc.gamma0, doc.gamma1, temperature, doc.n).map_err(D::Error::custom)
    }
}
