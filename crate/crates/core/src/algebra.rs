//! Small dense complex matrices.
//!
//! Everything in this crate works with operators of dimension 2 (the
//! system and each environment unit) or 4 (their tensor product), so the
//! storage keeps up to four entries inline and only spills to the heap for
//! the joint operators that are built once per model.
//!
//! Tensor ordering on `H ⊗ E` is fixed throughout: the system index runs
//! fastest, so basis vector `e_s ⊗ e_k` sits at position `s + dim_h * k`.
//! For two qubits this is `{e0⊗e0, e1⊗e0, e0⊗e1, e1⊗e1}`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Tolerance for structural identities (hermiticity, unit trace).
pub const STRUCTURE_TOL: f64 = 1e-12;
/// Most negative eigenvalue still accepted as a valid state.
pub const POSITIVITY_TOL: f64 = 1e-10;

type Storage = SmallVec<[C64; 4]>;

/// Square complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Storage,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{}) [", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  ")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "matrix dimension must be positive");
        ComplexMatrix {
            dim,
            data: SmallVec::from_elem(ZERO, dim * dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn from_row_major(dim: usize, entries: Vec<C64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("matrix dimension must be positive"));
        }
        if entries.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Ok(ComplexMatrix {
            dim,
            data: SmallVec::from_vec(entries),
        })
    }

    /// Build from real row-major entries.
    pub fn from_real(dim: usize, entries: &[f64]) -> Result<Self> {
        Self::from_row_major(dim, entries.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = f(i, j);
            }
        }
        m
    }

    pub fn diag(values: &[C64]) -> Self {
        let dim = values.len();
        let mut m = Self::zeros(dim);
        for (i, v) in values.iter().enumerate() {
            m.data[i * dim + i] = *v;
        }
        m
    }

    pub fn real_diag(values: &[f64]) -> Self {
        let v: Vec<C64> = values.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::diag(&v)
    }

    /// `|u⟩⟨v|`
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        assert_eq!(u.len(), v.len());
        Self::from_fn(u.len(), |i, j| u[i] * v[j].conj())
    }

    /// `|e_a⟩⟨e_b|` in dimension `dim`.
    pub fn unit(dim: usize, a: usize, b: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(a, b)] = ONE;
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        Self::from_fn(d, |i, j| self.data[j * d + i].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖M − M†‖_F`
    pub fn hermitian_defect(&self) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += (self.data[i * d + j] - self.data[j * d + i].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// `(M + M†) / 2`; the diagonal of the result is exactly real.
    pub fn hermitian_part(&self) -> Self {
        let d = self.dim;
        Self::from_fn(d, |i, j| {
            if i == j {
                C64::new(self.data[i * d + i].re, 0.0)
            } else {
                (self.data[i * d + j] + self.data[j * d + i].conj()) * 0.5
            }
        })
    }

    pub fn scale(&self, s: C64) -> Self {
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// Entrywise division; exact where a plain reciprocal scaling is not.
    pub fn div_real(&self, s: f64) -> Self {
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().map(|z| z / s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// `self + s * other`
    pub fn add_scaled(&self, other: &Self, s: C64) -> Self {
        self.check_same(other);
        ComplexMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b * s)
                .collect(),
        }
    }

    pub fn axpy_real(&mut self, s: f64, other: &Self) {
        self.check_same(other);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * s;
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        self.check_same(other);
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        out
    }

    /// `A · self · B†`
    pub fn conjugate_by(&self, a: &Self, b: &Self) -> Self {
        a.matmul(self).matmul(&b.adjoint())
    }

    /// `A · self · A†`
    pub fn sandwich(&self, a: &Self) -> Self {
        self.conjugate_by(a, a)
    }

    /// `[A, B] = AB − BA`
    pub fn commutator(a: &Self, b: &Self) -> Self {
        &a.matmul(b) - &b.matmul(a)
    }

    /// `{A, B} = AB + BA`
    pub fn anticommutator(a: &Self, b: &Self) -> Self {
        &a.matmul(b) + &b.matmul(a)
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.dim, "vector length mismatch");
        let d = self.dim;
        (0..d)
            .map(|i| (0..d).map(|j| self.data[i * d + j] * v[j]).sum())
            .collect()
    }

    /// `Tr[A B]` without forming the product.
    pub fn trace_product(a: &Self, b: &Self) -> C64 {
        a.check_same(b);
        let d = a.dim;
        let mut acc = ZERO;
        for i in 0..d {
            for k in 0..d {
                acc += a.data[i * d + k] * b.data[k * d + i];
            }
        }
        acc
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.check_same(other);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (self - other).frobenius_norm()
    }

    /// Kronecker product `sys ⊗ env` in the system-fast ordering.
    pub fn kron_sys_env(sys: &Self, env: &Self) -> Self {
        let (ds, de) = (sys.dim, env.dim);
        let d = ds * de;
        let mut out = Self::zeros(d);
        for e1 in 0..de {
            for e2 in 0..de {
                let w = env[(e1, e2)];
                if w == ZERO {
                    continue;
                }
                for s1 in 0..ds {
                    for s2 in 0..ds {
                        out[(s1 + ds * e1, s2 + ds * e2)] = sys[(s1, s2)] * w;
                    }
                }
            }
        }
        out
    }

    /// The system operator `⟨e_a| M |e_b⟩_E` acting on `H`.
    pub fn env_block(&self, dim_h: usize, a: usize, b: usize) -> Self {
        Self::from_fn(dim_h, |s1, s2| self[(s1 + dim_h * a, s2 + dim_h * b)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn check_same(&self, other: &Self) {
        assert_eq!(self.dim, other.dim, "matrix dimension mismatch");
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.add_scaled(rhs, ONE)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.add_scaled(rhs, -ONE)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        self.check_same(rhs);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

impl SubAssign<&ComplexMatrix> for ComplexMatrix {
    fn sub_assign(&mut self, rhs: &ComplexMatrix) {
        self.check_same(rhs);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

impl Mul<C64> for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: C64) -> ComplexMatrix {
        self.scale(rhs)
    }
}

impl Mul<f64> for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: f64) -> ComplexMatrix {
        self.scale_real(rhs)
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

/// Eigen-decomposition `M = V diag(values) V†` of a Hermitian matrix,
/// eigenvalues in ascending order.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    pub fn reconstruct(&self, f: impl Fn(f64) -> C64) -> ComplexMatrix {
        let d = self.vectors.dim();
        let v = &self.vectors;
        let w: Vec<C64> = self.values.iter().map(|&x| f(x)).collect();
        let mut out = ComplexMatrix::zeros(d);
        for k in 0..d {
            if w[k] == ZERO {
                continue;
            }
            for i in 0..d {
                let vik = v[(i, k)];
                if vik == ZERO {
                    continue;
                }
                let a = vik * w[k];
                for j in 0..d {
                    out[(i, j)] += a * v[(j, k)].conj();
                }
            }
        }
        out
    }
}

/// Cyclic complex Jacobi. Rotations only touch index pairs with a nonzero
/// coupling, so exact zeros of a block-structured input stay exact zeros
/// in the eigenvectors.
pub fn hermitian_eigen(m: &ComplexMatrix) -> Result<HermitianEigen> {
    let scale = m.frobenius_norm().max(1.0);
    if m.hermitian_defect() > 1e-10 * scale {
        return Err(Error::invalid(format!(
            "matrix is not Hermitian (defect {:e})",
            m.hermitian_defect()
        )));
    }
    let d = m.dim();
    let mut a = m.hermitian_part();
    let mut v = ComplexMatrix::identity(d);

    for _sweep in 0..64 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-17 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                if mag < 1e-300 {
                    a[(p, q)] = ZERO;
                    a[(q, p)] = ZERO;
                    continue;
                }
                let phase = apq / mag; // e^{iφ}
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // J = E·P with E = diag(.., e^{-iφ} at q) and the real rotation P.
                let jqp = -phase.conj() * s;
                let jqq = phase.conj() * c;
                // A ← A J
                for k in 0..d {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c + akq * jqp;
                    a[(k, q)] = akp * s + akq * jqq;
                }
                // A ← J† A
                for k in 0..d {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c + aqk * jqp.conj();
                    a[(q, k)] = apk * s + aqk * jqq.conj();
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
                // V ← V J
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c + vkq * jqp;
                    v[(k, q)] = vkp * s + vkq * jqq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| a[(x, x)].re.total_cmp(&a[(y, y)].re));
    let values = order.iter().map(|&k| a[(k, k)].re).collect();
    let vectors = ComplexMatrix::from_fn(d, |i, j| v[(i, order[j])]);
    Ok(HermitianEigen { values, vectors })
}

/// Eigenvalues of a Hermitian matrix, ascending. Closed form for 2×2.
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Result<Vec<f64>> {
    if m.dim() == 2 {
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = (m[(0, 1)] + m[(1, 0)].conj()) * 0.5;
        let mean = 0.5 * (a + d);
        let half = 0.5 * (a - d);
        let r = (half * half + b.norm_sqr()).sqrt();
        return Ok(vec![mean - r, mean + r]);
    }
    Ok(hermitian_eigen(m)?.values)
}

/// `exp(−i t H)` for Hermitian `H` via eigendecomposition.
pub fn herm_expm(h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    if h.hermitian_defect() > 1e-10 {
        return Err(Error::invalid(format!(
            "herm_expm needs a Hermitian generator (defect {:e})",
            h.hermitian_defect()
        )));
    }
    let eig = hermitian_eigen(h)?;
    Ok(eig.reconstruct(|lambda| C64::from_polar(1.0, -t * lambda)))
}

/// Partial trace over the environment factor of an operator on `H ⊗ E`:
/// `N_{ij} = Σ_k M_{(i,k),(j,k)}`.
pub fn partial_trace_env(m: &ComplexMatrix, dim_h: usize, dim_e: usize) -> Result<ComplexMatrix> {
    if dim_h == 0 || dim_e == 0 || m.dim() != dim_h * dim_e {
        return Err(Error::invalid(format!(
            "cannot trace a {}x{} operator over {dim_h}x{dim_e} factors",
            m.dim(),
            m.dim()
        )));
    }
    let mut out = ComplexMatrix::zeros(dim_h);
    for k in 0..dim_e {
        for i in 0..dim_h {
            for j in 0..dim_h {
                out[(i, j)] += m[(i + dim_h * k, j + dim_h * k)];
            }
        }
    }
    Ok(out)
}

/// Pauli matrices `σx, σy, σz`.
pub fn paulis() -> [ComplexMatrix; 3] {
    [
        ComplexMatrix::from_row_major(2, vec![ZERO, ONE, ONE, ZERO]).unwrap(),
        ComplexMatrix::from_row_major(2, vec![ZERO, -I, I, ZERO]).unwrap(),
        ComplexMatrix::real_diag(&[1.0, -1.0]),
    ]
}

/// Bloch components `(Tr[Mσx], Tr[Mσy], Tr[Mσz])` of a 2×2 matrix (real
/// parts; exact for Hermitian input). Linear in `M`.
#[inline]
pub fn bloch_components(m: &ComplexMatrix) -> [f64; 3] {
    assert_eq!(m.dim(), 2, "Bloch coordinates need a 2x2 matrix");
    let b = m[(0, 1)];
    let c = m[(1, 0)];
    [
        b.re + c.re,
        // Tr[Mσy] = i(M01 − M10)
        (I * (b - c)).re,
        m[(0, 0)].re - m[(1, 1)].re,
    ]
}

/// Positive, Hermitian, unit-trace matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    /// Validate a candidate state against the structural tolerances.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        let herm = m.hermitian_defect();
        if herm > STRUCTURE_TOL {
            return Err(Error::invalid(format!("state is not Hermitian (defect {herm:e})")));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > STRUCTURE_TOL {
            return Err(Error::invalid(format!("state trace {tr} is not 1")));
        }
        let min = hermitian_eigenvalues(&m)?[0];
        if min < -POSITIVITY_TOL {
            return Err(Error::invalid(format!("state has negative eigenvalue {min:e}")));
        }
        Ok(DensityMatrix(m))
    }

    /// Hermitize and divide by the (real) trace. Callers guarantee positivity.
    pub(crate) fn normalized(m: &ComplexMatrix) -> Self {
        let h = m.hermitian_part();
        let tr = h.trace().re;
        DensityMatrix(h.div_real(tr))
    }

    pub(crate) fn from_matrix_unchecked(m: ComplexMatrix) -> Self {
        DensityMatrix(m)
    }

    /// `|e_k⟩⟨e_k|`
    pub fn basis(dim: usize, k: usize) -> Self {
        DensityMatrix(ComplexMatrix::unit(dim, k, k))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix(ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64))
    }

    /// Qubit state `(I + xσx + yσy + zσz)/2`; requires `x²+y²+z² ≤ 1`.
    pub fn from_bloch(v: [f64; 3]) -> Result<Self> {
        let r2 = v.iter().map(|c| c * c).sum::<f64>();
        if r2 > 1.0 + 1e-12 {
            return Err(Error::invalid(format!("Bloch vector of length {} is outside the ball", r2.sqrt())));
        }
        let [x, y, z] = v;
        let m = ComplexMatrix::from_row_major(
            2,
            vec![
                C64::new(0.5 * (1.0 + z), 0.0),
                C64::new(0.5 * x, -0.5 * y),
                C64::new(0.5 * x, 0.5 * y),
                C64::new(0.5 * (1.0 - z), 0.0),
            ],
        )?;
        Ok(DensityMatrix(m))
    }

    /// Bloch vector of a qubit state. Panics for `dim != 2`.
    pub fn bloch(&self) -> [f64; 3] {
        bloch_components(&self.0)
    }

    #[inline]
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn purity(&self) -> f64 {
        ComplexMatrix::trace_product(&self.0, &self.0).re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.0).map(|v| v[0]).unwrap_or(f64::NAN)
    }

    /// `Tr[A ρ A†]`
    pub fn weight(&self, a: &ComplexMatrix) -> f64 {
        self.0.sandwich(a).trace().re
    }
}

/// Result of [`project_to_state`].
#[derive(Clone, Debug)]
pub struct Repaired {
    pub state: DensityMatrix,
    /// Frobenius distance between the input and the returned state.
    pub magnitude: f64,
}

/// Map an approximately valid matrix to the nearest-by-construction state:
/// Hermitian part, negative eigenvalues clipped at zero, trace renormalized.
/// `step` only labels the divergence error.
pub fn project_to_state(m: &ComplexMatrix, step: usize) -> Result<Repaired> {
    let herm = m.hermitian_defect();
    let tr = m.trace();
    if !m.is_finite() || herm > 0.1 || (tr - ONE).norm() > 0.1 {
        return Err(Error::Divergence {
            path: None,
            step,
            detail: format!("hermitian defect {herm:.3e}, trace {tr:.6}"),
        });
    }
    let h = m.hermitian_part();
    let values = hermitian_eigenvalues(&h)?;
    let projected = if values[0] >= 0.0 {
        let t = h.trace().re;
        if t == 1.0 {
            h
        } else {
            h.div_real(t)
        }
    } else {
        let eig = hermitian_eigen(&h)?;
        let total: f64 = eig.values.iter().map(|&v| v.max(0.0)).sum();
        let mut r = eig.reconstruct(|v| C64::new(v.max(0.0) / total, 0.0));
        r = r.hermitian_part();
        r
    };
    let magnitude = m.distance(&projected);
    Ok(Repaired {
        state: DensityMatrix(projected),
        magnitude,
    })
}
