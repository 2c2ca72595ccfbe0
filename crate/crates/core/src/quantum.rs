//! Dense operators and states on the truncated qubit ⊗ Fock space.
//!
//! Basis convention used everywhere in the crate: the qubit index is the slow
//! one, so the composite index is `s * n_cutoff + n` with `s = 0` for ↓ and
//! `s = 1` for ↑.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Upper bound on operator dimension accepted by [`kron`].
pub const MAX_OPERATOR_DIM: usize = 1 << 14;

/// Numerical tolerances for the state and operator invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub hermitian: f64,
    pub trace: f64,
    pub density_hermitian: f64,
    pub positivity: f64,
    pub pure_norm: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermitian: 1e-12,
            trace: 1e-8,
            density_hermitian: 1e-10,
            positivity: 1e-8,
            pure_norm: 1e-10,
        }
    }
}

/// A dense square complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    mat: DMatrix<C64>,
}

impl Operator {
    pub fn from_matrix(mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                found: mat.ncols(),
            });
        }
        if mat.nrows() == 0 {
            return Err(invalid("operator dimension must be positive"));
        }
        Ok(Self { mat })
    }

    /// Build from row-major entries.
    pub fn from_row_major(dim: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Self::from_matrix(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    /// Diagonal operator from real entries.
    pub fn diagonal(values: &[f64]) -> Self {
        let d = DVector::from_iterator(values.len(), values.iter().map(|&v| C64::new(v, 0.0)));
        Self {
            mat: DMatrix::from_diagonal(&d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.mat[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self {
            mat: self.mat.adjoint(),
        }
    }

    /// Largest elementwise |A − A†|.
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.mat[(i, j)] - self.mat[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_residual() < tol
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            mat: &self.mat * factor,
        }
    }

    pub fn add(&self, other: &Operator) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self {
            mat: &self.mat + &other.mat,
        })
    }

    pub fn sub(&self, other: &Operator) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self {
            mat: &self.mat - &other.mat,
        })
    }

    pub fn mul(&self, other: &Operator) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self {
            mat: &self.mat * &other.mat,
        })
    }

    pub fn apply(&self, v: &DVector<C64>) -> Result<DVector<C64>> {
        check_dims(self.dim(), v.len())?;
        Ok(&self.mat * v)
    }

    /// Largest elementwise absolute difference.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        self.mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// JSON debug form: `{"dim": d, "data": [re, im, re, im, ...]}`, row-major.
    pub fn to_json_debug(&self) -> OperatorJson {
        let d = self.dim();
        let mut data = Vec::with_capacity(2 * d * d);
        for i in 0..d {
            for j in 0..d {
                let z = self.mat[(i, j)];
                data.push(z.re);
                data.push(z.im);
            }
        }
        OperatorJson { dim: d, data }
    }

    pub fn from_json_debug(json: &OperatorJson) -> Result<Self> {
        let d = json.dim;
        if json.data.len() != 2 * d * d {
            return Err(Error::Format(format!(
                "operator payload has {} reals, expected {}",
                json.data.len(),
                2 * d * d
            )));
        }
        let entries: Vec<C64> = json
            .data
            .chunks_exact(2)
            .map(|p| C64::new(p[0], p[1]))
            .collect();
        Self::from_row_major(d, &entries)
    }
}

/// Serialized operator, see [`Operator::to_json_debug`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorJson {
    pub dim: usize,
    pub data: Vec<f64>,
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// Cavity annihilation operator truncated at `n_cutoff` Fock levels.
pub fn annihilation(n_cutoff: usize) -> Result<Operator> {
    if n_cutoff < 2 {
        return Err(invalid(format!("Fock cutoff must be >= 2, got {n_cutoff}")));
    }
    let mut m = DMatrix::zeros(n_cutoff, n_cutoff);
    for n in 1..n_cutoff {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Operator::from_matrix(m)
}

pub fn sigma_x() -> Operator {
    Operator::from_row_major(2, &[ZERO, ONE, ONE, ZERO]).expect("2x2")
}

/// σz in the (↓, ↑) ordering: diag(−1, +1).
pub fn sigma_z() -> Operator {
    Operator::diagonal(&[-1.0, 1.0])
}

/// Tensor product `a ⊗ b`; `a` indexes the slow factor.
pub fn kron(a: &Operator, b: &Operator) -> Result<Operator> {
    let dim = a
        .dim()
        .checked_mul(b.dim())
        .filter(|&d| d <= MAX_OPERATOR_DIM)
        .ok_or_else(|| {
            Error::DimensionOverflow(format!("{} x {} exceeds {MAX_OPERATOR_DIM}", a.dim(), b.dim()))
        })?;
    let m = a.mat.kronecker(&b.mat);
    debug_assert_eq!(m.nrows(), dim);
    Operator::from_matrix(m)
}

/// Anything an operator expectation can be taken in.
pub trait QuantumState {
    fn dim(&self) -> usize;

    /// tr(Aρ) for mixed states, ⟨ψ|A|ψ⟩/⟨ψ|ψ⟩ for pure ones.
    fn expectation(&self, a: &Operator) -> Result<C64>;
}

/// Free-function form of [`QuantumState::expectation`].
pub fn expectation<S: QuantumState + ?Sized>(state: &S, a: &Operator) -> Result<C64> {
    state.expectation(a)
}

/// State vector. Unnormalized vectors carry the trajectory probability in
/// their squared norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: DVector<C64>,
    normalized: bool,
}

impl PureState {
    /// Normalizes the given amplitudes.
    pub fn new(amplitudes: DVector<C64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(invalid("state vector has zero or non-finite norm"));
        }
        Ok(Self {
            amplitudes: amplitudes / C64::new(norm, 0.0),
            normalized: true,
        })
    }

    pub fn unnormalized(amplitudes: DVector<C64>) -> Self {
        Self {
            amplitudes,
            normalized: false,
        }
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(invalid(format!("basis index {index} out of range for dim {dim}")));
        }
        let mut v = DVector::zeros(dim);
        v[index] = ONE;
        Ok(Self {
            amplitudes: v,
            normalized: true,
        })
    }

    /// Fock state |n⟩ with the qubit in `qubit` (0 = ↓, 1 = ↑).
    pub fn fock(n_cutoff: usize, qubit: usize, n: usize) -> Result<Self> {
        if qubit > 1 || n >= n_cutoff {
            return Err(invalid(format!("no basis state (s={qubit}, n={n}) at n_cutoff={n_cutoff}")));
        }
        Self::basis(2 * n_cutoff, qubit * n_cutoff + n)
    }

    /// Cavity vacuum with the qubit down: the default initial state.
    pub fn vacuum_down(n_cutoff: usize) -> Result<Self> {
        Self::fock(n_cutoff, 0, 0)
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    pub fn check(&self, tol: &Tolerances) -> Result<()> {
        if self.normalized && (self.amplitudes.norm() - 1.0).abs() >= tol.pure_norm {
            return Err(invalid("normalized state drifted from unit norm"));
        }
        Ok(())
    }

    pub fn to_density(&self) -> DensityMatrix {
        let v = &self.amplitudes / C64::new(self.amplitudes.norm(), 0.0);
        let m = &v * v.adjoint();
        DensityMatrix::from_operator_unchecked(Operator { mat: m })
    }
}

impl QuantumState for PureState {
    fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    fn expectation(&self, a: &Operator) -> Result<C64> {
        check_dims(a.dim(), self.dim())?;
        let av = &a.mat * &self.amplitudes;
        let num = self.amplitudes.dotc(&av);
        Ok(num / self.amplitudes.norm_squared())
    }
}

/// Density matrix with a trace tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    op: Operator,
    trace_tol: f64,
    normalized: bool,
}

impl DensityMatrix {
    /// Validates trace and Hermiticity against default tolerances.
    pub fn new(op: Operator) -> Result<Self> {
        Self::with_tolerances(op, &Tolerances::default())
    }

    pub fn with_tolerances(op: Operator, tol: &Tolerances) -> Result<Self> {
        let tr = op.trace();
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.trace {
            return Err(invalid(format!("density matrix trace {tr} differs from 1")));
        }
        let herm = op.hermiticity_residual();
        if herm > tol.density_hermitian {
            return Err(invalid(format!("density matrix not Hermitian (residual {herm:.2e})")));
        }
        Ok(Self {
            op,
            trace_tol: tol.trace,
            normalized: true,
        })
    }

    /// Unnormalized density operator (conditional states, regression inputs).
    pub fn unnormalized(op: Operator) -> Self {
        Self {
            op,
            trace_tol: Tolerances::default().trace,
            normalized: false,
        }
    }

    pub(crate) fn from_operator_unchecked(op: Operator) -> Self {
        Self {
            op,
            trace_tol: Tolerances::default().trace,
            normalized: true,
        }
    }

    /// Maximally mixed state of the given dimension.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self::from_operator_unchecked(Operator::identity(dim).scale(C64::new(1.0 / dim as f64, 0.0)))
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.op.mat
    }

    pub fn trace_tol(&self) -> f64 {
        self.trace_tol
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn trace(&self) -> C64 {
        self.op.trace()
    }

    pub fn purity(&self) -> f64 {
        let m = &self.op.mat;
        m.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = &self.op.mat;
        let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Trace distance ½‖ρ − σ‖₁.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        check_dims(self.op.dim(), other.op.dim())?;
        let d = &self.op.mat - &other.op.mat;
        let h = (&d + d.adjoint()) * C64::new(0.5, 0.0);
        Ok(0.5 * h.symmetric_eigenvalues().iter().map(|x| x.abs()).sum::<f64>())
    }

    /// Total population in Fock levels `n >= from` (both qubit states).
    pub fn fock_tail(&self, n_cutoff: usize, from: usize) -> f64 {
        let m = &self.op.mat;
        let mut tail = 0.0;
        for s in 0..2 {
            for n in from..n_cutoff {
                let i = s * n_cutoff + n;
                if i < m.nrows() {
                    tail += m[(i, i)].re;
                }
            }
        }
        tail
    }

    /// Population in the top 10% of Fock levels.
    pub fn top_decile_population(&self, n_cutoff: usize) -> f64 {
        let width = ((n_cutoff as f64) * 0.1).ceil() as usize;
        self.fock_tail(n_cutoff, n_cutoff - width.max(1))
    }
}

impl QuantumState for DensityMatrix {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn expectation(&self, a: &Operator) -> Result<C64> {
        check_dims(a.dim(), self.op.dim())?;
        // tr(Aρ) = Σ_ij A_ij ρ_ji
        let (am, rm) = (&a.mat, &self.op.mat);
        let n = am.nrows();
        let mut acc = ZERO;
        for i in 0..n {
            for j in 0..n {
                acc += am[(i, j)] * rm[(j, i)];
            }
        }
        Ok(acc)
    }
}
