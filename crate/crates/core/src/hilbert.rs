//! Operator algebras, states and composite-space utilities.
//!
//! Basis conventions are fixed: the collective spin uses the |S, m⟩ basis with
//! `m = S` first (Sz decreasing), the cavity uses Fock states with occupation
//! increasing, and composite operators are Kronecker products with the spin
//! factor first.

use nalgebra::SymmetricEigen;

use crate::{CMatrix, CVector, Error, Result, C64, I};

/// Default cap on any single factor dimension (and on their product for
/// composite spaces).
pub const DEFAULT_DIM_CAP: usize = 4096;

/// Collective spin operators in the maximal-spin sector S = N/2.
#[derive(Clone, Debug)]
pub struct SpinAlgebra {
    pub n_atoms: usize,
    pub dim: usize,
    pub sx: CMatrix,
    pub sy: CMatrix,
    pub sz: CMatrix,
    pub s_plus: CMatrix,
    pub s_minus: CMatrix,
}

impl SpinAlgebra {
    /// Total spin S = N/2.
    pub fn spin(&self) -> f64 {
        self.n_atoms as f64 / 2.0
    }

    pub fn identity(&self) -> CMatrix {
        CMatrix::identity(self.dim, self.dim)
    }

    /// Sz eigenvalues in basis order (S, S-1, ..., -S).
    pub fn m_values(&self) -> Vec<f64> {
        m_values(self.n_atoms)
    }
}

/// Sz eigenvalues S, S-1, ..., -S for N atoms.
pub fn m_values(n_atoms: usize) -> Vec<f64> {
    let s = n_atoms as f64 / 2.0;
    (0..=n_atoms).map(|k| s - k as f64).collect()
}

/// Matrix elements ⟨m+1|S+|m⟩ = sqrt(S(S+1) - m(m+1)), listed so that entry
/// `k - 1` couples basis index `k` to `k - 1` (k = 1..=N).
pub fn raising_elements(n_atoms: usize) -> Vec<f64> {
    let s = n_atoms as f64 / 2.0;
    let m = m_values(n_atoms);
    (1..=n_atoms)
        .map(|k| (s * (s + 1.0) - m[k] * (m[k] + 1.0)).max(0.0).sqrt())
        .collect()
}

pub fn spin_operators(n_atoms: usize) -> Result<SpinAlgebra> {
    spin_operators_capped(n_atoms, DEFAULT_DIM_CAP)
}

pub fn spin_operators_capped(n_atoms: usize, dim_cap: usize) -> Result<SpinAlgebra> {
    if n_atoms == 0 {
        return Err(Error::Sizing("n_atoms must be at least 1".into()));
    }
    let dim = n_atoms + 1;
    if dim > dim_cap {
        return Err(Error::Sizing(format!(
            "spin dimension {dim} exceeds cap {dim_cap}"
        )));
    }
    let m = m_values(n_atoms);
    let raise = raising_elements(n_atoms);

    let mut s_plus = CMatrix::zeros(dim, dim);
    for k in 1..dim {
        s_plus[(k - 1, k)] = C64::from(raise[k - 1]);
    }
    let s_minus = s_plus.adjoint();
    let sz = CMatrix::from_diagonal(&CVector::from_iterator(dim, m.iter().map(|&v| C64::from(v))));
    let sx = (&s_plus + &s_minus) * C64::from(0.5);
    let sy = (&s_plus - &s_minus) * (-0.5 * I);

    Ok(SpinAlgebra {
        n_atoms,
        dim,
        sx,
        sy,
        sz,
        s_plus,
        s_minus,
    })
}

/// Truncated Fock-space operators for the displaced cavity mode.
#[derive(Clone, Debug)]
pub struct CavityAlgebra {
    pub n_max: usize,
    pub b: CMatrix,
    pub number_op: CMatrix,
}

impl CavityAlgebra {
    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn b_dag(&self) -> CMatrix {
        self.b.adjoint()
    }

    pub fn identity(&self) -> CMatrix {
        CMatrix::identity(self.dim(), self.dim())
    }
}

pub fn cavity_operators(n_max: usize) -> Result<CavityAlgebra> {
    if n_max == 0 {
        return Err(Error::Sizing("n_max must be at least 1".into()));
    }
    let dim = n_max + 1;
    if dim > DEFAULT_DIM_CAP {
        return Err(Error::Sizing(format!(
            "cavity dimension {dim} exceeds cap {DEFAULT_DIM_CAP}"
        )));
    }
    let mut b = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        b[(n - 1, n)] = C64::from((n as f64).sqrt());
    }
    let number_op = CMatrix::from_diagonal(&CVector::from_iterator(
        dim,
        (0..dim).map(|n| C64::from(n as f64)),
    ));
    Ok(CavityAlgebra { n_max, b, number_op })
}

/// Kronecker product `spin_op ⊗ cavity_op`.
pub fn tensor_embed(spin_op: &CMatrix, cavity_op: &CMatrix) -> Result<CMatrix> {
    if !spin_op.is_square() || !cavity_op.is_square() {
        return Err(Error::Shape(format!(
            "tensor_embed needs square operands, got {:?} and {:?}",
            spin_op.shape(),
            cavity_op.shape()
        )));
    }
    Ok(spin_op.kronecker(cavity_op))
}

/// Which Hilbert space a state or operator lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceTag {
    Spin { n_atoms: usize },
    Composite { n_atoms: usize, n_max: usize },
}

impl SpaceTag {
    pub fn n_atoms(&self) -> usize {
        match *self {
            SpaceTag::Spin { n_atoms } | SpaceTag::Composite { n_atoms, .. } => n_atoms,
        }
    }

    pub fn spin_dim(&self) -> usize {
        self.n_atoms() + 1
    }

    /// Cavity factor dimension; 1 for spin-only spaces.
    pub fn cavity_dim(&self) -> usize {
        match *self {
            SpaceTag::Spin { .. } => 1,
            SpaceTag::Composite { n_max, .. } => n_max + 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.spin_dim() * self.cavity_dim()
    }
}

/// Density matrix tagged with its space.
#[derive(Clone, Debug)]
pub struct QuantumState {
    pub rho: CMatrix,
    pub space: SpaceTag,
}

impl QuantumState {
    pub fn new(rho: CMatrix, space: SpaceTag) -> Result<Self> {
        let dim = space.dim();
        if rho.shape() != (dim, dim) {
            return Err(Error::Shape(format!(
                "density matrix {:?} does not match space dimension {dim}",
                rho.shape()
            )));
        }
        Ok(Self { rho, space })
    }

    pub fn from_pure(psi: &CVector, space: SpaceTag) -> Result<Self> {
        Self::new(psi * psi.adjoint(), space)
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    /// Operator norm of ρ - ρ†.
    pub fn hermiticity_error(&self) -> f64 {
        let skew = (&self.rho - self.rho.adjoint()) * I;
        SymmetricEigen::new(skew)
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Smallest eigenvalue of the Hermitian part of ρ.
    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_min_eigenvalue(&self.rho)
    }

    pub fn hermitize(&mut self) {
        self.rho = (&self.rho + self.rho.adjoint()) * C64::from(0.5);
    }

    pub fn expectation(&self, op: &CMatrix) -> C64 {
        trace_product(&self.rho, op)
    }
}

/// Tr(A B) without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn partial_trace_cavity(state: &QuantumState) -> Result<QuantumState> {
    let (n_atoms, c) = match state.space {
        SpaceTag::Composite { n_atoms, n_max } => (n_atoms, n_max + 1),
        SpaceTag::Spin { .. } => {
            return Err(Error::Shape(
                "partial trace over the cavity needs a composite state".into(),
            ))
        }
    };
    let s = n_atoms + 1;
    if state.rho.shape() != (s * c, s * c) {
        return Err(Error::Shape(format!(
            "composite state has shape {:?}, expected {}",
            state.rho.shape(),
            s * c
        )));
    }
    let reduced = CMatrix::from_fn(s, s, |i, j| {
        (0..c).map(|a| state.rho[(i * c + a, j * c + a)]).sum()
    });
    QuantumState::new(reduced, SpaceTag::Spin { n_atoms })
}

/// Amplitudes of the coherent spin state along +x in the Sz basis:
/// sqrt(C(N, k)) / 2^(N/2) at basis index k.
pub fn css_x_amplitudes(n_atoms: usize) -> CVector {
    let n = n_atoms as f64;
    let mut log_binom = 0.0f64;
    let half_log2 = 0.5 * n * std::f64::consts::LN_2;
    CVector::from_iterator(
        n_atoms + 1,
        (0..=n_atoms).map(|k| {
            if k > 0 {
                log_binom += ((n_atoms - k + 1) as f64).ln() - (k as f64).ln();
            }
            C64::from((0.5 * log_binom - half_log2).exp())
        }),
    )
}

pub fn css_x_state(n_atoms: usize) -> Result<QuantumState> {
    if n_atoms == 0 {
        return Err(Error::Sizing("n_atoms must be at least 1".into()));
    }
    QuantumState::from_pure(&css_x_amplitudes(n_atoms), SpaceTag::Spin { n_atoms })
}

/// Raw truncated coherent-state coefficients e^{-|a|²/2} aⁿ/√n!, n ≤ n_max,
/// without renormalization.
pub fn coherent_amplitudes(amplitude: C64, n_max: usize) -> CVector {
    let mut coeff = C64::from((-0.5 * amplitude.norm_sqr()).exp());
    CVector::from_iterator(
        n_max + 1,
        (0..=n_max).map(|n| {
            if n > 0 {
                coeff *= amplitude / (n as f64).sqrt();
            }
            coeff
        }),
    )
}

/// Normalized coherent state |a⟩ truncated at `n_max`.
pub fn coherent_state(amplitude: C64, n_max: usize) -> Result<CVector> {
    if amplitude.norm_sqr() > n_max as f64 / 2.0 {
        return Err(Error::Truncation(format!(
            "|amplitude|² = {:.3} exceeds n_max/2 = {:.1}",
            amplitude.norm_sqr(),
            n_max as f64 / 2.0
        )));
    }
    let raw = coherent_amplitudes(amplitude, n_max);
    let norm = raw.norm();
    Ok(raw / C64::from(norm))
}

/// Smallest eigenvalue of (a + a†)/2. The matrix is rescaled by its largest
/// entry and entries below 1e-30 of it are zeroed (blocks spanning hundreds
/// of decades make the QR sweep overflow); when the largest entry is itself too small to
/// invert, -dim·max is returned as a lower bound.
pub fn hermitian_min_eigenvalue(a: &CMatrix) -> f64 {
    let h = (a + a.adjoint()) * C64::from(0.5);
    let scale = h.iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
    if scale == 0.0 {
        return 0.0;
    }
    if scale < 1e-250 {
        return -scale * h.nrows() as f64;
    }
    let scaled = h.map(|z| {
        let w = z / scale;
        if w.norm() < 1e-30 { C64::from(0.0) } else { w }
    });
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    scale * eig.iter().fold(f64::INFINITY, |acc, &v| acc.min(v))
}
