//! Physical parameters, full and reduced Lindblad models, and the single-jump
//! factorization of the third-order dissipator.

use std::f64::consts::PI;

use crate::hilbert::{
    cavity_operators, coherent_state, css_x_amplitudes, spin_operators, tensor_embed,
    QuantumState, SpaceTag, DEFAULT_DIM_CAP,
};
use crate::{max_abs, CMatrix, CVector, Error, Result, C64, I};

/// Physical inputs. All rates share the unit of `kappa`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    /// Cavity field decay rate.
    pub kappa: f64,
    /// Atom-cavity dispersive coupling.
    pub g: f64,
    /// Drive detuning ω_d - ω_c.
    pub delta: f64,
    /// Drive amplitude, real and non-negative by phase convention.
    pub beta: f64,
    /// Homodyne detection efficiency.
    pub eta: f64,
    /// Homodyne phase in radians.
    pub phi: f64,
}

impl ModelParams {
    /// Parameters from the dimensionless set (ε = g/κ, d = 2δ/κ, β/κ) with κ = 1.
    pub fn scaled(epsilon: f64, d: f64, beta_over_kappa: f64) -> Self {
        Self {
            kappa: 1.0,
            g: epsilon,
            delta: d / 2.0,
            beta: beta_over_kappa,
            eta: 1.0,
            phi: 0.0,
        }
    }

    pub fn with_homodyne(mut self, eta: f64, phi: f64) -> Self {
        self.eta = eta;
        self.phi = phi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.kappa, self.g, self.delta, self.beta, self.eta, self.phi];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("parameters must be finite".into()));
        }
        if self.kappa <= 0.0 {
            return Err(Error::InvalidParams(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if self.g < 0.0 {
            return Err(Error::InvalidParams(format!("g must be >= 0, got {}", self.g)));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidParams(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParams(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }
}

/// Quantities derived from [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedParams {
    pub epsilon: f64,
    pub d: f64,
    /// Stationary photon number of the resonant uncoupled cavity, (2β/κ)².
    pub n0: f64,
    /// Uncoupled steady-state field amplitude.
    pub alpha: C64,
    /// Effective one-axis-twisting strength.
    pub chi: f64,
    /// Effective collective dephasing rate.
    pub kappa_tilde: f64,
    /// Phase of the reduced jump operator.
    pub theta_s: f64,
}

impl DerivedParams {
    /// Common prefactor 4 n0 κ / (1 + d²)² of the reduced generators.
    pub fn reduced_prefactor(&self, kappa: f64) -> f64 {
        4.0 * self.n0 * kappa / (1.0 + self.d * self.d).powi(2)
    }
}

pub fn derive_params(p: &ModelParams) -> DerivedParams {
    let epsilon = p.g / p.kappa;
    let d = 2.0 * p.delta / p.kappa;
    let n0 = (2.0 * p.beta / p.kappa).powi(2);
    let alpha = -I * p.beta / C64::new(p.kappa / 2.0, -p.delta);
    let denom = p.kappa * p.kappa + 4.0 * p.delta * p.delta;
    let coupling = 4.0 * p.g * p.g * alpha.norm_sqr() / denom;
    DerivedParams {
        epsilon,
        d,
        n0,
        alpha,
        chi: p.delta * coupling,
        kappa_tilde: coupling * p.kappa,
        theta_s: reduced_jump_phase(d),
    }
}

/// θ_s with e^{iθ_s} = (d - i)² / (1 + d²), reported in (-π, π].
pub fn reduced_jump_phase(d: f64) -> f64 {
    let theta = (-2.0 * d).atan2(d * d - 1.0);
    if theta <= -PI {
        theta + 2.0 * PI
    } else {
        theta
    }
}

/// Homodyne phase maximizing the leading-order Sz signal, -2 arctan(1/d).
/// Returns π at d = 0, the d → 0⁺ limit.
pub fn optimal_homodyne_phase(d: f64) -> f64 {
    if d == 0.0 {
        PI
    } else {
        -2.0 * (1.0 / d).atan()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelOrder {
    Full,
    Second,
    Third,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitoredChannel {
    pub jump_index: usize,
    pub phi: f64,
    pub eta: f64,
}

/// Hamiltonian, jump operators and homodyne metadata on a fixed space.
#[derive(Clone, Debug)]
pub struct LindbladModel {
    pub hamiltonian: CMatrix,
    pub jumps: Vec<CMatrix>,
    pub monitored: Option<MonitoredChannel>,
    pub space: SpaceTag,
    pub order: ModelOrder,
}

impl LindbladModel {
    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.space.dim();
        if self.hamiltonian.shape() != (dim, dim) || self.jumps.iter().any(|l| l.shape() != (dim, dim)) {
            return Err(Error::Shape(format!("operators do not match space dimension {dim}")));
        }
        let herm = max_abs(&(&self.hamiltonian - self.hamiltonian.adjoint()));
        if herm > 1e-12 {
            return Err(Error::Construction(format!(
                "Hamiltonian not Hermitian (max deviation {herm:.3e})"
            )));
        }
        if let Some(m) = self.monitored {
            if m.jump_index >= self.jumps.len() {
                return Err(Error::Construction(format!(
                    "monitored jump index {} out of range ({} jumps)",
                    m.jump_index,
                    self.jumps.len()
                )));
            }
        }
        Ok(())
    }

    /// Drops all jump operators and the monitored channel.
    pub fn hamiltonian_only(mut self) -> Self {
        self.jumps.clear();
        self.monitored = None;
        self
    }

    /// ℒ(ρ) = -i[H, ρ] + Σ 𝒟[L](ρ).
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = (&self.hamiltonian * rho - rho * &self.hamiltonian) * (-I);
        for l in &self.jumps {
            out += dissipator(l, rho);
        }
        out
    }

    /// Vectorized generator (column stacking), dimension dim² × dim².
    pub fn superoperator(&self) -> CMatrix {
        superoperator_matrix(self.dim(), |rho| self.apply(rho))
    }

    /// Monitored jump times e^{-iφ}, if a channel is monitored.
    pub fn measured_operator(&self) -> Option<(CMatrix, f64)> {
        self.monitored.map(|m| {
            let phase = (-I * m.phi).exp();
            (&self.jumps[m.jump_index] * phase, m.eta)
        })
    }
}

/// 𝒟[L](ρ) = LρL† - ½{L†L, ρ}.
pub fn dissipator(l: &CMatrix, rho: &CMatrix) -> CMatrix {
    let ld = l.adjoint();
    let ldl = &ld * l;
    l * rho * &ld - (&ldl * rho + rho * &ldl) * C64::from(0.5)
}

/// Matrix of a linear map on dim × dim matrices in the column-stacking
/// vectorization: column `i + j·dim` is vec(f(E_ij)).
pub fn superoperator_matrix(dim: usize, f: impl Fn(&CMatrix) -> CMatrix) -> CMatrix {
    let n = dim * dim;
    let mut out = CMatrix::zeros(n, n);
    let mut basis = CMatrix::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..dim {
            basis[(i, j)] = C64::from(1.0);
            let image = f(&basis);
            out.column_mut(i + j * dim).copy_from_slice(image.as_slice());
            basis[(i, j)] = C64::from(0.0);
        }
    }
    out
}

/// Initial cavity state for the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialCavity {
    /// Empty lab-frame cavity: coherent state of amplitude -α in the b frame.
    LabVacuum,
    /// b-frame vacuum, i.e. the uncoupled steady state.
    DisplacedVacuum,
}

/// Fock truncation used when none is given.
pub fn default_n_max(alpha_sq: f64, initial: InitialCavity) -> usize {
    let margin = 6.0 * (alpha_sq + 1.0).sqrt() + 8.0;
    let n = match initial {
        InitialCavity::LabVacuum => alpha_sq + margin,
        InitialCavity::DisplacedVacuum => alpha_sq + margin / 2.0,
    };
    n.ceil() as usize
}

/// Full atom-cavity model in the displaced frame with a single jump √κ b, and
/// the CSS ⊗ cavity initial state.
pub fn build_full_model(
    p: &ModelParams,
    n_atoms: usize,
    n_max: Option<usize>,
    initial: InitialCavity,
) -> Result<(LindbladModel, QuantumState)> {
    p.validate()?;
    let dp = derive_params(p);
    let alpha_sq = dp.alpha.norm_sqr();
    let n_max = n_max.unwrap_or_else(|| default_n_max(alpha_sq, initial));
    let space = SpaceTag::Composite { n_atoms, n_max };
    if space.dim() > DEFAULT_DIM_CAP {
        return Err(Error::Sizing(format!(
            "composite dimension {} exceeds cap {DEFAULT_DIM_CAP}",
            space.dim()
        )));
    }
    let cavity_psi = match initial {
        InitialCavity::LabVacuum => coherent_state(-dp.alpha, n_max)?,
        InitialCavity::DisplacedVacuum => {
            let mut v = CVector::zeros(n_max + 1);
            v[0] = C64::from(1.0);
            v
        }
    };

    let spin = spin_operators(n_atoms)?;
    let cav = cavity_operators(n_max)?;
    let bd = cav.b_dag();
    let coupling = &cav.number_op + &bd * dp.alpha + &cav.b * dp.alpha.conj();
    let hamiltonian = tensor_embed(&spin.identity(), &cav.number_op)? * C64::from(-p.delta)
        + tensor_embed(&spin.sz, &coupling)? * C64::from(p.g);
    let jump = tensor_embed(&spin.identity(), &cav.b)? * C64::from(p.kappa.sqrt());

    let psi = css_x_amplitudes(n_atoms).kronecker(&cavity_psi);
    let state = QuantumState::from_pure(&psi, space)?;
    let model = LindbladModel {
        hamiltonian,
        jumps: vec![jump],
        monitored: Some(MonitoredChannel { jump_index: 0, phi: p.phi, eta: p.eta }),
        space,
        order: ModelOrder::Full,
    };
    model.validate()?;
    Ok((model, state))
}

/// Sz-polynomial coefficients of the reduced models, so that
/// H = Σ h_k Sz^k and L = Σ l_k Sz^k (k = 1..3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedCoefficients {
    pub hamiltonian: [f64; 4],
    pub jump: [C64; 3],
}

pub fn reduced_coefficients(p: &ModelParams, order: ModelOrder) -> Result<ReducedCoefficients> {
    let dp = derive_params(p);
    let pref = dp.reduced_prefactor(p.kappa);
    let eps = dp.epsilon;
    let d = dp.d;
    let root = C64::from(dp.kappa_tilde.sqrt()) * (I * dp.theta_s).exp();
    match order {
        ModelOrder::Second => Ok(ReducedCoefficients {
            hamiltonian: [0.0, 0.0, dp.chi, 0.0],
            jump: [C64::from(0.0), root, C64::from(0.0)],
        }),
        ModelOrder::Third => {
            let h3 = -pref * (1.0 - d * d) / (1.0 + d * d) * eps.powi(3);
            let l2 = root * C64::new(d, -1.0) * (2.0 * eps / (1.0 + d * d));
            Ok(ReducedCoefficients {
                hamiltonian: [0.0, 0.0, pref * d / 2.0 * eps * eps, h3],
                jump: [C64::from(0.0), root, l2],
            })
        }
        ModelOrder::Full => Err(Error::Domain("reduced models are second or third order".into())),
    }
}

/// Warning text when ε√N is too large for the reduced expansion to be trusted.
pub fn convergence_warning(p: &ModelParams, n_atoms: usize) -> Option<String> {
    let eps = p.g / p.kappa;
    let x = eps * (n_atoms as f64).sqrt();
    (x > 0.5).then(|| format!("epsilon*sqrt(N) = {x:.3} > 0.5; reduced expansion may not converge"))
}

/// Spin-only second- or third-order model starting from nothing; pair it with
/// [`crate::hilbert::css_x_state`] for the usual quench.
pub fn build_reduced_model(p: &ModelParams, n_atoms: usize, order: ModelOrder) -> Result<LindbladModel> {
    p.validate()?;
    if p.g / p.kappa >= 1.0 {
        return Err(Error::InvalidParams(format!(
            "reduced models need epsilon < 1, got {}",
            p.g / p.kappa
        )));
    }
    let coeffs = reduced_coefficients(p, order)?;
    let spin = spin_operators(n_atoms)?;
    let sz = &spin.sz;
    let sz2 = sz * sz;
    let sz3 = &sz2 * sz;
    let h = &coeffs.hamiltonian;
    let hamiltonian = &sz2 * C64::from(h[2]) + &sz3 * C64::from(h[3]);
    let jump = sz * coeffs.jump[1] + &sz2 * coeffs.jump[2];
    let model = LindbladModel {
        hamiltonian,
        jumps: vec![jump],
        monitored: Some(MonitoredChannel { jump_index: 0, phi: p.phi, eta: p.eta }),
        space: SpaceTag::Spin { n_atoms },
        order,
    };
    model.validate()?;
    Ok(model)
}

/// Coefficient 16 n0 κ ε⁴ / (1 + d²)³ of the O(ε⁴) term that completes the
/// third-order dissipator into a single channel.
pub fn completion_rate(p: &ModelParams) -> f64 {
    let dp = derive_params(p);
    16.0 * dp.n0 * p.kappa * dp.epsilon.powi(4) / (1.0 + dp.d * dp.d).powi(3)
}

/// The completion term as a map: rate · 𝒟[Sz²](ρ).
pub fn completion_term(p: &ModelParams, sz: &CMatrix, rho: &CMatrix) -> CMatrix {
    dissipator(&(sz * sz), rho) * C64::from(completion_rate(p))
}

/// Third-order dissipator as written term by term in Sz, Sz², Sz³ (without
/// the ε⁴ completion).
pub fn third_order_dissipator(p: &ModelParams, sz: &CMatrix, rho: &CMatrix) -> CMatrix {
    let dp = derive_params(p);
    let pref = dp.reduced_prefactor(p.kappa);
    let (eps, d) = (dp.epsilon, dp.d);
    let w = 1.0 + d * d;
    let sz2 = sz * sz;
    let sz3 = &sz2 * sz;
    let half = C64::from(0.5);
    let e2 = C64::from(eps * eps);
    let e3 = eps.powi(3);
    let mut out = (sz * rho * sz - (&sz2 * rho + rho * &sz2) * half) * e2;
    out += sz * rho * &sz2 * (C64::new(d, 1.0) * (2.0 * e3 / w));
    out += &sz2 * rho * sz * (C64::new(d, -1.0) * (2.0 * e3 / w));
    out -= (&sz3 * rho + rho * &sz3) * C64::from(2.0 * d / w * e3);
    out * C64::from(pref)
}

/// Kossakowski analysis of the completed third-order dissipator in the
/// operator basis {Sz, Sz²}.
#[derive(Clone, Debug)]
pub struct JumpFactorization {
    pub matrix: [[C64; 2]; 2],
    pub determinant: f64,
    /// Eigenvalues, largest first.
    pub eigenvalues: [f64; 2],
    /// κ̃ (1 + 4ε²/(1 + d²)).
    pub expected_eigenvalue: f64,
    /// Reconstructed jump coefficients (Sz, Sz²), phase-aligned to the
    /// closed-form jump operator.
    pub jump_coefficients: [C64; 2],
    /// Distance between reconstructed and closed-form coefficients.
    pub jump_residual: f64,
    /// Whether the {Sz³, ρ} coefficient matches -½(h₁₂ + h₂₁).
    pub anticommutator_residual: f64,
}

/// Kossakowski matrix h with 𝒟(ρ) = Σ h_ij (A_i ρ A_j† - ½{A_j† A_i, ρ}),
/// A = (Sz, Sz²), read off the third-order dissipator plus completion.
pub fn kossakowski_matrix(p: &ModelParams) -> [[C64; 2]; 2] {
    let dp = derive_params(p);
    let pref = dp.reduced_prefactor(p.kappa);
    let (eps, d) = (dp.epsilon, dp.d);
    let w = 1.0 + d * d;
    let h11 = C64::from(pref * eps * eps);
    let h12 = C64::new(d, 1.0) * (pref * 2.0 * eps.powi(3) / w);
    let h22 = C64::from(completion_rate(p));
    [[h11, h12], [h12.conj(), h22]]
}

pub fn verify_jump_factorization(p: &ModelParams) -> Result<JumpFactorization> {
    let dp = derive_params(p);
    let h = kossakowski_matrix(p);
    let (a, c) = (h[0][0].re, h[1][1].re);
    let b = h[0][1];
    let determinant = a * c - b.norm_sqr();
    let tr = a + c;
    let disc = ((a - c).powi(2) + 4.0 * b.norm_sqr()).sqrt();
    let eigenvalues = [(tr + disc) / 2.0, (tr - disc) / 2.0];
    let expected_eigenvalue =
        dp.kappa_tilde * (1.0 + 4.0 * dp.epsilon * dp.epsilon / (1.0 + dp.d * dp.d));

    // top eigenvector of [[a, b], [b*, c]]
    let lambda = eigenvalues[0];
    let (v0, v1) = if b.norm() > 0.0 {
        (b, C64::from(lambda - a))
    } else if a >= c {
        (C64::from(1.0), C64::from(0.0))
    } else {
        (C64::from(0.0), C64::from(1.0))
    };
    let norm = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
    let scale = lambda.max(0.0).sqrt() / norm;
    let raw = [v0 * scale, v1 * scale];

    let expected = reduced_coefficients(p, ModelOrder::Third)?.jump;
    let expected = [expected[1], expected[2]];
    let overlap = raw[0].conj() * expected[0] + raw[1].conj() * expected[1];
    let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { C64::from(1.0) };
    let jump_coefficients = [raw[0] * phase, raw[1] * phase];
    let jump_residual = ((jump_coefficients[0] - expected[0]).norm_sqr()
        + (jump_coefficients[1] - expected[1]).norm_sqr())
    .sqrt();

    let pref = dp.reduced_prefactor(p.kappa);
    let written = -pref * 2.0 * dp.d / (1.0 + dp.d * dp.d) * dp.epsilon.powi(3);
    let anticommutator_residual = (-(h[0][1] + h[1][0]).re / 2.0 - written).abs();

    let report = JumpFactorization {
        matrix: h,
        determinant,
        eigenvalues,
        expected_eigenvalue,
        jump_coefficients,
        jump_residual,
        anticommutator_residual,
    };
    let scale2 = dp.kappa_tilde.powi(2).max(f64::MIN_POSITIVE);
    if determinant.abs() > 1e-12 * scale2 || eigenvalues[1].abs() > 1e-12 * dp.kappa_tilde.max(f64::MIN_POSITIVE) {
        return Err(Error::Construction(format!(
            "Kossakowski matrix is not rank one (det = {determinant:.3e})"
        )));
    }
    Ok(report)
}
