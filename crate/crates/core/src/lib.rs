//! Spin-squeezing dynamics of N atoms dispersively coupled to a driven, lossy
//! cavity mode.
//!
//! The crate builds the full atom-cavity Lindblad model in the displaced cavity
//! frame, the second- and third-order adiabatically eliminated atomic models,
//! deterministic and homodyne-conditioned integrators for both, and the
//! Wineland squeezing parameter extracted from their solutions. The
//! [`elimination`] module recomputes the elimination coefficients from the
//! cavity's Heisenberg-picture dynamics by quadrature, independently of the
//! closed forms used to build the reduced models.

pub mod blocks;
pub mod elimination;
pub mod error;
pub mod hilbert;
pub mod integrators;
pub mod models;
pub mod montecarlo;
pub mod observables;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix (column-major).
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex vector.
pub type CVector = nalgebra::DVector<C64>;

pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Largest entry modulus of a complex matrix.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}
