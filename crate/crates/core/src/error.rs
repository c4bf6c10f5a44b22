use thiserror::Error;

/// Errors raised by model construction, propagation and analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("Fock truncation inadequate: {0}")]
    Truncation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Adaptive step size collapsed below the representable minimum.
    #[error("step size underflow at t = {t:.6e} (h = {h:.3e}); try a larger n_max or a shorter t_end")]
    Stiffness { t: f64, h: f64 },

    /// Stochastic step kept producing a non-positive state after all retries.
    #[error("stochastic step failed at t = {t:.6e}: min eigenvalue {min_eig:.3e} after {retries} halvings")]
    StepSize { t: f64, min_eig: f64, retries: u32 },

    #[error("quadrature did not converge: {0}")]
    Tolerance(String),

    #[error("squeezing parameter ill-defined: |<S>| = {polarization:.3e} below tolerance {tol:.3e}")]
    IllDefinedSqueezing { polarization: f64, tol: f64 },

    #[error("trajectory {index} (seed {seed:#018x}) aborted: {source}")]
    Ensemble {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("model construction check failed: {0}")]
    Construction(String),
}

pub type Result<T> = std::result::Result<T, Error>;
