//! Data-driven Koopman spectral analysis.
//!
//! The crate fits finite-dimensional approximations of the Koopman operator
//! from snapshot data and validates them with residuals computed directly
//! from Gram-type matrices, so that every reported eigenpair carries an
//! error certificate. On top of the basic EDMD/DMD layer it provides
//! pseudospectra on grids, Hankel (delay-embedding) DMD for single
//! trajectories, measure-preserving EDMD with its discrete spectral
//! measures, generalized Laplace analysis for Koopman modes, and spectral
//! measure estimation from moments (interpolatory quadrature, filtered
//! Fourier series, and high-order rational smoothing kernels).

pub mod dictionary;
pub mod dmd;
pub mod gla;
pub mod hankel;
pub mod io;
pub mod mpedmd;
pub mod numerics;
pub mod resdmd;
pub mod specmeasure;
pub mod systems;

pub use faer::c64;

/// Complex dense matrix, the scalar type used repo-wide for operator data.
pub type CMat = faer::Mat<c64>;
/// Real dense matrix, used for state-space data (snapshots, trajectories).
pub type RMat = faer::Mat<f64>;
/// Complex column vector.
pub type CVec = Vec<c64>;

/// Errors shared by all modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An underlying factorization did not converge or produced invalid output.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Input data is degenerate (all-zero, rank-deficient where full rank is required, ...).
    #[error("degenerate data: {0}")]
    Degenerate(String),
    /// A trajectory left the representable range.
    #[error("trajectory diverged to non-finite values at step {step}")]
    Divergence { step: usize },
    /// An intermediate quantity exceeded the representable floating-point range.
    #[error("overflow at step {step}: {context}")]
    Overflow { step: usize, context: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Lift a real matrix into the complex scalar type.
pub fn complexify(a: faer::MatRef<'_, f64>) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| c64::new(a[(i, j)], 0.0))
}

/// Check that every entry of a complex matrix is finite.
pub fn ensure_finite(a: faer::MatRef<'_, c64>, what: &str) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let z = a[(i, j)];
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::Contract(format!(
                    "{what} has a non-finite entry at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Check that every entry of a real matrix is finite.
pub fn ensure_finite_real(a: faer::MatRef<'_, f64>, what: &str) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(Error::Contract(format!(
                    "{what} has a non-finite entry at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}
