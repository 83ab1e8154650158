use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("certificate failure: {0}")]
    Certificate(String),
    #[error("step size underflow at t = {t:e} (h = {h:e}, |field| = {field_norm:e})")]
    Stiffness { t: f64, h: f64, field_norm: f64 },
    #[error("operator is not hyperbolic: eigenvalue with real part {min_abs_real:e}")]
    Hyperbolicity { min_abs_real: f64 },
    #[error("indeterminate numerical rank: singular values straddle the cut")]
    IndeterminateRank { singular_values: Vec<f64> },
    #[error("bifurcation detected at t = {t}")]
    Bifurcation { t: f64 },
    #[error("orbit count uncertain for pair {from} -> {to}: {reason}")]
    CountUncertain {
        from: usize,
        to: usize,
        reason: String,
    },
    #[error("transversality failure for orbit {from} -> {to}: kernel dimension {kernel}")]
    Transversality { from: usize, to: usize, kernel: usize },
    #[error("non-Morse: degenerate critical points {degenerate:?}")]
    NonMorse { degenerate: Vec<usize> },
    #[error("consistency error: {0}")]
    Consistency(String),
}
