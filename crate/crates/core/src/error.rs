use thiserror::Error;

/// Failure modes of the numerical layers.
///
/// Several variants (`SingularDenominator`, `FlowBreakdown`, `TinyA1`) are
/// ordinary outcomes of a flow rather than bugs; the drivers record them in
/// the trajectory instead of propagating them.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric: max |v_ij - v_ji| = {max_asym:e} exceeds tolerance {tol:e}")]
    NonSymmetricInput { max_asym: f64, tol: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("Lanczos did not converge after {iterations} iterations (best residual {best_residual:e})")]
    NoConvergence { iterations: usize, best_residual: f64 },

    #[error("singular Feshbach denominator: E = {energy} collides with H_kk = {h_kk}")]
    SingularDenominator { energy: f64, h_kk: f64 },

    #[error("ground-state overlap with the first basis state is too small: |a1| = {a1:e}")]
    TinyA1 { a1: f64 },

    #[error("no real renormalized coupling at k = {k} (roots {root1} and {root2})")]
    FlowBreakdown {
        k: usize,
        root1: num_complex::Complex64,
        root2: num_complex::Complex64,
    },

    #[error("flow equation singular at x = {x}: denominator {denominator:e}")]
    FlowSingularity { x: f64, denominator: f64 },

    #[error("Trotter kernel unstable: beta * rho / n = {bound} >= 1 (beta = {beta}, rho = {rho}, n = {n})")]
    TrotterUnstable { beta: f64, rho: f64, n: usize, bound: f64 },

    #[error("polynomial coefficient fit is ill-conditioned (residual {residual:e})")]
    IllConditioned { residual: f64 },

    #[error("no coupling in [{lo}, {hi}] matches the partition function target {target}")]
    NoThermalRoot { lo: f64, hi: f64, target: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
