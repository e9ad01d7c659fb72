use nalgebra::Complex;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph has no directed spanning tree rooted at a pinned node")]
    Assumption1Violated,

    #[error("eigenvalue computation did not converge")]
    EigenFailure,

    #[error("delay-free condition infeasible at vertex {vertex}")]
    DelayFreeInfeasible { vertex: Complex<f64> },

    #[error("no feasible starting point on the real axis within {cells} grid cells")]
    EmptyRegion { cells: usize },

    #[error("design LMI infeasible at {sigma}")]
    DesignInfeasible { sigma: Complex<f64> },

    #[error("no coupling gain places {eigenvalue} inside the region")]
    NoCouplingGain { eigenvalue: Complex<f64> },

    #[error("solver could not reach a verdict: {0}")]
    Inconclusive(String),

    #[error("simulation diverged at t = {t}")]
    Diverged { t: f64 },
}
