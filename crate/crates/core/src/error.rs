use crate::mesh::Coord;
use crate::routing::Port;

/// Errors produced by placement construction, analysis, search and simulation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh grid {width}x{height}: {reason}")]
    InvalidGrid {
        width: usize,
        height: usize,
        reason: &'static str,
    },
    #[error("tile ({x},{y}) lies outside the {width}x{height} grid")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("assignment is incomplete: tile ({x},{y}) has no kind")]
    Incomplete { x: usize, y: usize },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid traffic specification: {0}")]
    InvalidTraffic(String),
    #[error("placement has no caches")]
    NoCaches,
    #[error("placement has no memory controllers but the traffic has L2 misses")]
    NoMemControllers,
    #[error("unstable: {0}")]
    Unstable(Saturation),
    #[error("contention fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergent { iterations: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("search space has {count} configurations (about {orbits} after symmetry pruning), over the budget of {budget}; try the two-phase or local-search method")]
    BudgetExceeded {
        count: String,
        orbits: String,
        budget: u64,
    },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// Where a queue first saturated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saturation {
    /// Router of the saturated channel, when known.
    pub router: Option<Coord>,
    pub port: Option<Port>,
    pub utilization: f64,
}

impl Saturation {
    pub fn scalar(utilization: f64) -> Self {
        Saturation {
            router: None,
            port: None,
            utilization,
        }
    }
}

impl std::fmt::Display for Saturation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.router, self.port) {
            (Some(r), Some(p)) => write!(
                f,
                "router ({},{}) input {} has utilization {:.6} >= 1",
                r.x, r.y, p, self.utilization
            ),
            (Some(r), None) => write!(
                f,
                "router ({},{}) has utilization {:.6} >= 1",
                r.x, r.y, self.utilization
            ),
            _ => write!(f, "utilization {:.6} >= 1", self.utilization),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
