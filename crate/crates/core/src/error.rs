use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error(
        "no particle inside the noise support around predicted mean {predicted_mean:?} \
         (nearest particle at distance {nearest_distance})"
    )]
    NoSupportOverlap {
        predicted_mean: Vec<f64>,
        nearest_distance: f64,
    },

    #[error("no admissible control at state {state:?}")]
    InfeasibleState { state: Vec<f64> },

    #[error("every particle is infeasible")]
    AllInfeasible,

    #[error("state {state:?} lies outside the state space")]
    OutsideStateSpace { state: Vec<f64> },

    #[error("cost evaluated to {value} at state {state:?}; costs must be finite and nonnegative")]
    InvalidCost { value: f64, state: Vec<f64> },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64 },

    #[error("oracle refused: {0}")]
    Oracle(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, got })
    }
}
