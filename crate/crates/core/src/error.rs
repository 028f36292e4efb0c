use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("absorbed: total event rate is zero, no event can occur")]
    Absorbed,

    #[error("tau-too-large: tau*h0 = {product} > 1 at t = {time} in state {state}")]
    TauTooLarge {
        time: f64,
        product: f64,
        state: String,
    },

    #[error("unreachable-activity: agent {agent} has no path from {from} to {to}")]
    UnreachableActivity {
        agent: String,
        from: String,
        to: String,
    },

    #[error("degenerate-bounds: reward bounds collapse to {0}")]
    DegenerateBounds(f64),

    #[error(
        "filter-collapse at step {step}: every particle has zero likelihood \
         (observation {observation}, best particle log-likelihood {max_log_likelihood})"
    )]
    FilterCollapse {
        step: u64,
        observation: String,
        max_log_likelihood: f64,
    },

    #[error("diverged: log-evidence became {0}")]
    Diverged(f64),

    #[error("zero-reward-batch: no rollout received any reward")]
    ZeroRewardBatch,

    #[error("impossible-observation at step {0}")]
    ImpossibleObservation(usize),

    #[error("state-explosion: path tree exceeds the {0}-node budget")]
    StateExplosion(usize),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Numerical failures (as opposed to bad input data).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Absorbed
                | Error::TauTooLarge { .. }
                | Error::FilterCollapse { .. }
                | Error::Diverged(_)
                | Error::ZeroRewardBatch
                | Error::ImpossibleObservation(_)
                | Error::StateExplosion(_)
        )
    }
}
