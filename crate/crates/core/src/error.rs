use thiserror::Error;

/// Errors raised by the WEIC model, solvers and environment.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeicError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("composite channel undefined for empty destination set")]
    EmptyDestinationSet,

    #[error("cosine similarity undefined for a zero-norm matrix")]
    ZeroNorm,

    #[error("zero channel matrix has no dominant direction")]
    ZeroChannel,

    #[error("user {0} has no assigned message in this round")]
    NoAssignedMessage(usize),

    #[error("no feasible embedded index code for this scenario")]
    NoFeasiblePlan,

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("power constraint violated: {used} > {budget}")]
    PowerViolation { used: f64, budget: f64 },

    #[error("exhaustive search refused: K = {k} exceeds the limit of {limit} users")]
    SearchGuard { k: usize, limit: usize },

    #[error("bell number B_{0} overflows u64")]
    BellOverflow(usize),

    #[error("episode error: {0}")]
    Episode(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, WeicError>;
