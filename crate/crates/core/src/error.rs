use thiserror::Error;

/// Errors raised by model evaluation, estimation and sampling.
#[derive(Debug, Error)]
pub enum NosdError {
    #[error("parameter domain error: {0}")]
    Domain(String),

    #[error("non-finite link value: exp({exponent}) overflows for stress {stress}")]
    LinkOverflow { exponent: f64, stress: f64 },

    #[error("invalid test plan: {0}")]
    InvalidPlan(String),

    #[error("counts inconsistent with plan: {0}")]
    InconsistentCounts(String),

    #[error("data are not estimable: no failures were observed in any group")]
    NotEstimable,

    #[error("invalid tuning parameter gamma = {0}")]
    InvalidGamma(f64),

    #[error("singular matrix {name} (condition number {condition:.3e})")]
    SingularMatrix { name: &'static str, condition: f64 },

    #[error("Dirichlet hyperparameters infeasible: {0}")]
    HyperparameterInfeasible(String),

    #[error("log density is not finite at the initial state")]
    NonFiniteStart,

    #[error("no draws fell in {region}; increase the ball radius or the number of draws")]
    EmptyRegion { region: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown fixture or preset `{0}`")]
    UnknownFixture(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NosdError>;
