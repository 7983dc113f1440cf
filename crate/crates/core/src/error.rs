use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("no data: at least one trajectory is required")]
    NoData,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank-deficient equalities: {rows} rows but numerical rank {rank}")]
    RankDeficientEqualities { rows: usize, rank: usize },

    #[error("delay declared without history in trajectory {experiment}")]
    MissingHistory { experiment: usize },

    #[error("history given for trajectory {experiment} but the model declares no delays")]
    UnexpectedHistory { experiment: usize },

    #[error("trajectory {experiment} is missing exogenous constant `{name}`")]
    MissingExogenous { experiment: usize, name: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("times must be strictly increasing (violated at index {index})")]
    NonMonotoneTimes { index: usize },

    #[error("too few samples: {got} given, at least {need} required")]
    TooFewSamples { got: usize, need: usize },

    #[error("query at t = {t} is outside the interpolation domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("unsupported derivative order {0} (only 0 and 1)")]
    UnsupportedOrder(usize),

    #[error("non-finite integrand at node {node} (t = {t})")]
    NonFiniteIntegrand { node: usize, t: f64 },

    #[error("non-finite basis evaluation: basis {basis}, experiment {experiment}, node {node}")]
    NonFiniteBasis {
        basis: usize,
        experiment: usize,
        node: usize,
    },

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("singular reduced system (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("stale factorization: inner solution was computed at a different phi")]
    StaleFactorization,

    #[error("phi out of bounds at index {index}: {value} not in [{lower}, {upper}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("delay {delay} is smaller than the solver step floor")]
    DelayTooSmall { delay: f64 },

    #[error("invalid index: {0}")]
    InvalidIndex(String),

    #[error("empty model: the term mask selects nothing")]
    EmptyModel,

    #[error("every candidate term was eliminated (epsilon = {epsilon} is too large)")]
    AllEliminated { epsilon: f64 },

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("invalid option: {0}")]
    InvalidOption(String),
}
