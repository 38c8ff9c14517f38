use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("invalid spectral basis: {0}")]
    InvalidBasis(String),

    #[error("degenerate eigenvalues: blocks {m} and {n} have equal energy")]
    DegenerateEigenvalues { m: usize, n: usize },

    #[error("inadmissible class parameters (p = {p}, delta = {delta}): {reason}")]
    InadmissibleParams { p: f64, delta: f64, reason: String },

    #[error("the p = inf norm is only defined for diagonal operators")]
    InfiniteOnNonDiagonal,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("small divisor {distance:e} between blocks {m} and {n} (floor {floor:e})")]
    SmallDivisor { m: usize, n: usize, distance: f64, floor: f64 },

    #[error("gap guard violated: |G|_(inf,gamma) = {norm:e} exceeds c_H/6 = {limit:e}")]
    GapConditionViolated { norm: f64, limit: f64 },

    #[error("series did not converge within {terms} terms (last relative term {last:e})")]
    SeriesNotConverged { terms: usize, last: f64 },

    #[error("family does not commute in time: max commutator norm {0:e}")]
    NotCommuting(f64),

    #[error("smallness condition violated: {lhs:e} > {rhs:e}")]
    SmallnessViolated { lhs: f64, rhs: f64 },

    #[error("no convergence after {0} diagonalization steps")]
    NoConvergence(usize),

    #[error("reduction step {step}: {source}")]
    PipelineStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("drive positivity violated: a({t}) = {value}")]
    PositivityViolated { t: f64, value: f64 },

    #[error("propagation unstable at period {period}: norm drift {drift:e}")]
    StepUnstable { period: usize, drift: f64 },

    #[error("degenerate trace: {0}")]
    DegenerateTrace(String),

    #[error("bound is vacuous: ceil(p-1) = {ceil} must exceed 1/(2(1-alpha)) = {needed}")]
    BoundVacuous { ceil: f64, needed: f64 },

    #[error("LAPACK returned info = {0}")]
    Lapack(i32),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::PipelineStep { step, source: Box::new(self) }
    }
}
