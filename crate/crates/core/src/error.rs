use thiserror::Error;

/// A violated standing assumption of one of the constructions.
///
/// These are kept apart from plain input errors because callers (the CLI in
/// particular) report them with their own exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Hypothesis {
    #[error("mean contraction ratio r = Σ p/β = {r} is not below 1")]
    ContractionRatio { r: f64 },
    #[error("p = {p} lies outside the admissible interval ({p_c}, 1)")]
    ResponseDomain { p: f64, p_c: f64 },
    #[error("δ = p/β1 + (1-p)/β0 = {delta} is not below 1")]
    ResponseDelta { delta: f64 },
    #[error("smallest slope on the sampled path is {gamma}, but the alternating series needs slopes > 2")]
    WeakExpansion { gamma: f64 },
    #[error("β0 = {beta0} is simple: T^{depth}(1) = 0")]
    SimpleNumber { beta0: f64, depth: usize },
    #[error("slope {beta} at offset {offset} leaves the window ({beta0} ± {eps0})")]
    OutsideWindow {
        beta: f64,
        beta0: f64,
        eps0: f64,
        offset: i64,
    },
    #[error("perturbative contraction q = {q} is not below 1")]
    NoContraction { q: f64 },
    #[error("β0 = {beta0} must exceed 1")]
    NotExpanding { beta0: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} = {value} is outside its domain ({expected})")]
    Domain {
        what: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("invalid noise model: {0}")]
    InvalidModel(String),
    #[error("invalid step function: {0}")]
    InvalidStepFunction(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(#[from] Hypothesis),
    #[error("singular linear system ({0})")]
    Singular(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("insufficient precision: {0}")]
    Precision(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit(what: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value: x,
            expected: "[0, 1]",
        })
    }
}
