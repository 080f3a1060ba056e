//! Crate-wide error type.

use std::fmt;

/// Errors raised by model construction, analysis, and the experiment harness.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A pmf or kernel row fails validation (negative entry, bad sum, ...).
    InvalidModel(String),
    /// A change-time law parameter is out of range.
    InvalidLaw(String),
    /// The log likelihood ratio is unbounded: a zero-probability cell under
    /// the pre-change law carries positive post-change mass.
    UnboundedLlr { index: String },
    /// Sign convention violated: requires `m0 < 0 < m1`. The computed means
    /// are carried so callers can still inspect them for diagnostics.
    SignAssumption { m0: f64, m1: f64 },
    /// No positive root of the cumulant function exists in its domain, so the
    /// detection exponents are undefined for this statistic.
    ExponentsUnavailable(String),
    /// The exponential moment diverges at the requested tilt.
    DivergentCgf { theta: f64 },
    /// Requested drift lies outside the attainable range of the tilted means.
    DriftOutOfRange { m: f64, lo: f64, hi: f64 },
    /// Argument outside a function's domain (e.g. the log-Lambert check needs z > 1).
    Domain(String),
    /// A statistic cannot be evaluated on this model's observation space.
    StatisticMismatch(String),
    /// Linear function class is degenerate (autocorrelation matrix rank-deficient).
    DegenerateClass { min_singular: f64 },
    /// The 1-d offset objective is unbounded below.
    UnboundedObjective(String),
    /// A structural precondition on the hidden-chain model failed (absorbing
    /// set, uni-chain reachability, or primitivity of the survival block).
    ChainPrecondition(String),
    /// Numerical routine failed to converge.
    NoConvergence(String),
    /// Exact DP oracle cannot run (lattice too large, irrational statistic values, ...).
    Resource(String),
    /// Config file or schema problem; the message names the offending field path.
    Config(String),
    /// Filesystem error while reading config or writing artifacts.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidModel(msg) => write!(f, "invalid model: {msg}"),
            Error::InvalidLaw(msg) => write!(f, "invalid change-time law: {msg}"),
            Error::UnboundedLlr { index } => {
                write!(f, "unbounded LLR: pre-change mass is zero at {index} but post-change mass is positive")
            }
            Error::SignAssumption { m0, m1 } => {
                write!(f, "sign assumption violated: need m0 < 0 < m1, got m0 = {m0}, m1 = {m1}")
            }
            Error::ExponentsUnavailable(msg) => write!(f, "detection exponents unavailable: {msg}"),
            Error::DivergentCgf { theta } => write!(f, "cumulant function diverges at theta = {theta}"),
            Error::DriftOutOfRange { m, lo, hi } => {
                write!(f, "drift {m} outside attainable range [{lo}, {hi}]")
            }
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::StatisticMismatch(msg) => write!(f, "statistic/model mismatch: {msg}"),
            Error::DegenerateClass { min_singular } => {
                write!(f, "degenerate function class: autocorrelation matrix near-singular (sigma_min = {min_singular:.3e})")
            }
            Error::UnboundedObjective(msg) => write!(f, "objective unbounded below: {msg}"),
            Error::ChainPrecondition(msg) => write!(f, "chain precondition failed: {msg}"),
            Error::NoConvergence(msg) => write!(f, "no convergence: {msg}"),
            Error::Resource(msg) => write!(f, "resource limit: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
