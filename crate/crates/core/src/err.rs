//! Error type shared by the exact and numeric engines.

use alloc::string::String;
use core::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Error {
    /// Input outside the documented domain of an operation.
    Domain(String),
    /// Dimension or shape mismatch between matrices, tuples or spans.
    Dimension(String),
    /// Singular matrix where an invertible one is required.
    Singular,
    /// An exact computation would need a root of unity outside `Q(i, sqrt q)`.
    PhaseNotRepresentable(String),
    /// A shell sum has a non-decaying strand: the integral diverges and no
    /// formal continuation exists.  Carries a human-readable description of
    /// the offending strand; randomized callers treat it as a resample hint.
    DivergentSum(String),
    /// The shell window grew past its cap without the tails stabilizing into
    /// a linear recurrence.
    NoRecurrence(String),
    /// Polynomial degree exceeded the hard cap of the exact algebra.
    DegreeCap(usize),
    /// A combination of inputs the exact path does not support; the message
    /// names the supported route (usually the numeric path).
    Capability(String),
    /// Adaptive subdivision exceeded its depth budget without the integrand
    /// becoming locally constant.
    SubdivisionDepth(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Singular => write!(f, "singular matrix"),
            Error::PhaseNotRepresentable(m) => {
                write!(f, "additive character value outside the scalar field: {m}")
            }
            Error::DivergentSum(m) => write!(f, "divergent shell sum: {m}"),
            Error::NoRecurrence(m) => write!(f, "shell tails did not stabilize: {m}"),
            Error::DegreeCap(d) => write!(f, "polynomial degree cap exceeded: {d}"),
            Error::Capability(m) => write!(f, "unsupported by the exact path: {m}"),
            Error::SubdivisionDepth(m) => write!(f, "subdivision depth exhausted: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
