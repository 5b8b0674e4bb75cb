//! Monte Carlo toolkit for one-dimensional branching Brownian motion with
//! absorption at the origin.
//!
//! The crate is organised as a stack of small modules:
//!
//! - [`rng`] — deterministic random streams plus the exact sampling
//!   primitives everything else is built from (Brownian bridges, first-hit
//!   times, Bessel(3) paths, Poisson clocks).
//! - [`configuration`] — finite particle configurations and the scalar /
//!   measure-valued functionals read off them.
//! - [`quad`], [`stats`] — numerical quadrature and the statistical tests
//!   used by the verification experiments.
//! - [`analytic`] — closed-form densities, barrier curves and weight
//!   functions used for cross-checking simulation output.
//! - [`engine`] — event-driven simulation of the branching process itself,
//!   exact at branch/death times (no time-stepping error), with an optional
//!   moving upper boundary.
//! - [`spine`] — backward construction of configurations conditioned on
//!   late survival, acceptance sampling of the quasi-stationary law, and
//!   estimators for its normalising constants.
//! - [`coupling`] — three processes driven by one Brownian source for
//!   monotonicity checks.
//! - [`diag`] — distributional identities relating the plain process to its
//!   size-biased (spine) reweighting.
//! - [`experiment`] — reproducible command-line experiments with manifests.

pub mod analytic;
pub mod configuration;
pub mod coupling;
pub mod diag;
pub mod engine;
pub mod experiment;
pub mod quad;
pub mod rng;
pub mod spine;
pub mod stats;

pub use configuration::{EmpiricalMeasure, PointConfiguration};
pub use coupling::{
    check_domination_trace, run_coupled, CoupledTriple, CouplingParams, DominationReport,
};
pub use diag::{
    estimate_normalized_weight, verify_bridge_representation, verify_spine_selection,
    BridgeIdentityReport, DiagParams, SpineSelectionReport,
};
pub use engine::{Boundary, SimOutcome, SimParams};
pub use rng::RandomStream;
pub use spine::{SpineParams, SpineRealization, YaglomSample};

/// Crate-wide error type.
///
/// Numerical routines in this crate either meet their stated guarantee or
/// return an error; they never silently degrade.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument was outside the documented domain of an operation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An operation that requires at least one particle was applied to an
    /// empty configuration.
    #[error("empty configuration: {0} is undefined on an empty configuration")]
    EmptyConfiguration(&'static str),

    /// A series or quadrature could not certify the requested tolerance
    /// within its term/depth limits.
    #[error("tolerance unreachable: {0}")]
    ToleranceUnreachable(String),

    /// The conditioned sampler could not bring its residual error bound
    /// under the requested budget within its horizon / population limits.
    #[error("error budget unreachable: {0}")]
    BudgetUnreachable(String),

    /// A rejection sampler exhausted its attempt cap.
    #[error("attempt cap exceeded after {attempts} attempts: {context}")]
    AttemptCapExceeded { attempts: u64, context: String },

    /// A simulation hit a population or time cap in a context that demands
    /// the exact law (conversions from censored outcomes).
    #[error("simulation censored: {0}")]
    Censored(String),

    /// A descendant simulation was censored (population cap) and the
    /// censored state could not be certified as an almost-sure rejection.
    #[error("censored subsimulation could not be certified: {0}")]
    CertificateUnavailable(String),

    /// Experiment configuration could not be parsed or validated.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for [`Error::InvalidParameter`].
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

/// Validate that `value` is finite, returning [`Error::InvalidParameter`]
/// naming `what` otherwise.
pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::invalid(format!("{what} must be finite, got {value}")))
    }
}
