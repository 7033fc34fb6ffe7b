use thiserror::Error;

/// Errors raised by the analytic, optimization and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter violates the documented domain of an operation.
    #[error("{name} = {value} is outside its domain: {reason}")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// `L * p_d >= 1`: the no-click probability in the gain formula goes negative.
    #[error("unphysical regime: L * p_d = {0} must be below 1")]
    Unphysical(f64),

    /// No clicks are possible, so conditional quantities are undefined.
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    /// The PLOB bound diverges for a lossless channel.
    #[error("PLOB bound diverges at total transmittance eta = {0}")]
    Divergent(f64),

    /// Too few expected detections for a meaningful statistical comparison.
    #[error("insufficient statistics: expected {expected:.1} effective trains, need at least {required}")]
    InsufficientStatistics { expected: f64, required: f64 },

    /// An inconsistent combination of options was requested.
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure(cond: bool, name: &'static str, value: f64, reason: &'static str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Domain { name, value, reason })
    }
}
