use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A liquid level reached zero or below. `t` is the simulation time
    /// at which it was detected, `index` the offending cell.
    #[error("positivity violation: h[{index}] = {value:e} at t = {t}")]
    PositivityViolation { index: usize, value: f64, t: f64 },

    #[error("gain condition violated: k exceeds its bound by {excess:e}")]
    GainConditionViolated { excess: f64 },

    #[error("design infeasible: decay constant omega = {omega:e} is not positive")]
    DesignInfeasible { omega: f64 },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("tolerance too large: {0}")]
    ToleranceTooLarge(String),

    #[error("no feasible gain: {0}")]
    NoFeasibleGain(String),
}
