use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("analytic path precondition violated: {0}")]
    AnalyticPrecondition(String),

    #[error("state diverged at t = {t}: norm {norm:.3e} exceeds bound {bound:.3e}")]
    Divergence { t: f64, norm: f64, bound: f64 },

    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("maximum number of integration steps ({0}) exceeded")]
    MaxSteps(usize),

    #[error("averaging window too short: {0}")]
    WindowTooShort(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("unphysical covariance: {0}")]
    Unphysical(String),

    #[error("singular linear system (condition number {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("conjugate symmetry violated: {0}")]
    Conjugacy(String),

    #[error("unstable fluctuation dynamics: {0}")]
    Unstable(String),

    #[error("quadrature tolerance not met: error {achieved:.3e} > requested {requested:.3e}")]
    ToleranceNotMet { achieved: f64, requested: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input (config, parameter values,
    /// preconditions, unusable paths) as opposed to numerical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::Config(_)
                | Error::Domain(_)
                | Error::AnalyticPrecondition(_)
                | Error::WindowTooShort(_)
                | Error::InsufficientSamples { .. }
                | Error::Io(_)
        )
    }
}
