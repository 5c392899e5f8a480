use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invariant set iteration did not terminate within t_max = {t_max}")]
    NonTermination { t_max: usize },

    #[error("linear program is unbounded: {0}")]
    UnboundedLp(String),

    #[error("target not reachable: {0}")]
    InfeasibleTarget(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),
}

pub(crate) fn ensure_dims(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(what()))
    }
}
