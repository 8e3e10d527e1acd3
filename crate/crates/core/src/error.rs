use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Which quantizer saturated during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowSource {
    /// `|y_k - center| > E_k` for the output quantizer.
    Output,
    /// `|yhat_k| > E1_k` for the estimate quantizer.
    Estimate,
    /// `|u_k| > E2_k` for the input quantizer.
    Input,
}

impl std::fmt::Display for OverflowSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OverflowSource::Output => "output",
            OverflowSource::Estimate => "estimate",
            OverflowSource::Input => "input",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("rank deficient: {0}")]
    Rank(String),

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("pair (C, A_d) is not observable")]
    Unobservable,

    #[error("ill-conditioned: {0}")]
    Conditioning(String),

    #[error("infeasible decay rate: rho = {rho} but spectral radius is {radius}")]
    InfeasibleRate { rho: f64, radius: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no feasible levels: {0}")]
    Infeasible(String),

    #[error("value outside quantizer range on axis {axis} (excess {excess:e})")]
    Saturation { axis: usize, excess: f64 },

    #[error("{quantizer} quantizer overflow at step {step}, axis {axis} (excess {excess:e})")]
    Overflow {
        quantizer: OverflowSource,
        step: usize,
        axis: usize,
        excess: f64,
    },

    #[error("unknown plant '{0}'")]
    Lookup(String),

    #[error("parse error: {0}")]
    Parse(String),
}
