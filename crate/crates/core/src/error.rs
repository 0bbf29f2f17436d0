use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate source normalization: integral {integral:e} below 1e-300")]
    DegenerateNormalization { integral: f64 },

    #[error("mesh refinement budget exceeded ({leaves} leaves > cap {cap}) for source width sigma = {sigma}")]
    RefinementBudget { leaves: usize, cap: usize, sigma: f64 },

    #[error("degenerate triangle {index} (area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("point ({x}, {y}) lies outside the domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("{solver} did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("collocation point is missing attached {0} data")]
    MissingData(&'static str),

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Diverged { iteration: u64 },

    #[error("too many failed instances: {failed} of {total}")]
    DatasetFailures { failed: usize, total: usize },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("configuration errors:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failures caused by the numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateNormalization { .. }
                | Error::RefinementBudget { .. }
                | Error::DegenerateTriangle { .. }
                | Error::NoConvergence { .. }
                | Error::Diverged { .. }
                | Error::DatasetFailures { .. }
        )
    }
}
