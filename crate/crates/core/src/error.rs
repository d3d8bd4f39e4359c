use thiserror::Error;

pub type Result<T> = std::result::Result<T, RsssError>;

#[derive(Debug, Error)]
pub enum RsssError {
    /// A parameter value violates a model constraint.
    #[error("constraint violated for `{entry}`: {reason}")]
    Constraint { entry: String, reason: String },

    #[error("invalid model: {0}")]
    Spec(String),

    #[error("parameter vector has length {got}, layout expects {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid data: {0}")]
    Data(String),

    /// Factor-score weights could not be formed.
    #[error("factor score estimation failed: {0}")]
    Estimation(String),

    /// Innovation covariance of one Kalman branch is not positive definite.
    #[error("filter failure at individual {i}, occasion {t}, branch (s={s}, s'={s_prev}): {reason}")]
    Filter {
        i: usize,
        t: usize,
        s: usize,
        s_prev: usize,
        reason: String,
    },

    /// Prediction-error density of one individual collapsed to zero.
    #[error("degenerate likelihood at individual {i}, occasion {t}")]
    DegenerateLikelihood { i: usize, t: usize },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RsssError {
    /// Failures that signal divergent parameters rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            RsssError::Filter { .. }
                | RsssError::DegenerateLikelihood { .. }
                | RsssError::Estimation(_)
                | RsssError::FitFailed(_)
        )
    }
}
