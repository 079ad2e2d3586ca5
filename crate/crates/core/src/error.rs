use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A setting failed validation. `name` is the configuration key.
    #[error("invalid value for `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// Parameters, logits or losses left the finite range during training.
    #[error("non-finite values detected: {context}")]
    NonFinite { context: String },

    /// Two experiment arms cannot be compared.
    #[error("incompatible configurations: {0}")]
    Incompatible(String),

    #[error("sweep failed at cyclical_factor={cyclical_factor}: {source}")]
    Sweep {
        cyclical_factor: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by bad configuration rather than by a run diverging.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidParameter { .. } | Error::Incompatible(_) => true,
            Error::Sweep { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
