use std::fmt::Display;

/// Error of the command line and the experiment runner, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) => 3,
            AppError::Numeric(_) => 4,
        }
    }

    /// Prefixes the message with where the error happened.
    pub fn context(self, what: impl Display) -> AppError {
        match self {
            AppError::Config(m) => AppError::Config(format!("{what}: {m}")),
            AppError::Data(m) => AppError::Data(format!("{what}: {m}")),
            AppError::Numeric(m) => AppError::Numeric(format!("{what}: {m}")),
        }
    }
}

impl From<lowdose_core::Error> for AppError {
    fn from(e: lowdose_core::Error) -> Self {
        use lowdose_core::Error as E;
        match e {
            E::Config(_) => AppError::Config(e.to_string()),
            E::NonFiniteGradient { .. } | E::NonFiniteLoss { .. } | E::NonFinite { .. } => {
                AppError::Numeric(e.to_string())
            }
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

pub trait Context<T> {
    fn context(self, what: impl Display) -> AppResult<T>;
}

impl<T, E: Into<AppError>> Context<T> for Result<T, E> {
    fn context(self, what: impl Display) -> AppResult<T> {
        self.map_err(|e| e.into().context(what))
    }
}
