use chrono::NaiveDate;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the loader, the engine or the run driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid value on {date} for {name}: {message}")]
    Validation {
        date: NaiveDate,
        name: String,
        message: String,
    },

    #[error("universe error: {0}")]
    Universe(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("point is not on the unit simplex: components sum to {sum}")]
    Simplex { sum: f64 },

    #[error("cannot calibrate normalization: unnormalized value {value} is not positive")]
    Calibration { value: f64 },

    #[error("generating function value {value} is not positive")]
    Generation { value: f64 },

    #[error("name {name} missing from market data on {date}")]
    Delisted { name: String, date: NaiveDate },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("ledger entry for {date} is not after the last entry {last}")]
    Sequencing { date: NaiveDate, last: NaiveDate },

    #[error("additive wealth {wealth} is not positive on {date}")]
    NonPositiveWealth { date: NaiveDate, wealth: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the command-line driver.
    ///
    /// 2 = configuration, 3 = data, 4 = numerical.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::Io { .. } => 2,
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Universe(_)
            | Error::Delisted { .. } => 3,
            Error::Domain(_)
            | Error::Simplex { .. }
            | Error::Calibration { .. }
            | Error::Generation { .. }
            | Error::Alignment(_)
            | Error::Sequencing { .. }
            | Error::NonPositiveWealth { .. } => 4,
            Error::Context { .. } => unreachable!("root() strips context"),
        }
    }
}
