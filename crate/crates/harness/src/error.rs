use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Input rows lack a column a plot or report needs.
    #[error("schema error: {0}")]
    Schema(String),
}

impl HarnessError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Schema(_) => 2,
            HarnessError::Io(_) => 3,
            HarnessError::Numerical(_) => 4,
        }
    }
}

impl From<wrongline::Error> for HarnessError {
    fn from(e: wrongline::Error) -> Self {
        use wrongline::Error as E;
        match e {
            E::Io(_) => HarnessError::Io(e.to_string()),
            E::Parameter(_) | E::Input(_) | E::Json(_) | E::Csv(_) => HarnessError::Config(e.to_string()),
            _ => HarnessError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            HarnessError::Io(e.to_string())
        } else {
            HarnessError::Schema(e.to_string())
        }
    }
}
