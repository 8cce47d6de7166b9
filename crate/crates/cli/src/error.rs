use fpm_core::FpmError;

/// Process exit codes: 2 input, 3 missing artifact, 4 format, 5 numerical.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn format(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<FpmError> for CliError {
    fn from(e: FpmError) -> Self {
        let code = match &e {
            FpmError::Geometry(_) | FpmError::Index(_) => 2,
            FpmError::Shape(_) | FpmError::Format(_) | FpmError::Json(_) => 4,
            FpmError::Numerical(_) => 5,
            FpmError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
            FpmError::Io(_) => 2,
        };
        Self { code, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
