use std::fmt;

/// Command failure, classified by exit code.
///
/// | code | meaning |
/// |------|---------|
/// | 0 | success |
/// | 2 | configuration error (bad key, value or command-line usage) |
/// | 3 | numerical failure during a run |
/// | 4 | I/O failure |
/// | 5 | verification failed (convergence gate, series replay) |
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
    Verification(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 4,
            Failure::Verification(_) => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<vmpfc::Error> for Failure {
    fn from(e: vmpfc::Error) -> Self {
        match e {
            vmpfc::Error::Config(m) => Failure::Config(m),
            vmpfc::Error::Io(m) => Failure::Io(m),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}
