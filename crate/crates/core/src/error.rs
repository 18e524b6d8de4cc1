use std::path::PathBuf;

/// Errors produced by the simulator.
///
/// Every variant maps onto one of the process exit categories used by the
/// command-line driver (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("uninitialized config keys: {}", .0.join(", "))]
    Uninitialized(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("step collapse at r = {r} km (iteration {iter}): dr {dr:e} km fell below min_dr {dr_min:e} km")]
    StepCollapse {
        r: f64,
        iter: u64,
        dr: f64,
        dr_min: f64,
    },

    #[error("collective operation failed: {0}")]
    Collective(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("snapshot {}: {msg}", .path.display())]
    Snapshot { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn snapshot(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Snapshot {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for this error: 2 configuration, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Uninitialized(_) | Error::Config(_) | Error::Domain(_) => {
                2
            }
            Error::Numeric(_) | Error::StepCollapse { .. } | Error::Collective(_) => 3,
            Error::Io { .. } | Error::Snapshot { .. } => 4,
        }
    }
}
