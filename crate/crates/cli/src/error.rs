use std::fmt;
use std::path::Path;

use agcnn_core::data::DataError;
use agcnn_core::model::{CheckpointError, ModelError};
use agcnn_core::sweep::SweepError;

/// Failure class of a command; each maps to its own exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Config,
    Data,
    Divergence,
    Io,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 2,
            Kind::Config => 3,
            Kind::Data => 4,
            Kind::Divergence => 5,
            Kind::Io => 6,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Divergence => "divergence",
            Kind::Io => "io",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::new(Kind::Usage, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::new(Kind::Config, message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::new(Kind::Io, format!("{}: {e}", path.display()))
    }
}

/// `error[kind]: message` on a single line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{}]: {flat}", self.kind.name())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match e {
            ModelError::Config(_) => Kind::Config,
            ModelError::Divergence { .. } => Kind::Divergence,
            _ => Kind::Data,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match e {
            DataError::Io { .. } => Kind::Io,
            _ => Kind::Data,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Model(m) => m.into(),
            SweepError::Data(d) => d.into(),
            SweepError::Io { .. } => CliError::new(Kind::Io, e.to_string()),
            SweepError::UnknownFormat(_) => CliError::usage(e.to_string()),
            SweepError::InvalidReport(_) => CliError::new(Kind::Data, e.to_string()),
            SweepError::InvalidSpec(_) | SweepError::InvalidValue { .. } | SweepError::NonPositiveBaseline(_) => {
                CliError::config(e.to_string())
            }
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        let kind = match e {
            CheckpointError::Io { .. } => Kind::Io,
            _ => Kind::Data,
        };
        CliError::new(kind, e.to_string())
    }
}
