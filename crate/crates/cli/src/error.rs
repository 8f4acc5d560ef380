use odf_core::eval::EvalError;
use odf_core::geometry::GeometryError;
use odf_core::io::FormatError;
use odf_core::odf::OdfError;
use odf_core::partition::PartitionError;
use thiserror::Error;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_INTEGRITY: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config, or missing/unreadable input files.
    #[error("input error: {0}")]
    Input(String),
    /// Files that parse wrongly or do not belong together.
    #[error("data integrity error: {0}")]
    Integrity(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Integrity(_) => EXIT_INTEGRITY,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io { .. } => CliError::Input(e.to_string()),
            FormatError::Geometry(g) => g.into(),
            other => CliError::Integrity(other.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::Parse { .. }
            | GeometryError::EmptyScene { .. }
            | GeometryError::IndexOutOfRange { .. }
            | GeometryError::Descriptor(_)
            | GeometryError::Io(_) => CliError::Input(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<OdfError> for CliError {
    fn from(e: OdfError) -> Self {
        match e {
            OdfError::DataIntegrity(_) => CliError::Integrity(e.to_string()),
            OdfError::Config(_) | OdfError::EmptyRays => CliError::Input(e.to_string()),
            OdfError::Partition(PartitionError::NoCoverage(_)) => {
                CliError::Integrity(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        match e {
            PartitionError::NoPositions | PartitionError::InvalidResolution(_) => {
                CliError::Input(e.to_string())
            }
            other => CliError::Integrity(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Empty | EvalError::BatchSizes => CliError::Input(e.to_string()),
            EvalError::Odf(o) => o.into(),
            EvalError::Io(_) | EvalError::Csv(_) => CliError::Runtime(e.to_string()),
            other => CliError::Integrity(other.to_string()),
        }
    }
}
