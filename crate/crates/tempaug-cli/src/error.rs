//! Error type mapping every failure onto the documented exit codes:
//! 2 config, 3 missing data, 4 shape/dimension, 5 numerical divergence.

use tempaug_core::composite::CompositeError;
use tempaug_core::dataio::DataError;
use tempaug_core::memory::MemoryError;
use tempaug_core::nn::NnError;
use tempaug_core::noise::NoiseError;
use tempaug_core::stats::StatError;
use tempaug_core::trajectory::TrajError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("shape/dimension error: {0}")]
    Shape(String),
    #[error("numerical divergence: {0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingData(_) => 3,
            CliError::Shape(_) => 4,
            CliError::Diverged(_) => 5,
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match &e {
            NnError::ShapeMismatch { .. } => CliError::Shape(e.to_string()),
            NnError::InvalidArch(_) | NnError::InvalidConfig(_) => CliError::Config(e.to_string()),
            NnError::EmptyBatch => CliError::MissingData(e.to_string()),
            NnError::Diverged { .. } => CliError::Diverged(e.to_string()),
        }
    }
}

impl From<TrajError> for CliError {
    fn from(e: TrajError) -> Self {
        match e {
            TrajError::ShapeMismatch { .. } | TrajError::ArchMismatch => {
                CliError::Shape(e.to_string())
            }
            TrajError::Nn(inner) => inner.into(),
            _ => CliError::MissingData(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match &e {
            DataError::InvalidArgument(_) | DataError::CsvParse { .. } => {
                CliError::Config(e.to_string())
            }
            DataError::BadImageShape { .. } => CliError::Shape(e.to_string()),
            _ => CliError::MissingData(e.to_string()),
        }
    }
}

impl From<CompositeError> for CliError {
    fn from(e: CompositeError) -> Self {
        match e {
            CompositeError::Nn(inner) => inner.into(),
            CompositeError::Traj(inner) => inner.into(),
            CompositeError::Data(inner) => inner.into(),
            CompositeError::EmptyDataset => CliError::MissingData(e.to_string()),
            CompositeError::MissingEpochs(_) => CliError::MissingData(e.to_string()),
            CompositeError::ArchMismatch | CompositeError::UnsupportedLatentDim { .. } => {
                CliError::Shape(e.to_string())
            }
        }
    }
}

impl From<NoiseError> for CliError {
    fn from(e: NoiseError) -> Self {
        match e {
            NoiseError::Nn(inner) => inner.into(),
            NoiseError::Linalg(inner) => CliError::Shape(inner.to_string()),
            NoiseError::TooFewSamples(_) | NoiseError::SourceTooSmall { .. } => {
                CliError::Config(e.to_string())
            }
            NoiseError::ZeroTrace => CliError::Diverged(e.to_string()),
        }
    }
}

impl From<StatError> for CliError {
    fn from(e: StatError) -> Self {
        match e {
            StatError::ZeroTrace | StatError::ZeroVariance => CliError::Diverged(e.to_string()),
            StatError::Linalg(inner) => CliError::Shape(inner.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<MemoryError> for CliError {
    fn from(e: MemoryError) -> Self {
        match e {
            MemoryError::Nn(inner) => inner.into(),
            MemoryError::Traj(inner) => inner.into(),
            MemoryError::Stat(inner) => inner.into(),
            MemoryError::Composite(inner) => inner.into(),
            MemoryError::EmptyDataset | MemoryError::EmptyClass(_) => {
                CliError::MissingData(e.to_string())
            }
            MemoryError::InvalidDelta(_) | MemoryError::InvalidQ(_) => {
                CliError::Config(e.to_string())
            }
            MemoryError::LatentTooWide { .. } | MemoryError::Binning(_) => {
                CliError::Shape(e.to_string())
            }
        }
    }
}

pub fn io_err(context: &str) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::MissingData(format!("{context}: {e}"))
}
