use std::fmt;
use std::path::Path;

use e2v_core::events::EventError;
use e2v_core::model::ModelError;
use e2v_core::sim::SimError;
use e2v_core::train::TrainError;
use e2v_core::voxel::VoxelError;

/// Failure classes with stable exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    Config(String),
    /// Missing, unreadable, unwritable or inconsistent data (exit 3).
    Data(String),
    /// A broken internal invariant (exit 4).
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Config(m) => ("configuration error", m),
            CliError::Data(m) => ("data error", m),
            CliError::Internal(m) => ("internal error", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Tensor(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::ChannelMismatch(_) => CliError::Config(e.to_string()),
            ModelError::CheckpointMismatch(_) | ModelError::ResolutionMismatch(_) => CliError::Data(e.to_string()),
            ModelError::Tensor(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::ContrastNonPositive(_) | SimError::TimeOutOfRange { .. } => {
                CliError::Config(e.to_string())
            }
            SimError::InvalidScene(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EventError> for CliError {
    fn from(e: EventError) -> Self {
        match e {
            EventError::ZeroWindow(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<VoxelError> for CliError {
    fn from(e: VoxelError) -> Self {
        CliError::Data(e.to_string())
    }
}
