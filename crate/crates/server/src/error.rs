use tableau_core::compositor::CompositeError;
use tableau_core::layout::LayoutError;
use tableau_core::orchestrator::{BackendError, PlanError};
use tableau_core::prompt::PromptError;
use tableau_core::scene::{FeedId, SceneError};
use tableau_core::segmentation::SegmentationError;
use tableau_core::RasterError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown feed {0}")]
    UnknownFeed(FeedId),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("could not decode image: {0}")]
    Decode(String),
    #[error("command rejected: {0}")]
    CommandRejected(String),
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("history index {index} out of range (history has {len} entries)")]
    HistoryIndex { index: usize, len: usize },
    #[error("bundle schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("digest mismatch in {file}: {detail}")]
    DigestMismatch { file: String, detail: String },
    #[error("session {0} already exists")]
    AlreadyExists(String),
    #[error("generation timed out")]
    Timeout,
    #[error("session is shutting down")]
    Closed,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Generation(#[from] BackendError),
    #[error(transparent)]
    Scene(SceneError),
    #[error(transparent)]
    Raster(RasterError),
    #[error("{0}")]
    Io(String),
}

impl From<RasterError> for SessionError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::DigestMismatch { file, expected, actual } => {
                SessionError::DigestMismatch { file, detail: format!("expected {expected}, found {actual}") }
            }
            other => SessionError::Raster(other),
        }
    }
}

impl From<SceneError> for SessionError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Raster(r) => r.into(),
            SceneError::SchemaVersionMismatch { found, expected } => {
                SessionError::SchemaVersionMismatch { found, expected }
            }
            other => SessionError::Scene(other),
        }
    }
}

impl SessionError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownSession(_) => "unknown_session",
            SessionError::UnknownFeed(_) => "unknown_feed",
            SessionError::UnknownJob(_) => "unknown_job",
            SessionError::Decode(_) => "decode_error",
            SessionError::CommandRejected(_) => "command_rejected",
            SessionError::InvalidCommand(_) => "invalid_command",
            SessionError::NothingToUndo => "nothing_to_undo",
            SessionError::HistoryIndex { .. } => "history_index",
            SessionError::SchemaVersionMismatch { .. } => "schema_version_mismatch",
            SessionError::DigestMismatch { .. } => "digest_mismatch",
            SessionError::AlreadyExists(_) => "already_exists",
            SessionError::Timeout => "timeout",
            SessionError::Closed => "closed",
            SessionError::Prompt(_) => "prompt_error",
            SessionError::Plan(_) => "plan_error",
            SessionError::Layout(_) => "layout_error",
            SessionError::Composite(_) => "composite_error",
            SessionError::Segmentation(_) => "segmentation_error",
            SessionError::Generation(_) => "generation_error",
            SessionError::Scene(_) => "scene_error",
            SessionError::Raster(_) => "raster_error",
            SessionError::Io(_) => "io_error",
        }
    }
}
