//! Scene model, compositing, generation planning, prompt padding,
//! segmentation and layout for blended video-conferencing environments.
//!
//! A [`Scene`] holds participant feed placements over a shared canvas. The
//! [`compositor`] turns it into inpainting inputs and live renders, the
//! [`orchestrator`] plans backend jobs, [`prompt`] pads short prompts,
//! [`segmentation`] mattes feeds and extracts occluding objects, and
//! [`layout`] seats feeds behind those objects.

pub mod compositor;
mod error;
pub mod fixtures;
pub mod http;
pub mod layout;
pub mod orchestrator;
pub mod prompt;
pub mod raster;
pub mod scene;
pub mod segmentation;
pub mod store;

pub use compositor::{
    apply_generation_result, apply_region_result, build_generation_input, render_live, CompositeError, FeedFrames,
    GenerationInput,
};
pub use error::RasterError;
pub use layout::{apply_assignment, auto_layout, move_feed, scale_feed, LayoutAssignment, LayoutError};
pub use orchestrator::{
    mock_generate, plan_img2img_job, plan_inpaint_job, plan_region_edit, BackendError, BackendProfile, ControlKind,
    ControlUnit, EditKind, GenerationBackend, GenerationJob, JobId, JobMode, JobRegistry, JobStatus, MockBackend,
    PlanConfig, PlanError, WebUiClient,
};
pub use prompt::{base_prompt, expand, ExpandedPrompt, LlmClient, LlmError, LlmProfile, MockLlm, PromptStudio};
pub use raster::RasterDigest;
pub use scene::{
    to_pixels, validate_scene, Canvas, FeedId, FeedPlacement, ForegroundObject, LayerRole, Mode, NormPoint, NormRect,
    ObjectId, PixelRect, Scene, SceneDoc, SceneError, Seed, Violation,
};
pub use segmentation::{
    extract_foreground, fill_occlusion, matte_person, person_matte, segment_objects, FillStrategy, MattedFrame, MattingMethod,
    ObjectFilter, SegmentationError,
};
pub use store::{DirRasterStore, MemoryRasterStore, RasterStore};
