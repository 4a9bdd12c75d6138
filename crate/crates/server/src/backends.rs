//! The external services a session talks to, live or mocked.

use std::sync::Arc;
use std::time::Duration;

use tableau_core::fixtures;
use tableau_core::orchestrator::{GenerationBackend, MockBackend, PlanConfig, WebUiClient};
use tableau_core::prompt::{ChatCompletionClient, LlmClient, LlmError, MockLlm, PromptStudio};
use tableau_core::segmentation::{HttpSegmenter, MattingMethod, MockSegmenter, ObjectFilter, SegmentationBackend};

use crate::config::{Config, OcclusionFill};

#[derive(Clone)]
pub struct Backends {
    pub generation: Arc<dyn GenerationBackend>,
    pub prompts: Arc<PromptStudio>,
    pub segmenter: Arc<dyn SegmentationBackend>,
    pub filter: ObjectFilter,
    pub occlusion_fill: OcclusionFill,
    pub matting: MattingMethod,
    pub plan: PlanConfig,
    /// Upper bound on one generation, retries included.
    pub generation_timeout: Duration,
}

impl Backends {
    pub fn from_config(config: &Config) -> Self {
        if config.mock_backends {
            return Self::mock(config);
        }
        let llm: Arc<dyn LlmClient> = match &config.llm {
            Some(profile) => Arc::new(ChatCompletionClient::new(profile.clone())),
            None => Arc::new(MockLlm::failing(LlmError::Unavailable("no LLM configured".into()))),
        };
        let segmenter: Arc<dyn SegmentationBackend> = match &config.segmentation.service {
            Some(profile) => Arc::new(HttpSegmenter { profile: profile.clone() }),
            None => Arc::new(MockSegmenter::procedural()),
        };
        Self {
            generation: Arc::new(WebUiClient::new(config.backend.clone())),
            prompts: Arc::new(PromptStudio::new(llm)),
            segmenter,
            filter: config.segmentation.filter(),
            occlusion_fill: config.occlusion_fill,
            matting: config.matting.clone(),
            plan: config.plan.clone(),
            generation_timeout: generation_timeout(config),
        }
    }

    /// Deterministic in-process backends.
    pub fn mock(config: &Config) -> Self {
        let (w, h) = config.canvas.render_dims();
        Self {
            generation: Arc::new(MockBackend::new()),
            prompts: Arc::new(PromptStudio::new(Arc::new(fixtures::fixture_llm()))),
            segmenter: Arc::new(fixtures::library_segmenter(w, h)),
            filter: config.segmentation.filter(),
            occlusion_fill: config.occlusion_fill,
            matting: config.matting.clone(),
            plan: config.plan.clone(),
            generation_timeout: generation_timeout(config),
        }
    }
}

fn generation_timeout(config: &Config) -> Duration {
    let b = &config.backend;
    Duration::from_secs_f64(b.timeout_s * (b.max_retries + 1) as f64 + 30.0)
}
