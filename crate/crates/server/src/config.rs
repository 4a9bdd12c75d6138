//! Server configuration: a TOML file plus environment overrides for
//! endpoints and secrets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tableau_core::orchestrator::{BackendProfile, PlanConfig};
use tableau_core::prompt::LlmProfile;
use tableau_core::scene::Canvas;
use tableau_core::segmentation::{MattingMethod, ObjectFilter, ServiceProfile};
use thiserror::Error;

pub const ENV_WEBUI_URL: &str = "TABLEAU_WEBUI_URL";
pub const ENV_LLM_URL: &str = "TABLEAU_LLM_URL";
pub const ENV_LLM_API_KEY: &str = "TABLEAU_LLM_API_KEY";
pub const ENV_SEGMENTATION_URL: &str = "TABLEAU_SEGMENTATION_URL";
pub const ENV_MATTING_URL: &str = "TABLEAU_MATTING_URL";
pub const ENV_TOKEN: &str = "TABLEAU_TOKEN";

const DEFAULT_LLM_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// How the background behind a person is filled on the first frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionFill {
    /// Inpaint with the generation backend, falling back to blur-extend.
    #[default]
    Backend,
    BlurExtend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    /// External segmentation service; the mock segmenter is used when unset.
    pub service: Option<ServiceProfile>,
    pub allowlist: Vec<String>,
    pub min_confidence: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        let filter = ObjectFilter::default();
        Self { service: None, allowlist: filter.allowlist.into_iter().collect(), min_confidence: filter.min_confidence }
    }
}

impl SegmentationConfig {
    pub fn filter(&self) -> ObjectFilter {
        ObjectFilter { allowlist: self.allowlist.iter().cloned().collect(), min_confidence: self.min_confidence }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub bind: String,
    pub canvas: Canvas,
    pub backend: BackendProfile,
    pub llm: Option<LlmProfile>,
    pub plan: PlanConfig,
    pub segmentation: SegmentationConfig,
    pub matting: MattingMethod,
    pub occlusion_fill: OcclusionFill,
    /// Use in-process deterministic backends instead of the HTTP clients.
    pub mock_backends: bool,
    /// Sessions are autosaved below this directory when set.
    pub data_dir: Option<PathBuf>,
    /// Shared bearer token required on every API request when set.
    #[serde(skip_serializing)]
    pub token: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            canvas: Canvas::default(),
            backend: BackendProfile::default(),
            llm: None,
            plan: PlanConfig::default(),
            segmentation: SegmentationConfig::default(),
            matting: MattingMethod::AlphaChannel,
            occlusion_fill: OcclusionFill::default(),
            mock_backends: false,
            data_dir: None,
            token: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_owned(), message: e.to_string() })
    }

    /// Offline configuration: mock backends, blur-extend fill.
    pub fn mock() -> Self {
        Self { mock_backends: true, occlusion_fill: OcclusionFill::BlurExtend, ..Self::default() }
    }

    pub fn apply_env(&mut self) {
        self.apply_overrides(|key| std::env::var(key).ok().filter(|v| !v.is_empty()));
    }

    /// Applies overrides from `lookup`, which maps variable names to values.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(url) = lookup(ENV_WEBUI_URL) {
            self.backend.base_url = url;
        }
        if let Some(url) = lookup(ENV_LLM_URL) {
            match &mut self.llm {
                Some(p) => p.endpoint = url,
                None => self.llm = Some(LlmProfile::new(url, DEFAULT_LLM_MODEL)),
            }
        }
        if let Some(key) = lookup(ENV_LLM_API_KEY) {
            if let Some(p) = &mut self.llm {
                p.api_key = Some(key);
            }
        }
        if let Some(url) = lookup(ENV_SEGMENTATION_URL) {
            self.segmentation.service = Some(ServiceProfile::new(url));
        }
        if let Some(url) = lookup(ENV_MATTING_URL) {
            self.matting = MattingMethod::ExternalService(ServiceProfile::new(url));
        }
        if let Some(token) = lookup(ENV_TOKEN) {
            self.token = Some(token);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(v) = self.canvas.violations().first() {
            return Err(ConfigError::Invalid(format!("{}: {}", v.field, v.rule)));
        }
        self.backend.validate().map_err(ConfigError::Invalid)?;
        if let Some(llm) = &self.llm {
            if !(llm.timeout_s > 0.0) {
                return Err(ConfigError::Invalid("llm.timeout_s must be positive".into()));
            }
        }
        let p = &self.plan;
        if !(0.0..=1.0).contains(&p.denoise_min) || !(0.0..=1.0).contains(&p.denoise_max) || p.denoise_min > p.denoise_max
        {
            return Err(ConfigError::Invalid("plan.denoise_min/denoise_max must satisfy 0 <= min <= max <= 1".into()));
        }
        for w in [p.inpaint_control_weight, p.depth_weight, p.canny_weight] {
            if !(0.0..=2.0).contains(&w) {
                return Err(ConfigError::Invalid("control weights must lie in [0,2]".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn toml_round_trip_with_partial_file() {
        let cfg: Config = toml::from_str(
            r#"
            bind = "0.0.0.0:9000"
            [backend]
            base_url = "http://gpu:7860"
            max_retries = 4
            [plan]
            depth_weight = 0.8
            "#,
        )
        .unwrap();
        assert_eq!(cfg.bind, "0.0.0.0:9000");
        assert_eq!(cfg.backend.max_retries, 4);
        assert_eq!(cfg.backend.steps, BackendProfile::default().steps);
        assert_eq!(cfg.plan.depth_weight, 0.8);
        assert_eq!(cfg.plan.cfg_scale, 7.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn env_overrides() {
        let vars: HashMap<&str, &str> = [
            (ENV_WEBUI_URL, "http://a:1"),
            (ENV_LLM_URL, "http://b:2/v1/chat/completions"),
            (ENV_LLM_API_KEY, "sk-test"),
            (ENV_MATTING_URL, "http://c:3"),
            (ENV_TOKEN, "secret"),
        ]
        .into();
        let mut cfg = Config::default();
        cfg.apply_overrides(|k| vars.get(k).map(|v| v.to_string()));
        assert_eq!(cfg.backend.base_url, "http://a:1");
        let llm = cfg.llm.unwrap();
        assert_eq!(llm.endpoint, "http://b:2/v1/chat/completions");
        assert_eq!(llm.api_key.as_deref(), Some("sk-test"));
        assert!(matches!(cfg.matting, MattingMethod::ExternalService(_)));
        assert_eq!(cfg.token.as_deref(), Some("secret"));
    }

    #[test]
    fn rejects_bad_canvas() {
        let cfg = Config { canvas: Canvas { gen_width_px: 1000, ..Canvas::default() }, ..Config::default() };
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }
}
