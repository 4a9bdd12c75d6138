//! Prompt padding: a short activity/theme pair becomes a detailed generation
//! prompt by asking an LLM for objects and environment characteristics and
//! appending a fixed quality suffix.
//!
//! The assembled prompt is
//! `base; object, object, ...; characteristic, ...; <suffix>`.
//! When the LLM is unreachable or answers with something unparseable, a
//! local keyword table keyed by activity word stems is used instead and the
//! result is flagged as a fallback.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{self, HttpError};

/// Quality terms appended to every prompt.
pub const QUALITY_SUFFIX: &str = "highly detailed, intricate, sharp focus, smooth";

/// Separator between the four prompt sections.
pub const SECTION_SEPARATOR: &str = "; ";

/// System message sent with every expansion request. The single-shot
/// example is inlined here rather than sent as a separate turn.
pub const SYSTEM_PROMPT: &str = "Your task is to help the user create a Stable Diffusion prompt to generate an environment design. The user will specify an activity to occur in the environment and/or a theme for the space. You will provide a list of 4-5 types of objects to put in the environment and 4-5 distinct characteristics that describe the environment. The characteristics must be detailed and designed to generate visually appealing and cohesive results. Here is an example for a brainstorming activity: {Objects: \"whiteboards, plants, chairs, small tables\", Environment Characteristics: \"bright, open space, natural light, refreshing atmosphere, varied textures\"}";

/// Most keywords kept per section.
pub const MAX_KEYWORDS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("both activity and theme are empty")]
    EmptyPrompt,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("LLM request timed out")]
    Timeout,
    #[error("LLM unavailable: {0}")]
    Unavailable(String),
    #[error("LLM response malformed: {0}")]
    Malformed(String),
}

impl From<HttpError> for LlmError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Transport(msg) if msg.to_ascii_lowercase().contains("timeout") || msg.contains("timed out") => {
                LlmError::Timeout
            }
            HttpError::Decode(msg) => LlmError::Malformed(msg),
            other => LlmError::Unavailable(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandedPrompt {
    pub base: String,
    pub objects: Vec<String>,
    pub characteristics: Vec<String>,
    pub suffix: String,
    pub assembled: String,
    /// True when the keywords came from the local table.
    pub fallback: bool,
    /// Why the fallback was used, or notes about a short LLM answer.
    pub diagnostic: Option<String>,
}

impl ExpandedPrompt {
    pub fn new(base: impl Into<String>, objects: Vec<String>, characteristics: Vec<String>) -> Self {
        let base = base.into();
        let assembled = assemble(&base, &objects, &characteristics);
        Self {
            base,
            objects,
            characteristics,
            suffix: QUALITY_SUFFIX.to_owned(),
            assembled,
            fallback: false,
            diagnostic: None,
        }
    }

    /// A prompt that is used verbatim, without padding.
    pub fn literal(text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            base: text.clone(),
            objects: Vec::new(),
            characteristics: Vec::new(),
            suffix: String::new(),
            assembled: text,
            fallback: false,
            diagnostic: None,
        }
    }
}

fn assemble(base: &str, objects: &[String], characteristics: &[String]) -> String {
    [base.to_owned(), objects.join(", "), characteristics.join(", "), QUALITY_SUFFIX.to_owned()]
        .join(SECTION_SEPARATOR)
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// `"<Theme>-themed environment for a <activity>"`, or the theme-only /
/// activity-only variant when one side is empty.
pub fn base_prompt(activity: &str, theme: &str) -> Result<String, PromptError> {
    let activity = activity.trim().to_lowercase();
    let theme = theme.trim();
    match (activity.is_empty(), theme.is_empty()) {
        (true, true) => Err(PromptError::EmptyPrompt),
        (false, false) => Ok(format!("{}-themed environment for a {activity}", capitalize_first(theme))),
        (true, false) => Ok(format!("{}-themed environment", capitalize_first(theme))),
        (false, true) => Ok(format!("Environment for a {activity}")),
    }
}

/// The user message wrapping a base prompt.
pub fn user_message(base: &str) -> String {
    format!(
        "Provide a list of 4-5 types of objects to put in this environment and 4-5 characteristics that describe this environment: {base}. Return the output as comma-separated strings in JSON format: {{Objects: string, Environment Characteristics: string}}"
    )
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmProfile {
    /// Full URL of a chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_system_prompt")]
    pub system_prompt: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

fn default_system_prompt() -> String {
    SYSTEM_PROMPT.to_owned()
}

fn default_temperature() -> f64 {
    0.7
}

fn default_timeout() -> f64 {
    20.0
}

impl LlmProfile {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            system_prompt: default_system_prompt(),
            temperature: default_temperature(),
            timeout_s: default_timeout(),
            api_key: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessage,
}

/// Chat-completions client.
pub struct ChatCompletionClient {
    profile: LlmProfile,
    agent: ureq::Agent,
}

impl ChatCompletionClient {
    pub fn new(profile: LlmProfile) -> Self {
        let agent = http::agent(Duration::from_secs_f64(profile.timeout_s.max(0.001)));
        Self { profile, agent }
    }

    pub fn request(&self, system: &str, user: &str) -> ChatRequest {
        ChatRequest {
            model: self.profile.model.clone(),
            temperature: self.profile.temperature,
            messages: vec![
                ChatMessage { role: "system".into(), content: system.into() },
                ChatMessage { role: "user".into(), content: user.into() },
            ],
        }
    }
}

impl LlmClient for ChatCompletionClient {
    fn complete(&self, system: &str, user: &str) -> Result<String, LlmError> {
        let resp: ChatResponse = http::post_json(
            &self.agent,
            &self.profile.endpoint,
            &self.request(system, user),
            self.profile.api_key.as_deref(),
        )?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Malformed("no choices".into()))
    }
}

/// Fixture-backed LLM keyed by base prompt.
#[derive(Clone, Debug, Default)]
pub struct MockLlm {
    responses: HashMap<String, Result<String, LlmError>>,
    default: Option<Result<String, LlmError>>,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every request fails with `err`.
    pub fn failing(err: LlmError) -> Self {
        Self { responses: HashMap::new(), default: Some(Err(err)) }
    }

    pub fn with_response(mut self, base: &str, response: impl Into<String>) -> Self {
        self.responses.insert(user_message(base), Ok(response.into()));
        self
    }

    pub fn with_failure(mut self, base: &str, err: LlmError) -> Self {
        self.responses.insert(user_message(base), Err(err));
        self
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, _system: &str, user: &str) -> Result<String, LlmError> {
        self.responses
            .get(user)
            .or(self.default.as_ref())
            .cloned()
            .unwrap_or_else(|| Err(LlmError::Unavailable("no fixture for request".into())))
    }
}

fn split_keywords(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|k| !k.is_empty()).map(str::to_owned).collect()
}

fn keywords_from_value(v: &serde_json::Value) -> Option<Vec<String>> {
    match v {
        serde_json::Value::String(s) => Some(split_keywords(s)),
        serde_json::Value::Array(items) => {
            Some(items.iter().filter_map(|i| i.as_str()).flat_map(split_keywords).collect())
        }
        _ => None,
    }
}

fn normalize_key(k: &str) -> String {
    k.trim().trim_matches('"').trim().to_ascii_lowercase()
}

const OBJECTS_KEY: &str = "objects";
const CHARACTERISTICS_KEY: &str = "environment characteristics";

fn parse_strict(block: &str) -> Option<(Vec<String>, Vec<String>)> {
    let value: serde_json::Value = serde_json::from_str(block).ok()?;
    let map = value.as_object()?;
    let find = |name: &str| map.iter().find(|(k, _)| normalize_key(k) == name).and_then(|(_, v)| keywords_from_value(v));
    Some((find(OBJECTS_KEY)?, find(CHARACTERISTICS_KEY)?))
}

/// Reads the value after `key:` for loosely-formatted pseudo-JSON such as
/// `{Objects: "a, b", Environment Characteristics": "c"}`.
fn scan_value(text: &str, key: &str) -> Option<Vec<String>> {
    let lower = text.to_ascii_lowercase();
    let mut from = 0;
    while let Some(pos) = lower[from..].find(key) {
        let start = from + pos + key.len();
        from = start;
        let rest = text[start..].trim_start_matches(['"', '\'', ' ', '\t']);
        let Some(rest) = rest.strip_prefix(':') else { continue };
        let rest = rest.trim_start();
        if let Some(quoted) = rest.strip_prefix('"') {
            let end = quoted.find('"')?;
            return Some(split_keywords(&quoted[..end]));
        }
        if rest.starts_with('[') {
            let end = rest.find(']')?;
            let items: Vec<String> = rest[1..end]
                .split(',')
                .map(|s| s.trim().trim_matches(['"', '\'']).trim().to_owned())
                .filter(|s| !s.is_empty())
                .collect();
            return Some(items);
        }
        let end = rest.find(['\n', '}']).unwrap_or(rest.len());
        return Some(split_keywords(rest[..end].trim_end_matches(',')));
    }
    None
}

/// Extracts objects and characteristics from an LLM reply, tolerating prose
/// around the structured block and sloppy quoting inside it.
pub fn parse_llm_response(text: &str) -> Result<(Vec<String>, Vec<String>), LlmError> {
    let block = match (text.find('{'), text.rfind('}')) {
        (Some(a), Some(b)) if a < b => &text[a..=b],
        _ => text,
    };
    let parsed = parse_strict(block)
        .or_else(|| Some((scan_value(block, OBJECTS_KEY)?, scan_value(block, CHARACTERISTICS_KEY)?)));
    match parsed {
        Some((objects, characteristics)) if !objects.is_empty() && !characteristics.is_empty() => {
            Ok((objects, characteristics))
        }
        Some(_) => Err(LlmError::Malformed("empty keyword list".into())),
        None => Err(LlmError::Malformed("missing Objects or Environment Characteristics".into())),
    }
}

struct FallbackEntry {
    stems: &'static [&'static str],
    objects: &'static [&'static str],
    characteristics: &'static [&'static str],
}

const FALLBACK_TABLE: &[FallbackEntry] = &[
    FallbackEntry {
        stems: &["brainstorm", "design", "ideat", "workshop"],
        objects: &["whiteboards", "plants", "chairs", "small tables"],
        characteristics: &["bright", "open space", "natural light", "refreshing atmosphere", "varied textures"],
    },
    FallbackEntry {
        stems: &["lectur", "semin", "class", "stud", "educat", "lesson", "cours"],
        objects: &["bookshelves", "long wooden tables", "chairs", "reading lamps", "chalkboard"],
        characteristics: &["quiet", "warm lighting", "scholarly atmosphere", "polished wood", "orderly"],
    },
    FallbackEntry {
        stems: &["stor", "tale", "read", "bedtime"],
        objects: &["armchairs", "fireplace", "bookshelves", "rugs", "lanterns"],
        characteristics: &["cozy", "warm glow", "whimsical", "inviting", "soft textures"],
    },
    FallbackEntry {
        stems: &["party", "birthday", "celebrat", "wedding", "festiv"],
        objects: &["balloons", "banners", "long tables", "chairs", "string lights"],
        characteristics: &["festive", "colorful", "joyful", "bright", "lively"],
    },
    FallbackEntry {
        stems: &["plan", "vacation", "trip", "travel"],
        objects: &["maps", "large table", "chairs", "travel posters", "plants"],
        characteristics: &["airy", "sunlit", "inspiring", "organized", "inviting"],
    },
    FallbackEntry {
        stems: &["therap", "counsel", "wellness"],
        objects: &["couch", "armchair", "plants", "floor lamp", "side table"],
        characteristics: &["calm", "soothing colors", "soft lighting", "private", "serene"],
    },
];

const FALLBACK_DEFAULT: FallbackEntry = FallbackEntry {
    stems: &[],
    objects: &["chairs", "tables", "plants", "shelves", "lamps"],
    characteristics: &["well lit", "cohesive", "inviting", "clean", "balanced"],
};

fn fallback_entry(words: &str) -> Option<&'static FallbackEntry> {
    let words: Vec<String> = words
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect();
    FALLBACK_TABLE
        .iter()
        .find(|e| e.stems.iter().any(|stem| words.iter().any(|w| w.starts_with(stem))))
}

/// Local keywords for an activity (or, failing that, the theme).
pub fn fallback_keywords(activity: &str, theme: &str) -> (Vec<String>, Vec<String>) {
    let entry = fallback_entry(activity).or_else(|| fallback_entry(theme)).unwrap_or(&FALLBACK_DEFAULT);
    let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    (own(entry.objects), own(entry.characteristics))
}

/// Pads an activity/theme pair into a full prompt. Never fails for
/// nonempty input: LLM problems fall back to the local table.
pub fn expand(activity: &str, theme: &str, llm: &dyn LlmClient) -> Result<ExpandedPrompt, PromptError> {
    expand_with_system(activity, theme, llm, SYSTEM_PROMPT)
}

pub fn expand_with_system(
    activity: &str,
    theme: &str,
    llm: &dyn LlmClient,
    system: &str,
) -> Result<ExpandedPrompt, PromptError> {
    let base = base_prompt(activity, theme)?;
    let reply = llm.complete(system, &user_message(&base)).and_then(|text| parse_llm_response(&text));
    match reply {
        Ok((mut objects, mut characteristics)) => {
            let short = objects.len() < 4 || characteristics.len() < 4;
            let notes = short.then(|| {
                format!("LLM returned {} objects and {} characteristics", objects.len(), characteristics.len())
            });
            objects.truncate(MAX_KEYWORDS);
            characteristics.truncate(MAX_KEYWORDS);
            let mut out = ExpandedPrompt::new(base, objects, characteristics);
            out.diagnostic = notes;
            Ok(out)
        }
        Err(err) => {
            tracing::warn!(%err, "prompt expansion fell back to local keywords");
            let (objects, characteristics) = fallback_keywords(activity, theme);
            let mut out = ExpandedPrompt::new(base, objects, characteristics);
            out.fallback = true;
            out.diagnostic = Some(err.to_string());
            Ok(out)
        }
    }
}

/// Caching front end over an LLM client.
pub struct PromptStudio {
    llm: Arc<dyn LlmClient>,
    system_prompt: String,
    cache: Mutex<HashMap<(String, String), ExpandedPrompt>>,
}

impl PromptStudio {
    pub fn new(llm: Arc<dyn LlmClient>) -> Self {
        Self::with_system_prompt(llm, SYSTEM_PROMPT)
    }

    pub fn with_system_prompt(llm: Arc<dyn LlmClient>, system_prompt: impl Into<String>) -> Self {
        Self { llm, system_prompt: system_prompt.into(), cache: Mutex::new(HashMap::new()) }
    }

    /// Expands through the cache. Fallback results are not cached, so a
    /// recovered LLM is used on the next call.
    pub fn expand(&self, activity: &str, theme: &str) -> Result<ExpandedPrompt, PromptError> {
        let key = (activity.to_owned(), theme.to_owned());
        if let Some(hit) = self.cache.lock().expect("prompt cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let out = expand_with_system(activity, theme, self.llm.as_ref(), &self.system_prompt)?;
        if !out.fallback {
            self.cache.lock().expect("prompt cache poisoned").insert(key, out.clone());
        }
        Ok(out)
    }

    pub fn invalidate(&self, activity: &str, theme: &str) {
        self.cache
            .lock()
            .expect("prompt cache poisoned")
            .remove(&(activity.to_owned(), theme.to_owned()));
    }

    pub fn invalidate_all(&self) {
        self.cache.lock().expect("prompt cache poisoned").clear();
    }
}
