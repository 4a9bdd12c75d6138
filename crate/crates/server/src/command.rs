//! Scene mutation commands and their acknowledgements.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tableau_core::orchestrator::{EditKind, JobId};
use tableau_core::raster::digest_bytes;
use tableau_core::scene::{FeedId, Mode, NormPoint, Seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    SetPrompts { activity: String, theme: String },
    SetPromptStrength { strength: f64 },
    SetPreservation { feed_id: FeedId, preservation: f64 },
    /// Moves the feed's center.
    Move { feed_id: FeedId, cx: f64, cy: f64 },
    Scale { feed_id: FeedId, factor: f64 },
    SetMode { mode: Mode },
    /// Base64 PNG or JPEG, optionally as a `data:` URI.
    UploadPrior { image: String },
    Generate,
    RegionEdit { outline: Vec<NormPoint>, phrase: String, kind: EditKind },
    AutoLayout,
    Undo,
    LoadHistory { index: usize },
    FreezeToggle { feed_id: FeedId },
    SetSeed { seed: Seed },
}

impl Command {
    /// Commands that submit a generation job.
    pub fn is_generate(&self) -> bool {
        matches!(self, Command::Generate | Command::RegionEdit { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::SetPrompts { .. } => "set_prompts",
            Command::SetPromptStrength { .. } => "set_prompt_strength",
            Command::SetPreservation { .. } => "set_preservation",
            Command::Move { .. } => "move",
            Command::Scale { .. } => "scale",
            Command::SetMode { .. } => "set_mode",
            Command::UploadPrior { .. } => "upload_prior",
            Command::Generate => "generate",
            Command::RegionEdit { .. } => "region_edit",
            Command::AutoLayout => "auto_layout",
            Command::Undo => "undo",
            Command::LoadHistory { .. } => "load_history",
            Command::FreezeToggle { .. } => "freeze_toggle",
            Command::SetSeed { .. } => "set_seed",
        }
    }

    /// JSON form kept in history; uploaded image bytes are replaced by
    /// their hash.
    pub fn recorded(&self) -> Value {
        match self {
            Command::UploadPrior { image } => serde_json::json!({
                "type": "upload_prior",
                "image_sha256": digest_bytes(image.as_bytes()),
            }),
            other => serde_json::to_value(other).expect("commands always serialize"),
        }
    }
}

/// A command as sent by a client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandEnvelope {
    /// Who sent it, recorded per history entry.
    #[serde(default)]
    pub issuer: Option<String>,
    /// Client-chosen id echoed in the acknowledgement.
    #[serde(default)]
    pub command_id: Option<String>,
    #[serde(flatten)]
    pub command: Command,
}

impl CommandEnvelope {
    pub fn new(command: Command) -> Self {
        Self { issuer: None, command_id: None, command }
    }

    pub fn from(issuer: impl Into<String>, command: Command) -> Self {
        Self { issuer: Some(issuer.into()), command_id: None, command }
    }
}

impl From<Command> for CommandEnvelope {
    fn from(command: Command) -> Self {
        Self::new(command)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandAck {
    pub revision: usize,
    /// False when the command left the scene unchanged.
    pub appended: bool,
    pub changed_fields: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub job_id: Option<JobId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command_id: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_wire_format() {
        let env: CommandEnvelope = serde_json::from_str(
            r#"{"type":"move","feed_id":"feed-0","cx":0.25,"cy":0.5,"issuer":"ana","command_id":"c1"}"#,
        )
        .unwrap();
        assert_eq!(env.command, Command::Move { feed_id: "feed-0".into(), cx: 0.25, cy: 0.5 });
        assert_eq!(env.issuer.as_deref(), Some("ana"));
        let back = serde_json::to_value(&env).unwrap();
        assert_eq!(back["type"], "move");

        let gen: CommandEnvelope = serde_json::from_str(r#"{"type":"generate"}"#).unwrap();
        assert!(gen.command.is_generate());
        let edit: Command = serde_json::from_str(
            r#"{"type":"region_edit","outline":[{"x":0.1,"y":0.1},{"x":0.3,"y":0.1},{"x":0.3,"y":0.4}],"phrase":"bookshelf","kind":"add"}"#,
        )
        .unwrap();
        assert!(edit.is_generate());
        let seed: Command = serde_json::from_str(r#"{"type":"set_seed","seed":42}"#).unwrap();
        assert_eq!(seed, Command::SetSeed { seed: Seed::Fixed(42) });
        let mode: Command = serde_json::from_str(r#"{"type":"set_mode","mode":"CanvasImg2Img"}"#).unwrap();
        assert_eq!(mode, Command::SetMode { mode: Mode::CanvasImg2Img });
    }

    #[test]
    fn upload_recorded_without_bytes() {
        let cmd = Command::UploadPrior { image: "aGVsbG8=".into() };
        let v = cmd.recorded();
        assert!(v.get("image").is_none());
        assert_eq!(v["type"], "upload_prior");
    }
}
