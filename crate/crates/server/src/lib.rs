//! Session service for blended meeting environments: per-session writers
//! owning the scene, frame ingest, history with undo and replay, session
//! bundles, and the HTTP/WebSocket API.

pub mod api;
pub mod backends;
pub mod bundle;
pub mod command;
pub mod config;
pub mod error;
pub mod frames;
pub mod history;
pub mod mock_services;
pub mod server;
pub mod service;
pub mod session;
pub mod store;

pub use backends::Backends;
pub use command::{Command, CommandAck, CommandEnvelope};
pub use config::Config;
pub use error::SessionError;
pub use history::HistoryEntry;
pub use service::{Event, SessionHandle, SessionManager};
pub use session::{SessionId, SessionState};
