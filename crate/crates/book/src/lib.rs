//! The guide's chapters, compiled here so `cargo test` runs every snippet.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/scene.md")]
pub mod scene {}
#[doc = include_str!("../../../book/src/compositing.md")]
pub mod compositing {}
#[doc = include_str!("../../../book/src/prompts.md")]
pub mod prompts {}
#[doc = include_str!("../../../book/src/generation.md")]
pub mod generation {}
#[doc = include_str!("../../../book/src/layout.md")]
pub mod layout {}
#[doc = include_str!("../../../book/src/sessions.md")]
pub mod sessions {}
#[doc = include_str!("../../../book/src/api.md")]
pub mod api {}
#[doc = include_str!("../../../book/src/controls.md")]
pub mod controls {}
