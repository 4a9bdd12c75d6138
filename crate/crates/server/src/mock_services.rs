//! Offline HTTP stand-ins for the external services: a WebUI-compatible
//! img2img endpoint, an OpenAI-style chat endpoint, and segmentation and
//! matting services. They speak the same wire formats as the real clients.

use axum::body::Bytes;
use axum::extract::DefaultBodyLimit;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::DynamicImage;
use serde_json::{json, Value};
use tableau_core::fixtures;
use tableau_core::orchestrator::{job_from_payload, mock_generate, WebUiResponse, IMG2IMG_PATH};
use tableau_core::prompt::{ChatRequest, LlmClient};
use tableau_core::raster::{self, encode_png_gray};
use tableau_core::segmentation::{
    person_matte, ImagePayload, InstancePayload, MatteResponse, MattingMethod, SegmentResponse,
    SegmentationBackend, MATTE_PATH, SEGMENT_PATH,
};

use crate::api::MAX_BODY_BYTES;

pub const CHAT_PATH: &str = "/v1/chat/completions";

fn fail(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn decode_image(b64: &str) -> Result<DynamicImage, Response> {
    let bytes = B64.decode(b64).map_err(|e| fail(StatusCode::BAD_REQUEST, format!("bad base64: {e}")))?;
    raster::decode_image(&bytes).map_err(|e| fail(StatusCode::BAD_REQUEST, e.to_string()))
}

async fn img2img(body: Bytes) -> Response {
    let doc: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return fail(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let result = tokio::task::spawn_blocking(move || job_from_payload(&doc).map(|job| mock_generate(&job))).await;
    match result {
        Ok(Ok(img)) => Json(WebUiResponse::from_image(&img)).into_response(),
        Ok(Err(e)) => fail(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Err(e) => fail(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn chat(body: Bytes) -> Response {
    let req: ChatRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return fail(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let find = |role: &str| req.messages.iter().find(|m| m.role == role).map(|m| m.content.as_str()).unwrap_or("");
    match fixtures::fixture_llm().complete(find("system"), find("user")) {
        Ok(content) => Json(json!({
            "object": "chat.completion",
            "model": req.model,
            "choices": [{ "index": 0, "message": { "role": "assistant", "content": content }, "finish_reason": "stop" }],
        }))
        .into_response(),
        Err(e) => fail(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
    }
}

async fn segment(Json(req): Json<ImagePayload>) -> Response {
    let img = match decode_image(&req.image) {
        Ok(i) => i.to_rgb8(),
        Err(r) => return r,
    };
    let segmenter = fixtures::library_segmenter(img.width(), img.height());
    match segmenter.segment(&img) {
        Ok(instances) => Json(SegmentResponse {
            instances: instances
                .into_iter()
                .map(|i| InstancePayload {
                    label: i.class_label,
                    confidence: i.confidence,
                    mask: B64.encode(encode_png_gray(&i.mask)),
                })
                .collect(),
        })
        .into_response(),
        Err(e) => fail(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Keys out green, or uses the alpha channel when the image has one.
async fn matte(Json(req): Json<ImagePayload>) -> Response {
    let img = match decode_image(&req.image) {
        Ok(i) => i,
        Err(r) => return r,
    };
    let method = if img.color().has_alpha() { MattingMethod::AlphaChannel } else { MattingMethod::green_screen() };
    match person_matte(&img, &method) {
        Ok((_, alpha)) => Json(MatteResponse { mask: B64.encode(encode_png_gray(&alpha)) }).into_response(),
        Err(e) => fail(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

/// All mock services on one router, at their real paths.
pub fn router() -> Router {
    Router::new()
        .route(IMG2IMG_PATH, post(img2img))
        .route(CHAT_PATH, post(chat))
        .route(SEGMENT_PATH, post(segment))
        .route(MATTE_PATH, post(matte))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
}
