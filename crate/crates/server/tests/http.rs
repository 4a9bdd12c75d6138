use std::net::TcpStream;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tableau_core::fixtures::{self, webcam_frame};
use tableau_core::prompt::LlmProfile;
use tableau_core::raster::encode_png_rgba;
use tableau_core::scene::Canvas;
use tableau_core::segmentation::{MattingMethod, ServiceProfile};
use tableau_server::backends::Backends;
use tableau_server::config::{Config, OcclusionFill};
use tableau_server::mock_services::CHAT_PATH;
use tableau_server::server::{self, BackgroundServer};
use tableau_server::SessionManager;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

fn small() -> Value {
    json!({ "width_px": 512, "height_px": 288, "gen_width_px": 256, "gen_height_px": 144 })
}

fn mock_server(token: Option<&str>) -> BackgroundServer {
    let mut config = Config::mock();
    config.token = token.map(str::to_owned);
    let backends = Backends::mock(&config);
    server::spawn_background(server::app(SessionManager::new(config, backends), true), "127.0.0.1:0").unwrap()
}

/// A server whose backends are the real HTTP clients, pointed at the mock
/// services hosted by `services`.
fn live_server(services: &BackgroundServer) -> BackgroundServer {
    let base = format!("{}/mock", services.url());
    let mut config = Config::default();
    config.canvas = Canvas { width_px: 512, height_px: 288, gen_width_px: 256, gen_height_px: 144 };
    config.backend.base_url = base.clone();
    config.backend.max_retries = 0;
    config.llm = Some(LlmProfile::new(format!("{base}{CHAT_PATH}"), "gpt-3.5-turbo"));
    config.segmentation.service = Some(ServiceProfile::new(base.clone()));
    config.matting = MattingMethod::ExternalService(ServiceProfile::new(base));
    config.occlusion_fill = OcclusionFill::Backend;
    config.validate().unwrap();
    let backends = Backends::from_config(&config);
    server::spawn_background(server::app(SessionManager::new(config, backends), false), "127.0.0.1:0").unwrap()
}

struct Client {
    base: String,
    token: Option<String>,
}

impl Client {
    fn new(server: &BackgroundServer) -> Self {
        Self { base: format!("{}/v1", server.url()), token: None }
    }

    fn send(&self, method: &str, path: &str, body: Option<Vec<u8>>, content_type: &str) -> (u16, Vec<u8>) {
        let url = format!("{}{path}", self.base);
        let auth = self.token.as_ref().map(|t| format!("Bearer {t}"));
        let result = match (method, body) {
            ("GET", _) => {
                let mut r = ureq::get(&url).config().http_status_as_error(false).build();
                if let Some(a) = &auth {
                    r = r.header("Authorization", a);
                }
                r.call()
            }
            ("DELETE", _) => {
                let mut r = ureq::delete(&url).config().http_status_as_error(false).build();
                if let Some(a) = &auth {
                    r = r.header("Authorization", a);
                }
                r.call()
            }
            (_, body) => {
                let mut r = ureq::post(&url).config().http_status_as_error(false).build();
                if let Some(a) = &auth {
                    r = r.header("Authorization", a);
                }
                r.header("Content-Type", content_type).send(&body.unwrap_or_default()[..])
            }
        };
        let mut resp = result.unwrap();
        let status = resp.status().as_u16();
        (status, resp.body_mut().with_config().limit(64 << 20).read_to_vec().unwrap())
    }

    fn get(&self, path: &str) -> (u16, Value) {
        let (s, b) = self.send("GET", path, None, "");
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let (s, b) = self.send("POST", path, Some(body.to_string().into_bytes()), "application/json");
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    fn frame(&self, session: &str, feed: &str, png: Vec<u8>) -> (u16, Value) {
        let (s, b) = self.send("POST", &format!("/sessions/{session}/feeds/{feed}/frames"), Some(png), "image/png");
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    fn create(&self) -> String {
        let (s, v) = self.post("/sessions", json!({ "canvas": small() }));
        assert_eq!(s, 201, "{v}");
        v["session_id"].as_str().unwrap().to_owned()
    }

    fn join(&self, session: &str, name: &str, shirt: [u8; 3]) -> String {
        let (s, v) = self.post(&format!("/sessions/{session}/join"), json!({ "display_name": name }));
        assert_eq!(s, 201, "{v}");
        let feed = v["feed_id"].as_str().unwrap().to_owned();
        let (s, v) = self.frame(session, &feed, encode_png_rgba(&webcam_frame(160, 120, [120, 130, 150], shirt)));
        assert_eq!(s, 200, "{v}");
        feed
    }

    fn command(&self, session: &str, cmd: Value) -> (u16, Value) {
        self.post(&format!("/sessions/{session}/commands"), cmd)
    }

    fn wait_job(&self, session: &str, job: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let (s, v) = self.get(&format!("/sessions/{session}/jobs/{job}"));
            assert_eq!(s, 200, "{v}");
            if v["status"] != "running" && v["status"] != "queued" {
                return v;
            }
            assert!(Instant::now() < deadline, "job {job} never finished");
            std::thread::sleep(Duration::from_millis(10));
        }
    }
}

#[test]
fn health_and_error_codes() {
    let srv = mock_server(None);
    let c = Client::new(&srv);
    let (s, v) = c.get("/health");
    assert_eq!((s, v["status"].as_str()), (200, Some("ok")));

    assert_eq!(c.get("/sessions/not-a-uuid").0, 404);
    assert_eq!(c.get(&format!("/sessions/{}", uuid::Uuid::new_v4())).0, 404);
    let id = c.create();
    let (s, v) = c.command(&id, json!({ "type": "set_prompt_strength", "strength": 2.0 }));
    assert_eq!(s, 422, "{v}");
    assert!(v["error"]["code"].is_string());
    assert_eq!(c.command(&id, json!({ "type": "no_such_command" })).0, 422);
    assert_eq!(c.command(&id, json!({ "type": "undo" })).0, 422);
    let (s, _) = c.frame(&id, "feed-0", b"junk".to_vec());
    assert_eq!(s, 404);
    let feed = c.join(&id, "ana", [200, 0, 0]);
    assert_eq!(c.frame(&id, &feed, b"junk".to_vec()).0, 400);
    assert_eq!(c.get(&format!("/sessions/{id}/history/99")).0, 422);
    assert_eq!(c.get(&format!("/sessions/{id}/rasters/deadbeef")).0, 404);

    let (s, list) = c.get("/sessions");
    assert_eq!(s, 200);
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(c.send("DELETE", &format!("/sessions/{id}"), None, "").0, 204);
    assert_eq!(c.get(&format!("/sessions/{id}")).0, 404);
}

#[test]
fn token_is_required_when_configured() {
    let srv = mock_server(Some("s3cret"));
    let mut c = Client::new(&srv);
    assert_eq!(c.get("/health").0, 200);
    assert_eq!(c.post("/sessions", json!({})).0, 401);
    c.token = Some("wrong".into());
    assert_eq!(c.post("/sessions", json!({})).0, 401);
    c.token = Some("s3cret".into());
    assert_eq!(c.post("/sessions", json!({})).0, 201);
    let (s, _) = ureq::get(&format!("{}/v1/sessions?token=s3cret", srv.url()))
        .call()
        .map(|r| (r.status().as_u16(), ()))
        .unwrap();
    assert_eq!(s, 200);
}

#[test]
fn generate_over_http_then_render_and_history() {
    let srv = mock_server(None);
    let c = Client::new(&srv);
    let id = c.create();
    c.join(&id, "ana", [200, 40, 40]);
    c.join(&id, "ben", [40, 40, 200]);
    let (s, _) = c.command(&id, json!({ "type": "set_prompts", "activity": "brainstorming", "theme": "" }));
    assert_eq!(s, 200);
    let (s, ack) = c.command(&id, json!({ "type": "generate", "issuer": "ana", "command_id": "g1" }));
    assert_eq!(s, 202, "{ack}");
    assert_eq!(ack["command_id"], "g1");
    let job = c.wait_job(&id, ack["job_id"].as_str().unwrap());
    assert_eq!(job["status"], "done", "{job}");
    let entry_index = job["entry"].as_u64().unwrap();

    let (s, entry) = c.get(&format!("/sessions/{id}/history/{entry_index}"));
    assert_eq!(s, 200);
    assert_eq!(entry["issuer"], "ana");
    let digest = entry["result_digest"].as_str().unwrap();
    let (s, png) = c.send("GET", &format!("/sessions/{id}/rasters/{digest}"), None, "");
    assert_eq!(s, 200);
    assert_eq!(image::load_from_memory(&png).unwrap().width(), 256);

    let (s, png) = c.send("GET", &format!("/sessions/{id}/render"), None, "");
    assert_eq!(s, 200);
    assert_eq!(image::load_from_memory(&png).unwrap().width(), 512);

    let (_, summary) = c.get(&format!("/sessions/{id}/history"));
    assert_eq!(summary.as_array().unwrap().len() as u64, entry_index + 1);
    let (_, full) = c.get(&format!("/sessions/{id}/history?full=true"));
    assert!(full[0]["scene"].is_object());

    let (s, v) = c.command(&id, json!({ "type": "load_history", "index": 1 }));
    assert_eq!(s, 200, "{v}");
    assert_eq!(v["changed_fields"].as_array().map(|a| !a.is_empty()), Some(true));
}

#[test]
fn export_and_import_over_http() {
    let srv = mock_server(None);
    let c = Client::new(&srv);
    let id = c.create();
    c.join(&id, "ana", [200, 40, 40]);
    c.command(&id, json!({ "type": "set_seed", "seed": 42 }));
    let dir = tempfile::tempdir().unwrap();
    let (s, v) = c.post(&format!("/sessions/{id}/export"), json!({ "path": dir.path() }));
    assert_eq!(s, 200, "{v}");
    assert_eq!(c.post("/sessions/import", json!({ "path": dir.path() })).0, 409);

    let other = mock_server(None);
    let c2 = Client::new(&other);
    let (s, v) = c2.post("/sessions/import", json!({ "path": dir.path() }));
    assert_eq!(s, 201, "{v}");
    assert_eq!(v["session_id"], id.as_str());
    assert_eq!(v["scene"]["seed"], 42);
}

type Ws = WebSocket<MaybeTlsStream<TcpStream>>;

fn ws_connect(srv: &BackgroundServer, id: &str) -> Ws {
    let url = format!("ws://{}/v1/sessions/{id}/ws", srv.addr);
    let (ws, _) = tungstenite::connect(url).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    }
    ws
}

fn ws_next(ws: &mut Ws) -> Value {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            _ => continue,
        }
    }
}

fn ws_until(ws: &mut Ws, pred: impl Fn(&Value) -> bool) -> Value {
    loop {
        let v = ws_next(ws);
        if pred(&v) {
            return v;
        }
    }
}

#[test]
fn websocket_commands_and_events() {
    let srv = mock_server(None);
    let c = Client::new(&srv);
    let id = c.create();
    let mut a = ws_connect(&srv, &id);
    let mut b = ws_connect(&srv, &id);
    assert_eq!(ws_next(&mut a)["type"], "hello");
    let hello = ws_next(&mut b);
    assert_eq!(hello["snapshot"]["revision"], 0);

    c.join(&id, "ana", [200, 40, 40]);
    let ev = ws_until(&mut b, |v| v["type"] == "revision");
    assert_eq!(ev["revision"], 1);

    let cmd = json!({ "type": "set_prompts", "activity": "storytelling", "theme": "", "issuer": "ana", "command_id": "w1" });
    a.send(Message::text(cmd.to_string())).unwrap();
    let ack = ws_until(&mut a, |v| v["type"] == "ack");
    assert_eq!(ack["command_id"], "w1");
    assert_eq!(ack["ack"]["revision"], 2);
    let ev = ws_until(&mut b, |v| v["type"] == "revision" && v["revision"] == 2);
    assert_eq!(ev["issuer"], "ana");
    assert_eq!(ev["changed_fields"], json!(["activity_prompt"]));

    a.send(Message::text(json!({ "type": "generate", "command_id": "w2" }).to_string())).unwrap();
    let ack = ws_until(&mut a, |v| v["type"] == "ack" || v["type"] == "error");
    assert_eq!(ack["type"], "ack", "{ack}");
    let done = ws_until(&mut b, |v| v["type"] == "job" && v["job"]["status"] != "running");
    assert_eq!(done["job"]["status"], "done");

    a.send(Message::text(json!({ "type": "set_prompt_strength", "strength": -1 }).to_string())).unwrap();
    let err = ws_until(&mut a, |v| v["type"] == "error");
    assert_eq!(err["status"], 422);
    a.send(Message::text("not json")).unwrap();
    assert_eq!(ws_until(&mut a, |v| v["type"] == "error")["status"], 422);

    a.close(None).unwrap();
    b.close(None).unwrap();
    let _ = a.read();
    let _ = b.read();
}

#[test]
fn live_clients_against_loopback_services() {
    let services = mock_server(None);
    let srv = live_server(&services);
    let c = Client::new(&srv);
    let id = c.create();
    c.join(&id, "ana", [200, 40, 40]);
    let (_, snap) = c.get(&format!("/sessions/{id}"));
    assert_eq!(snap["participants"][0]["frames_received"], 1);

    c.command(&id, json!({ "type": "set_prompts", "activity": "brainstorming session", "theme": "mushroom forest" }));
    let (s, ack) = c.command(&id, json!({ "type": "generate" }));
    assert_eq!(s, 202, "{ack}");
    let job = c.wait_job(&id, ack["job_id"].as_str().unwrap());
    assert_eq!(job["status"], "done", "{job}");
    let (_, entry) = c.get(&format!("/sessions/{id}/history/{}", job["entry"]));
    assert_eq!(entry["job"]["prompt"], fixtures::MUSHROOM_FOREST_PROMPT);

    let lib = image::DynamicImage::ImageRgb8(fixtures::library_environment(512, 288)).to_rgba8();
    let b64 = base64::Engine::encode(&base64::engine::general_purpose::STANDARD, encode_png_rgba(&lib));
    let (s, v) = c.command(&id, json!({ "type": "upload_prior", "image": b64 }));
    assert_eq!(s, 200, "{v}");
    let (_, snap) = c.get(&format!("/sessions/{id}"));
    assert!(!snap["scene"]["foreground"].as_array().unwrap().is_empty(), "{}", snap["scene"]["foreground"]);
}

#[test]
fn live_generation_reports_backend_failure() {
    let services = mock_server(None);
    let srv = live_server(&services);
    let c = Client::new(&srv);
    let id = c.create();
    c.join(&id, "ana", [200, 40, 40]);
    c.command(&id, json!({ "type": "set_prompts", "activity": "storytelling", "theme": "" }));
    drop(services);
    let (s, ack) = c.command(&id, json!({ "type": "generate" }));
    assert_eq!(s, 202, "{ack}");
    let job = c.wait_job(&id, ack["job_id"].as_str().unwrap());
    assert_eq!(job["status"], "failed", "{job}");
    assert!(job["error"].is_string());
}
