use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use tableau_core::fixtures::{self, tables_prior, webcam_frame};
use tableau_core::orchestrator::{EditKind, JobStatus, MockBackend};
use tableau_core::raster::{encode_png_rgba, Raster};
use tableau_core::scene::{Canvas, FeedId, Mode, NormPoint, Seed};
use tableau_server::backends::Backends;
use tableau_server::config::Config;
use tableau_server::{Command, CommandEnvelope, SessionError, SessionHandle, SessionManager};

const WAIT: Duration = Duration::from_secs(60);

fn small() -> Canvas {
    Canvas { width_px: 512, height_px: 288, gen_width_px: 256, gen_height_px: 144 }
}

fn frame_png(w: u32, h: u32, shirt: [u8; 3]) -> Vec<u8> {
    encode_png_rgba(&webcam_frame(w, h, [120, 130, 150], shirt))
}

fn with_people(manager: &SessionManager, n: usize) -> (Arc<SessionHandle>, Vec<FeedId>) {
    let h = manager.create(Some(small())).unwrap();
    let mut feeds = Vec::new();
    for i in 0..n {
        let (feed, _) = h.join_blocking(&format!("p{i}")).unwrap();
        h.ingest_blocking(&feed, &frame_png(160, 120, [20 + 60 * i as u8, 80, 160])).unwrap();
        feeds.push(feed);
    }
    (h, feeds)
}

fn prompts(activity: &str, theme: &str) -> Command {
    Command::SetPrompts { activity: activity.into(), theme: theme.into() }
}

#[test]
fn join_tiles_feeds_and_records_issuer() {
    let m = SessionManager::mock();
    let (h, feeds) = with_people(&m, 3);
    let snap = h.snapshot();
    assert_eq!(snap.revision, 3);
    let xs: Vec<f64> = snap.scene_value.feeds.iter().map(|f| f.rect.cx).collect();
    assert!(xs.windows(2).all(|w| w[0] < w[1]), "{xs:?}");
    assert_eq!(h.history()[2].issuer.as_deref(), Some("p1"));
    assert_eq!(feeds, vec![FeedId::from("feed-0"), FeedId::from("feed-1"), FeedId::from("feed-2")]);
}

#[test]
fn first_frame_is_frozen_and_later_frames_update_live_only() {
    let m = SessionManager::mock();
    let h = m.create(Some(small())).unwrap();
    let (feed, _) = h.join_blocking("ana").unwrap();
    let first = h.ingest_blocking(&feed, &frame_png(160, 120, [200, 0, 0])).unwrap();
    assert!(first.frozen_now);
    let second = h.ingest_blocking(&feed, &frame_png(160, 120, [0, 200, 0])).unwrap();
    assert!(!second.frozen_now);
    assert_eq!(second.frozen_digest, first.frozen_digest);
    assert_ne!(second.digest, first.digest);
    let frozen = first.frozen_digest;
    assert!(matches!(h.raster(&frozen), Some(Raster::Rgba(_))));
}

#[test]
fn bad_frames_are_rejected_without_touching_the_session() {
    let m = SessionManager::mock();
    let h = m.create(Some(small())).unwrap();
    let (feed, _) = h.join_blocking("ana").unwrap();
    let rev = h.snapshot().revision;
    let corrupt = h.ingest_blocking(&feed, b"\x89PNG not really").unwrap_err();
    assert!(matches!(corrupt, SessionError::Decode(_)), "{corrupt:?}");
    let tiny = h.ingest_blocking(&feed, &frame_png(8, 8, [1, 2, 3])).unwrap_err();
    assert!(matches!(tiny, SessionError::Decode(_)), "{tiny:?}");
    let unknown = h.ingest_blocking(&FeedId::from("feed-9"), &frame_png(64, 48, [1, 2, 3])).unwrap_err();
    assert!(matches!(unknown, SessionError::UnknownFeed(_)), "{unknown:?}");
    assert_eq!(h.snapshot().revision, rev);
    assert_eq!(h.snapshot().participants[0].frames_received, 0);
}

#[test]
fn unchanged_commands_do_not_append() {
    let m = SessionManager::mock();
    let (h, _) = with_people(&m, 1);
    let a = h.command_blocking(prompts("brainstorming", "")).unwrap();
    assert!(a.appended);
    assert_eq!(a.changed_fields, vec!["activity_prompt".to_string()]);
    let b = h.command_blocking(prompts("brainstorming", "")).unwrap();
    assert!(!b.appended);
    assert_eq!(b.revision, a.revision);
}

#[test]
fn invalid_values_are_rejected() {
    let m = SessionManager::mock();
    let (h, feeds) = with_people(&m, 1);
    let rev = h.snapshot().revision;
    for cmd in [
        Command::SetPromptStrength { strength: 1.5 },
        Command::SetPreservation { feed_id: feeds[0].clone(), preservation: -0.1 },
        Command::Move { feed_id: feeds[0].clone(), cx: f64::NAN, cy: 0.5 },
        Command::Move { feed_id: FeedId::from("nobody"), cx: 0.5, cy: 0.5 },
        Command::LoadHistory { index: 999 },
    ] {
        assert!(h.command_blocking(cmd.clone()).is_err(), "{cmd:?} accepted");
    }
    assert_eq!(h.snapshot().revision, rev);
}

#[test]
fn generate_inpaints_and_segments() {
    let m = SessionManager::mock();
    let (h, _) = with_people(&m, 2);
    h.command_blocking(prompts("brainstorming session", "mushroom forest")).unwrap();
    let ack = h.run_blocking(Command::Generate, WAIT).unwrap();
    assert!(ack.changed_fields.contains(&"environment".to_string()), "{:?}", ack.changed_fields);
    let entry = h.history_entry(ack.revision).unwrap();
    assert_eq!(entry.label.as_deref(), Some(format!("generate: {}", fixtures::MUSHROOM_FOREST_PROMPT).as_str()));
    let job = entry.job.as_ref().expect("job recorded");
    assert_eq!(job.prompt, fixtures::MUSHROOM_FOREST_PROMPT);
    let result = entry.result_digest.clone().expect("result stored");
    assert!(h.raster(&result).is_some());
    let snap = h.snapshot();
    assert_eq!(snap.last_job.as_ref().unwrap().status, JobStatus::Done);
    let img = h.render().unwrap();
    assert_eq!(img.dimensions(), (512, 288));
}

#[test]
fn generate_needs_a_prompt_and_a_subject() {
    let m = SessionManager::mock();
    let h = m.create(Some(small())).unwrap();
    let err = h.command_blocking(Command::Generate).unwrap_err();
    assert!(matches!(err, SessionError::Prompt(_)), "{err:?}");
    h.command_blocking(prompts("storytelling", "")).unwrap();
    let err = h.command_blocking(Command::Generate).unwrap_err();
    assert!(matches!(err, SessionError::CommandRejected(_)), "{err:?}");
}

#[test]
fn second_generate_while_busy_is_rejected() {
    let mut config = Config::mock();
    config.canvas = small();
    let mut backends = Backends::mock(&config);
    backends.generation = Arc::new(MockBackend::with_delay(Duration::from_millis(400)));
    let m = SessionManager::new(config, backends);
    let (h, feeds) = with_people(&m, 1);
    h.command_blocking(prompts("storytelling", "")).unwrap();
    let first = h.command_blocking(Command::Generate).unwrap();
    assert!(first.job_id.is_some());
    let err = h.command_blocking(Command::Generate).unwrap_err();
    assert!(matches!(err, SessionError::CommandRejected(_)), "{err:?}");
    // Non-generate edits still go through while the job runs.
    h.command_blocking(Command::Move { feed_id: feeds[0].clone(), cx: 0.3, cy: 0.6 }).unwrap();
    let snap = h.wait_idle_blocking(WAIT).unwrap();
    assert_eq!(snap.last_job.as_ref().unwrap().status, JobStatus::Done);
    assert!((snap.scene_value.feeds[0].rect.cx - 0.3).abs() < 1e-9);
    assert!(snap.scene_value.environment.is_some());
}

#[test]
fn upload_prior_letterboxes_and_auto_layout_seats_feeds() {
    let m = SessionManager::mock();
    let (h, feeds) = with_people(&m, 2);
    let prior = B64.encode(encode_png_rgba(&image::DynamicImage::ImageRgb8(fixtures::library_environment(512, 288)).to_rgba8()));
    let ack = h.command_blocking(Command::UploadPrior { image: format!("data:image/png;base64,{prior}") }).unwrap();
    assert!(ack.changed_fields.contains(&"foreground".to_string()));
    let ack = h.command_blocking(Command::AutoLayout).unwrap();
    assert!(ack.appended);
    let snap = h.snapshot();
    let moved: Vec<_> = snap.scene_value.feeds.iter().map(|f| f.rect.cy).collect();
    assert!(moved.iter().all(|cy| (cy - 0.5).abs() > 1e-6), "{moved:?}");
    assert_eq!(feeds.len(), 2);

    let wide = B64.encode(encode_png_rgba(&tables_prior(400, 100, 3)));
    h.command_blocking(Command::UploadPrior { image: wide }).unwrap();
    let label = h.history().last().unwrap().label.clone().unwrap();
    assert!(label.contains("letterboxed"), "{label}");
}

#[test]
fn region_edit_and_canvas_mode() {
    let m = SessionManager::mock();
    let (h, _) = with_people(&m, 1);
    let prior = B64.encode(encode_png_rgba(&tables_prior(512, 288, 2)));
    h.command_blocking(Command::UploadPrior { image: prior }).unwrap();
    let square = vec![NormPoint::new(0.6, 0.1), NormPoint::new(0.9, 0.1), NormPoint::new(0.9, 0.4), NormPoint::new(0.6, 0.4)];
    let ack = h
        .run_blocking(Command::RegionEdit { outline: square.clone(), phrase: "a castle".into(), kind: EditKind::Add }, WAIT)
        .unwrap();
    let entry = h.history_entry(ack.revision).unwrap();
    assert_eq!(entry.label.as_deref(), Some("region edit: add \"a castle\""));
    let empty = h.command_blocking(Command::RegionEdit { outline: square, phrase: " ".into(), kind: EditKind::Add });
    assert!(empty.is_err());

    h.command_blocking(Command::SetMode { mode: Mode::CanvasImg2Img }).unwrap();
    h.command_blocking(Command::SetSeed { seed: Seed::Fixed(7) }).unwrap();
    h.command_blocking(prompts("storytelling", "magic castle, ballroom")).unwrap();
    let ack = h.run_blocking(Command::Generate, WAIT).unwrap();
    let job = h.history_entry(ack.revision).unwrap().job.clone().unwrap();
    assert_eq!(job.seed, 7);
    assert!(job.mask_digest.is_none());
}

#[test]
fn undo_and_load_history() {
    let m = SessionManager::mock();
    let (h, feeds) = with_people(&m, 1);
    let base = h.snapshot().scene_digest.clone();
    h.command_blocking(Command::Move { feed_id: feeds[0].clone(), cx: 0.2, cy: 0.7 }).unwrap();
    h.command_blocking(Command::Scale { feed_id: feeds[0].clone(), factor: 1.5 }).unwrap();
    let undo = h.command_blocking(Command::Undo).unwrap();
    assert!(undo.appended);
    assert_eq!(h.history()[undo.revision].scene_digest, h.history()[undo.revision - 2].scene_digest);
    let again = h.command_blocking(Command::Undo).unwrap();
    assert_eq!(h.snapshot().scene_digest, base);
    assert_eq!(h.history()[again.revision].restored_from, Some(1));
    let back = h.command_blocking(Command::LoadHistory { index: 3 }).unwrap();
    assert_eq!(h.history()[back.revision].scene_digest, h.history()[3].scene_digest);

    let fresh = m.create(Some(small())).unwrap();
    assert!(matches!(fresh.command_blocking(Command::Undo), Err(SessionError::NothingToUndo)));
}

#[test]
fn freeze_toggle_switches_the_rendered_frame() {
    let m = SessionManager::mock();
    let (h, feeds) = with_people(&m, 1);
    let live_first = h.render().unwrap();
    h.ingest_blocking(&feeds[0], &frame_png(160, 120, [250, 250, 0])).unwrap();
    let live_second = h.render().unwrap();
    assert_ne!(live_first, live_second);
    h.command_blocking(Command::FreezeToggle { feed_id: feeds[0].clone() }).unwrap();
    assert_eq!(h.render().unwrap(), live_first);
    assert!(!h.snapshot().scene_value.feeds[0].live);
}

#[test]
fn events_follow_revisions() {
    let m = SessionManager::mock();
    let h = m.create(Some(small())).unwrap();
    let mut rx = h.subscribe();
    h.command_blocking(CommandEnvelope {
        issuer: Some("kim".into()),
        command_id: Some("c1".into()),
        command: prompts("storytelling", ""),
    })
    .unwrap();
    let ev = serde_json::to_value(rx.blocking_recv().unwrap()).unwrap();
    assert_eq!(ev["type"], "revision");
    assert_eq!(ev["revision"], 1);
    assert_eq!(ev["issuer"], "kim");
    assert_eq!(ev["command_id"], "c1");
}
