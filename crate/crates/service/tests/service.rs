use attn_core::audio::Waveform;
use attn_core::embeddings::{EmbeddingStore, Provenance, TargetEmbedding};
use attn_core::personalization::DataDir;
use attn_core::suppressor::{init_model, SuppressorConfig};
use attn_service::protocol::*;
use attn_service::{serve_tcp, serve_ws, Service, TcpClient};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::net::TcpListener;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

const T: Duration = Duration::from_secs(10);

fn store(ids: &[&str]) -> EmbeddingStore {
    let mut s = EmbeddingStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for id in ids {
        let v: Vec<f32> = (0..768).map(|_| rng.gen_range(-1.0..1.0)).collect();
        s.upsert(id, TargetEmbedding::new(v).unwrap(), Provenance::Builtin, 1).unwrap();
    }
    s
}

fn service_with(ids: &[&str]) -> (Arc<Service>, tempfile::TempDir) {
    let cfg = SuppressorConfig { channels: vec![2, 2, 4, 4], lstm_hidden: 4, ..SuppressorConfig::default() };
    let model = Arc::new(init_model(&cfg, 2).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::new(model, store(ids), DataDir::open(dir.path()).unwrap()).unwrap();
    (Arc::new(svc), dir)
}

fn service() -> (Arc<Service>, tempfile::TempDir) {
    service_with(&["tone", "chirp", "noise_burst", "click_train", "hum", "hiss"])
}

fn req(id: &str, cmd: Command) -> Request {
    Request::new(id, cmd)
}

fn start(rate: u32) -> Command {
    Command::StartSession { device_rate: Some(rate), targets: None, alpha: None }
}

fn sine(freq: f64, secs: f64, rate: u32) -> Waveform {
    let n = (secs * rate as f64) as usize;
    Waveform::new((0..n).map(|i| 0.3 * (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32).collect(), rate).unwrap()
}

fn states(sub: &attn_service::Subscription) -> Vec<StateInfo> {
    sub.events
        .try_iter()
        .filter_map(|e| match e.event {
            Event::State(s) => Some(s),
            _ => None,
        })
        .collect()
}

#[test]
fn strength_change_is_echoed_in_a_state_event() {
    let (svc, _d) = service();
    let sub = svc.subscribe();
    assert_eq!(states(&sub).len(), 1);
    let r = svc.handle(&req("a", Command::SetStrength { alpha: 0.5 }));
    assert!(r.ok, "{r:?}");
    assert_eq!(r.id.as_deref(), Some("a"));
    // the event is queued before handle returns: no audio hop is needed
    let s = states(&sub);
    assert_eq!(s.last().unwrap().alpha, 0.5);
    assert_eq!(svc.handle(&req("b", Command::SetStrength { alpha: 1.5 })).code(), Some("range"));
}

#[test]
fn target_errors_are_propagated() {
    let (svc, _d) = service();
    let r = svc.handle(&req("a", Command::SetTargets { ids: vec!["tone".into(), "hum".into(), "hiss".into(), "chirp".into()] }));
    assert_eq!(r.code(), Some("target_cap"));
    assert_eq!(svc.handle(&req("b", Command::SetTargets { ids: vec!["bagpipe".into()] })).code(), Some("not_found"));
    assert!(svc.state_info().targets.is_empty());
    let bad = svc.handle_text(r#"{"v":1,"id":"z","cmd":"set_targets","args":{"ids":3}}"#);
    assert_eq!((bad.code(), bad.id.as_deref()), (Some("protocol"), Some("z")));
}

#[test]
fn strength_reaches_the_audio_at_the_next_hop() {
    let (svc, _d) = service();
    assert!(svc.handle(&req("s", Command::StartSession { device_rate: Some(16_000), targets: Some(vec!["hum".into()]), alpha: Some(1.0) })).ok);
    let x = sine(300.0, 1.0, 16_000);
    let mut wet = Vec::new();
    for c in x.samples[..8000].chunks(400) {
        wet.extend(svc.process_audio(c).unwrap());
    }
    assert_ne!(&wet[..], &x.samples[..wet.len()]);
    assert!(svc.handle(&req("a", Command::SetStrength { alpha: 0.0 })).ok);
    let before = wet.len();
    let dry = svc.process_audio(&x.samples[8000..8400]).unwrap();
    assert_eq!(dry.len(), 400);
    assert_eq!(&dry[..], &x.samples[before..before + 400]);
}

#[test]
fn mutating_retries_are_idempotent() {
    let (svc, _d) = service();
    let sub = svc.subscribe();
    let r = req("p1", Command::UpsertProfile { id: None, description: "sharp beeps".into() });
    let first = svc.handle(&r);
    let again = svc.handle(&r);
    assert_eq!(first, again);
    let list = svc.handle(&req("l", Command::ListProfiles));
    assert_eq!(list.result.unwrap()["profiles"].as_array().unwrap().len(), 1);
    assert_eq!(states(&sub).len(), 2);
    let other = svc.handle(&req("p1", Command::DeleteProfile { id: 1 }));
    assert_eq!(other.code(), Some("protocol"));
}

#[test]
fn subscribers_see_the_same_state_sequence() {
    let (svc, _d) = service();
    let (a, b) = (svc.subscribe(), svc.subscribe());
    a.events.try_iter().for_each(drop);
    b.events.try_iter().for_each(drop);
    for (i, alpha) in [0.1, 0.2, 0.3].into_iter().enumerate() {
        svc.handle(&req(&format!("r{i}"), Command::SetStrength { alpha }));
    }
    svc.handle(&req("t", Command::SetTargets { ids: vec!["hum".into()] }));
    let (ea, eb): (Vec<_>, Vec<_>) = (a.events.try_iter().collect(), b.events.try_iter().collect());
    assert_eq!(ea.len(), 4);
    assert_eq!(ea, eb);
}

#[test]
fn slow_subscribers_are_disconnected() {
    let (svc, _d) = service();
    let stalled = svc.subscribe();
    let live = svc.subscribe();
    for i in 0..1100 {
        svc.handle(&req(&format!("r{i}"), Command::SetStrength { alpha: (i % 10) as f64 / 10.0 }));
        live.events.try_iter().for_each(drop);
    }
    assert_eq!(svc.bus().subscriber_count(), 1);
    assert_eq!(stalled.events.try_iter().count(), 1024);
    assert!(stalled.events.recv().is_err());
}

#[test]
fn known_class_suggestion_can_be_accepted() {
    let (svc, _d) = service();
    svc.handle(&req("s", start(48_000)));
    let sub = svc.subscribe();
    svc.feed_wave(&sine(440.0, 1.0, 48_000)).unwrap();
    let sugg = sub
        .events
        .try_iter()
        .find_map(|e| match e.event {
            Event::Suggestion(s) => Some(s),
            _ => None,
        })
        .expect("no suggestion");
    assert_eq!((sugg.kind.as_str(), sugg.class_id.as_deref()), ("known_class", Some("tone")));
    assert!(sugg.expires > sugg.created);
    let r = svc.handle(&req("acc", Command::AcceptSuggestion { id: sugg.id }));
    assert!(r.ok, "{r:?}");
    assert_eq!(svc.state_info().targets, vec!["tone"]);
    assert_eq!(svc.handle(&req("acc2", Command::AcceptSuggestion { id: sugg.id })).code(), Some("not_found"));
}

#[test]
fn metrics_arrive_once_per_second_of_audio() {
    let (svc, _d) = service();
    svc.handle(&req("s", start(48_000)));
    let sub = svc.subscribe();
    svc.feed_wave(&sine(440.0, 3.0, 48_000)).unwrap();
    let secs: Vec<f64> = sub
        .events
        .try_iter()
        .filter_map(|e| match e.event {
            Event::Metrics(m) => Some(m),
            _ => None,
        })
        .map(|m| {
            assert!(m.cpu.is_none() && m.battery.is_none());
            assert!(m.high_water <= m.buffer_cap);
            m.stream_secs
        })
        .collect();
    assert_eq!(secs, vec![1.0, 2.0, 3.0]);
    assert!(svc.handle(&req("x", Command::StopSession)).ok);
    assert!(svc.process_audio(&[0.0; 10]).is_err());
    assert_eq!(svc.handle(&req("y", Command::StopSession)).code(), Some("state"));
}

#[test]
fn custom_class_lifecycle_over_commands() {
    let (svc, dir) = service();
    let rec = sine(700.0, 1.5, 16_000);
    let add = req("r1", Command::AddRecording { class_id: "kettle".into(), sample_rate: 16_000, samples: rec.samples.clone() });
    let r = svc.handle(&add);
    assert_eq!(r.result.unwrap()["recordings"], 1);
    assert_eq!(svc.handle(&req("r2", Command::AddRecording { class_id: "kettle".into(), sample_rate: 16_000, samples: vec![0.1; 4000] })).code(), Some("too_short"));
    assert_eq!(svc.handle(&req("r3", Command::SetTargets { ids: vec!["kettle".into()] })).code(), Some("not_found"));
    assert!(svc.handle(&req("f", Command::FinalizeClass { id: "kettle".into() })).ok);
    assert!(svc.handle(&req("t", Command::SetTargets { ids: vec!["kettle".into()] })).ok);
    let list = svc.handle(&req("l", Command::ListClasses)).result.unwrap();
    assert!(list["classes"].as_array().unwrap().iter().any(|c| c["id"] == "kettle" && c["provenance"] == "custom"));
    assert!(list["drafts"].as_array().unwrap().iter().any(|d| d["id"] == "kettle" && d["status"] == "ready"));
    let saved = EmbeddingStore::load(dir.path().join("embeddings.bin")).unwrap();
    assert!(saved.contains("kettle"));
}

#[test]
fn unknown_sound_flow_ends_in_a_usable_class() {
    let (svc, _d) = service_with(&["hum"]);
    assert!(svc.handle(&req("p", Command::UpsertProfile { id: None, description: "high-frequency tonal whine".into() })).ok);
    svc.handle(&req("s", start(48_000)));
    let sub = svc.subscribe();
    svc.feed_wave(&sine(4000.0, 2.0, 48_000)).unwrap();
    let sugg = sub
        .events
        .try_iter()
        .find_map(|e| match e.event {
            Event::Suggestion(s) if s.kind == "save_unknown" => Some(s),
            _ => None,
        })
        .expect("no unknown-sound suggestion");
    assert_eq!(sugg.profile_id, Some(1));
    let r = svc.handle(&req("save", Command::SaveSnapshot { suggestion_id: sugg.id, name: "whine".into() }));
    assert!(r.ok, "{r:?}");
    assert_eq!(r.result.as_ref().unwrap()["draft"], "whine");
    assert!(svc.handle(&req("fin", Command::FinalizeClass { id: "whine".into() })).ok);
    assert!(svc.handle(&req("t", Command::SetTargets { ids: vec!["whine".into()] })).ok);
}

#[test]
fn tcp_clients_get_replies_and_events() {
    let (svc, _d) = service();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let (s2, st) = (svc.clone(), stop.clone());
    std::thread::spawn(move || serve_tcp(s2, listener, st));
    let mut a = TcpClient::connect(addr).unwrap();
    let mut b = TcpClient::connect(addr).unwrap();
    assert!(matches!(a.next_event(T).unwrap().event, Event::State(_)));
    assert!(matches!(b.next_event(T).unwrap().event, Event::State(_)));
    let r = a.call(Command::SetStrength { alpha: 0.25 }, T).unwrap();
    assert!(r.ok);
    for c in [&mut a, &mut b] {
        match c.next_event(T).unwrap().event {
            Event::State(s) => assert_eq!(s.alpha, 0.25),
            other => panic!("{other:?}"),
        }
    }
    a.send_raw("{broken").unwrap();
    assert_eq!(a.wait_reply(None, T).unwrap().code(), Some("protocol"));
    stop.store(true, std::sync::atomic::Ordering::Relaxed);
}

#[test]
fn websocket_clients_share_the_schema() {
    let (svc, _d) = service();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let (s2, st) = (svc.clone(), stop.clone());
    std::thread::spawn(move || serve_ws(s2, listener, st));
    let (mut ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
    ws.send(tungstenite::Message::Text(req("w1", Command::SetTargets { ids: vec!["hum".into()] }).to_json())).unwrap();
    let (mut reply, mut state_targets) = (None, None);
    while reply.is_none() || state_targets.is_none() {
        let tungstenite::Message::Text(t) = ws.read().unwrap() else { continue };
        match ServerMessage::parse(&t).unwrap() {
            ServerMessage::Reply(r) => reply = Some(r),
            ServerMessage::Event(EventEnvelope { event: Event::State(s), .. }) if !s.targets.is_empty() => state_targets = Some(s.targets),
            ServerMessage::Event(_) => {}
        }
    }
    assert!(reply.unwrap().ok);
    assert_eq!(state_targets.unwrap(), vec!["hum"]);
    stop.store(true, std::sync::atomic::Ordering::Relaxed);
}
