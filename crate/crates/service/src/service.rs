//! Command routing and session ownership.

use crate::broadcast::{Broadcaster, Subscription};
use crate::protocol::*;
use attn_core::audio::{resample, Waveform};
use attn_core::context::{ContextEngine, ContextEvent, LabelMapping, Suggestion, SuggestionKind};
use attn_core::embeddings::{EmbeddingStore, SharedStore};
use attn_core::personalization::{finalize_class_shared, CustomClassDraft, DataDir};
use attn_core::streaming::{StreamConfig, StreamControl, StreamSession, MAX_TARGETS};
use attn_core::suppressor::SuppressorModel;
use attn_core::Error;
use serde_json::{json, Value};
use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

pub const REPLY_CACHE: usize = 1024;
pub const METRICS_PERIOD_SECS: f64 = 1.0;
pub const DEFAULT_DEVICE_RATE: u32 = 48_000;
/// name given to snapshots saved by accepting a save-unknown suggestion
pub const UNKNOWN_SNAPSHOT_NAME: &str = "unknown_sound";

pub fn error_code(e: &Error) -> &'static str {
    match e {
        Error::NotFound(_) => "not_found",
        Error::TargetCap { .. } => "target_cap",
        Error::Range(_) | Error::InvalidRate(_) => "range",
        Error::TooShort(_) => "too_short",
        Error::Invalid(_) | Error::Config(_) | Error::EmptyTargets => "invalid",
        Error::State(_) | Error::SessionClosed => "state",
        Error::Io { .. } | Error::Format { .. } => "io",
        _ => "internal",
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

struct State {
    targets: Vec<String>,
    alpha: f64,
    device_rate: u32,
    control: Option<StreamControl>,
}

struct Running {
    session: StreamSession,
    next_metrics: u64,
}

#[derive(Default)]
struct ReplyCache {
    map: HashMap<String, (Command, Reply)>,
    order: VecDeque<String>,
}

/// All mutations are serialized through `handle`; audio enters through
/// [`Service::process_audio`] and analysis through [`Service::analyze`].
pub struct Service {
    model: Arc<SuppressorModel<f32>>,
    store: Arc<SharedStore>,
    data: DataDir,
    bus: Broadcaster,
    state: Mutex<State>,
    audio: Mutex<Option<Running>>,
    context: Mutex<ContextEngine>,
    replies: Mutex<ReplyCache>,
    /// classifier labels to class ids before restriction to the store
    full_mapping: LabelMapping,
}

type CmdResult = attn_core::Result<Value>;

impl Service {
    /// Profiles are loaded from `data`; the store is used as given.
    pub fn new(model: Arc<SuppressorModel<f32>>, store: EmbeddingStore, data: DataDir) -> attn_core::Result<Self> {
        let mut context = ContextEngine::stub(DEFAULT_DEVICE_RATE)?;
        context.profiles = data.load_profiles()?;
        let full_mapping = context.mapping.clone();
        context.mapping = full_mapping.restricted(|c| store.contains(c));
        Ok(Service {
            model,
            full_mapping,
            store: Arc::new(SharedStore::new(store)),
            data,
            bus: Broadcaster::default(),
            state: Mutex::new(State { targets: Vec::new(), alpha: 1.0, device_rate: DEFAULT_DEVICE_RATE, control: None }),
            audio: Mutex::new(None),
            context: Mutex::new(context),
            replies: Mutex::new(ReplyCache::default()),
        })
    }

    pub fn store(&self) -> &Arc<SharedStore> {
        &self.store
    }

    pub fn bus(&self) -> &Broadcaster {
        &self.bus
    }

    pub fn data(&self) -> &DataDir {
        &self.data
    }

    /// New subscriber, primed with the current state.
    pub fn subscribe(&self) -> Subscription {
        let sub = self.bus.subscribe();
        self.bus.send_to(sub.id, Event::State(self.state_info()));
        sub
    }

    pub fn state_info(&self) -> StateInfo {
        let st = lock(&self.state);
        StateInfo {
            session: if st.control.is_some() { "running" } else { "stopped" }.into(),
            targets: st.targets.clone(),
            alpha: st.alpha,
            device_rate: st.device_rate,
        }
    }

    pub fn is_running(&self) -> bool {
        lock(&self.state).control.is_some()
    }

    pub fn device_rate(&self) -> u32 {
        lock(&self.state).device_rate
    }

    /// Parses and handles one request message.
    pub fn handle_text(&self, text: &str) -> Reply {
        match Request::parse(text) {
            Ok(req) => self.handle(&req),
            Err((id, msg)) => Reply::err(id.as_deref(), "protocol", msg),
        }
    }

    /// Mutating commands retried with the same request id get the original
    /// reply without running again.
    pub fn handle(&self, req: &Request) -> Reply {
        if req.cmd.is_mutating() {
            let mut cache = lock(&self.replies);
            if let Some((cmd, reply)) = cache.map.get(&req.id) {
                return if *cmd == req.cmd { reply.clone() } else { Reply::err(Some(&req.id), "protocol", "request id reused for a different command") };
            }
            let reply = self.run(req);
            if cache.order.len() == REPLY_CACHE {
                if let Some(old) = cache.order.pop_front() {
                    cache.map.remove(&old);
                }
            }
            cache.order.push_back(req.id.clone());
            cache.map.insert(req.id.clone(), (req.cmd.clone(), reply.clone()));
            reply
        } else {
            self.run(req)
        }
    }

    fn run(&self, req: &Request) -> Reply {
        let out = match &req.cmd {
            Command::SetTargets { ids } => self.set_targets(ids),
            Command::SetStrength { alpha } => self.set_strength(*alpha),
            Command::StartSession { device_rate, targets, alpha } => self.start_session(*device_rate, targets.clone(), *alpha),
            Command::StopSession => self.stop_session(),
            Command::AcceptSuggestion { id } => self.accept_suggestion(*id),
            Command::DismissSuggestion { id } => self.dismiss_suggestion(*id),
            Command::SaveSnapshot { suggestion_id, name } => self.save_snapshot(*suggestion_id, name),
            Command::AddRecording { class_id, sample_rate, samples } => self.add_recording(class_id, *sample_rate, samples),
            Command::FinalizeClass { id } => self.finalize(id),
            Command::ListClasses => self.list_classes(),
            Command::ListProfiles => Ok(self.list_profiles()),
            Command::UpsertProfile { id, description } => self.upsert_profile(*id, description),
            Command::DeleteProfile { id } => self.delete_profile(*id),
        };
        match out {
            Ok(v) => {
                if req.cmd.is_mutating() {
                    self.bus.publish(Event::State(self.state_info()));
                }
                Reply::ok(&req.id, v)
            }
            Err(e) => Reply::err(Some(&req.id), error_code(&e), e.to_string()),
        }
    }

    fn check_targets(&self, ids: &[String]) -> attn_core::Result<Vec<String>> {
        let mut uniq: Vec<String> = Vec::new();
        for id in ids {
            if !uniq.contains(id) {
                uniq.push(id.clone());
            }
        }
        if uniq.len() > MAX_TARGETS {
            return Err(Error::TargetCap { got: uniq.len(), max: MAX_TARGETS });
        }
        let store = self.store.snapshot();
        for id in &uniq {
            store.get(id)?;
        }
        Ok(uniq)
    }

    fn apply_targets(&self, st: &mut State, ids: &[String]) -> attn_core::Result<()> {
        let uniq = self.check_targets(ids)?;
        if let Some(c) = &st.control {
            c.set_targets(&uniq)?;
        }
        st.targets = uniq;
        Ok(())
    }

    fn set_targets(&self, ids: &[String]) -> CmdResult {
        let mut st = lock(&self.state);
        self.apply_targets(&mut st, ids)?;
        Ok(json!({ "targets": st.targets }))
    }

    fn set_strength(&self, alpha: f64) -> CmdResult {
        let mut st = lock(&self.state);
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Range(format!("strength {alpha} outside [0, 1]")));
        }
        if let Some(c) = &st.control {
            c.set_strength(alpha)?;
        }
        st.alpha = alpha;
        Ok(json!({ "alpha": alpha }))
    }

    fn start_session(&self, device_rate: Option<u32>, targets: Option<Vec<String>>, alpha: Option<f64>) -> CmdResult {
        let mut st = lock(&self.state);
        let targets = match targets {
            Some(t) => self.check_targets(&t)?,
            None => st.targets.clone(),
        };
        let alpha = alpha.unwrap_or(st.alpha);
        let rate = device_rate.unwrap_or(st.device_rate);
        let cfg = StreamConfig { alpha, active_targets: targets.clone(), ..StreamConfig::with_rate(rate) };
        let session = StreamSession::new(self.model.clone(), self.store.clone(), cfg)?;
        let control = session.control();
        let mut audio = lock(&self.audio);
        if let Some(mut old) = audio.take() {
            old.session.close();
        }
        *audio = Some(Running { session, next_metrics: (METRICS_PERIOD_SECS * rate as f64).round() as u64 });
        drop(audio);
        if rate != st.device_rate {
            let mut ctx = lock(&self.context);
            let mut fresh = ContextEngine::stub(rate)?;
            fresh.profiles = std::mem::take(&mut ctx.profiles);
            fresh.mapping = std::mem::take(&mut ctx.mapping);
            *ctx = fresh;
        }
        st.targets = targets;
        st.alpha = alpha;
        st.device_rate = rate;
        st.control = Some(control);
        Ok(json!({ "session": "running", "device_rate": rate }))
    }

    fn stop_session(&self) -> CmdResult {
        let mut st = lock(&self.state);
        if st.control.take().is_none() {
            return Err(Error::State("no running session".into()));
        }
        if let Some(mut r) = lock(&self.audio).take() {
            r.session.close();
        }
        Ok(json!({ "session": "stopped" }))
    }

    fn accept_suggestion(&self, id: u64) -> CmdResult {
        let pending = lock(&self.context).suggester().pending().iter().find(|s| s.id == id).cloned();
        let s = pending.ok_or_else(|| Error::NotFound(format!("suggestion {id}")))?;
        match &s.kind {
            SuggestionKind::KnownClass { class_id } => {
                let mut st = lock(&self.state);
                let mut next = st.targets.clone();
                if !next.contains(class_id) {
                    next.push(class_id.clone());
                }
                self.apply_targets(&mut st, &next)?;
                drop(st);
                lock(&self.context).suggester_mut().accept(id)?;
                Ok(json!({ "targets": self.state_info().targets }))
            }
            SuggestionKind::SaveUnknown { .. } => {
                let draft = self.save_snapshot(id, UNKNOWN_SNAPSHOT_NAME)?;
                Ok(draft)
            }
        }
    }

    fn dismiss_suggestion(&self, id: u64) -> CmdResult {
        let mut ctx = lock(&self.context);
        let now = ctx.now();
        let s = ctx.suggester_mut().dismiss(id, now)?;
        ctx.take_snapshot(s.id);
        Ok(json!({ "dismissed": id }))
    }

    fn save_snapshot(&self, suggestion_id: u64, name: &str) -> CmdResult {
        let mut ctx = lock(&self.context);
        let is_unknown = ctx.suggester().pending().iter().any(|s| s.id == suggestion_id && matches!(s.kind, SuggestionKind::SaveUnknown { .. }));
        if !is_unknown {
            return Err(Error::NotFound(format!("snapshot suggestion {suggestion_id}")));
        }
        let snap = ctx.take_snapshot(suggestion_id).ok_or_else(|| Error::NotFound(format!("snapshot for suggestion {suggestion_id}")))?;
        ctx.suggester_mut().accept(suggestion_id)?;
        drop(ctx);
        let store = self.store.snapshot();
        let draft = self.data.save_snapshot_as_draft(&snap, name, Some(&store), unix_now())?;
        Ok(json!({ "draft": draft.class_id, "recordings": draft.recordings.len() }))
    }

    fn add_recording(&self, class_id: &str, sample_rate: u32, samples: &[f32]) -> CmdResult {
        let wave = Waveform::new(samples.to_vec(), sample_rate)?;
        let mut draft = match self.data.load_draft(class_id) {
            Ok(d) => d,
            Err(Error::NotFound(_)) => CustomClassDraft::new(class_id)?,
            Err(e) => return Err(e),
        };
        draft.add_recording(&wave, unix_now())?;
        self.data.save_draft(&draft)?;
        Ok(json!({ "draft": draft.class_id, "recordings": draft.recordings.len() }))
    }

    fn finalize(&self, id: &str) -> CmdResult {
        let mut draft = self.data.load_draft(id)?;
        finalize_class_shared(&mut draft, &self.model, &self.store)?;
        self.data.save_draft(&draft)?;
        let store = self.store.snapshot();
        store.save(self.data.store_path())?;
        lock(&self.context).mapping = self.full_mapping.restricted(|c| store.contains(c));
        Ok(json!({ "id": draft.class_id, "recordings": draft.recordings.len() }))
    }

    fn list_classes(&self) -> CmdResult {
        let store = self.store.snapshot();
        let classes: Vec<Value> = store.iter().map(|(id, e)| json!({ "id": id, "provenance": e.provenance.as_str(), "recordings": e.recordings })).collect();
        let mut drafts = Vec::new();
        for id in self.data.list_drafts()? {
            let d = self.data.load_draft(&id)?;
            let status = if d.status == attn_core::personalization::DraftStatus::Ready { "ready" } else { "draft" };
            drafts.push(json!({ "id": id, "recordings": d.recordings.len(), "status": status }));
        }
        Ok(json!({ "classes": classes, "drafts": drafts }))
    }

    fn list_profiles(&self) -> Value {
        let ctx = lock(&self.context);
        let list: Vec<Value> = ctx.profiles.list().iter().map(|p| json!({ "id": p.id, "description": p.description, "keywords": p.keywords })).collect();
        json!({ "profiles": list })
    }

    fn upsert_profile(&self, id: Option<u64>, description: &str) -> CmdResult {
        let mut ctx = lock(&self.context);
        let mut next = ctx.profiles.clone();
        let id = match id {
            Some(id) => {
                next.edit(id, description)?;
                id
            }
            None => next.create(description)?,
        };
        self.data.save_profiles(&next)?;
        ctx.profiles = next;
        Ok(json!({ "id": id }))
    }

    fn delete_profile(&self, id: u64) -> CmdResult {
        let mut ctx = lock(&self.context);
        let mut next = ctx.profiles.clone();
        next.delete(id)?;
        self.data.save_profiles(&next)?;
        ctx.profiles = next;
        Ok(json!({ "deleted": id }))
    }

    /// Runs device-rate input through the live session and returns what it
    /// produced. Publishes a metrics event per second of stream time.
    pub fn process_audio(&self, input: &[f32]) -> attn_core::Result<Vec<f32>> {
        let mut audio = lock(&self.audio);
        let run = audio.as_mut().ok_or_else(|| Error::State("no running session".into()))?;
        run.session.push_input(input)?;
        let out = run.session.pull_available();
        let st = run.session.stats();
        if st.consumed >= run.next_metrics {
            let rate = run.session.config().device_rate;
            run.next_metrics += (METRICS_PERIOD_SECS * rate as f64).round() as u64;
            self.bus.publish(Event::Metrics(metrics_info(&st, rate)));
        }
        Ok(out)
    }

    /// Feeds the context engine and publishes detections and suggestions.
    pub fn analyze(&self, input: &[f32]) {
        let targets = lock(&self.state).targets.clone();
        let events = lock(&self.context).feed(input, &targets);
        for ev in events {
            match ev {
                ContextEvent::Detection(r) => self.bus.publish(Event::Detection(DetectionInfo {
                    timestamp: r.timestamp,
                    labels: r.labels.into_iter().map(|(label, confidence)| LabelScore { label, confidence }).collect(),
                })),
                ContextEvent::Suggestion(s) => self.bus.publish(Event::Suggestion(suggestion_info(&s, None, None))),
                ContextEvent::UnknownMatched { suggestion, profile_id, description } => {
                    self.bus.publish(Event::Suggestion(suggestion_info(&suggestion, Some(profile_id), Some(description))))
                }
                ContextEvent::Expired(_) => continue,
            };
        }
    }

    /// Pending suggestions, oldest first.
    pub fn pending_suggestions(&self) -> Vec<SuggestionInfo> {
        lock(&self.context).suggester().pending().iter().map(|s| suggestion_info(s, None, None)).collect()
    }

    /// Resamples `wave` to the device rate and runs it through
    /// [`Service::process_audio`] and [`Service::analyze`] in hop-sized
    /// chunks. For scripted sessions and tests.
    pub fn feed_wave(&self, wave: &Waveform) -> attn_core::Result<Vec<f32>> {
        let rate = self.device_rate();
        let owned;
        let w = if wave.sample_rate == rate {
            wave
        } else {
            owned = resample(wave, rate)?;
            &owned
        };
        let chunk = StreamConfig::with_rate(rate).hop_device_samples();
        let mut out = Vec::with_capacity(w.len());
        for c in w.samples.chunks(chunk) {
            out.extend(self.process_audio(c)?);
            self.analyze(c);
        }
        Ok(out)
    }
}

fn suggestion_info(s: &Suggestion, profile_id: Option<u64>, description: Option<String>) -> SuggestionInfo {
    let (kind, class_id) = match &s.kind {
        SuggestionKind::KnownClass { class_id } => ("known_class", Some(class_id.clone())),
        SuggestionKind::SaveUnknown { .. } => ("save_unknown", None),
    };
    SuggestionInfo { id: s.id, kind: kind.into(), class_id, profile_id, description, created: s.created, expires: s.expires }
}

fn metrics_info(st: &attn_core::streaming::StreamStats, rate: u32) -> MetricsInfo {
    let l = st.latency;
    MetricsInfo {
        stream_secs: st.consumed as f64 / rate as f64,
        hops: st.hops,
        mean_hop_ms: st.mean_hop_secs * 1000.0,
        p95_hop_ms: st.p95_hop_secs * 1000.0,
        rtf: st.real_time_factor,
        latency_samples: l.map_or(0, |l| l.total),
        latency_ms: l.map_or(0.0, |l| l.total_ms()),
        lookahead_samples: l.map_or(0, |l| l.lookahead),
        hop_samples: l.map_or(0, |l| l.hop),
        occupancy_samples: l.map_or(0, |l| l.occupancy),
        buffered: st.buffered,
        high_water: st.high_water,
        buffer_cap: st.buffer_cap,
        drops: st.drops,
        underruns: st.underruns,
        cpu: None,
        battery: None,
    }
}
