//! Periodic scene classification, suggestions for selectable classes and
//! gated discovery of unsupported sounds.
//!
//! Everything here runs off the audio path on stream time: callers pass the
//! current time in seconds, so tests drive a simulated clock.

mod features;
mod profiles;

pub use features::{SpectralFeatures, StubClassifier, StubDescriber, SILENCE_DBFS};
pub use profiles::{keywords, match_profile, stem, LexicalJudge, ProfileSet, SensitivityProfile, MATCH_THRESHOLD};

use crate::audio::{a_weighted_level, RollingBuffer, Waveform};
use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

pub const SUGGESTION_EXPIRY_SECS: f64 = 8.0;
pub const SUGGESTION_COOLDOWN_SECS: f64 = 60.0;
pub const QUIET_THRESHOLD_DBA: f64 = 45.0;
pub const LOUD_THRESHOLD_DBA: f64 = 75.0;
pub const SNAPSHOT_SECS: f64 = 10.0;
pub const TICK_SECS: f64 = 1.0;
/// trailing window and median level that switch the automatic mode to loud
pub const MODE_WINDOW_SECS: f64 = 30.0;
pub const MODE_LOUD_MEDIAN_DBA: f64 = 60.0;
/// leading labels inspected by the unknown-sound gate
pub const GATE_TOP_N: usize = 3;

/// Produces ranked `(label, confidence)` pairs for about one second of audio.
pub trait Classifier: Send + Sync {
    fn classify(&self, window: &Waveform) -> Result<Vec<(String, f32)>>;
}

/// Turns a snapshot into a short natural-language description.
pub trait Describer: Send + Sync {
    fn describe(&self, snapshot: &Waveform) -> Result<String>;
}

/// Scores how well a description fits a profile, in `[0, 1]`.
pub trait Judge: Send + Sync {
    fn score(&self, description: &str, profile: &SensitivityProfile) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierResult {
    /// descending confidence, each in `[0, 1]`
    pub labels: Vec<(String, f32)>,
    pub timestamp: f64,
}

impl ClassifierResult {
    /// Sorts by descending confidence (stable for ties) and rejects
    /// confidences outside `[0, 1]`.
    pub fn new(mut labels: Vec<(String, f32)>, timestamp: f64) -> Result<Self> {
        if let Some((l, c)) = labels.iter().find(|(_, c)| !(0.0..=1.0).contains(c)) {
            return Err(Error::Range(format!("confidence {c} for {l}")));
        }
        labels.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(ClassifierResult { labels, timestamp })
    }

    pub fn empty(timestamp: f64) -> Self {
        ClassifierResult { labels: Vec::new(), timestamp }
    }

    pub fn top(&self, n: usize) -> &[(String, f32)] {
        &self.labels[..n.min(self.labels.len())]
    }
}

/// Runs `classifier` on `window`; a classifier failure yields an empty result.
pub fn classify_tick(window: &Waveform, classifier: &dyn Classifier, timestamp: f64) -> ClassifierResult {
    classifier.classify(window).and_then(|l| ClassifierResult::new(l, timestamp)).unwrap_or_else(|_| ClassifierResult::empty(timestamp))
}

/// Describer output, or `None` when the describer fails.
pub fn describe_sound(snapshot: &Waveform, describer: &dyn Describer) -> Option<String> {
    describer.describe(snapshot).ok()
}

/// External classifier label to internal class id. Labels absent from the
/// table are unmapped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelMapping {
    map: BTreeMap<String, String>,
}

impl LabelMapping {
    pub fn new() -> Self {
        Self::default()
    }

    /// Maps every label to the class of the same name.
    pub fn identity<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut m = Self::new();
        for l in labels {
            m.insert(l.as_ref(), l.as_ref());
        }
        m
    }

    pub fn insert(&mut self, label: &str, class_id: &str) {
        self.map.insert(label.to_string(), class_id.to_string());
    }

    pub fn get(&self, label: &str) -> Option<&str> {
        self.map.get(label).map(String::as_str)
    }

    /// Drops entries whose class is not accepted by `supported`.
    pub fn restricted(&self, supported: impl Fn(&str) -> bool) -> Self {
        LabelMapping { map: self.map.iter().filter(|(_, c)| supported(c)).map(|(l, c)| (l.clone(), c.clone())).collect() }
    }

    /// `external_label<TAB>class_id` lines; `#` starts a comment line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Self::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (l, c) = line.split_once('\t').ok_or_else(|| Error::Invalid(format!("mapping line {}: missing tab", n + 1)))?;
            if l.is_empty() || c.trim().is_empty() {
                return Err(Error::Invalid(format!("mapping line {}: empty field", n + 1)));
            }
            m.insert(l, c.trim());
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        self.map.iter().map(|(l, c)| format!("{l}\t{c}\n")).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SuggestionKind {
    KnownClass { class_id: String },
    SaveUnknown { snapshot: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub id: u64,
    pub kind: SuggestionKind,
    pub created: f64,
    pub expires: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListeningMode {
    Quiet,
    Loud,
}

impl ListeningMode {
    pub fn threshold_dba(self) -> f64 {
        match self {
            ListeningMode::Quiet => QUIET_THRESHOLD_DBA,
            ListeningMode::Loud => LOUD_THRESHOLD_DBA,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "quiet" => Ok(ListeningMode::Quiet),
            "loud" => Ok(ListeningMode::Loud),
            _ => Err(Error::Invalid(format!("mode {s}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ListeningMode::Quiet => "quiet",
            ListeningMode::Loud => "loud",
        }
    }
}

/// Loud when the median of the trailing per-tick levels reaches
/// [`MODE_LOUD_MEDIAN_DBA`].
#[derive(Debug, Clone)]
pub struct ModeEstimator {
    levels: VecDeque<f64>,
    capacity: usize,
}

impl ModeEstimator {
    pub fn new(window_ticks: usize) -> Self {
        ModeEstimator { levels: VecDeque::with_capacity(window_ticks), capacity: window_ticks.max(1) }
    }

    pub fn push(&mut self, level_dba: f64) -> ListeningMode {
        if self.levels.len() == self.capacity {
            self.levels.pop_front();
        }
        self.levels.push_back(level_dba);
        self.mode()
    }

    pub fn mode(&self) -> ListeningMode {
        if self.levels.is_empty() {
            return ListeningMode::Quiet;
        }
        let mut v: Vec<f64> = self.levels.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        if median >= MODE_LOUD_MEDIAN_DBA {
            ListeningMode::Loud
        } else {
            ListeningMode::Quiet
        }
    }
}

/// The unknown-sound rule: none of the leading labels is mapped and the
/// level reaches the mode's threshold. An empty result never fires.
pub fn unknown_gate_fires(result: &ClassifierResult, mapping: &LabelMapping, level_dba: f64, mode: ListeningMode) -> bool {
    !result.labels.is_empty() && result.top(GATE_TOP_N).iter().all(|(l, _)| mapping.get(l).is_none()) && level_dba >= mode.threshold_dba()
}

/// Banner lifecycle: expiry, dismissal and per-class cooldown.
#[derive(Debug, Clone)]
pub struct Suggester {
    pub expiry_secs: f64,
    pub cooldown_secs: f64,
    next_id: u64,
    pending: Vec<Suggestion>,
    /// class id to end of its cooldown
    cooldown: HashMap<String, f64>,
}

impl Default for Suggester {
    fn default() -> Self {
        Self::new(SUGGESTION_EXPIRY_SECS, SUGGESTION_COOLDOWN_SECS)
    }
}

impl Suggester {
    pub fn new(expiry_secs: f64, cooldown_secs: f64) -> Self {
        Suggester { expiry_secs, cooldown_secs, next_id: 1, pending: Vec::new(), cooldown: HashMap::new() }
    }

    pub fn pending(&self) -> &[Suggestion] {
        &self.pending
    }

    /// Retires suggestions whose expiry has passed; expired known-class
    /// suggestions start their class cooldown at the expiry instant.
    pub fn expire(&mut self, now: f64) -> Vec<Suggestion> {
        let (gone, keep): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|s| s.expires <= now);
        self.pending = keep;
        for s in &gone {
            if let SuggestionKind::KnownClass { class_id } = &s.kind {
                self.cooldown.insert(class_id.clone(), s.expires + self.cooldown_secs);
            }
        }
        gone
    }

    fn issue(&mut self, kind: SuggestionKind, now: f64) -> Suggestion {
        let s = Suggestion { id: self.next_id, kind, created: now, expires: now + self.expiry_secs };
        self.next_id += 1;
        self.pending.push(s.clone());
        s
    }

    fn blocked(&self, class_id: &str, now: f64) -> bool {
        self.cooldown.get(class_id).is_some_and(|&until| now < until)
            || self.pending.iter().any(|s| matches!(&s.kind, SuggestionKind::KnownClass { class_id: c } if c == class_id))
    }

    /// Suggests the highest-ranked mapped class that is neither active,
    /// already pending nor cooling down.
    pub fn suggest_known<S: AsRef<str>>(&mut self, result: &ClassifierResult, mapping: &LabelMapping, active: &[S], now: f64) -> Option<Suggestion> {
        self.expire(now);
        let class = result
            .labels
            .iter()
            .filter_map(|(l, _)| mapping.get(l))
            .find(|c| !active.iter().any(|a| a.as_ref() == *c) && !self.blocked(c, now))?
            .to_string();
        Some(self.issue(SuggestionKind::KnownClass { class_id: class }, now))
    }

    /// On firing, returns a save-unknown suggestion with the final
    /// [`SNAPSHOT_SECS`] of `buffer`. Buffers shorter than that never fire.
    pub fn gate_unknown(
        &mut self,
        result: &ClassifierResult,
        mapping: &LabelMapping,
        level_dba: f64,
        mode: ListeningMode,
        buffer: &RollingBuffer,
        now: f64,
    ) -> Option<(Suggestion, Waveform)> {
        self.expire(now);
        let need = (SNAPSHOT_SECS * buffer.sample_rate() as f64).round() as usize;
        if buffer.capacity() < need || !unknown_gate_fires(result, mapping, level_dba, mode) {
            return None;
        }
        let snapshot = buffer.last(need);
        let s = self.issue(SuggestionKind::SaveUnknown { snapshot: format!("snapshot-{}", self.next_id) }, now);
        Some((s, snapshot))
    }

    /// Removes a pending suggestion and starts its class cooldown.
    pub fn dismiss(&mut self, id: u64, now: f64) -> Result<Suggestion> {
        let s = self.take(id)?;
        if let SuggestionKind::KnownClass { class_id } = &s.kind {
            self.cooldown.insert(class_id.clone(), now + self.cooldown_secs);
        }
        Ok(s)
    }

    /// Removes a pending suggestion so the caller can act on it.
    pub fn accept(&mut self, id: u64) -> Result<Suggestion> {
        self.take(id)
    }

    fn take(&mut self, id: u64) -> Result<Suggestion> {
        let i = self.pending.iter().position(|s| s.id == id).ok_or_else(|| Error::NotFound(format!("suggestion {id}")))?;
        Ok(self.pending.remove(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContextEvent {
    Detection(ClassifierResult),
    Suggestion(Suggestion),
    /// an unknown sound matched a profile; the snapshot is held by the engine
    UnknownMatched { suggestion: Suggestion, profile_id: u64, description: String },
    Expired(Suggestion),
}

/// Mode selection for the unknown-sound gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSetting {
    Fixed(ListeningMode),
    Auto,
}

/// One classification tick per [`TICK_SECS`] of audio written.
pub struct ContextEngine {
    pub mapping: LabelMapping,
    pub profiles: ProfileSet,
    pub mode: ModeSetting,
    classifier: Box<dyn Classifier>,
    describer: Box<dyn Describer>,
    judge: Box<dyn Judge>,
    suggester: Suggester,
    estimator: ModeEstimator,
    buffer: RollingBuffer,
    tick_samples: u64,
    next_tick: u64,
    snapshots: HashMap<u64, Waveform>,
}

impl ContextEngine {
    pub fn new(sample_rate: u32, mapping: LabelMapping, classifier: Box<dyn Classifier>, describer: Box<dyn Describer>, judge: Box<dyn Judge>) -> Self {
        let tick_samples = (TICK_SECS * sample_rate as f64).round() as u64;
        ContextEngine {
            mapping,
            profiles: ProfileSet::new(),
            mode: ModeSetting::Auto,
            classifier,
            describer,
            judge,
            suggester: Suggester::default(),
            estimator: ModeEstimator::new((MODE_WINDOW_SECS / TICK_SECS).round() as usize),
            buffer: RollingBuffer::with_duration(MODE_WINDOW_SECS.max(SNAPSHOT_SECS), sample_rate),
            tick_samples,
            next_tick: tick_samples,
            snapshots: HashMap::new(),
        }
    }

    /// Stub classifier over the toy classes, identity mapping, stub describer
    /// and lexical judge.
    pub fn stub(sample_rate: u32) -> Result<Self> {
        let c = StubClassifier::toy(6, 11)?;
        let mapping = LabelMapping::identity(c.labels());
        Ok(Self::new(sample_rate, mapping, Box::new(c), Box::new(StubDescriber), Box::new(LexicalJudge)))
    }

    pub fn suggester(&self) -> &Suggester {
        &self.suggester
    }

    pub fn suggester_mut(&mut self) -> &mut Suggester {
        &mut self.suggester
    }

    pub fn buffer(&self) -> &RollingBuffer {
        &self.buffer
    }

    pub fn current_mode(&self) -> ListeningMode {
        match self.mode {
            ModeSetting::Fixed(m) => m,
            ModeSetting::Auto => self.estimator.mode(),
        }
    }

    pub fn now(&self) -> f64 {
        self.buffer.total_written() as f64 / self.buffer.sample_rate() as f64
    }

    /// Snapshot held for a save-unknown suggestion, removed on take.
    pub fn take_snapshot(&mut self, suggestion_id: u64) -> Option<Waveform> {
        self.snapshots.remove(&suggestion_id)
    }

    /// Appends audio and runs every tick whose boundary it crosses.
    pub fn feed<S: AsRef<str>>(&mut self, samples: &[f32], active: &[S]) -> Vec<ContextEvent> {
        let mut events = Vec::new();
        let mut rest = samples;
        while !rest.is_empty() {
            let room = (self.next_tick - self.buffer.total_written()) as usize;
            let n = room.min(rest.len());
            self.buffer.write(&rest[..n]);
            rest = &rest[n..];
            if self.buffer.total_written() == self.next_tick {
                self.next_tick += self.tick_samples;
                self.tick(active, &mut events);
            }
        }
        events
    }

    fn tick<S: AsRef<str>>(&mut self, active: &[S], events: &mut Vec<ContextEvent>) {
        let now = self.now();
        for s in self.suggester.expire(now) {
            self.snapshots.remove(&s.id);
            events.push(ContextEvent::Expired(s));
        }
        let window = self.buffer.last(self.tick_samples as usize);
        let result = classify_tick(&window, self.classifier.as_ref(), now);
        let level = a_weighted_level(&window).unwrap_or(crate::audio::LEVEL_FLOOR_DBA);
        self.estimator.push(level);
        let mode = self.current_mode();
        events.push(ContextEvent::Detection(result.clone()));
        if let Some(s) = self.suggester.suggest_known(&result, &self.mapping, active, now) {
            events.push(ContextEvent::Suggestion(s));
        }
        let unknown_pending = self.suggester.pending().iter().any(|s| matches!(s.kind, SuggestionKind::SaveUnknown { .. }));
        if unknown_pending {
            return;
        }
        if let Some((s, snap)) = self.suggester.gate_unknown(&result, &self.mapping, level, mode, &self.buffer, now) {
            let matched = describe_sound(&snap, self.describer.as_ref())
                .and_then(|d| match_profile(&d, self.profiles.list(), self.judge.as_ref()).map(|id| (id, d)));
            match matched {
                Some((profile_id, description)) => {
                    self.snapshots.insert(s.id, snap);
                    events.push(ContextEvent::UnknownMatched { suggestion: s, profile_id, description });
                }
                None => {
                    let _ = self.suggester.accept(s.id);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
