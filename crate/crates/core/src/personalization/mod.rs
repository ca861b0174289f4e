//! Custom class lifecycle: drafts built from recordings, persisted on disk
//! and turned into store embeddings without touching model parameters.

use crate::audio::{read_wav, write_wav, WavEncoding, Waveform};
use crate::context::ProfileSet;
use crate::embeddings::{build_class_embedding, is_builtin, EmbeddingExtractor, EmbeddingStore, Provenance, SharedStore, MIN_RECORDING_SECS};
use crate::error::{Error, Result};
use crate::suppressor::SuppressorModel;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const TRIM_GATE_DBFS: f64 = -50.0;
pub const TRIM_HANGOVER_SECS: f64 = 0.1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const DRAFTS_DIR: &str = "drafts";
pub const PROFILES_FILE: &str = "profiles.tsv";
pub const STORE_FILE: &str = "embeddings.bin";

/// Cuts leading and trailing audio below `gate_dbfs` (sample peak), keeping
/// `hangover_secs` beyond the first and last samples above it. Returns an
/// empty waveform when nothing passes the gate.
pub fn trim_silence(wave: &Waveform, gate_dbfs: f64, hangover_secs: f64) -> Waveform {
    let gate = 10f64.powf(gate_dbfs / 20.0) as f32;
    let loud = |s: &f32| s.abs() >= gate;
    let (Some(first), Some(last)) = (wave.samples.iter().position(loud), wave.samples.iter().rposition(loud)) else {
        return Waveform::silence(0, wave.sample_rate);
    };
    let pad = (hangover_secs * wave.sample_rate as f64).round() as usize;
    let start = first.saturating_sub(pad);
    let end = (last + 1 + pad).min(wave.len());
    Waveform { samples: wave.samples[start..end].to_vec(), sample_rate: wave.sample_rate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DraftStatus {
    Draft,
    Ready,
}

impl DraftStatus {
    fn as_str(self) -> &'static str {
        match self {
            DraftStatus::Draft => "draft",
            DraftStatus::Ready => "ready",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub wave: Waveform,
    /// capture time, seconds since the Unix epoch
    pub captured: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CustomClassDraft {
    pub class_id: String,
    pub recordings: Vec<Recording>,
    pub status: DraftStatus,
}

fn check_class_id(id: &str) -> Result<()> {
    if id.trim().is_empty() || id.trim() != id || id.contains(['\n', '\r', '\t', '/', '\\']) {
        return Err(Error::Invalid(format!("class id {id:?}")));
    }
    if is_builtin(id) {
        return Err(Error::Invalid(format!("class id {id} is a built-in class")));
    }
    Ok(())
}

impl CustomClassDraft {
    pub fn new(class_id: &str) -> Result<Self> {
        check_class_id(class_id)?;
        Ok(CustomClassDraft { class_id: class_id.to_string(), recordings: Vec::new(), status: DraftStatus::Draft })
    }

    /// Trims silence and appends the result; it must still last at least
    /// one second. Editing a ready draft returns it to draft status.
    pub fn add_recording(&mut self, wave: &Waveform, captured: u64) -> Result<()> {
        let trimmed = trim_silence(wave, TRIM_GATE_DBFS, TRIM_HANGOVER_SECS);
        if trimmed.duration_secs() < MIN_RECORDING_SECS {
            return Err(Error::TooShort(format!("{:.3} s after trimming, need {MIN_RECORDING_SECS} s", trimmed.duration_secs())));
        }
        self.recordings.push(Recording { wave: trimmed, captured });
        self.status = DraftStatus::Draft;
        Ok(())
    }

    pub fn remove_recording(&mut self, index: usize) -> Result<Recording> {
        if index >= self.recordings.len() {
            return Err(Error::NotFound(format!("recording {index} of {}", self.class_id)));
        }
        self.status = DraftStatus::Draft;
        Ok(self.recordings.remove(index))
    }

    pub fn is_finalizable(&self) -> bool {
        !self.recordings.is_empty() && self.recordings.iter().all(|r| r.wave.duration_secs() >= MIN_RECORDING_SECS) && !is_builtin(&self.class_id)
    }

    pub fn waves(&self) -> Vec<Waveform> {
        self.recordings.iter().map(|r| r.wave.clone()).collect()
    }
}

/// Builds the class embedding from the draft's recordings and upserts it as
/// a custom class. The model is only read.
pub fn finalize_class(draft: &mut CustomClassDraft, model: &SuppressorModel<f32>, store: &mut EmbeddingStore) -> Result<()> {
    if !draft.is_finalizable() {
        return Err(Error::TooShort(format!("draft {} needs at least one recording of {MIN_RECORDING_SECS} s", draft.class_id)));
    }
    if store.get(&draft.class_id).is_ok_and(|e| e.provenance == Provenance::Builtin) {
        return Err(Error::Invalid(format!("class id {} is a built-in class", draft.class_id)));
    }
    let mut ex = EmbeddingExtractor::new(model)?;
    let emb = build_class_embedding(&draft.waves(), model, &mut ex)?;
    store.upsert(&draft.class_id, emb, Provenance::Custom, draft.recordings.len() as u32)?;
    draft.status = DraftStatus::Ready;
    Ok(())
}

/// [`finalize_class`] against a shared store, publishing a new snapshot.
pub fn finalize_class_shared(draft: &mut CustomClassDraft, model: &SuppressorModel<f32>, store: &SharedStore) -> Result<()> {
    let mut d = draft.clone();
    store.update(|s| finalize_class(&mut d, model, s))?;
    *draft = d;
    Ok(())
}

/// `name`, or `name (2)`, `name (3)`, ... until `taken` rejects none.
pub fn unique_name(name: &str, taken: impl Fn(&str) -> bool) -> String {
    if !taken(name) {
        return name.to_string();
    }
    (2..).map(|n| format!("{name} ({n})")).find(|c| !taken(c)).unwrap_or_default()
}

/// Directory-safe encoding of a class id: `[A-Za-z0-9_.-]` pass through,
/// other bytes become `%XX`.
fn dir_name(id: &str) -> String {
    let mut s = String::new();
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || (b == b'.' && !s.is_empty()) {
            s.push(b as char);
        } else {
            let _ = write!(s, "%{b:02X}");
        }
    }
    s
}

/// On-disk layout under one data directory: `drafts/<id>/` holding float32
/// WAV recordings plus a manifest, `profiles.tsv` and `embeddings.bin`.
#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let drafts = root.join(DRAFTS_DIR);
        std::fs::create_dir_all(&drafts).map_err(|e| Error::io(&drafts, e))?;
        Ok(DataDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store_path(&self) -> PathBuf {
        self.root.join(STORE_FILE)
    }

    pub fn profiles_path(&self) -> PathBuf {
        self.root.join(PROFILES_FILE)
    }

    fn draft_dir(&self, id: &str) -> PathBuf {
        self.root.join(DRAFTS_DIR).join(dir_name(id))
    }

    pub fn has_draft(&self, id: &str) -> bool {
        self.draft_dir(id).join(MANIFEST_FILE).exists()
    }

    pub fn save_draft(&self, draft: &CustomClassDraft) -> Result<()> {
        let dir = self.draft_dir(&draft.class_id);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut manifest = format!("class_id\t{}\nstatus\t{}\n", draft.class_id, draft.status.as_str());
        for (i, r) in draft.recordings.iter().enumerate() {
            let file = format!("{i:03}.wav");
            write_wav(dir.join(&file), &r.wave, WavEncoding::Float32)?;
            let _ = writeln!(manifest, "recording\t{file}\t{}", r.captured);
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load_draft(&self, id: &str) -> Result<CustomClassDraft> {
        let dir = self.draft_dir(id);
        let path = dir.join(MANIFEST_FILE);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(format!("draft {id}"))),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut draft = CustomClassDraft { class_id: String::new(), recordings: Vec::new(), status: DraftStatus::Draft };
        for (n, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || Error::format(n as u64, format!("manifest line {}: {line:?}", n + 1));
            match fields.as_slice() {
                ["class_id", v] => draft.class_id = v.to_string(),
                ["status", "draft"] => draft.status = DraftStatus::Draft,
                ["status", "ready"] => draft.status = DraftStatus::Ready,
                ["recording", file, ts] => {
                    let captured = ts.parse().map_err(|_| bad())?;
                    draft.recordings.push(Recording { wave: read_wav(dir.join(file))?, captured });
                }
                [""] => {}
                _ => return Err(bad()),
            }
        }
        if draft.class_id != id {
            return Err(Error::format(0, format!("manifest names {:?}, expected {id:?}", draft.class_id)));
        }
        Ok(draft)
    }

    pub fn list_drafts(&self) -> Result<Vec<String>> {
        let dir = self.root.join(DRAFTS_DIR);
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let manifest = entry.path().join(MANIFEST_FILE);
            if let Ok(text) = std::fs::read_to_string(&manifest) {
                if let Some(id) = text.lines().find_map(|l| l.strip_prefix("class_id\t")) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn delete_draft(&self, id: &str) -> Result<()> {
        let dir = self.draft_dir(id);
        if !dir.exists() {
            return Err(Error::NotFound(format!("draft {id}")));
        }
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))
    }

    /// New persisted draft whose first recording is `snapshot`, untrimmed.
    /// Names taken by built-ins, existing drafts or `store` get a numeric
    /// suffix.
    pub fn save_snapshot_as_draft(&self, snapshot: &Waveform, suggested_name: &str, store: Option<&EmbeddingStore>, captured: u64) -> Result<CustomClassDraft> {
        let base = suggested_name.trim();
        let base = if base.is_empty() { "unknown_sound" } else { base };
        let name = unique_name(base, |n| is_builtin(n) || self.has_draft(n) || store.is_some_and(|s| s.contains(n)));
        let mut draft = CustomClassDraft::new(&name)?;
        draft.recordings.push(Recording { wave: snapshot.clone(), captured });
        self.save_draft(&draft)?;
        Ok(draft)
    }

    pub fn load_profiles(&self) -> Result<ProfileSet> {
        ProfileSet::load(self.profiles_path())
    }

    pub fn save_profiles(&self, profiles: &ProfileSet) -> Result<()> {
        profiles.save(self.profiles_path())
    }
}
