//! `key=value` overlay files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every key an overlay file may set. Training keys not listed here are
/// rejected too, so a typo never passes silently.
pub const KNOWN_KEYS: &[&str] = &[
    "seed", "format", "model", "store", "targets", "strength", "offline", "toy", "catalog", "steps", "out", "toy_files", "toy_secs", "batch", "lr",
    "weight_decay", "clip_norm", "crop_secs", "epoch_steps", "embed_recordings", "val_examples", "val_conditions", "validate_every", "checkpoint_every",
    "shards", "conditions", "examples", "estimates", "mask_override", "records_out", "classes", "files", "secs", "class_id", "port", "ws_port", "data_dir",
    "input", "realtime", "duration", "rate",
];

/// Environment override for the service data directory.
pub const DATA_DIR_ENV: &str = "ATTN_DATA_DIR";

#[derive(Debug, Clone, Default)]
pub struct Overlay {
    entries: BTreeMap<String, String>,
}

impl Overlay {
    /// Blank lines and `#` comments are skipped; a later duplicate key wins.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
            let k = k.trim();
            if !KNOWN_KEYS.contains(&k) {
                return Err(CliError::Usage(format!("config line {}: unknown key {k:?}", n + 1)));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Overlay { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Flag,
    File,
    Env,
    Default,
}

impl Origin {
    fn as_str(self) -> &'static str {
        match self {
            Origin::Flag => "flag",
            Origin::File => "file",
            Origin::Env => "env",
            Origin::Default => "default",
        }
    }
}

/// Resolves settings with precedence flag > file > default and remembers
/// every answer for `--verbose`.
pub struct Resolver {
    file: Overlay,
    seen: Vec<(String, String, Origin)>,
}

impl Resolver {
    pub fn new(file: Overlay) -> Self {
        Resolver { file, seen: Vec::new() }
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| CliError::Usage(format!("config: bad value {v:?} for {key}"))),
        }
    }

    pub fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let (v, origin) = match flag {
            Some(v) => (Some(v), Origin::Flag),
            None => (self.from_file(key)?, Origin::File),
        };
        if let Some(v) = &v {
            self.seen.push((key.to_string(), v.to_string(), origin));
        }
        Ok(v)
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        match self.opt(key, flag)? {
            Some(v) => Ok(v),
            None => {
                self.seen.push((key.to_string(), default.to_string(), Origin::Default));
                Ok(default)
            }
        }
    }

    /// A boolean switch: set by the flag, or by `true`/`false` in the file.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        self.get(key, flag.then_some(true), false)
    }

    /// Like [`opt`](Self::opt) with the environment between file and default.
    pub fn opt_env(&mut self, key: &str, flag: Option<String>, env: &str) -> Result<Option<String>, CliError> {
        if let Some(v) = self.opt(key, flag)? {
            return Ok(Some(v));
        }
        match std::env::var(env) {
            Ok(v) if !v.is_empty() => {
                self.seen.push((key.to_string(), v.clone(), Origin::Env));
                Ok(Some(v))
            }
            _ => Ok(None),
        }
    }

    /// Training keys taken verbatim from the file.
    pub fn file_raw(&mut self, key: &str) -> Option<String> {
        let v = self.file.get(key)?.to_string();
        self.seen.push((key.to_string(), v.clone(), Origin::File));
        Some(v)
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        for (k, v, o) in &self.seen {
            s.push_str(&format!("config {k}={v} ({})\n", o.as_str()));
        }
        s
    }
}
