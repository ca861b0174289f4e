//! Sensitivity profiles and the lexical judge that matches descriptions to them.

use super::Judge;
use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::path::Path;

/// Minimum judge score for a description to match a profile.
pub const MATCH_THRESHOLD: f64 = 0.2;

const STOPWORDS: [&str; 24] = [
    "a", "an", "and", "are", "as", "at", "by", "for", "from", "in", "is", "it", "like", "of", "on", "or", "that", "the", "them", "these", "this", "to", "when", "with",
];

/// Light suffix stripping; enough to conflate plurals and simple verb forms.
pub fn stem(word: &str) -> String {
    let w = word;
    for (suffix, min_left) in [("ing", 4), ("ies", 3), ("ed", 4), ("es", 4), ("s", 3)] {
        if let Some(base) = w.strip_suffix(suffix) {
            if base.chars().count() < min_left || (suffix == "s" && base.ends_with('s')) {
                continue;
            }
            return match suffix {
                "ies" => format!("{base}y"),
                // "machines" keeps its e, "buzzes" drops it
                "es" if !base.ends_with("ss") && !base.ends_with('z') && !base.ends_with("sh") && !base.ends_with("ch") && !base.ends_with('x') => format!("{base}e"),
                _ => base.to_string(),
            };
        }
    }
    w.to_string()
}

/// Case-folded, stemmed content words of `text`.
pub fn keywords(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .map(|t| stem(&t))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityProfile {
    pub id: u64,
    pub description: String,
    pub keywords: BTreeSet<String>,
}

impl SensitivityProfile {
    pub fn new(id: u64, description: &str) -> Result<Self> {
        let description = description.trim();
        if description.is_empty() {
            return Err(Error::Invalid("empty profile description".into()));
        }
        if description.contains(['\n', '\r']) {
            return Err(Error::Invalid("profile description spans lines".into()));
        }
        Ok(SensitivityProfile { id, description: description.to_string(), keywords: keywords(description) })
    }

    pub fn set_description(&mut self, description: &str) -> Result<()> {
        *self = Self::new(self.id, description)?;
        Ok(())
    }
}

/// Jaccard overlap of stemmed keyword sets.
#[derive(Debug, Clone, Default)]
pub struct LexicalJudge;

impl Judge for LexicalJudge {
    fn score(&self, description: &str, profile: &SensitivityProfile) -> f64 {
        let d = keywords(description);
        let inter = d.intersection(&profile.keywords).count();
        let union = d.union(&profile.keywords).count();
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Best-scoring profile at or above [`MATCH_THRESHOLD`]; ties go to the lowest id.
pub fn match_profile(description: &str, profiles: &[SensitivityProfile], judge: &dyn Judge) -> Option<u64> {
    let mut best: Option<(f64, u64)> = None;
    for p in profiles {
        let s = judge.score(description, p);
        if s < MATCH_THRESHOLD {
            continue;
        }
        best = match best {
            Some((bs, bid)) if bs > s || (bs == s && bid < p.id) => Some((bs, bid)),
            _ => Some((s, p.id)),
        };
    }
    best.map(|(_, id)| id)
}

/// Ordered profile collection with id allocation and a text record file
/// of `id<TAB>description` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileSet {
    profiles: Vec<SensitivityProfile>,
    next_id: u64,
}

impl ProfileSet {
    pub fn new() -> Self {
        ProfileSet { profiles: Vec::new(), next_id: 1 }
    }

    pub fn list(&self) -> &[SensitivityProfile] {
        &self.profiles
    }

    pub fn get(&self, id: u64) -> Result<&SensitivityProfile> {
        self.profiles.iter().find(|p| p.id == id).ok_or_else(|| Error::NotFound(format!("profile {id}")))
    }

    pub fn create(&mut self, description: &str) -> Result<u64> {
        let id = self.next_id.max(1);
        self.profiles.push(SensitivityProfile::new(id, description)?);
        self.next_id = id + 1;
        Ok(id)
    }

    pub fn edit(&mut self, id: u64, description: &str) -> Result<()> {
        let p = self.profiles.iter_mut().find(|p| p.id == id).ok_or_else(|| Error::NotFound(format!("profile {id}")))?;
        p.set_description(description)
    }

    pub fn delete(&mut self, id: u64) -> Result<SensitivityProfile> {
        let i = self.profiles.iter().position(|p| p.id == id).ok_or_else(|| Error::NotFound(format!("profile {id}")))?;
        Ok(self.profiles.remove(i))
    }

    pub fn to_text(&self) -> String {
        self.profiles.iter().map(|p| format!("{}\t{}\n", p.id, p.description)).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut set = ProfileSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, desc) = line.split_once('\t').ok_or_else(|| Error::Invalid(format!("profile line {}: missing tab", n + 1)))?;
            let id: u64 = id.trim().parse().map_err(|_| Error::Invalid(format!("profile line {}: bad id", n + 1)))?;
            if set.profiles.iter().any(|p| p.id == id) {
                return Err(Error::Invalid(format!("profile line {}: duplicate id {id}", n + 1)));
            }
            set.profiles.push(SensitivityProfile::new(id, desc)?);
            set.next_id = set.next_id.max(id + 1);
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Missing files load as an empty set.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match std::fs::read_to_string(path) {
            Ok(t) => Self::from_text(&t),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}
