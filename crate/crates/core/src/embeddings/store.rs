//! Class-id → embedding dictionary and its binary file.
//!
//! Layout (little-endian): `"EMBD"`, version `u32`, count `u32`, then per
//! entry: id length `u16`, UTF-8 id, provenance `u8` (0 built-in, 1 custom),
//! recording count `u32`, 768 × `f32`.

use super::TargetEmbedding;
use crate::error::{Error, Result};
use crate::fusion::EMBED_DIM;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

pub const STORE_MAGIC: &[u8; 4] = b"EMBD";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Builtin,
    Custom,
}

impl Provenance {
    fn tag(self) -> u8 {
        match self {
            Provenance::Builtin => 0,
            Provenance::Custom => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Builtin => "builtin",
            Provenance::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub embedding: TargetEmbedding,
    pub provenance: Provenance,
    pub recordings: u32,
}

/// Embedding dictionary keyed by class id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    entries: BTreeMap<String, StoreEntry>,
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::Invalid("class id must be non-empty".into()));
    }
    if id.len() > u16::MAX as usize {
        return Err(Error::Invalid(format!("class id of {} bytes is too long", id.len())));
    }
    Ok(())
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `id`.
    pub fn upsert(&mut self, id: &str, embedding: TargetEmbedding, provenance: Provenance, recordings: u32) -> Result<()> {
        check_id(id)?;
        if embedding.dim() != EMBED_DIM {
            return Err(Error::Shape(format!("embedding for {id} has {} values, expected {EMBED_DIM}", embedding.dim())));
        }
        self.entries.insert(id.to_string(), StoreEntry { embedding, provenance, recordings });
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&StoreEntry> {
        self.entries.get(id).ok_or_else(|| Error::NotFound(format!("class {id}")))
    }

    pub fn embedding(&self, id: &str) -> Result<&TargetEmbedding> {
        self.get(id).map(|e| &e.embedding)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn remove(&mut self, id: &str) -> Option<StoreEntry> {
        self.entries.remove(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoreEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.entries.len() * (4 * EMBED_DIM + 32));
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, e) in &self.entries {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.push(e.provenance.tag());
            out.extend_from_slice(&e.recordings.to_le_bytes());
            for v in e.embedding.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a whole store; any defect yields a format error with the byte
    /// offset and no partial result.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != STORE_MAGIC {
            return Err(Error::format(0, "bad magic"));
        }
        let version = r.u32()?;
        if version != STORE_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let at = r.pos as u64;
            let n = r.u16()? as usize;
            let id = std::str::from_utf8(r.take(n)?).map_err(|_| Error::format(at + 2, "class id is not UTF-8"))?.to_string();
            if id.is_empty() {
                return Err(Error::format(at, "empty class id"));
            }
            let tag_at = r.pos as u64;
            let provenance = match r.take(1)?[0] {
                0 => Provenance::Builtin,
                1 => Provenance::Custom,
                t => return Err(Error::format(tag_at, format!("unknown provenance tag {t}"))),
            };
            let recordings = r.u32()?;
            let vec_at = r.pos as u64;
            let raw = r.take(4 * EMBED_DIM)?;
            let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let embedding = TargetEmbedding::from_stored(v).map_err(|e| Error::format(vec_at, e.to_string()))?;
            if entries.insert(id.clone(), StoreEntry { embedding, provenance, recordings }).is_some() {
                return Err(Error::format(at, format!("duplicate class id {id}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes"));
        }
        Ok(EmbeddingStore { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Store shared between readers and a single updater. Readers hold an
/// immutable snapshot; updates publish a fresh one.
#[derive(Debug, Default)]
pub struct SharedStore {
    current: RwLock<Arc<EmbeddingStore>>,
}

impl SharedStore {
    pub fn new(store: EmbeddingStore) -> Self {
        SharedStore { current: RwLock::new(Arc::new(store)) }
    }

    pub fn snapshot(&self) -> Arc<EmbeddingStore> {
        match self.current.read() {
            Ok(g) => Arc::clone(&g),
            Err(p) => Arc::clone(&p.into_inner()),
        }
    }

    /// Applies `f` to a copy of the current store and publishes the result
    /// if `f` succeeds.
    pub fn update<R>(&self, f: impl FnOnce(&mut EmbeddingStore) -> Result<R>) -> Result<R> {
        let mut guard = match self.current.write() {
            Ok(g) => g,
            Err(p) => p.into_inner(),
        };
        let mut next = (**guard).clone();
        let r = f(&mut next)?;
        *guard = Arc::new(next);
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(seed: u32) -> TargetEmbedding {
        let v: Vec<f32> = (0..EMBED_DIM).map(|i| ((i as u32).wrapping_mul(2654435761u32.wrapping_add(seed)) % 1000) as f32 - 500.0).collect();
        TargetEmbedding::new(v).unwrap()
    }

    #[test]
    fn insert_lookup_replace_and_missing() {
        let mut s = EmbeddingStore::new();
        s.upsert("dog_bark", unit(1), Provenance::Builtin, 3).unwrap();
        assert_eq!(s.embedding("dog_bark").unwrap(), &unit(1));
        s.upsert("dog_bark", unit(2), Provenance::Custom, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.embedding("dog_bark").unwrap(), &unit(2));
        assert!(matches!(s.get("siren"), Err(Error::NotFound(_))));
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let mut s = EmbeddingStore::new();
        let short = TargetEmbedding::new(vec![1.0; 10]).unwrap();
        assert!(matches!(s.upsert("x", short, Provenance::Custom, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn builtin_catalog_round_trips() {
        let mut s = EmbeddingStore::new();
        for (i, id) in super::super::BUILTIN_CLASSES.iter().enumerate() {
            s.upsert(id, unit(i as u32), Provenance::Builtin, 4).unwrap();
        }
        assert_eq!(s.len(), 25);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("store.embd");
        s.save(&p).unwrap();
        assert_eq!(EmbeddingStore::load(&p).unwrap(), s);
        let empty = EmbeddingStore::new();
        assert_eq!(EmbeddingStore::from_bytes(&empty.to_bytes()).unwrap(), empty);
    }

    #[test]
    fn truncation_reports_offset() {
        let mut s = EmbeddingStore::new();
        s.upsert("a", unit(1), Provenance::Builtin, 1).unwrap();
        let bytes = s.to_bytes();
        for cut in [0, 3, 11, 14, 100, bytes.len() - 1] {
            match EmbeddingStore::from_bytes(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(EmbeddingStore::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn shared_store_publishes_snapshots() {
        let shared = SharedStore::new(EmbeddingStore::new());
        let before = shared.snapshot();
        shared.update(|s| s.upsert("a", unit(1), Provenance::Custom, 1)).unwrap();
        assert!(before.is_empty());
        assert!(shared.snapshot().contains("a"));
        assert!(shared.update(|s| s.upsert("", unit(1), Provenance::Custom, 1)).is_err());
        assert_eq!(shared.snapshot().len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_stores_round_trip(ids in proptest::collection::btree_set("[a-z_]{1,12}", 0..6), seed in 0u32..1000, custom in any::<bool>()) {
            let mut s = EmbeddingStore::new();
            for (i, id) in ids.iter().enumerate() {
                let prov = if custom && i % 2 == 0 { Provenance::Custom } else { Provenance::Builtin };
                s.upsert(id, unit(seed + i as u32), prov, i as u32).unwrap();
            }
            prop_assert_eq!(EmbeddingStore::from_bytes(&s.to_bytes()).unwrap(), s);
        }
    }
}
