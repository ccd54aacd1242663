//! Text and image embeddings.
//!
//! Vectors carry their [`EmbeddingKind`] so a text vector can never be compared with
//! an image vector. [`HashEmbedder`] is the offline deterministic backend; the bridge
//! module provides one backed by real models.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::util::{sha256_hex, splitmix64};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Text,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Deterministic,
    Bridge,
}

/// An L2-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    kind: EmbeddingKind,
    source: EmbeddingSource,
}

impl EmbeddingVector {
    /// Normalize `values` to unit length. Zero or non-finite vectors are rejected.
    pub fn new(values: Vec<f64>, kind: EmbeddingKind, source: EmbeddingSource) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Embedding("embedding has zero dimensions".into()));
        }
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Embedding(format!(
                "cannot normalize embedding with norm {norm}"
            )));
        }
        Ok(Self {
            values: values.into_iter().map(|x| x / norm).collect(),
            kind,
            source,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// Dot product of two normalized embeddings of the same kind and dimension.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.kind != b.kind {
        return Err(Error::Embedding(format!(
            "cannot compare {:?} with {:?} embeddings",
            a.kind, b.kind
        )));
    }
    if a.dimension() != b.dimension() {
        return Err(Error::Embedding(format!(
            "dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// An embedding backend for both modalities.
pub trait Embedder: Send + Sync {
    /// Stable identity used to version caches, e.g. `hash-v1/64/seed=0`.
    fn identity(&self) -> String;

    fn dimension(&self, kind: EmbeddingKind) -> usize;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;

    fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector>;
}

pub const DETERMINISTIC_DIMENSION: usize = 64;

const IMAGE_BLOCK: usize = 32;

/// Offline embedder built from hashed features.
///
/// Text: every character 3-gram of `" " + text + " "` is hashed (seeded FNV-1a) into
/// a pseudo-random direction; the directions are summed and normalized, so strings
/// sharing 3-grams get correlated vectors. Images: the same construction over
/// 32-byte blocks, with the block index mixed into the hash so any byte change moves
/// the vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    seed: u64,
    dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(0)
    }
}

impl HashEmbedder {
    pub fn new(seed: u64) -> Self {
        Self::with_dimension(seed, DETERMINISTIC_DIMENSION)
    }

    pub fn with_dimension(seed: u64, dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { seed, dimension }
    }

    fn fnv1a(&self, salt: u64, bytes: &[u8]) -> u64 {
        let mut h = 0xCBF2_9CE4_8422_2325u64 ^ self.seed ^ salt;
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }

    fn accumulate(&self, acc: &mut [f64], feature_hash: u64) {
        let mut state = feature_hash;
        for slot in acc.iter_mut() {
            state = splitmix64(state);
            // Top 53 bits as a uniform in [-1, 1).
            *slot += (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0;
        }
    }

    fn finish(&self, acc: Vec<f64>, kind: EmbeddingKind) -> Result<EmbeddingVector> {
        EmbeddingVector::new(acc, kind, EmbeddingSource::Deterministic)
    }
}

impl Embedder for HashEmbedder {
    fn identity(&self) -> String {
        format!("hash-v1/{}/seed={}", self.dimension, self.seed)
    }

    fn dimension(&self, _kind: EmbeddingKind) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::Embedding("cannot embed empty text".into()));
        }
        let padded: Vec<char> = std::iter::once(' ')
            .chain(text.chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut acc = vec![0.0; self.dimension];
        let mut buf = [0u8; 12];
        for gram in padded.windows(3) {
            let mut len = 0;
            for ch in gram {
                len += ch.encode_utf8(&mut buf[len..]).len();
            }
            self.accumulate(&mut acc, self.fnv1a(0x7E47, &buf[..len]));
        }
        self.finish(acc, EmbeddingKind::Text)
    }

    fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector> {
        if bytes.is_empty() {
            return Err(Error::Embedding("cannot embed empty image".into()));
        }
        let mut acc = vec![0.0; self.dimension];
        for (i, block) in bytes.chunks(IMAGE_BLOCK).enumerate() {
            self.accumulate(&mut acc, self.fnv1a(splitmix64(i as u64 ^ 0x1A6E), block));
        }
        self.finish(acc, EmbeddingKind::Image)
    }
}

/// Content key of a text or image item: `text:<sha256>` / `image:<sha256>`.
pub fn content_key(kind: EmbeddingKind, bytes: &[u8]) -> String {
    let prefix = match kind {
        EmbeddingKind::Text => "text",
        EmbeddingKind::Image => "image",
    };
    format!("{prefix}:{}", sha256_hex(bytes))
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    format: String,
    backend: String,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    kind: EmbeddingKind,
    source: EmbeddingSource,
    vector: Vec<f64>,
}

/// Content-addressed embedding cache, versioned by backend identity.
///
/// Reads run concurrently; insertions take the write lock.
#[derive(Debug)]
pub struct EmbeddingCache {
    backend: String,
    entries: RwLock<HashMap<String, EmbeddingVector>>,
}

const CACHE_FORMAT: &str = "cas-embedding-cache/1";

impl EmbeddingCache {
    pub fn new(backend: impl Into<String>) -> Self {
        Self {
            backend: backend.into(),
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn get(&self, key: &str) -> Option<EmbeddingVector> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: String, vector: EmbeddingVector) {
        self.entries.write().expect("cache lock").insert(key, vector);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Write the cache as JSON Lines: a header line then one entry per line, sorted by key.
    ///
    /// The file is written next to `path` and renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        serde_json::to_writer(
            &mut out,
            &CacheHeader {
                format: CACHE_FORMAT.into(),
                backend: self.backend.clone(),
            },
        )?;
        out.write_all(b"\n")?;
        let entries = self.entries.read().expect("cache lock");
        let mut keys: Vec<&String> = entries.keys().collect();
        keys.sort();
        for key in keys {
            let v = &entries[key];
            serde_json::to_writer(
                &mut out,
                &CacheLine {
                    key: key.clone(),
                    kind: v.kind,
                    source: v.source,
                    vector: v.values.clone(),
                },
            )?;
            out.write_all(b"\n")?;
        }
        drop(entries);
        out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Load a cache file; fails when it was written by a different backend.
    pub fn load(path: &Path, expected_backend: &str) -> Result<Self> {
        let cache = Self::open(path)?;
        if cache.backend != expected_backend {
            return Err(Error::Embedding(format!(
                "embedding cache was written by {:?}, expected {expected_backend:?}",
                cache.backend
            )));
        }
        Ok(cache)
    }

    /// Load a cache file written by any backend, for read-only analysis.
    pub fn open(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header: CacheHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::Data("embedding cache file is empty".into())),
        };
        if header.format != CACHE_FORMAT {
            return Err(Error::Data(format!(
                "unsupported embedding cache format {:?}",
                header.format
            )));
        }
        let mut map = HashMap::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheLine = serde_json::from_str(&line)?;
            // Stored vectors are already normalized; keep them bit-exact.
            map.insert(
                entry.key,
                EmbeddingVector {
                    values: entry.vector,
                    kind: entry.kind,
                    source: entry.source,
                },
            );
        }
        Ok(Self {
            backend: header.backend,
            entries: RwLock::new(map),
        })
    }
}

/// Embedder wrapper that memoizes results in an [`EmbeddingCache`].
pub struct CachedEmbedder<'a> {
    inner: &'a dyn Embedder,
    cache: &'a EmbeddingCache,
}

impl<'a> CachedEmbedder<'a> {
    pub fn new(inner: &'a dyn Embedder, cache: &'a EmbeddingCache) -> Self {
        Self { inner, cache }
    }

    /// Embed text, returning the vector and its cache key.
    pub fn text(&self, text: &str) -> Result<(String, EmbeddingVector)> {
        let key = content_key(EmbeddingKind::Text, text.as_bytes());
        if let Some(v) = self.cache.get(&key) {
            return Ok((key, v));
        }
        let v = self.inner.embed_text(text)?;
        self.cache.insert(key.clone(), v.clone());
        Ok((key, v))
    }

    pub fn image(&self, bytes: &[u8]) -> Result<(String, EmbeddingVector)> {
        let key = content_key(EmbeddingKind::Image, bytes);
        if let Some(v) = self.cache.get(&key) {
            return Ok((key, v));
        }
        let v = self.inner.embed_image(bytes)?;
        self.cache.insert(key.clone(), v.clone());
        Ok((key, v))
    }
}

/// Fixed label → vector table; useful for analyses over precomputed embeddings.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    dimension: usize,
    table: HashMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, label: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::Embedding(format!(
                "vector has dimension {}, table expects {}",
                vector.len(),
                self.dimension
            )));
        }
        self.table.insert(label.into(), vector);
        Ok(())
    }
}

#[derive(Deserialize)]
struct LabeledVector {
    label: String,
    embedding: Vec<f64>,
}

/// Read `{"label": ..., "embedding": [...]}` JSON Lines.
pub fn read_labeled_vectors(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: LabeledVector = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), n + 1)))?;
        out.push((v.label, v.embedding));
    }
    Ok(out)
}

impl TableEmbedder {
    /// Table from a labeled-vector file; the dimension is taken from the first line.
    pub fn load(path: &Path) -> Result<Self> {
        let rows = read_labeled_vectors(path)?;
        let dimension = rows
            .first()
            .map(|(_, v)| v.len())
            .ok_or_else(|| Error::Data(format!("{} has no vectors", path.display())))?;
        let mut table = Self::new(dimension);
        for (label, v) in rows {
            table.insert(label, v)?;
        }
        Ok(table)
    }
}

impl Embedder for TableEmbedder {
    fn identity(&self) -> String {
        format!("table/{}", self.dimension)
    }

    fn dimension(&self, _kind: EmbeddingKind) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let v = self
            .table
            .get(text)
            .ok_or_else(|| Error::Embedding(format!("no embedding for {text:?}")))?;
        EmbeddingVector::new(v.clone(), EmbeddingKind::Text, EmbeddingSource::Deterministic)
    }

    fn embed_image(&self, _bytes: &[u8]) -> Result<EmbeddingVector> {
        Err(Error::Embedding("table embedder has no image vectors".into()))
    }
}
