//! Category-name text embeddings.
//!
//! Tables are produced offline by a sentence embedder and consumed here as
//! read-only lookup structures. Categories missing from a table fall back to
//! [`hash_embed`], a deterministic unit-norm pseudo-embedding, so unseen
//! targets never abort an episode.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{LoatError, Result};

/// Category name to dense vector lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    model: String,
    entries: BTreeMap<String, Vec<f64>>,
    fallback_seed: u64,
}

/// Result of [`EmbeddingTable::embed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    /// True when the category was absent and [`hash_embed`] produced the vector.
    pub fallback: bool,
}

#[derive(Serialize)]
struct TableFileOut<'a> {
    dim: usize,
    model: &'a str,
    entries: &'a BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct TableFileIn {
    dim: usize,
    model: String,
    entries: CheckedEntries,
}

/// Map that keeps duplicate keys so the loader can reject them.
struct CheckedEntries(Vec<(String, Vec<f64>)>);

impl<'de> Deserialize<'de> for CheckedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = CheckedEntries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping category names to float arrays")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, Vec<f64>>()? {
                    out.push((k, v));
                }
                Ok(CheckedEntries(out))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

impl EmbeddingTable {
    pub fn new(dim: usize, model: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(LoatError::InvalidArgument("embedding dim must be >= 1".into()));
        }
        Ok(Self {
            dim,
            model: model.into(),
            entries: BTreeMap::new(),
            fallback_seed: 0,
        })
    }

    /// Builds a table whose entries are [`hash_embed`] vectors for `names`.
    pub fn from_hash(names: &[&str], dim: usize, seed: u64) -> Result<Self> {
        let mut table = Self::new(dim, format!("hash-embed seed={seed}"))?;
        table.fallback_seed = seed;
        for name in names {
            table.insert(name, hash_embed(name, dim, seed)?)?;
        }
        Ok(table)
    }

    pub fn with_fallback_seed(mut self, seed: u64) -> Self {
        self.fallback_seed = seed;
        self
    }

    pub fn insert(&mut self, category: &str, vector: Vec<f64>) -> Result<()> {
        if category.is_empty() {
            return Err(LoatError::InvalidArgument("empty category name".into()));
        }
        if vector.len() != self.dim {
            return Err(LoatError::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
                context: format!("entry `{category}`"),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(LoatError::NonFinite(format!("entry `{category}`")));
        }
        if self.entries.contains_key(category) {
            return Err(LoatError::DuplicateCategory(category.to_string()));
        }
        self.entries.insert(category.to_string(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn fallback_seed(&self) -> u64 {
        self.fallback_seed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, category: &str) -> bool {
        self.entries.contains_key(category)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, category: &str) -> Option<&[f64]> {
        self.entries.get(category).map(Vec::as_slice)
    }

    /// Looks up `category`, falling back to [`hash_embed`] with the table's dim.
    pub fn embed(&self, category: &str) -> Embedding {
        match self.entries.get(category) {
            Some(v) => Embedding {
                vector: v.clone(),
                fallback: false,
            },
            None => Embedding {
                // dim >= 1 is a table invariant, so this cannot fail
                vector: hash_embed(category, self.dim, self.fallback_seed)
                    .expect("table dim is positive"),
                fallback: true,
            },
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let raw: TableFileIn =
            serde_json::from_str(text).map_err(|e| LoatError::malformed(origin, e.to_string()))?;
        let mut table = Self::new(raw.dim, raw.model).map_err(|e| LoatError::malformed(origin, e.to_string()))?;
        for (name, vector) in raw.entries.0 {
            table.insert(&name, vector)?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LoatError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Canonical serialization: compact JSON, sorted keys, shortest round-trip floats.
    pub fn to_canonical_string(&self) -> String {
        let out = TableFileOut {
            dim: self.dim,
            model: &self.model,
            entries: &self.entries,
        };
        let mut s = serde_json::to_string(&out).expect("table serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_canonical_string()).map_err(|e| LoatError::io(path, e))
    }
}

/// 64-bit FNV-1a over the category bytes, a 0xff separator, and the seed.
fn stable_key(category: &str, seed: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in category.bytes().chain(std::iter::once(0xff)).chain(seed.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Deterministic unit-norm pseudo-embedding of a category name.
///
/// A ChaCha8 stream keyed by a stable hash of `(category, seed)` supplies
/// uniforms that are turned into standard normals with Box-Muller, then the
/// vector is scaled to unit Euclidean norm.
pub fn hash_embed(category: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(LoatError::InvalidArgument("hash_embed dim must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stable_key(category, seed));
    let mut out = Vec::with_capacity(dim + 1);
    while out.len() < dim {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        out.push(r * theta.sin());
    }
    out.truncate(dim);
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    } else {
        // all draws zero is practically impossible; pick a basis vector
        out[0] = 1.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_loads() {
        let t = EmbeddingTable::parse(
            r#"{"dim":2,"model":"m","entries":{"Cup":[1.0,0.0]}}"#,
            Path::new("mem"),
        )
        .unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("Cup").unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let err = EmbeddingTable::parse(
            r#"{"dim":3,"model":"m","entries":{"Cup":[1.0,0.0]}}"#,
            Path::new("mem"),
        )
        .unwrap_err();
        assert!(matches!(err, LoatError::DimensionMismatch { expected: 3, found: 2, .. }));
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        let dup = EmbeddingTable::parse(
            r#"{"dim":1,"model":"m","entries":{"Cup":[1.0],"Cup":[2.0]}}"#,
            Path::new("mem"),
        );
        assert!(matches!(dup, Err(LoatError::DuplicateCategory(_))));
        let bad = EmbeddingTable::parse(r#"{"dim":1,"entries":"#, Path::new("mem"));
        assert!(matches!(bad, Err(LoatError::Malformed { .. })));
        let empty_name = EmbeddingTable::parse(
            r#"{"dim":1,"model":"m","entries":{"":[1.0]}}"#,
            Path::new("mem"),
        );
        assert!(empty_name.is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            EmbeddingTable::load("/nonexistent/table.json"),
            Err(LoatError::Io { .. })
        ));
    }

    #[test]
    fn names_are_case_sensitive() {
        let t = EmbeddingTable::from_hash(&["Cup"], 4, 0).unwrap();
        assert!(!t.embed("Cup").fallback);
        assert!(t.embed("cup").fallback);
    }

    #[test]
    fn hash_embed_is_unit_norm_and_distinct() {
        let a = hash_embed("Cup", 4, 0).unwrap();
        let b = hash_embed("Cup", 4, 0).unwrap();
        let c = hash_embed("Mug", 4, 0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert!(hash_embed("Cup", 0, 0).is_err());
        assert_eq!(hash_embed("Cup", 1, 3).unwrap().len(), 1);
    }
}
