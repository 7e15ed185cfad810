//! On-disk vector store shared by the fixture backends and the embedding
//! cache.
//!
//! Layout: a directory of little-endian `f64` array files plus `index.json`
//! mapping `(backend_id, content hash)` to a file name and dimension. Vector
//! files are written to a temporary name and renamed into place, so a reader
//! never sees a partial entry.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{tokenize, BackendDescriptor, BackendKind, JointEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::picture::Picture;
use crate::regions::BoundingBox;

pub const INDEX_FILE: &str = "index.json";
pub const FIXTURE_JOINT_ID: &str = "joint";
pub const FIXTURE_TEXT_ID: &str = "text";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    backend_id: String,
    hash: String,
    file: String,
    dim: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexFile {
    version: u32,
    entries: Vec<IndexEntry>,
}

#[derive(Default)]
struct Index {
    entries: HashMap<(String, String), IndexEntry>,
    dirty: bool,
}

pub struct VectorStore {
    dir: PathBuf,
    index: Mutex<Index>,
}

pub fn content_hash(content_key: &str) -> String {
    hex::encode(Sha256::digest(content_key.as_bytes()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming into {}", path.display()), e))
}

impl VectorStore {
    /// Opens (or creates) a store rooted at `dir`.
    pub fn open_or_create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        Self::open_existing(&dir).or_else(|_| {
            Ok(VectorStore {
                dir,
                index: Mutex::new(Index::default()),
            })
        })
    }

    /// Opens a store that must already have an index.
    pub fn open_existing(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(INDEX_FILE);
        let body = fs::read_to_string(&path).map_err(|e| {
            Error::BackendUnavailable(format!("cannot read {}: {e}", path.display()))
        })?;
        let file: IndexFile = serde_json::from_str(&body)?;
        let entries = file
            .entries
            .into_iter()
            .map(|e| ((e.backend_id.clone(), e.hash.clone()), e))
            .collect();
        Ok(VectorStore {
            dir,
            index: Mutex::new(Index {
                entries,
                dirty: false,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("index lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dimensions recorded for `backend_id`, deduplicated.
    pub fn dims(&self, backend_id: &str) -> Vec<usize> {
        let idx = self.index.lock().expect("index lock");
        let mut dims: Vec<usize> = idx
            .entries
            .values()
            .filter(|e| e.backend_id == backend_id)
            .map(|e| e.dim)
            .collect();
        dims.sort_unstable();
        dims.dedup();
        dims
    }

    pub fn get(&self, backend_id: &str, content_key: &str) -> Result<Option<Vec<f64>>> {
        let entry = {
            let idx = self.index.lock().expect("index lock");
            idx.entries
                .get(&(backend_id.to_string(), content_hash(content_key)))
                .cloned()
        };
        let Some(entry) = entry else {
            return Ok(None);
        };
        let path = self.dir.join(&entry.file);
        let bytes =
            fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if bytes.len() != entry.dim * 8 {
            return Err(Error::DimensionMismatch {
                expected: entry.dim,
                actual: bytes.len() / 8,
            });
        }
        Ok(Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ))
    }

    pub fn put(&self, backend_id: &str, content_key: &str, values: &[f64]) -> Result<()> {
        let hash = content_hash(content_key);
        let mut name_hasher = Sha256::new();
        name_hasher.update(backend_id.as_bytes());
        name_hasher.update([0u8]);
        name_hasher.update(hash.as_bytes());
        let file = format!("{}.bin", &hex::encode(name_hasher.finalize())[..40]);
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_atomic(&self.dir.join(&file), &bytes)?;
        let mut idx = self.index.lock().expect("index lock");
        idx.entries.insert(
            (backend_id.to_string(), hash.clone()),
            IndexEntry {
                backend_id: backend_id.to_string(),
                hash,
                file,
                dim: values.len(),
            },
        );
        idx.dirty = true;
        Ok(())
    }

    /// Persists the index if anything was added since the last flush.
    pub fn flush(&self) -> Result<()> {
        let mut idx = self.index.lock().expect("index lock");
        if !idx.dirty {
            return Ok(());
        }
        let mut entries: Vec<IndexEntry> = idx.entries.values().cloned().collect();
        entries.sort_by(|a, b| (&a.backend_id, &a.hash).cmp(&(&b.backend_id, &b.hash)));
        let body = serde_json::to_vec_pretty(&IndexFile {
            version: 1,
            entries,
        })?;
        write_atomic(&self.dir.join(INDEX_FILE), &body)?;
        idx.dirty = false;
        Ok(())
    }
}

impl Drop for VectorStore {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            log::warn!(
                "failed to flush vector index in {}: {e}",
                self.dir.display()
            );
        }
    }
}

fn fixture_descriptor(
    store: &VectorStore,
    backend_id: &str,
    kind_role: &str,
) -> Result<BackendDescriptor> {
    let dims = store.dims(backend_id);
    let dim = match dims.as_slice() {
        [d] => *d,
        [] => {
            return Err(Error::BackendUnavailable(format!(
                "fixture {} has no `{backend_id}` vectors",
                store.dir().display()
            )))
        }
        _ => {
            return Err(Error::BackendUnavailable(format!(
                "fixture {} mixes dimensions {dims:?} for `{backend_id}`",
                store.dir().display()
            )))
        }
    };
    let name = store
        .dir()
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("fixture");
    Ok(BackendDescriptor::new(
        BackendKind::Fixture,
        format!("fixture-{kind_role}-{name}"),
        dim,
    ))
}

fn missing(key: &str) -> Error {
    Error::BackendUnavailable(format!("fixture has no vector for `{key}`"))
}

/// Joint encoder reading precomputed vectors: sentences under `text:<text>`,
/// crops under `region:<x0,y0,x1,y1>`.
pub struct FixtureJoint {
    store: VectorStore,
    descriptor: BackendDescriptor,
}

impl FixtureJoint {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let store = VectorStore::open_existing(dir)?;
        let descriptor = fixture_descriptor(&store, FIXTURE_JOINT_ID, "joint")?;
        Ok(FixtureJoint { store, descriptor })
    }

    pub fn text_key(text: &str) -> String {
        format!("text:{text}")
    }

    pub fn region_key(region: BoundingBox) -> String {
        format!("region:{region}")
    }
}

impl JointEncoder for FixtureJoint {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        let key = Self::text_key(text);
        self.store
            .get(FIXTURE_JOINT_ID, &key)?
            .ok_or_else(|| missing(&key))
    }

    fn encode_region(&self, _picture: &Picture, region: BoundingBox) -> Result<Vec<f64>> {
        let key = Self::region_key(region);
        self.store
            .get(FIXTURE_JOINT_ID, &key)?
            .ok_or_else(|| missing(&key))
    }
}

/// Classifier encoder reading precomputed vectors. A whole-text average under
/// `mean:<text>` wins; otherwise each token is looked up under `token:<tok>`.
pub struct FixtureText {
    store: VectorStore,
    descriptor: BackendDescriptor,
}

impl FixtureText {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let store = VectorStore::open_existing(dir)?;
        let descriptor = fixture_descriptor(&store, FIXTURE_TEXT_ID, "text")?;
        Ok(FixtureText { store, descriptor })
    }

    pub fn token_key(token: &str) -> String {
        format!("token:{token}")
    }

    pub fn mean_key(text: &str) -> String {
        format!("mean:{text}")
    }
}

impl TextEncoder for FixtureText {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        tokens
            .iter()
            .map(|t| {
                let key = Self::token_key(t);
                self.store
                    .get(FIXTURE_TEXT_ID, &key)?
                    .ok_or_else(|| missing(&key))
            })
            .collect()
    }

    fn mean_vector(&self, text: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.store.get(FIXTURE_TEXT_ID, &Self::mean_key(text))? {
            return Ok(v);
        }
        let tokens = self.token_vectors(text)?;
        super::mean_of(&tokens).ok_or(Error::EmptyText)
    }
}

/// Persistent memo of encoder outputs keyed by backend id and content.
pub struct EmbeddingCache {
    store: VectorStore,
}

impl EmbeddingCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        Ok(EmbeddingCache {
            store: VectorStore::open_or_create(dir)?,
        })
    }

    pub fn get_or_compute(
        &self,
        backend_id: &str,
        content_key: &str,
        compute: impl FnOnce() -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        if let Some(v) = self.store.get(backend_id, content_key)? {
            return Ok(v);
        }
        let v = compute()?;
        self.store.put(backend_id, content_key, &v)?;
        Ok(v)
    }

    pub fn flush(&self) -> Result<()> {
        self.store.flush()
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }
}

pub struct CachedJoint<'a> {
    inner: Box<dyn JointEncoder + 'a>,
    cache: &'a EmbeddingCache,
    backend_id: String,
}

impl<'a> CachedJoint<'a> {
    pub fn new(inner: Box<dyn JointEncoder + 'a>, cache: &'a EmbeddingCache) -> Self {
        let backend_id = inner.descriptor().backend_id();
        CachedJoint {
            inner,
            cache,
            backend_id,
        }
    }
}

impl JointEncoder for CachedJoint<'_> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        self.cache
            .get_or_compute(&self.backend_id, &format!("text:{text}"), || {
                self.inner.encode_text(text)
            })
    }

    fn encode_region(&self, picture: &Picture, region: BoundingBox) -> Result<Vec<f64>> {
        let key = format!("region:{}:{region}", picture.fingerprint());
        self.cache.get_or_compute(&self.backend_id, &key, || {
            self.inner.encode_region(picture, region)
        })
    }
}

pub struct CachedText<'a> {
    inner: Box<dyn TextEncoder + 'a>,
    cache: &'a EmbeddingCache,
    backend_id: String,
}

impl<'a> CachedText<'a> {
    pub fn new(inner: Box<dyn TextEncoder + 'a>, cache: &'a EmbeddingCache) -> Self {
        let backend_id = inner.descriptor().backend_id();
        CachedText {
            inner,
            cache,
            backend_id,
        }
    }
}

impl TextEncoder for CachedText<'_> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        self.inner.token_vectors(text)
    }

    fn mean_vector(&self, text: &str) -> Result<Vec<f64>> {
        self.cache
            .get_or_compute(&self.backend_id, &format!("mean:{text}"), || {
                self.inner.mean_vector(text)
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{
        embed_sentence_joint, embed_text_for_classifier, SyntheticJoint, SyntheticText,
    };

    #[test]
    fn fixture_token_mean_matches_hand_average() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = VectorStore::open_or_create(dir.path()).unwrap();
            store
                .put(
                    FIXTURE_TEXT_ID,
                    &FixtureText::token_key("the"),
                    &[1.0, 2.0, 3.0],
                )
                .unwrap();
            store
                .put(
                    FIXTURE_TEXT_ID,
                    &FixtureText::token_key("boy"),
                    &[4.0, 0.0, -3.0],
                )
                .unwrap();
            store
                .put(
                    FIXTURE_TEXT_ID,
                    &FixtureText::token_key("falls"),
                    &[1.0, 1.0, 3.0],
                )
                .unwrap();
        }
        let t = FixtureText::open(dir.path()).unwrap();
        let e = embed_text_for_classifier("The boy falls", &t).unwrap();
        // (1+4+1)/3, (2+0+1)/3, (3-3+3)/3
        assert_eq!(e.values, vec![2.0, 1.0, 1.0]);
        assert!(matches!(
            embed_text_for_classifier("unknown", &t),
            Err(Error::BackendUnavailable(_))
        ));
    }

    #[test]
    fn fixture_joint_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = VectorStore::open_or_create(dir.path()).unwrap();
            store
                .put(
                    FIXTURE_JOINT_ID,
                    &FixtureJoint::text_key("water"),
                    &[3.0, 4.0],
                )
                .unwrap();
        }
        let j = FixtureJoint::open(dir.path()).unwrap();
        let v = embed_sentence_joint("water", &j).unwrap();
        assert_eq!(v.values, vec![0.6, 0.8]);
    }

    #[test]
    fn missing_fixture_dir_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            FixtureJoint::open(dir.path().join("nope")),
            Err(Error::BackendUnavailable(_))
        ));
    }

    #[test]
    fn cache_is_transparent_and_persistent() {
        let dir = tempfile::tempdir().unwrap();
        let direct = SyntheticJoint::new(11, 24, None)
            .encode_text("the sink overflows")
            .unwrap();
        {
            let cache = EmbeddingCache::open(dir.path()).unwrap();
            let cached = CachedJoint::new(Box::new(SyntheticJoint::new(11, 24, None)), &cache);
            assert_eq!(cached.encode_text("the sink overflows").unwrap(), direct);
            assert_eq!(cache.len(), 1);
        }
        let cache = EmbeddingCache::open(dir.path()).unwrap();
        assert_eq!(cache.len(), 1);
        let backend_id = SyntheticJoint::new(11, 24, None).descriptor().backend_id();
        let hit = cache
            .get_or_compute(&backend_id, "text:the sink overflows", || {
                panic!("should hit")
            })
            .unwrap();
        assert_eq!(hit, direct);

        let text_cache = CachedText::new(Box::new(SyntheticText::new(2, 8)), &cache);
        let a = text_cache.mean_vector("a b c").unwrap();
        let b = text_cache.mean_vector("a b c").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, SyntheticText::new(2, 8).mean_vector("a b c").unwrap());
    }
}
