//! Vector representations.
//!
//! Two encoder roles exist. A [`JointEncoder`] places sentences and picture
//! crops in one space, so their scaled inner products are relevance logits.
//! A [`TextEncoder`] produces per-token vectors for the classifier, whose
//! token average is the sample embedding.
//!
//! Backends ship for a seeded synthetic space, precomputed fixtures, and an
//! external process speaking a JSON-lines protocol. The process adapter is
//! how pretrained models plug in.

mod process;
mod store;
mod synthetic;
mod tokenize;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TranscriptSample;
use crate::error::{Error, Result};
use crate::picture::Picture;
use crate::regions::BoundingBox;
use crate::relevance::RelevanceMatrix;

pub use process::ProcessBackend;
pub use store::{CachedJoint, CachedText, EmbeddingCache, FixtureJoint, FixtureText, VectorStore};
pub use synthetic::{
    hash_unit_vector, PlantedGroup, PlantedStructure, SyntheticJoint, SyntheticText,
    DEFAULT_JOINT_DIM, DEFAULT_TEXT_DIM,
};
pub use tokenize::{tokenize, truncate_tokens};

pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;
pub const DEFAULT_MAX_TEXT_TOKENS: usize = 77;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl JointVector {
    /// L2-normalizes `values`. Zero or non-finite vectors are rejected.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let values = l2_normalize(values)?;
        Ok(JointVector {
            values,
            normalized: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &JointVector) -> f64 {
        dot(&self.values, &other.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    TokenAverage,
    TopicConcat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEmbedding {
    pub values: Vec<f64>,
    pub source: EmbeddingSource,
}

impl ClassifierEmbedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    JointPretrained,
    TextPretrained,
    Synthetic,
    Fixture,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::JointPretrained => "joint_pretrained",
            BackendKind::TextPretrained => "text_pretrained",
            BackendKind::Synthetic => "synthetic",
            BackendKind::Fixture => "fixture",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub model_id: String,
    pub dim: usize,
    pub max_text_tokens: usize,
    pub logit_scale: f64,
    /// Prepended to every sentence before joint embedding; empty by default.
    #[serde(default)]
    pub text_prefix: String,
}

impl BackendDescriptor {
    pub fn new(kind: BackendKind, model_id: impl Into<String>, dim: usize) -> Self {
        BackendDescriptor {
            kind,
            model_id: model_id.into(),
            dim,
            max_text_tokens: DEFAULT_MAX_TEXT_TOKENS,
            logit_scale: DEFAULT_LOGIT_SCALE,
            text_prefix: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_text_tokens < 1 || !(self.logit_scale > 0.0) || self.dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "bad backend descriptor {self:?}"
            )));
        }
        Ok(())
    }

    /// Stable identifier used to key cache entries.
    pub fn backend_id(&self) -> String {
        format!("{}:{}:{}", self.kind, self.model_id, self.dim)
    }
}

/// Encoder for the shared image-text space.
pub trait JointEncoder: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Raw (not necessarily normalized) text vector. Implementations apply
    /// their own token limit.
    fn encode_text(&self, text: &str) -> Result<Vec<f64>>;

    /// Raw vector for `region` of `picture`; the region is already checked
    /// to be non-degenerate and in bounds.
    fn encode_region(&self, picture: &Picture, region: BoundingBox) -> Result<Vec<f64>>;
}

/// Contextual token encoder feeding the classifier.
pub trait TextEncoder: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>>;

    fn mean_vector(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = self.token_vectors(text)?;
        mean_of(&tokens).ok_or(Error::EmptyText)
    }
}

impl<T: JointEncoder + ?Sized> JointEncoder for &T {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        (**self).encode_text(text)
    }

    fn encode_region(&self, picture: &Picture, region: BoundingBox) -> Result<Vec<f64>> {
        (**self).encode_region(picture, region)
    }
}

impl<T: JointEncoder + ?Sized> JointEncoder for Box<T> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        (**self).encode_text(text)
    }

    fn encode_region(&self, picture: &Picture, region: BoundingBox) -> Result<Vec<f64>> {
        (**self).encode_region(picture, region)
    }
}

impl<T: TextEncoder + ?Sized> TextEncoder for &T {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }

    fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        (**self).token_vectors(text)
    }

    fn mean_vector(&self, text: &str) -> Result<Vec<f64>> {
        (**self).mean_vector(text)
    }
}

/// Joint encoder whose descriptor carries a sentence prefix, such as
/// `"a picture of "`.
pub struct PrefixedJoint<E> {
    inner: E,
    descriptor: BackendDescriptor,
}

impl<E: JointEncoder> PrefixedJoint<E> {
    pub fn new(inner: E, prefix: impl Into<String>) -> Self {
        let mut descriptor = inner.descriptor().clone();
        descriptor.text_prefix = prefix.into();
        PrefixedJoint { inner, descriptor }
    }
}

impl<E: JointEncoder> JointEncoder for PrefixedJoint<E> {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        self.inner.encode_text(text)
    }

    fn encode_region(&self, picture: &Picture, region: BoundingBox) -> Result<Vec<f64>> {
        self.inner.encode_region(picture, region)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_normalize(mut values: Vec<f64>) -> Result<Vec<f64>> {
    let norm = dot(&values, &values).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroVector(0));
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(values)
}

pub(crate) fn mean_of(rows: &[Vec<f64>]) -> Option<Vec<f64>> {
    let first = rows.first()?;
    let mut acc = vec![0.0; first.len()];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Some(acc)
}

fn check_dim(expected: usize, got: &[f64]) -> Result<()> {
    if got.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: got.len(),
        });
    }
    Ok(())
}

/// Token-averaged classifier embedding of `text`.
pub fn embed_text_for_classifier(
    text: &str,
    backend: &dyn TextEncoder,
) -> Result<ClassifierEmbedding> {
    let desc = backend.descriptor();
    if desc.kind == BackendKind::JointPretrained {
        return Err(Error::BackendUnavailable(format!(
            "{} is a joint encoder, not a classifier text encoder",
            desc.model_id
        )));
    }
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let values = backend.mean_vector(text)?;
    check_dim(desc.dim, &values)?;
    Ok(ClassifierEmbedding {
        values,
        source: EmbeddingSource::TokenAverage,
    })
}

/// Unit-norm joint embedding of a sentence.
pub fn embed_sentence_joint(text: &str, backend: &dyn JointEncoder) -> Result<JointVector> {
    let desc = backend.descriptor();
    if desc.kind == BackendKind::TextPretrained {
        return Err(Error::BackendUnavailable(format!(
            "{} is a text-only encoder",
            desc.model_id
        )));
    }
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let raw = if desc.text_prefix.is_empty() {
        backend.encode_text(text)?
    } else {
        backend.encode_text(&format!("{}{}", desc.text_prefix, text))?
    };
    check_dim(desc.dim, &raw)?;
    JointVector::normalized(raw).map_err(|_| Error::EmptyText)
}

/// Unit-norm joint embedding of the whole picture (`region = None`) or of a
/// crop.
pub fn embed_image_joint(
    picture: &Picture,
    region: Option<BoundingBox>,
    backend: &dyn JointEncoder,
) -> Result<JointVector> {
    let desc = backend.descriptor();
    if desc.kind == BackendKind::TextPretrained {
        return Err(Error::BackendUnavailable(format!(
            "{} is a text-only encoder",
            desc.model_id
        )));
    }
    let region = region.unwrap_or_else(|| picture.full_box());
    picture.check_box(region)?;
    let raw = backend.encode_region(picture, region)?;
    check_dim(desc.dim, &raw)?;
    JointVector::normalized(raw).map_err(|_| Error::DegenerateCrop(region))
}

/// Joint embeddings of every sentence of every sample, shaped like the
/// samples. Sentences are embedded in parallel.
pub fn embed_corpus_sentences(
    samples: &[TranscriptSample],
    backend: &dyn JointEncoder,
) -> Result<Vec<Vec<JointVector>>> {
    samples
        .par_iter()
        .map(|s| {
            s.texts()
                .map(|t| embed_sentence_joint(t, backend))
                .collect()
        })
        .collect()
}

/// Joint embeddings of each region, in parallel.
pub fn embed_regions(
    picture: &Picture,
    regions: &[BoundingBox],
    backend: &dyn JointEncoder,
) -> Result<Vec<JointVector>> {
    regions
        .par_iter()
        .map(|r| embed_image_joint(picture, Some(*r), backend))
        .collect()
}

/// `M[i][j] = logit_scale * <images[i], texts[j]>`.
pub fn relevance_logits(
    images: &[JointVector],
    texts: &[JointVector],
    logit_scale: f64,
) -> Result<RelevanceMatrix> {
    let dim = images
        .first()
        .or_else(|| texts.first())
        .map(JointVector::dim)
        .unwrap_or(0);
    for v in images.iter().chain(texts) {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.dim(),
            });
        }
    }
    let logits = images
        .iter()
        .map(|img| texts.iter().map(|t| logit_scale * img.dot(t)).collect())
        .collect();
    RelevanceMatrix::from_rows(logits)
}

/// Parsed form of a backend argument such as `synthetic:seed=7`,
/// `fixture:/path/to/dir` or `process:python3 scripts/pretrained_backend.py`.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Synthetic {
        seed: u64,
        dim: Option<usize>,
        planted: Option<std::path::PathBuf>,
    },
    Fixture(std::path::PathBuf),
    Process(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "synthetic" => {
                let mut seed = 0;
                let mut dim = None;
                let mut planted = None;
                for part in rest.split(',').filter(|p| !p.is_empty()) {
                    let (k, v) = part
                        .split_once('=')
                        .ok_or_else(|| Error::InvalidConfig(format!("bad synthetic option `{part}`")))?;
                    let bad = |e: std::num::ParseIntError| Error::InvalidConfig(format!("bad `{part}`: {e}"));
                    match k {
                        "seed" => seed = v.parse().map_err(bad)?,
                        "dim" => dim = Some(v.parse().map_err(bad)?),
                        "planted" => planted = Some(v.into()),
                        _ => return Err(Error::InvalidConfig(format!("unknown synthetic option `{k}`"))),
                    }
                }
                Ok(BackendSpec::Synthetic { seed, dim, planted })
            }
            "fixture" if !rest.is_empty() => Ok(BackendSpec::Fixture(rest.into())),
            "process" if !rest.is_empty() => Ok(BackendSpec::Process(rest.to_string())),
            _ => Err(Error::InvalidConfig(format!(
                "unknown backend `{s}` (expected synthetic[:seed=N,...], fixture:DIR or process:CMD)"
            ))),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Synthetic { seed, dim, planted } => {
                write!(f, "synthetic:seed={seed}")?;
                if let Some(d) = dim {
                    write!(f, ",dim={d}")?;
                }
                if let Some(p) = planted {
                    write!(f, ",planted={}", p.display())?;
                }
                Ok(())
            }
            BackendSpec::Fixture(p) => write!(f, "fixture:{}", p.display()),
            BackendSpec::Process(c) => write!(f, "process:{c}"),
        }
    }
}

impl BackendSpec {
    pub fn joint(&self) -> Result<Box<dyn JointEncoder>> {
        Ok(match self {
            BackendSpec::Synthetic { seed, dim, planted } => {
                let planted = planted.as_ref().map(PlantedStructure::load).transpose()?;
                Box::new(SyntheticJoint::new(
                    *seed,
                    dim.unwrap_or(synthetic::DEFAULT_JOINT_DIM),
                    planted,
                ))
            }
            BackendSpec::Fixture(dir) => Box::new(FixtureJoint::open(dir)?),
            BackendSpec::Process(cmd) => {
                Box::new(ProcessBackend::spawn(cmd, BackendKind::JointPretrained)?)
            }
        })
    }

    pub fn text(&self) -> Result<Box<dyn TextEncoder>> {
        Ok(match self {
            BackendSpec::Synthetic { seed, dim, .. } => Box::new(SyntheticText::new(
                *seed,
                dim.unwrap_or(synthetic::DEFAULT_TEXT_DIM),
            )),
            BackendSpec::Fixture(dir) => Box::new(FixtureText::open(dir)?),
            BackendSpec::Process(cmd) => {
                Box::new(ProcessBackend::spawn(cmd, BackendKind::TextPretrained)?)
            }
        })
    }
}
