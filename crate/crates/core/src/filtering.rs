//! Top/bottom sentence selection by relevance to a picture or sub-region.
//!
//! A sample's sentences are ranked by their joint-space logit against the
//! target, the `k_t` highest and `k_b` lowest are kept (each at most once),
//! and the survivors are rejoined in transcript order.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{join_sentences, Dataset, Label, TranscriptSample};
use crate::embedding::{embed_corpus_sentences, embed_image_joint, JointEncoder, JointVector};
use crate::error::{Error, Result};
use crate::picture::Picture;
use crate::regions::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FilterSpec {
    pub k_t: usize,
    pub k_b: usize,
}

impl FilterSpec {
    pub fn new(k_t: usize, k_b: usize) -> Self {
        FilterSpec { k_t, k_b }
    }

    /// `(0, 0)`: keep every sentence.
    pub fn passthrough() -> Self {
        FilterSpec { k_t: 0, k_b: 0 }
    }

    pub fn is_passthrough(&self) -> bool {
        self.k_t == 0 && self.k_b == 0
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.k_t, self.k_b)
    }
}

impl FromStr for FilterSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (t, b) = s
            .split_once(',')
            .ok_or_else(|| Error::InvalidConfig(format!("filter spec `{s}` must be `kt,kb`")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| Error::InvalidConfig(format!("filter spec `{s}`: {e}")))
        };
        Ok(FilterSpec::new(parse(t)?, parse(b)?))
    }
}

/// What the sentences are ranked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Picture,
    Region(BoundingBox),
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "picture" {
            return Ok(Target::Picture);
        }
        match s.strip_prefix("box:") {
            Some(rest) => Ok(Target::Region(rest.parse()?)),
            None => Err(Error::InvalidConfig(format!(
                "target `{s}` must be `picture` or `box:x0,y0,x1,y1`"
            ))),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Picture => f.write_str("picture"),
            Target::Region(b) => write!(f, "box:{b}"),
        }
    }
}

impl Target {
    pub fn region(&self) -> Option<BoundingBox> {
        match self {
            Target::Picture => None,
            Target::Region(b) => Some(*b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedSample {
    pub sample_id: String,
    pub kept_sentence_indices: Vec<usize>,
    pub text: String,
    pub label: Label,
}

/// Which ranked sentences were picked from the top and from the bottom.
/// Both are empty for a pass-through spec.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub top: Vec<usize>,
    pub bottom: Vec<usize>,
}

impl Selection {
    pub fn kept(&self) -> BTreeSet<usize> {
        self.top.iter().chain(&self.bottom).copied().collect()
    }
}

/// Per-sample filtering record: ranking, selection and processed output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub ranked: Vec<(usize, f64)>,
    pub selection: Selection,
    pub processed: ProcessedSample,
}

/// Sorts sentence indices by descending logit against `target`; equal
/// scores keep the lower index first.
pub fn rank_with_vectors(
    sentences: &[JointVector],
    target: &JointVector,
    logit_scale: f64,
) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = sentences
        .iter()
        .enumerate()
        .map(|(i, v)| (i, logit_scale * v.dot(target)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

pub fn rank_sentences(
    sample: &TranscriptSample,
    target: &JointVector,
    backend: &dyn JointEncoder,
) -> Result<Vec<(usize, f64)>> {
    let vecs = embed_corpus_sentences(std::slice::from_ref(sample), backend)?;
    Ok(rank_with_vectors(
        &vecs[0],
        target,
        backend.descriptor().logit_scale,
    ))
}

pub fn split_top_bottom(ranked: &[(usize, f64)], spec: FilterSpec) -> Selection {
    if spec.is_passthrough() {
        return Selection::default();
    }
    let n = ranked.len();
    Selection {
        top: ranked.iter().take(spec.k_t).map(|r| r.0).collect(),
        bottom: ranked[n - spec.k_b.min(n)..].iter().map(|r| r.0).collect(),
    }
}

/// Union of the first `k_t` and last `k_b` ranked indices; `(0, 0)` keeps
/// everything.
pub fn select_top_bottom(ranked: &[(usize, f64)], spec: FilterSpec) -> BTreeSet<usize> {
    if spec.is_passthrough() {
        return ranked.iter().map(|r| r.0).collect();
    }
    split_top_bottom(ranked, spec).kept()
}

pub fn build_processed_sample(
    sample: &TranscriptSample,
    kept: &BTreeSet<usize>,
) -> Result<ProcessedSample> {
    if kept.is_empty() {
        return Err(Error::EmptySelection(sample.sample_id.clone()));
    }
    if let Some(&bad) = kept.iter().find(|&&i| i >= sample.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: sample.len(),
        });
    }
    let kept_sentence_indices: Vec<usize> = kept.iter().copied().collect();
    let text = join_sentences(
        kept_sentence_indices
            .iter()
            .map(|&i| sample.sentences[i].text.as_str()),
    );
    Ok(ProcessedSample {
        sample_id: sample.sample_id.clone(),
        kept_sentence_indices,
        text,
        label: sample.label,
    })
}

/// Rank, select and rebuild one sample from precomputed sentence vectors.
pub fn filter_sample(
    sample: &TranscriptSample,
    sentence_vectors: &[JointVector],
    target: &JointVector,
    spec: FilterSpec,
    logit_scale: f64,
) -> Result<FilterOutcome> {
    let ranked = rank_with_vectors(sentence_vectors, target, logit_scale);
    let selection = split_top_bottom(&ranked, spec);
    let kept = if spec.is_passthrough() {
        (0..sample.len()).collect()
    } else {
        selection.kept()
    };
    let processed = build_processed_sample(sample, &kept)?;
    Ok(FilterOutcome {
        ranked,
        selection,
        processed,
    })
}

/// Filters every sample against one target vector, in parallel.
pub fn filter_samples(
    samples: &[TranscriptSample],
    sentence_vectors: &[Vec<JointVector>],
    target: &JointVector,
    spec: FilterSpec,
    logit_scale: f64,
) -> Result<Vec<FilterOutcome>> {
    samples
        .par_iter()
        .zip(sentence_vectors)
        .map(|(s, v)| filter_sample(s, v, target, spec, logit_scale))
        .collect()
}

pub fn process_dataset_detailed(
    dataset: &Dataset,
    picture: &Picture,
    target: Target,
    spec: FilterSpec,
    backend: &dyn JointEncoder,
) -> Result<Vec<FilterOutcome>> {
    let target_vec = embed_image_joint(picture, target.region(), backend)?;
    let sentence_vecs = embed_corpus_sentences(&dataset.samples, backend)?;
    filter_samples(
        &dataset.samples,
        &sentence_vecs,
        &target_vec,
        spec,
        backend.descriptor().logit_scale,
    )
}

/// Applies rank, select and rebuild to every sample; labels pass through.
pub fn process_dataset(
    dataset: &Dataset,
    picture: &Picture,
    target: Target,
    spec: FilterSpec,
    backend: &dyn JointEncoder,
) -> Result<Vec<ProcessedSample>> {
    Ok(
        process_dataset_detailed(dataset, picture, target, spec, backend)?
            .into_iter()
            .map(|o| o.processed)
            .collect(),
    )
}
