//! Relevance matrices, the two softmax matching views, and corpus-level
//! relevance statistics per label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Label, TranscriptSample};
use crate::embedding::{embed_corpus_sentences, embed_image_joint, JointEncoder, JointVector};
use crate::error::{Error, Result};
use crate::picture::Picture;

/// Image-by-text logit grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMatrix {
    logits: Vec<f64>,
    rows: usize,
    cols: usize,
    pub image_ids: Vec<String>,
    pub text_ids: Vec<String>,
}

impl RelevanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let mut logits = Vec::with_capacity(m * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(
                    "relevance logits must be finite".into(),
                ));
            }
            logits.extend(row);
        }
        Ok(RelevanceMatrix {
            logits,
            rows: m,
            cols: n,
            image_ids: (0..m).map(|i| format!("image{i}")).collect(),
            text_ids: (0..n).map(|j| format!("text{j}")).collect(),
        })
    }

    pub fn with_ids(mut self, image_ids: Vec<String>, text_ids: Vec<String>) -> Result<Self> {
        if image_ids.len() != self.rows || text_ids.len() != self.cols {
            return Err(Error::InvalidConfig(
                "id lists must match matrix shape".into(),
            ));
        }
        self.image_ids = image_ids;
        self.text_ids = text_ids;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.logits[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax over row `image_index`: relevance of every text to one image.
pub fn image_to_texts_match(m: &RelevanceMatrix, image_index: usize) -> Result<Vec<f64>> {
    if image_index >= m.rows() || m.cols() == 0 {
        return Err(Error::IndexOutOfRange {
            index: image_index,
            len: m.rows(),
        });
    }
    Ok(softmax(m.row(image_index)))
}

/// Softmax over column `text_index`: relevance of every image to one text.
pub fn text_to_images_match(m: &RelevanceMatrix, text_index: usize) -> Result<Vec<f64>> {
    if text_index >= m.cols() || m.rows() == 0 {
        return Err(Error::IndexOutOfRange {
            index: text_index,
            len: m.cols(),
        });
    }
    Ok(softmax(&m.column(text_index)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRelevance {
    pub sample_id: String,
    pub label: Label,
    pub per_sentence: Vec<f64>,
    pub total: f64,
}

/// Per-sample relevance from precomputed vectors. One softmax runs over every
/// sentence of every sample against the picture; each sample then reads back
/// its own sentences' probabilities.
pub fn relevance_from_vectors(
    picture: &JointVector,
    samples: &[TranscriptSample],
    sentence_vectors: &[Vec<JointVector>],
    logit_scale: f64,
) -> Result<Vec<SampleRelevance>> {
    let pooled: Vec<JointVector> = sentence_vectors.iter().flatten().cloned().collect();
    if pooled.is_empty() {
        return Err(Error::EmptyText);
    }
    let m =
        crate::embedding::relevance_logits(std::slice::from_ref(picture), &pooled, logit_scale)?;
    let probs = image_to_texts_match(&m, 0)?;
    let mut offset = 0;
    Ok(samples
        .iter()
        .zip(sentence_vectors)
        .map(|(s, vecs)| {
            let per_sentence = probs[offset..offset + vecs.len()].to_vec();
            offset += vecs.len();
            SampleRelevance {
                sample_id: s.sample_id.clone(),
                label: s.label,
                total: per_sentence.iter().sum(),
                per_sentence,
            }
        })
        .collect())
}

/// Per-sample relevance of `samples` to the full picture, with the softmax
/// pooled over all their sentences.
pub fn corpus_relevance(
    picture: &Picture,
    samples: &[TranscriptSample],
    backend: &dyn JointEncoder,
) -> Result<Vec<SampleRelevance>> {
    let picture_vec = embed_image_joint(picture, None, backend)?;
    let sentence_vecs = embed_corpus_sentences(samples, backend)?;
    relevance_from_vectors(
        &picture_vec,
        samples,
        &sentence_vecs,
        backend.descriptor().logit_scale,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub c_hc: f64,
    pub c_ad: f64,
    pub mean_sentences_per_sample: BTreeMap<Label, f64>,
    pub mean_words_per_sample: BTreeMap<Label, f64>,
    pub scale_factor: f64,
}

/// Label-wise summary: mean sample relevance scaled by the corpus sentence
/// count, plus mean sentence and whitespace-word counts.
pub fn group_stats_from(dataset: &Dataset, relevance: &[SampleRelevance]) -> Result<GroupStats> {
    dataset.require_both_labels()?;
    let scale_factor = dataset.sentence_count() as f64;
    let mut sums: BTreeMap<Label, (f64, f64, f64, usize)> = BTreeMap::new();
    for (sample, rel) in dataset.samples.iter().zip(relevance) {
        let e = sums.entry(sample.label).or_default();
        e.0 += rel.total;
        e.1 += sample.len() as f64;
        e.2 += sample.word_count() as f64;
        e.3 += 1;
    }
    let mean = |label: Label, pick: fn(&(f64, f64, f64, usize)) -> f64| {
        let e = &sums[&label];
        pick(e) / e.3 as f64
    };
    Ok(GroupStats {
        c_hc: mean(Label::Hc, |e| e.0) * scale_factor,
        c_ad: mean(Label::Ad, |e| e.0) * scale_factor,
        mean_sentences_per_sample: Label::ALL.iter().map(|&l| (l, mean(l, |e| e.1))).collect(),
        mean_words_per_sample: Label::ALL.iter().map(|&l| (l, mean(l, |e| e.2))).collect(),
        scale_factor,
    })
}

pub fn group_stats(
    dataset: &Dataset,
    picture: &Picture,
    backend: &dyn JointEncoder,
) -> Result<GroupStats> {
    dataset.require_both_labels()?;
    let rel = corpus_relevance(picture, &dataset.samples, backend)?;
    group_stats_from(dataset, &rel)
}
