//! Search for the sub-image whose relevance-filtered samples separate the
//! two labels best.
//!
//! For a region, every sample is filtered against it. The filtered texts are
//! embedded, and the region scores
//! `d_s = sum_{same label} cos - sum_{different label} cos` over unordered
//! sample pairs. The highest-scoring region wins.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Label};
use crate::embedding::{
    dot, embed_corpus_sentences, embed_regions, embed_text_for_classifier, JointEncoder,
    JointVector, TextEncoder,
};
use crate::error::{Error, Result};
use crate::filtering::{filter_samples, FilterSpec, ProcessedSample};
use crate::picture::Picture;
use crate::regions::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubImageScore {
    pub bbox: BoundingBox,
    pub d_s: f64,
    pub spec: FilterSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubImageSearchResult {
    pub best: SubImageScore,
    pub all_scores: Vec<SubImageScore>,
    pub processed: Vec<ProcessedSample>,
}

/// Same-label cosine sum minus cross-label cosine sum over unordered pairs.
pub fn pairwise_separation(items: &[(&[f64], Label)]) -> Result<f64> {
    let has = |l: Label| items.iter().any(|(_, x)| *x == l);
    if !(has(Label::Hc) && has(Label::Ad)) {
        return Err(Error::SingleClass);
    }
    let mut units = Vec::with_capacity(items.len());
    for (i, (v, _)) in items.iter().enumerate() {
        let norm = dot(v, v).sqrt();
        if !(norm > 0.0) {
            return Err(Error::ZeroVector(i));
        }
        units.push(v.iter().map(|x| x / norm).collect::<Vec<f64>>());
    }
    let mut total = 0.0;
    for i in 0..items.len() {
        for j in (i + 1)..items.len() {
            let c = dot(&units[i], &units[j]);
            if items[i].1 == items[j].1 {
                total += c;
            } else {
                total -= c;
            }
        }
    }
    Ok(total)
}

fn better(a: &SubImageScore, b: &SubImageScore) -> bool {
    a.d_s > b.d_s
        || (a.d_s == b.d_s
            && (a.bbox.area(), (a.bbox.x0, a.bbox.y0, a.bbox.x1, a.bbox.y1))
                < (b.bbox.area(), (b.bbox.x0, b.bbox.y0, b.bbox.x1, b.bbox.y1)))
}

/// Index of the best score: highest `d_s`, then smaller area, then
/// lexicographic coordinates.
pub fn argmax_score(scores: &[SubImageScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| better(s, &scores[b])) {
            best = Some(i);
        }
    }
    best
}

/// Filtered samples and their classifier embeddings for every proposal under
/// one filter spec. Embeddings are shared between proposals whose filtered
/// texts coincide.
pub struct SubImageBank {
    pub proposals: Vec<BoundingBox>,
    pub spec: FilterSpec,
    labels: Vec<Label>,
    processed: Vec<Vec<ProcessedSample>>,
    /// per proposal, per sample: row in `unit_vectors` / `raw_vectors`
    rows: Vec<Vec<usize>>,
    raw_vectors: Vec<Vec<f64>>,
    unit_vectors: Vec<Vec<f64>>,
    /// proposals with identical rows share one Gram matrix
    signature: Vec<usize>,
    grams: Vec<OnceLock<Vec<f64>>>,
}

impl SubImageBank {
    pub fn build(
        dataset: &Dataset,
        picture: &Picture,
        proposals: &[BoundingBox],
        spec: FilterSpec,
        joint: &dyn JointEncoder,
        text: &dyn TextEncoder,
    ) -> Result<Self> {
        if proposals.is_empty() {
            return Err(Error::NoProposals);
        }
        let sentence_vecs = embed_corpus_sentences(&dataset.samples, joint)?;
        let region_vecs = embed_regions(picture, proposals, joint)?;
        Self::from_vectors(
            dataset,
            proposals,
            &sentence_vecs,
            &region_vecs,
            joint.descriptor().logit_scale,
            spec,
            text,
        )
    }

    /// Same as [`SubImageBank::build`] with joint vectors already computed.
    pub fn from_vectors(
        dataset: &Dataset,
        proposals: &[BoundingBox],
        sentence_vecs: &[Vec<JointVector>],
        region_vecs: &[JointVector],
        scale: f64,
        spec: FilterSpec,
        text: &dyn TextEncoder,
    ) -> Result<Self> {
        if proposals.is_empty() {
            return Err(Error::NoProposals);
        }
        if proposals.len() != region_vecs.len() {
            return Err(Error::DimensionMismatch {
                expected: proposals.len(),
                actual: region_vecs.len(),
            });
        }
        let processed: Vec<Vec<ProcessedSample>> = region_vecs
            .par_iter()
            .map(|target| {
                Ok(
                    filter_samples(&dataset.samples, sentence_vecs, target, spec, scale)?
                        .into_iter()
                        .map(|o| o.processed)
                        .collect(),
                )
            })
            .collect::<Result<_>>()?;

        let mut text_rows: HashMap<&str, usize> = HashMap::new();
        let mut unique: Vec<&str> = Vec::new();
        let rows: Vec<Vec<usize>> = processed
            .iter()
            .map(|ps| {
                ps.iter()
                    .map(|p| {
                        *text_rows.entry(p.text.as_str()).or_insert_with(|| {
                            unique.push(p.text.as_str());
                            unique.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        let raw_vectors: Vec<Vec<f64>> = unique
            .par_iter()
            .map(|t| embed_text_for_classifier(t, text).map(|e| e.values))
            .collect::<Result<_>>()?;
        let unit_vectors = raw_vectors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let n = dot(v, v).sqrt();
                if n > 0.0 {
                    Ok(v.iter().map(|x| x / n).collect())
                } else {
                    Err(Error::ZeroVector(i))
                }
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;

        let mut sig_ids: HashMap<&Vec<usize>, usize> = HashMap::new();
        let signature: Vec<usize> = rows
            .iter()
            .map(|r| {
                let next = sig_ids.len();
                *sig_ids.entry(r).or_insert(next)
            })
            .collect();
        let grams = (0..sig_ids.len()).map(|_| OnceLock::new()).collect();

        Ok(SubImageBank {
            proposals: proposals.to_vec(),
            spec,
            labels: dataset.labels(),
            processed,
            rows,
            raw_vectors,
            unit_vectors,
            signature,
            grams,
        })
    }

    pub fn processed(&self, proposal: usize) -> &[ProcessedSample] {
        &self.processed[proposal]
    }

    /// Classifier embeddings of the samples filtered against `proposal`.
    pub fn embeddings(&self, proposal: usize) -> Vec<Vec<f64>> {
        self.rows[proposal]
            .iter()
            .map(|&r| self.raw_vectors[r].clone())
            .collect()
    }

    fn gram(&self, proposal: usize) -> &[f64] {
        self.grams[self.signature[proposal]].get_or_init(|| {
            let rows = &self.rows[proposal];
            let n = rows.len();
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let c = dot(&self.unit_vectors[rows[i]], &self.unit_vectors[rows[j]]);
                    g[i * n + j] = c;
                    g[j * n + i] = c;
                }
            }
            g
        })
    }

    /// `d_s` of one proposal over the samples at `scope` (dataset indices).
    pub fn separation(&self, proposal: usize, scope: &[usize]) -> Result<f64> {
        let has = |l: Label| scope.iter().any(|&i| self.labels[i] == l);
        if !(has(Label::Hc) && has(Label::Ad)) {
            return Err(Error::SingleClass);
        }
        let n = self.labels.len();
        let g = self.gram(proposal);
        let mut total = 0.0;
        for (a, &i) in scope.iter().enumerate() {
            for &j in &scope[a + 1..] {
                let c = g[i * n + j];
                if self.labels[i] == self.labels[j] {
                    total += c;
                } else {
                    total -= c;
                }
            }
        }
        Ok(total)
    }

    /// Scores every proposal over `scope` (all samples when `None`) and
    /// picks the winner.
    pub fn search(&self, scope: Option<&[usize]>) -> Result<SubImageSearchResult> {
        let all: Vec<usize>;
        let scope = match scope {
            Some(s) => s,
            None => {
                all = (0..self.labels.len()).collect();
                &all
            }
        };
        let all_scores: Vec<SubImageScore> = (0..self.proposals.len())
            .into_par_iter()
            .map(|p| {
                let d_s = if scope.len() == self.labels.len() {
                    let items: Vec<(&[f64], Label)> = self.rows[p]
                        .iter()
                        .zip(&self.labels)
                        .map(|(&r, &l)| (self.unit_vectors[r].as_slice(), l))
                        .collect();
                    pairwise_separation(&items)?
                } else {
                    self.separation(p, scope)?
                };
                Ok(SubImageScore {
                    bbox: self.proposals[p],
                    d_s,
                    spec: self.spec,
                })
            })
            .collect::<Result<_>>()?;
        let best_idx = argmax_score(&all_scores).ok_or(Error::NoProposals)?;
        Ok(SubImageSearchResult {
            best: all_scores[best_idx],
            processed: self.processed[best_idx].clone(),
            all_scores,
        })
    }

    pub fn best_index(&self, scope: Option<&[usize]>) -> Result<usize> {
        let result = self.search(scope)?;
        Ok(self
            .proposals
            .iter()
            .position(|b| *b == result.best.bbox)
            .expect("winner is a proposal"))
    }
}

/// Finds the proposal maximizing `d_s` over all dataset samples.
pub fn search_dementia_sensitive(
    dataset: &Dataset,
    picture: &Picture,
    proposals: &[BoundingBox],
    spec: FilterSpec,
    joint: &dyn JointEncoder,
    text: &dyn TextEncoder,
) -> Result<SubImageSearchResult> {
    SubImageBank::build(dataset, picture, proposals, spec, joint, text)?.search(None)
}
