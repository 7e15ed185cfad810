//! Focused areas: picture regions that attract the most sentence relevance
//! across the corpus, used as topics for organizing each transcript.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{join_sentences, Dataset, TranscriptSample};
use crate::embedding::{
    embed_corpus_sentences, embed_regions, embed_text_for_classifier, ClassifierEmbedding,
    EmbeddingSource, JointEncoder, JointVector, TextEncoder,
};
use crate::error::{Error, Result};
use crate::picture::Picture;
use crate::regions::{nms, BoundingBox, ScoredBox};
use crate::relevance::softmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusedAreaSet {
    /// Rank 1 first.
    pub areas: Vec<BoundingBox>,
    pub summed_scores: Vec<f64>,
}

impl FocusedAreaSet {
    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicAssignment {
    pub sample_id: String,
    pub sentence_index: usize,
    /// 1-based rank of the assigned area.
    pub area_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicFeature {
    pub sample_id: String,
    pub per_topic_texts: Vec<String>,
    pub vector: ClassifierEmbedding,
}

fn logits_against(sentence: &JointVector, regions: &[JointVector], scale: f64) -> Vec<f64> {
    regions.iter().map(|r| scale * r.dot(sentence)).collect()
}

/// For each region, the sum over all sentences of that region's
/// text-to-images probability.
pub fn accumulate_from_vectors(
    region_vectors: &[JointVector],
    sentence_vectors: &[Vec<JointVector>],
    logit_scale: f64,
) -> Vec<f64> {
    let flat: Vec<&JointVector> = sentence_vectors.iter().flatten().collect();
    flat.par_iter()
        .map(|s| softmax(&logits_against(s, region_vectors, logit_scale)))
        .reduce(
            || vec![0.0; region_vectors.len()],
            |mut acc, p| {
                acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
                acc
            },
        )
}

pub fn accumulate_area_scores(
    dataset: &Dataset,
    picture: &Picture,
    proposals: &[BoundingBox],
    backend: &dyn JointEncoder,
) -> Result<Vec<ScoredBox>> {
    if proposals.is_empty() {
        return Err(Error::NoProposals);
    }
    if dataset.sentence_count() == 0 {
        return Err(Error::EmptyText);
    }
    let regions = embed_regions(picture, proposals, backend)?;
    let sentences = embed_corpus_sentences(&dataset.samples, backend)?;
    let sums = accumulate_from_vectors(&regions, &sentences, backend.descriptor().logit_scale);
    Ok(proposals
        .iter()
        .zip(sums)
        .map(|(b, score)| ScoredBox { bbox: *b, score })
        .collect())
}

/// Suppresses overlapping proposals, then keeps the `k_f` highest sums.
pub fn select_focused_areas(
    scored: &[ScoredBox],
    k_f: usize,
    iou_threshold: f64,
) -> Result<FocusedAreaSet> {
    if k_f == 0 {
        return Err(Error::InvalidConfig("k_f must be at least 1".into()));
    }
    let kept = nms(scored, iou_threshold);
    if kept.len() < k_f {
        return Err(Error::InsufficientAreas {
            available: kept.len(),
            requested: k_f,
        });
    }
    let top = &kept[..k_f];
    Ok(FocusedAreaSet {
        areas: top.iter().map(|s| s.bbox).collect(),
        summed_scores: top.iter().map(|s| s.score).collect(),
    })
}

/// 1-based rank with the highest softmax probability; ties go to the lower
/// rank.
pub(crate) fn best_rank(logits: &[f64]) -> usize {
    let probs = softmax(logits);
    let mut best = 0;
    for (k, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = k;
        }
    }
    best + 1
}

/// Assigns each sentence to the area with the highest text-to-images
/// probability among the selected areas; ties go to the lower rank.
pub fn assign_from_vectors(
    samples: &[TranscriptSample],
    sentence_vectors: &[Vec<JointVector>],
    area_vectors: &[JointVector],
    logit_scale: f64,
) -> Vec<TopicAssignment> {
    samples
        .iter()
        .zip(sentence_vectors)
        .flat_map(|(sample, vecs)| {
            vecs.iter().enumerate().map(move |(j, v)| TopicAssignment {
                sample_id: sample.sample_id.clone(),
                sentence_index: j,
                area_rank: best_rank(&logits_against(v, area_vectors, logit_scale)),
            })
        })
        .collect()
}

pub fn assign_sentences(
    dataset: &Dataset,
    picture: &Picture,
    areas: &FocusedAreaSet,
    backend: &dyn JointEncoder,
) -> Result<Vec<TopicAssignment>> {
    if areas.is_empty() {
        return Err(Error::InsufficientAreas {
            available: 0,
            requested: 1,
        });
    }
    let area_vecs = embed_regions(picture, &areas.areas, backend)?;
    let sentences = embed_corpus_sentences(&dataset.samples, backend)?;
    Ok(assign_from_vectors(
        &dataset.samples,
        &sentences,
        &area_vecs,
        backend.descriptor().logit_scale,
    ))
}

/// Per-sample topic texts for the ranks in `area_subset`: each rank's
/// sentences joined in transcript order (empty when none were assigned).
pub fn topic_texts(
    dataset: &Dataset,
    assignments: &[TopicAssignment],
    k_f: usize,
    area_subset: &[usize],
) -> Result<Vec<Vec<String>>> {
    if area_subset.is_empty() {
        return Err(Error::InvalidConfig("area subset must not be empty".into()));
    }
    if let Some(&bad) = area_subset.iter().find(|&&r| r == 0 || r > k_f) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: k_f,
        });
    }
    let mut by_sample: HashMap<&str, HashMap<usize, usize>> = HashMap::new();
    for a in assignments {
        by_sample
            .entry(a.sample_id.as_str())
            .or_default()
            .insert(a.sentence_index, a.area_rank);
    }
    dataset
        .samples
        .iter()
        .map(|s| {
            let ranks = by_sample.get(s.sample_id.as_str());
            area_subset
                .iter()
                .map(|&rank| {
                    let mut parts = Vec::new();
                    for sent in &s.sentences {
                        let assigned = ranks.and_then(|m| m.get(&sent.index)).ok_or_else(|| {
                            Error::InvalidConfig(format!(
                                "sentence {} of `{}` has no area assignment",
                                sent.index, s.sample_id
                            ))
                        })?;
                        if *assigned == rank {
                            parts.push(sent.text.as_str());
                        }
                    }
                    Ok(join_sentences(parts.into_iter()))
                })
                .collect()
        })
        .collect()
}

/// Concatenated per-topic classifier embeddings. An empty topic contributes
/// a zero block, so every vector has `area_subset.len() * dim` entries.
pub fn topic_features(
    dataset: &Dataset,
    assignments: &[TopicAssignment],
    areas: &FocusedAreaSet,
    text_backend: &dyn TextEncoder,
    area_subset: &[usize],
) -> Result<Vec<TopicFeature>> {
    let texts = topic_texts(dataset, assignments, areas.len(), area_subset)?;
    let dim = text_backend.descriptor().dim;
    dataset
        .samples
        .par_iter()
        .zip(texts)
        .map(|(s, per_topic_texts)| {
            let mut values = Vec::with_capacity(dim * per_topic_texts.len());
            for t in &per_topic_texts {
                if t.is_empty() {
                    values.extend(std::iter::repeat_n(0.0, dim));
                } else {
                    values.extend(embed_text_for_classifier(t, text_backend)?.values);
                }
            }
            Ok(TopicFeature {
                sample_id: s.sample_id.clone(),
                per_topic_texts,
                vector: ClassifierEmbedding {
                    values,
                    source: EmbeddingSource::TopicConcat,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::embedding::{SyntheticJoint, SyntheticText};

    fn bb(x0: u32, y0: u32, x1: u32, y1: u32) -> BoundingBox {
        BoundingBox { x0, y0, x1, y1 }
    }

    fn dataset() -> Dataset {
        Dataset::new(
            vec![
                TranscriptSample::new("A", Label::Hc, &["the boy", "cookie jar", "water"]).unwrap(),
                TranscriptSample::new("B", Label::Ad, &["sink overflowing", "okay"]).unwrap(),
            ],
            "p.png",
        )
        .unwrap()
    }

    #[test]
    fn single_proposal_collects_every_sentence() {
        let ds = dataset();
        let pic = Picture::from_image(image::RgbImage::new(64, 64));
        let b = SyntheticJoint::new(1, 32, None);
        let scored = accumulate_area_scores(&ds, &pic, &[bb(0, 0, 10, 10)], &b).unwrap();
        assert!((scored[0].score - 5.0).abs() < 1e-12);
        let many = [bb(0, 0, 10, 10), bb(5, 5, 60, 60), pic.full_box()];
        let scored = accumulate_area_scores(&ds, &pic, &many, &b).unwrap();
        let total: f64 = scored.iter().map(|s| s.score).sum();
        assert!((total - 5.0).abs() < 1e-9);
    }

    #[test]
    fn accumulation_matches_per_sentence_oracle() {
        let v = |x: &[f64]| JointVector::normalized(x.to_vec()).unwrap();
        let regions = vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])];
        let sentences = vec![
            vec![v(&[1.0, 0.2]), v(&[0.1, 1.0])],
            vec![v(&[-1.0, 0.5]), v(&[0.6, 0.6])],
        ];
        let got = accumulate_from_vectors(&regions, &sentences, 5.0);
        let mut expect = [0.0; 3];
        for s in sentences.iter().flatten() {
            let l: Vec<f64> = regions.iter().map(|r| (5.0 * r.dot(s)).exp()).collect();
            let z: f64 = l.iter().sum();
            for k in 0..3 {
                expect[k] += l[k] / z;
            }
        }
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_suppresses_near_duplicates() {
        let a = ScoredBox {
            bbox: bb(0, 0, 100, 100),
            score: 10.0,
        };
        let b = ScoredBox {
            bbox: bb(0, 0, 100, 90),
            score: 9.0,
        };
        let c = ScoredBox {
            bbox: bb(200, 0, 300, 100),
            score: 1.0,
        };
        let set = select_focused_areas(&[a, b, c], 2, 0.5).unwrap();
        assert_eq!(set.areas, vec![a.bbox, c.bbox]);
        assert_eq!(
            select_focused_areas(&[a, b, c], 1, 0.5).unwrap().areas,
            vec![a.bbox]
        );
        assert!(matches!(
            select_focused_areas(&[a, b], 2, 0.5),
            Err(Error::InsufficientAreas {
                available: 1,
                requested: 2
            })
        ));
    }

    #[test]
    fn single_area_takes_everything() {
        let ds = dataset();
        let pic = Picture::from_image(image::RgbImage::new(64, 64));
        let b = SyntheticJoint::new(1, 32, None);
        let areas = FocusedAreaSet {
            areas: vec![bb(0, 0, 32, 32)],
            summed_scores: vec![5.0],
        };
        let asg = assign_sentences(&ds, &pic, &areas, &b).unwrap();
        assert_eq!(asg.len(), 5);
        assert!(asg.iter().all(|a| a.area_rank == 1));
    }

    #[test]
    fn assignment_shift_invariant() {
        let ds = dataset();
        let v = |x: &[f64]| JointVector::normalized(x.to_vec()).unwrap();
        let areas = vec![v(&[1.0, 0.0, 0.0]), v(&[0.0, 1.0, 0.0])];
        let sents: Vec<Vec<JointVector>> = vec![
            vec![
                v(&[1.0, 0.2, 0.0]),
                v(&[0.1, 1.0, 0.0]),
                v(&[0.5, 0.5, 1.0]),
            ],
            vec![v(&[0.3, 0.9, 0.1]), v(&[0.0, 0.0, 1.0])],
        ];
        let base = assign_from_vectors(&ds.samples, &sents, &areas, 10.0);
        for l in [[3.0, 1.5, -2.0], [0.1, 0.2, 0.15], [-7.0, -7.5, -6.9]] {
            for c in [-50.0, 0.5, 1e3] {
                let shifted: Vec<f64> = l.iter().map(|x| x + c).collect();
                assert_eq!(best_rank(&l), best_rank(&shifted));
            }
        }
        assert_eq!(base[0].area_rank, 1);
        assert_eq!(base[1].area_rank, 2);
        // exact tie -> lower rank
        assert_eq!(base[4].area_rank, 1);
    }

    #[test]
    fn topic_blocks_and_empty_topics() {
        let ds = dataset();
        let assignments: Vec<TopicAssignment> = ds
            .samples
            .iter()
            .flat_map(|s| {
                s.sentences.iter().map(|t| TopicAssignment {
                    sample_id: s.sample_id.clone(),
                    sentence_index: t.index,
                    area_rank: 1,
                })
            })
            .collect();
        let areas = FocusedAreaSet {
            areas: vec![bb(0, 0, 8, 8), bb(8, 8, 16, 16), bb(0, 8, 8, 16)],
            summed_scores: vec![3.0, 1.0, 1.0],
        };
        let text = SyntheticText::new(0, 4);
        let feats = topic_features(&ds, &assignments, &areas, &text, &[1, 3]).unwrap();
        for f in &feats {
            assert_eq!(f.vector.dim(), 8);
            assert!(f.vector.values[4..].iter().all(|v| *v == 0.0));
            assert!(f.vector.values[..4].iter().any(|v| *v != 0.0));
            assert_eq!(f.vector.source, EmbeddingSource::TopicConcat);
        }
        assert_eq!(feats[0].per_topic_texts[0], "the boy. cookie jar. water");
        assert!(topic_features(&ds, &assignments, &areas, &text, &[4]).is_err());
        assert!(topic_features(&ds, &assignments, &areas, &text, &[]).is_err());
    }
}
