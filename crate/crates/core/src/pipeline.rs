//! Feature pipelines: how each sample becomes one classifier vector.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    few_shot_evaluate, few_shot_evaluate_with, fixed_split_evaluate, ClassifierSpec, EvalReport,
    FewShotConfig,
};
use crate::corpus::{Dataset, Label, Split};
use crate::embedding::{
    embed_corpus_sentences, embed_image_joint, embed_regions, embed_text_for_classifier,
    JointEncoder, JointVector, TextEncoder,
};
use crate::error::{Error, Result};
use crate::filtering::{filter_samples, FilterSpec, ProcessedSample};
use crate::focused_areas::{
    accumulate_from_vectors, assign_from_vectors, select_focused_areas, topic_features,
    FocusedAreaSet, TopicAssignment,
};
use crate::picture::Picture;
use crate::regions::{BoundingBox, ScoredBox};
use crate::subimage::{SubImageBank, SubImageScore};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    Baseline,
    Picture(FilterSpec),
    SubImage(FilterSpec),
    /// 1-based focused-area ranks.
    Areas(Vec<usize>),
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pipeline::Baseline => f.write_str("baseline"),
            Pipeline::Picture(s) => write!(f, "picture:{s}"),
            Pipeline::SubImage(s) => write!(f, "subimage:{s}"),
            Pipeline::Areas(r) => {
                let ranks: Vec<String> = r.iter().map(ToString::to_string).collect();
                write!(f, "areas:{}", ranks.join(","))
            }
        }
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "baseline" {
            return Ok(Pipeline::Baseline);
        }
        let bad = || Error::InvalidConfig(format!("unknown pipeline `{s}`"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "picture" => Ok(Pipeline::Picture(rest.parse()?)),
            "subimage" => Ok(Pipeline::SubImage(rest.parse()?)),
            "areas" => {
                let ranks = rest
                    .split(',')
                    .map(|r| {
                        r.trim()
                            .parse::<usize>()
                            .ok()
                            .filter(|&r| r > 0)
                            .ok_or_else(|| Error::InvalidConfig(format!("bad area rank `{r}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Pipeline::Areas(ranks))
            }
            _ => Err(bad()),
        }
    }
}

/// Shared inputs for every pipeline, with the joint vectors computed once.
pub struct Workspace<'a> {
    pub dataset: &'a Dataset,
    pub picture: &'a Picture,
    pub joint: &'a dyn JointEncoder,
    pub text: &'a dyn TextEncoder,
    pub proposals: Vec<BoundingBox>,
    pub k_f: usize,
    pub nms_threshold: f64,
    pub sentence_vectors: Vec<Vec<JointVector>>,
    pub picture_vector: JointVector,
    pub proposal_vectors: Vec<JointVector>,
}

impl<'a> Workspace<'a> {
    pub fn new(
        dataset: &'a Dataset,
        picture: &'a Picture,
        joint: &'a dyn JointEncoder,
        text: &'a dyn TextEncoder,
        proposals: Vec<BoundingBox>,
    ) -> Result<Self> {
        Ok(Workspace {
            sentence_vectors: embed_corpus_sentences(&dataset.samples, joint)?,
            picture_vector: embed_image_joint(picture, None, joint)?,
            proposal_vectors: embed_regions(picture, &proposals, joint)?,
            dataset,
            picture,
            joint,
            text,
            proposals,
            k_f: 5,
            nms_threshold: 0.5,
        })
    }

    pub fn with_focused_areas(mut self, k_f: usize, nms_threshold: f64) -> Self {
        self.k_f = k_f;
        self.nms_threshold = nms_threshold;
        self
    }

    fn scale(&self) -> f64 {
        self.joint.descriptor().logit_scale
    }

    fn embed_texts<'t>(
        &self,
        texts: impl IntoParallelIterator<Item = &'t str>,
    ) -> Result<Vec<Vec<f64>>> {
        texts
            .into_par_iter()
            .map(|t| embed_text_for_classifier(t, self.text).map(|e| e.values))
            .collect()
    }

    pub fn baseline_features(&self) -> Result<Vec<Vec<f64>>> {
        let texts: Vec<String> = self.dataset.samples.iter().map(|s| s.full_text()).collect();
        self.embed_texts(texts.par_iter().map(String::as_str))
    }

    pub fn picture_processed(&self, spec: FilterSpec) -> Result<Vec<ProcessedSample>> {
        Ok(filter_samples(
            &self.dataset.samples,
            &self.sentence_vectors,
            &self.picture_vector,
            spec,
            self.scale(),
        )?
        .into_iter()
        .map(|o| o.processed)
        .collect())
    }

    pub fn subimage_bank(&self, spec: FilterSpec) -> Result<SubImageBank> {
        SubImageBank::from_vectors(
            self.dataset,
            &self.proposals,
            &self.sentence_vectors,
            &self.proposal_vectors,
            self.scale(),
            spec,
            self.text,
        )
    }

    pub fn focused_areas(&self) -> Result<(FocusedAreaSet, Vec<ScoredBox>)> {
        if self.proposals.is_empty() {
            return Err(Error::NoProposals);
        }
        let sums =
            accumulate_from_vectors(&self.proposal_vectors, &self.sentence_vectors, self.scale());
        let scored: Vec<ScoredBox> = self
            .proposals
            .iter()
            .zip(sums)
            .map(|(b, score)| ScoredBox { bbox: *b, score })
            .collect();
        Ok((
            select_focused_areas(&scored, self.k_f, self.nms_threshold)?,
            scored,
        ))
    }

    pub fn assignments(&self, areas: &FocusedAreaSet) -> Result<Vec<TopicAssignment>> {
        let vecs: Vec<JointVector> = areas
            .areas
            .iter()
            .map(|a| {
                let i = self
                    .proposals
                    .iter()
                    .position(|p| p == a)
                    .ok_or(Error::NoProposals)?;
                Ok(self.proposal_vectors[i].clone())
            })
            .collect::<Result<_>>()?;
        Ok(assign_from_vectors(
            &self.dataset.samples,
            &self.sentence_vectors,
            &vecs,
            self.scale(),
        ))
    }

    /// Features of every sample under `pipeline`. A sub-image search here
    /// scores the whole dataset.
    pub fn features(&self, pipeline: &Pipeline) -> Result<PipelineFeatures> {
        match pipeline {
            Pipeline::Baseline => Ok(PipelineFeatures::plain(self.baseline_features()?)),
            Pipeline::Picture(spec) => {
                let processed = self.picture_processed(*spec)?;
                Ok(PipelineFeatures::plain(self.embed_texts(
                    processed.par_iter().map(|p| p.text.as_str()),
                )?))
            }
            Pipeline::SubImage(spec) => {
                let bank = self.subimage_bank(*spec)?;
                let result = bank.search(None)?;
                let best = bank.best_index(None)?;
                Ok(PipelineFeatures {
                    vectors: bank.embeddings(best),
                    subimage: Some(result.best),
                    areas: None,
                })
            }
            Pipeline::Areas(subset) => {
                let (areas, _) = self.focused_areas()?;
                let assignments = self.assignments(&areas)?;
                let feats = topic_features(self.dataset, &assignments, &areas, self.text, subset)?;
                Ok(PipelineFeatures {
                    vectors: feats.into_iter().map(|f| f.vector.values).collect(),
                    subimage: None,
                    areas: Some(areas),
                })
            }
        }
    }

    /// Few-shot evaluation. With `train_only`, the sub-image search of each
    /// round sees only that round's training samples.
    pub fn evaluate(
        &self,
        pipeline: &Pipeline,
        config: &FewShotConfig,
        classifier: &ClassifierSpec,
        train_only: bool,
    ) -> Result<EvalReport> {
        let labels = self.dataset.labels();
        let id = pipeline.to_string();
        match (pipeline, train_only) {
            (Pipeline::SubImage(spec), true) => {
                let bank = self.subimage_bank(*spec)?;
                few_shot_evaluate_with(&labels, config, classifier, &id, |ep| {
                    Ok(bank.embeddings(bank.best_index(Some(&ep.train))?))
                })
            }
            _ => {
                let feats = self.features(pipeline)?;
                few_shot_evaluate(&feats.vectors, &labels, config, classifier, &id)
            }
        }
    }
}

impl Workspace<'_> {
    /// Accuracy on the dataset's test split after training on its train
    /// split. With `train_only`, the sub-image search scores train samples
    /// only.
    pub fn evaluate_fixed(
        &self,
        pipeline: &Pipeline,
        classifier: &ClassifierSpec,
        train_only: bool,
    ) -> Result<f64> {
        let train_idx = self.dataset.split_indices(Split::Train)?;
        let test_idx = self.dataset.split_indices(Split::Test)?;
        let vectors = match (pipeline, train_only) {
            (Pipeline::SubImage(spec), true) => {
                let bank = self.subimage_bank(*spec)?;
                bank.embeddings(bank.best_index(Some(&train_idx))?)
            }
            _ => self.features(pipeline)?.vectors,
        };
        let labels = self.dataset.labels();
        let pick = |idx: &[usize]| -> Vec<(Vec<f64>, Label)> {
            idx.iter()
                .map(|&i| (vectors[i].clone(), labels[i]))
                .collect()
        };
        fixed_split_evaluate(&pick(&train_idx), &pick(&test_idx), classifier)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineFeatures {
    pub vectors: Vec<Vec<f64>>,
    pub subimage: Option<SubImageScore>,
    pub areas: Option<FocusedAreaSet>,
}

impl PipelineFeatures {
    fn plain(vectors: Vec<Vec<f64>>) -> Self {
        PipelineFeatures {
            vectors,
            subimage: None,
            areas: None,
        }
    }
}
