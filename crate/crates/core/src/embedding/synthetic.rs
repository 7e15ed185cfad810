//! Deterministic stand-in encoders. Every token and crop maps to a point on
//! the unit sphere drawn from a generator seeded by a SHA-256 digest of
//! `(seed, salt, content)`, so two processes with the same seed agree bit
//! for bit.
//!
//! The joint encoder optionally carries a [`PlantedStructure`]: keyword
//! groups tied to picture regions. Keywords land near their region's anchor
//! direction, and crops land near the anchors of the regions they overlap
//! (weighted by IoU). That gives tests a picture/corpus pair with known
//! ground truth.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{tokenize, BackendDescriptor, BackendKind, JointEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::picture::Picture;
use crate::regions::{iou, BoundingBox};

pub const DEFAULT_JOINT_DIM: usize = 64;
pub const DEFAULT_TEXT_DIM: usize = 48;

/// Unit vector drawn from a standard normal seeded by `(seed, salt, content)`.
pub fn hash_unit_vector(seed: u64, salt: &str, content: &str, dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(salt.as_bytes());
    hasher.update([0u8]);
    hasher.update(content.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedGroup {
    pub name: String,
    pub region: BoundingBox,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedStructure {
    pub groups: Vec<PlantedGroup>,
    /// Weight of the per-group offset added to the region anchor.
    #[serde(default = "default_group_spread")]
    pub group_spread: f64,
    /// Weight of the per-word offset added on top of the group direction.
    #[serde(default = "default_word_jitter")]
    pub word_jitter: f64,
    /// Weight of the seeded per-crop direction mixed into every crop.
    #[serde(default = "default_crop_noise")]
    pub crop_noise: f64,
}

fn default_group_spread() -> f64 {
    0.3
}
fn default_word_jitter() -> f64 {
    0.2
}
fn default_crop_noise() -> f64 {
    0.35
}

impl PlantedStructure {
    pub fn new(groups: Vec<PlantedGroup>) -> Self {
        PlantedStructure {
            groups,
            group_spread: default_group_spread(),
            word_jitter: default_word_jitter(),
            crop_noise: default_crop_noise(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&body)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        hex::encode(&Sha256::digest(&json)[..6])
    }
}

pub struct SyntheticJoint {
    descriptor: BackendDescriptor,
    seed: u64,
    planted: Option<Planted>,
}

struct Planted {
    spec: PlantedStructure,
    regions: Vec<BoundingBox>,
    anchors: Vec<Vec<f64>>,
    /// word -> (group index, region index)
    words: HashMap<String, (usize, usize)>,
    group_dirs: Vec<Vec<f64>>,
}

impl SyntheticJoint {
    pub fn new(seed: u64, dim: usize, planted: Option<PlantedStructure>) -> Self {
        let mut model_id = format!("synthetic-joint-s{seed}");
        let planted = planted.map(|spec| {
            model_id.push_str(&format!("-planted-{}", spec.fingerprint()));
            let mut regions: Vec<BoundingBox> = Vec::new();
            let mut words = HashMap::new();
            let mut group_dirs = Vec::new();
            for (gi, g) in spec.groups.iter().enumerate() {
                let ri = match regions.iter().position(|r| *r == g.region) {
                    Some(i) => i,
                    None => {
                        regions.push(g.region);
                        regions.len() - 1
                    }
                };
                for w in &g.words {
                    for tok in tokenize(w) {
                        words.entry(tok).or_insert((gi, ri));
                    }
                }
                group_dirs.push(hash_unit_vector(seed, "planted-group", &g.name, dim));
            }
            let anchors = regions
                .iter()
                .map(|r| hash_unit_vector(seed, "planted-region", &r.to_string(), dim))
                .collect();
            Planted {
                spec,
                regions,
                anchors,
                words,
                group_dirs,
            }
        });
        SyntheticJoint {
            descriptor: BackendDescriptor::new(BackendKind::Synthetic, model_id, dim),
            seed,
            planted,
        }
    }

    pub fn with_max_text_tokens(mut self, max: usize) -> Self {
        self.descriptor.max_text_tokens = max;
        self
    }

    pub fn with_logit_scale(mut self, scale: f64) -> Self {
        self.descriptor.logit_scale = scale;
        self
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let dim = self.descriptor.dim;
        let base = hash_unit_vector(self.seed, "joint-token", token, dim);
        let Some(p) = &self.planted else {
            return base;
        };
        let Some(&(gi, ri)) = p.words.get(token) else {
            return base;
        };
        let mut v = p.anchors[ri].clone();
        axpy(&mut v, p.spec.group_spread, &p.group_dirs[gi]);
        axpy(&mut v, p.spec.word_jitter, &base);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl JointEncoder for SyntheticJoint {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        let mut acc = vec![0.0; self.descriptor.dim];
        for tok in tokens.iter().take(self.descriptor.max_text_tokens) {
            axpy(&mut acc, 1.0, &self.token_vector(tok));
        }
        Ok(acc)
    }

    fn encode_region(&self, _picture: &Picture, region: BoundingBox) -> Result<Vec<f64>> {
        let base = hash_unit_vector(
            self.seed,
            "joint-crop",
            &region.to_string(),
            self.descriptor.dim,
        );
        let Some(p) = &self.planted else {
            return Ok(base);
        };
        let mut v = vec![0.0; self.descriptor.dim];
        axpy(&mut v, p.spec.crop_noise, &base);
        for (r, anchor) in p.regions.iter().zip(&p.anchors) {
            let w = iou(&region, r);
            if w > 0.0 {
                axpy(&mut v, w, anchor);
            }
        }
        Ok(v)
    }
}

pub struct SyntheticText {
    descriptor: BackendDescriptor,
    seed: u64,
}

impl SyntheticText {
    pub fn new(seed: u64, dim: usize) -> Self {
        SyntheticText {
            descriptor: BackendDescriptor::new(
                BackendKind::Synthetic,
                format!("synthetic-text-s{seed}"),
                dim,
            ),
            seed,
        }
    }
}

impl TextEncoder for SyntheticText {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn token_vectors(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(tokens
            .iter()
            .map(|t| hash_unit_vector(self.seed, "text-token", t, self.descriptor.dim))
            .collect())
    }
}
