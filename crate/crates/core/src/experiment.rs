//! Experiment runner: one config file in, result tables, figures, processed
//! samples and a run manifest out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{ClassifierKind, ClassifierSpec, FewShotConfig};
use crate::corpus::{load_manifest, Dataset};
use crate::embedding::{
    BackendDescriptor, BackendSpec, CachedJoint, CachedText, EmbeddingCache, JointEncoder,
    PrefixedJoint, TextEncoder,
};
use crate::error::{Error, Result};
use crate::filtering::{FilterSpec, ProcessedSample};
use crate::picture::Picture;
use crate::pipeline::{Pipeline, Workspace};
use crate::regions::{propose, BoundingBox, ProposalStrategy, RegionProposalConfig};
use crate::viz::{draw_boxes, group_heatmaps, render_heatmap, write_ppm, PALETTE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    #[default]
    Fewshot,
    Fixed,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fewshot" | "few-shot" => Ok(Protocol::Fewshot),
            "fixed" => Ok(Protocol::Fixed),
            other => Err(Error::InvalidConfig(format!("unknown protocol `{other}`"))),
        }
    }
}

/// Flat key-value run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub joint_backend: String,
    pub text_backend: String,
    /// Prepended to each sentence before joint embedding.
    pub joint_text_prefix: String,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,

    pub proposal_strategy: ProposalStrategy,
    pub segmentation_scale: f64,
    pub smoothing_sigma: f64,
    pub min_component_size: usize,
    pub min_box_area_fraction: f64,
    pub max_proposals: usize,

    /// Filter grid axes, swept for every kind in `grid_pipelines`.
    pub k_t: Vec<usize>,
    pub k_b: Vec<usize>,
    /// Any of `picture`, `subimage`.
    pub grid_pipelines: Vec<String>,
    pub k_f: usize,
    pub nms_threshold: f64,
    /// Comma-separated rank lists, e.g. `"1,3"`.
    pub area_subsets: Vec<String>,

    pub protocol: Protocol,
    pub shots: Vec<usize>,
    pub test_per_class: usize,
    pub rounds: usize,
    pub classifier: ClassifierKind,
    pub regularization: f64,
    pub train_only: bool,
    pub figures: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let rp = RegionProposalConfig::default();
        RunConfig {
            dataset: PathBuf::from("data"),
            joint_backend: "synthetic:seed=0".into(),
            text_backend: "synthetic:seed=0".into(),
            joint_text_prefix: String::new(),
            output_dir: PathBuf::from("out"),
            cache_dir: None,
            seed: 0,
            proposal_strategy: ProposalStrategy::SelectiveSearch,
            segmentation_scale: rp.segmentation_scale,
            smoothing_sigma: rp.smoothing_sigma,
            min_component_size: rp.min_component_size,
            min_box_area_fraction: rp.min_box_area_fraction,
            max_proposals: rp.max_proposals,
            k_t: (0..=10).collect(),
            k_b: (0..=10).collect(),
            grid_pipelines: vec!["picture".into(), "subimage".into()],
            k_f: 5,
            nms_threshold: 0.5,
            area_subsets: vec!["1".into(), "1,2".into(), "1,3".into(), "1,2,3".into()],
            protocol: Protocol::Fewshot,
            shots: vec![1, 5, 10, 20, 40, 60],
            test_per_class: 15,
            rounds: 600,
            classifier: ClassifierKind::MaxMarginRbf,
            regularization: 1.0,
            train_only: false,
            figures: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&body)
    }

    pub fn from_toml(body: &str) -> Result<Self> {
        toml::from_str(body).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn region_config(&self) -> RegionProposalConfig {
        RegionProposalConfig {
            segmentation_scale: self.segmentation_scale,
            smoothing_sigma: self.smoothing_sigma,
            min_component_size: self.min_component_size,
            min_box_area_fraction: self.min_box_area_fraction,
            max_proposals: self.max_proposals,
        }
    }

    pub fn classifier_spec(&self) -> ClassifierSpec {
        ClassifierSpec {
            kind: self.classifier,
            regularization: self.regularization,
            rng_seed: self.seed,
        }
    }

    pub fn few_shot(&self, k: usize) -> FewShotConfig {
        FewShotConfig {
            k,
            test_per_class: self.test_per_class,
            rounds: self.rounds,
            rng_seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.region_config().validate()?;
        self.classifier_spec().validate()?;
        if self.k_t.is_empty() || self.k_b.is_empty() {
            return Err(Error::InvalidConfig(
                "k_t and k_b need at least one value".into(),
            ));
        }
        if self.protocol == Protocol::Fewshot && self.shots.is_empty() {
            return Err(Error::InvalidConfig("shots must not be empty".into()));
        }
        for kind in &self.grid_pipelines {
            if kind != "picture" && kind != "subimage" {
                return Err(Error::InvalidConfig(format!(
                    "unknown grid pipeline `{kind}`"
                )));
            }
        }
        for s in &self.area_subsets {
            format!("areas:{s}").parse::<Pipeline>()?;
        }
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return Err(Error::InvalidConfig(
                "nms_threshold must lie in [0, 1]".into(),
            ));
        }
        if !self.dataset.exists() {
            return Err(Error::InvalidConfig(format!(
                "dataset path {} does not exist",
                self.dataset.display()
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs and the
    /// cache live.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.cache_dir = None;
        let json = serde_json::to_vec(&c).expect("serializable");
        hex::encode(Sha256::digest(&json))
    }

    /// Every pipeline the run evaluates, in table order.
    pub fn pipelines(&self) -> Result<Vec<Pipeline>> {
        let mut out = vec![Pipeline::Baseline];
        for kind in &self.grid_pipelines {
            for &kt in &self.k_t {
                for &kb in &self.k_b {
                    let spec = FilterSpec::new(kt, kb);
                    out.push(if kind == "picture" {
                        Pipeline::Picture(spec)
                    } else {
                        Pipeline::SubImage(spec)
                    });
                }
            }
        }
        for s in &self.area_subsets {
            out.push(format!("areas:{s}").parse()?);
        }
        Ok(out)
    }
}

/// Builds the two encoders from their spec strings, optionally behind a
/// persistent cache.
pub struct Backends {
    pub joint: Box<dyn JointEncoder>,
    pub text: Box<dyn TextEncoder>,
}

impl Backends {
    pub fn from_specs(joint: &str, text: &str) -> Result<Self> {
        Ok(Backends {
            joint: joint.parse::<BackendSpec>()?.joint()?,
            text: text.parse::<BackendSpec>()?.text()?,
        })
    }

    /// Encoders named by `config`, with its sentence prefix applied.
    pub fn for_config(config: &RunConfig) -> Result<Self> {
        let mut b = Self::from_specs(&config.joint_backend, &config.text_backend)?;
        if !config.joint_text_prefix.is_empty() {
            b.joint = Box::new(PrefixedJoint::new(
                b.joint,
                config.joint_text_prefix.clone(),
            ));
        }
        Ok(b)
    }
}

/// Wraps borrowed encoders with a cache when one is open.
pub fn with_cache<'a>(
    backends: &'a Backends,
    cache: Option<&'a EmbeddingCache>,
) -> (Box<dyn JointEncoder + 'a>, Box<dyn TextEncoder + 'a>) {
    match cache {
        Some(c) => (
            Box::new(CachedJoint::new(Box::new(&*backends.joint), c)),
            Box::new(CachedText::new(Box::new(&*backends.text), c)),
        ),
        None => (Box::new(&*backends.joint), Box::new(&*backends.text)),
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub pipeline: String,
    /// `None` for the fixed-split protocol.
    pub shots: Option<usize>,
    pub mean: f64,
    pub std: f64,
}

impl CellResult {
    /// Percent with two decimals; few-shot cells carry `_std`.
    pub fn cell(&self) -> String {
        match self.shots {
            Some(_) => format!("{:.2}_{:.2}", self.mean * 100.0, self.std * 100.0),
            None => format!("{:.2}", self.mean * 100.0),
        }
    }
}

pub fn evaluate_cells(
    ws: &Workspace<'_>,
    pipeline: &Pipeline,
    config: &RunConfig,
) -> Result<Vec<CellResult>> {
    let spec = config.classifier_spec();
    match config.protocol {
        Protocol::Fixed => {
            let acc = ws.evaluate_fixed(pipeline, &spec, config.train_only)?;
            Ok(vec![CellResult {
                pipeline: pipeline.to_string(),
                shots: None,
                mean: acc,
                std: 0.0,
            }])
        }
        Protocol::Fewshot => config
            .shots
            .iter()
            .map(|&k| {
                let r = ws.evaluate(pipeline, &config.few_shot(k), &spec, config.train_only)?;
                Ok(CellResult {
                    pipeline: pipeline.to_string(),
                    shots: Some(k),
                    mean: r.mean,
                    std: r.std,
                })
            })
            .collect(),
    }
}

/// Provenance written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub config: RunConfig,
    pub joint_backend: BackendDescriptor,
    pub text_backend: BackendDescriptor,
    pub sample_count: usize,
    pub proposal_count: usize,
    pub outputs: Vec<String>,
}

pub fn hash_header(hash: &str, seed: u64) -> String {
    format!("# config_hash={hash} seed={seed}\n")
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_processed_jsonl(path: &Path, processed: &[ProcessedSample], hash: &str) -> Result<()> {
    let mut out = String::new();
    for p in processed {
        let mut v = serde_json::to_value(p)?;
        v["config_hash"] = serde_json::Value::String(hash.to_string());
        out.push_str(&serde_json::to_string(&v)?);
        out.push('\n');
    }
    write_file(path, &out)
}

fn cell_lookup<'c>(
    cells: &'c [CellResult],
    pipeline: &str,
    shots: Option<usize>,
) -> Option<&'c CellResult> {
    cells
        .iter()
        .find(|c| c.pipeline == pipeline && c.shots == shots)
}

/// Loads everything, evaluates every pipeline and writes the outputs.
pub fn run_experiment(config: &RunConfig) -> Result<RunManifest> {
    config.validate()?;
    let hash = config.hash();
    let header = hash_header(&hash, config.seed);
    let out_dir = &config.output_dir;
    fs::create_dir_all(out_dir.join("processed"))
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;

    let dataset: Dataset = load_manifest(&config.dataset)?;
    dataset.require_both_labels()?;
    let picture = Picture::load(&dataset.picture_path)?;
    let backends = Backends::for_config(config)?;
    let cache = config
        .cache_dir
        .as_ref()
        .map(EmbeddingCache::open)
        .transpose()?;
    let (joint, text) = with_cache(&backends, cache.as_ref());

    let proposals = propose(
        &picture.image,
        &config.region_config(),
        config.proposal_strategy,
    )?;
    let ws = Workspace::new(&dataset, &picture, &*joint, &*text, proposals.clone())?
        .with_focused_areas(config.k_f, config.nms_threshold);
    let mut outputs = Vec::new();

    let mut body = header.clone();
    body.push_str("x0\ty0\tx1\ty1\n");
    for b in &proposals {
        writeln!(body, "{}\t{}\t{}\t{}", b.x0, b.y0, b.x1, b.y1).expect("string write");
    }
    write_file(&out_dir.join("proposals.tsv"), &body)?;
    outputs.push("proposals.tsv".to_string());

    let pipelines = config.pipelines()?;
    let cells: Vec<CellResult> = pipelines
        .par_iter()
        .map(|p| evaluate_cells(&ws, p, config))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let shot_keys: Vec<Option<usize>> = match config.protocol {
        Protocol::Fixed => vec![None],
        Protocol::Fewshot => config.shots.iter().map(|&k| Some(k)).collect(),
    };
    let shot_name = |s: Option<usize>| s.map_or("fixed".to_string(), |k| format!("k{k}"));

    let mut body = header.clone();
    body.push_str("pipeline");
    for s in &shot_keys {
        write!(body, "\t{}", shot_name(*s)).expect("string write");
    }
    body.push('\n');
    for p in &pipelines {
        let id = p.to_string();
        body.push_str(&id);
        for s in &shot_keys {
            let c = cell_lookup(&cells, &id, *s).expect("every cell evaluated");
            write!(body, "\t{}", c.cell()).expect("string write");
        }
        body.push('\n');
    }
    write_file(&out_dir.join("results.tsv"), &body)?;
    outputs.push("results.tsv".to_string());

    for kind in &config.grid_pipelines {
        for s in &shot_keys {
            let mut body = header.clone();
            body.push_str("k_t\\k_b");
            for kb in &config.k_b {
                write!(body, "\t{kb}").expect("string write");
            }
            body.push('\n');
            for kt in &config.k_t {
                write!(body, "{kt}").expect("string write");
                for kb in &config.k_b {
                    let id = format!("{kind}:{kt},{kb}");
                    let c = cell_lookup(&cells, &id, *s).expect("every cell evaluated");
                    write!(body, "\t{}", c.cell()).expect("string write");
                }
                body.push('\n');
            }
            let name = format!("grid_{kind}_{}.tsv", shot_name(*s));
            write_file(&out_dir.join(&name), &body)?;
            outputs.push(name);
        }
    }

    let mut search_body = header.clone();
    search_body.push_str("k_t\tk_b\tx0\ty0\tx1\ty1\td_s\n");
    let mut winners: BTreeMap<FilterSpec, BoundingBox> = BTreeMap::new();
    for p in &pipelines {
        let name = format!("processed/{}.jsonl", p.to_string().replace([':', ','], "_"));
        match p {
            Pipeline::Picture(spec) => {
                write_processed_jsonl(&out_dir.join(&name), &ws.picture_processed(*spec)?, &hash)?;
                outputs.push(name);
            }
            Pipeline::SubImage(spec) => {
                let result = ws.subimage_bank(*spec)?.search(None)?;
                let b = result.best.bbox;
                writeln!(
                    search_body,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{:.9}",
                    spec.k_t, spec.k_b, b.x0, b.y0, b.x1, b.y1, result.best.d_s
                )
                .expect("string write");
                winners.insert(*spec, b);
                write_processed_jsonl(&out_dir.join(&name), &result.processed, &hash)?;
                outputs.push(name);
            }
            _ => {}
        }
    }
    if !winners.is_empty() {
        write_file(&out_dir.join("subimage_search.tsv"), &search_body)?;
        outputs.push("subimage_search.tsv".to_string());
    }

    let areas = if config.area_subsets.is_empty() {
        None
    } else {
        let (areas, _) = ws.focused_areas()?;
        let mut body = header.clone();
        body.push_str("rank\tx0\ty0\tx1\ty1\tsummed_score\n");
        for (i, (b, s)) in areas.areas.iter().zip(&areas.summed_scores).enumerate() {
            writeln!(
                body,
                "{}\t{}\t{}\t{}\t{}\t{:.9}",
                i + 1,
                b.x0,
                b.y0,
                b.x1,
                b.y1,
                s
            )
            .expect("string write");
        }
        write_file(&out_dir.join("focused_areas.tsv"), &body)?;
        outputs.push("focused_areas.tsv".to_string());
        Some(areas)
    };

    if config.figures {
        let comment = format!("config_hash={hash} seed={}", config.seed);
        let maps = group_heatmaps(
            &dataset.samples,
            &ws.sentence_vectors,
            &ws.proposals,
            &ws.proposal_vectors,
            picture.width(),
            picture.height(),
        )?;
        for (label, grid) in &maps {
            let name = format!("heatmap_{}.ppm", label.as_str());
            write_ppm(
                &render_heatmap(grid, &picture)?,
                &out_dir.join(&name),
                Some(&comment),
            )?;
            outputs.push(name);
        }
        if let Some(areas) = &areas {
            let boxes: Vec<(BoundingBox, [u8; 3])> = areas
                .areas
                .iter()
                .enumerate()
                .rev()
                .map(|(i, b)| (*b, PALETTE[i % PALETTE.len()]))
                .collect();
            write_ppm(
                &draw_boxes(&picture, &boxes, 3)?,
                &out_dir.join("focused_areas.ppm"),
                Some(&comment),
            )?;
            outputs.push("focused_areas.ppm".to_string());
        }
        let best_sub = best_subimage_spec(&cells, &winners, shot_keys.last().copied().flatten());
        if let Some((spec, b)) = best_sub {
            let name = format!("subimage_{}_{}.ppm", spec.k_t, spec.k_b);
            write_ppm(
                &draw_boxes(&picture, &[(b, PALETTE[0])], 3)?,
                &out_dir.join(&name),
                Some(&comment),
            )?;
            outputs.push(name);
        }
    }

    if let Some(c) = &cache {
        c.flush()?;
    }
    let manifest = RunManifest {
        config_hash: hash,
        seed: config.seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        joint_backend: joint.descriptor().clone(),
        text_backend: text.descriptor().clone(),
        sample_count: dataset.samples.len(),
        proposal_count: proposals.len(),
        outputs,
    };
    write_file(
        &out_dir.join("run_manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Sub-image spec with the best mean at the given shot count (first in grid
/// order on ties).
fn best_subimage_spec(
    cells: &[CellResult],
    winners: &BTreeMap<FilterSpec, BoundingBox>,
    shots: Option<usize>,
) -> Option<(FilterSpec, BoundingBox)> {
    let mut best: Option<(FilterSpec, BoundingBox, f64)> = None;
    for (spec, b) in winners {
        let id = Pipeline::SubImage(*spec).to_string();
        let Some(c) = cell_lookup(cells, &id, shots) else {
            continue;
        };
        if best.is_none_or(|(_, _, m)| c.mean > m) {
            best = Some((*spec, *b, c.mean));
        }
    }
    best.map(|(s, b, _)| (s, b))
}
