use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use picrel_core::classify::ClassifierKind;
use picrel_core::corpus::{load_manifest, write_manifest, Dataset, Label, Split, TranscriptSample};
use picrel_core::embedding::EmbeddingCache;
use picrel_core::experiment::{
    evaluate_cells, hash_header, run_experiment, with_cache, write_processed_jsonl, Backends,
    CellResult, Protocol, RunConfig,
};
use picrel_core::filtering::{filter_samples, FilterSpec, Target};
use picrel_core::picture::Picture;
use picrel_core::pipeline::{Pipeline, Workspace};
use picrel_core::regions::{propose, BoundingBox, ProposalStrategy};
use picrel_core::relevance::{group_stats_from, relevance_from_vectors};
use picrel_core::synth::{generate, SynthConfig};
use picrel_core::viz::{
    draw_boxes, group_heatmaps, render_heatmap, render_sample_markup, write_markup, write_ppm,
    SampleMarkup, PALETTE,
};

#[derive(Parser)]
#[command(
    name = "picrel",
    version,
    about = "Picture-relevance features for picture-description transcripts"
)]
struct Cli {
    /// Flat TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset directory or manifest.tsv.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Joint encoder: synthetic[:seed=N,dim=D,planted=FILE], fixture:DIR or process:CMD.
    #[arg(long, global = true)]
    joint: Option<String>,
    /// Classifier text encoder, same forms as --joint.
    #[arg(long, global = true)]
    text: Option<String>,
    /// Prepended to every sentence before joint embedding, e.g. "a picture of ".
    #[arg(long, global = true)]
    text_prefix: Option<String>,
    #[arg(long, global = true, env = "PICREL_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RegionArgs {
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    max_proposals: Option<usize>,
    #[arg(long)]
    segmentation_scale: Option<f64>,
    #[arg(long)]
    smoothing_sigma: Option<f64>,
    #[arg(long)]
    min_component_size: Option<usize>,
    #[arg(long)]
    min_box_area_fraction: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct AreaArgs {
    #[arg(long)]
    k_f: Option<usize>,
    #[arg(long)]
    nms_threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and print per-label counts.
    Ingest,
    /// Per-sample picture relevance and label-wise group statistics.
    Score,
    /// Region proposals for the dataset picture (or --picture).
    Regions {
        #[arg(long)]
        picture: Option<PathBuf>,
        #[command(flatten)]
        regions: RegionArgs,
        /// Also draw the proposals.
        #[arg(long)]
        overlay: bool,
    },
    /// Keep the top-k_t and bottom-k_b sentences per sample.
    Filter {
        /// `picture` or `box:x0,y0,x1,y1`.
        #[arg(long, default_value = "picture")]
        target: String,
        /// `k_t,k_b`.
        #[arg(long)]
        spec: FilterSpec,
    },
    /// Find the proposal whose filtered samples best separate the labels.
    SubimageSearch {
        #[arg(long)]
        spec: FilterSpec,
        /// Score only samples tagged `train` in the manifest.
        #[arg(long)]
        train_only: bool,
        #[command(flatten)]
        regions: RegionArgs,
    },
    /// Rank picture areas by accumulated relevance and assign sentences.
    FocusedAreas {
        #[command(flatten)]
        areas: AreaArgs,
        #[command(flatten)]
        regions: RegionArgs,
    },
    /// Few-shot or fixed-split accuracy of feature pipelines.
    Evaluate {
        /// baseline | picture:kt,kb | subimage:kt,kb | areas:r1,r2,... (repeatable)
        #[arg(long, required = true)]
        pipeline: Vec<Pipeline>,
        #[arg(long, value_delimiter = ',')]
        shots: Vec<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        test_per_class: Option<usize>,
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long)]
        classifier: Option<ClassifierKind>,
        #[arg(long)]
        regularization: Option<f64>,
        #[arg(long)]
        train_only: bool,
        #[command(flatten)]
        areas: AreaArgs,
        #[command(flatten)]
        regions: RegionArgs,
    },
    /// Render figures: group heatmaps, the winning sub-image, focused areas
    /// or a tagged sample.
    Visualize {
        #[arg(long, value_enum)]
        mode: VizMode,
        /// Filter spec for `subimage` and `sample` modes.
        #[arg(long)]
        spec: Option<FilterSpec>,
        /// For `sample` mode.
        #[arg(long)]
        sample_id: Option<String>,
        /// For `sample` mode: `picture`, `box:x0,y0,x1,y1`, `subimage` or `areas`.
        #[arg(long, default_value = "picture")]
        target: String,
        #[command(flatten)]
        areas: AreaArgs,
        #[command(flatten)]
        regions: RegionArgs,
    },
    /// Full grid run driven by the config file.
    Run {
        #[arg(long, value_delimiter = ',')]
        shots: Vec<usize>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Write a planted synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 50)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 0.8)]
        label_consistency: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VizMode {
    Heatmap,
    Subimage,
    Areas,
    Sample,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

impl Cli {
    fn base_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset {
            cfg.dataset = v.clone();
        }
        if let Some(v) = &self.joint {
            cfg.joint_backend = v.clone();
        }
        if let Some(v) = &self.text {
            cfg.text_backend = v.clone();
        }
        if let Some(v) = &self.text_prefix {
            cfg.joint_text_prefix = v.clone();
        }
        if let Some(v) = &self.cache_dir {
            cfg.cache_dir = Some(v.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        Ok(cfg)
    }
}

impl RegionArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = &self.strategy {
            cfg.proposal_strategy = v.parse::<ProposalStrategy>()?;
        }
        if let Some(v) = self.max_proposals {
            cfg.max_proposals = v;
        }
        if let Some(v) = self.segmentation_scale {
            cfg.segmentation_scale = v;
        }
        if let Some(v) = self.smoothing_sigma {
            cfg.smoothing_sigma = v;
        }
        if let Some(v) = self.min_component_size {
            cfg.min_component_size = v;
        }
        if let Some(v) = self.min_box_area_fraction {
            cfg.min_box_area_fraction = v;
        }
        cfg.region_config().validate()?;
        Ok(())
    }
}

impl AreaArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.k_f {
            cfg.k_f = v;
        }
        if let Some(v) = self.nms_threshold {
            cfg.nms_threshold = v;
        }
    }
}

/// Dataset, picture and encoders for one command.
struct Session {
    cfg: RunConfig,
    hash: String,
    dataset: Dataset,
    picture: Picture,
    backends: Backends,
    cache: Option<EmbeddingCache>,
}

impl Session {
    fn open(cfg: RunConfig) -> Result<Self> {
        let dataset = load_manifest(&cfg.dataset)
            .with_context(|| format!("loading {}", cfg.dataset.display()))?;
        let picture = Picture::load(&dataset.picture_path)?;
        let backends = Backends::for_config(&cfg)?;
        let cache = cfg
            .cache_dir
            .as_ref()
            .map(EmbeddingCache::open)
            .transpose()?;
        fs::create_dir_all(&cfg.output_dir)
            .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
        info!(
            "{} samples, joint {}, text {}",
            dataset.samples.len(),
            backends.joint.descriptor().model_id,
            backends.text.descriptor().model_id
        );
        Ok(Session {
            hash: cfg.hash(),
            cfg,
            dataset,
            picture,
            backends,
            cache,
        })
    }

    fn header(&self) -> String {
        hash_header(&self.hash, self.cfg.seed)
    }

    fn comment(&self) -> String {
        format!("config_hash={} seed={}", self.hash, self.cfg.seed)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn proposals(&self) -> Result<Vec<BoundingBox>> {
        Ok(propose(
            &self.picture.image,
            &self.cfg.region_config(),
            self.cfg.proposal_strategy,
        )?)
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    fn finish(&self) -> Result<()> {
        if let Some(c) = &self.cache {
            c.flush()?;
        }
        Ok(())
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = cli.base_config()?;
    match cli.command {
        Command::Ingest => ingest(&cfg),
        Command::Score => score(cfg),
        Command::Regions {
            picture,
            regions,
            overlay,
        } => {
            regions.apply(&mut cfg)?;
            regions_cmd(cfg, picture, overlay)
        }
        Command::Filter { target, spec } => filter_cmd(cfg, target.parse()?, spec),
        Command::SubimageSearch {
            spec,
            train_only,
            regions,
        } => {
            regions.apply(&mut cfg)?;
            cfg.train_only = train_only;
            subimage_cmd(cfg, spec)
        }
        Command::FocusedAreas { areas, regions } => {
            regions.apply(&mut cfg)?;
            areas.apply(&mut cfg);
            areas_cmd(cfg)
        }
        Command::Evaluate {
            pipeline,
            shots,
            rounds,
            test_per_class,
            protocol,
            classifier,
            regularization,
            train_only,
            areas,
            regions,
        } => {
            regions.apply(&mut cfg)?;
            areas.apply(&mut cfg);
            if !shots.is_empty() {
                cfg.shots = shots;
            }
            if let Some(v) = rounds {
                cfg.rounds = v;
            }
            if let Some(v) = test_per_class {
                cfg.test_per_class = v;
            }
            if let Some(v) = protocol {
                cfg.protocol = v;
            }
            if let Some(v) = classifier {
                cfg.classifier = v;
            }
            if let Some(v) = regularization {
                cfg.regularization = v;
            }
            cfg.train_only |= train_only;
            evaluate_cmd(cfg, pipeline)
        }
        Command::Visualize {
            mode,
            spec,
            sample_id,
            target,
            areas,
            regions,
        } => {
            regions.apply(&mut cfg)?;
            areas.apply(&mut cfg);
            visualize_cmd(cfg, mode, spec, sample_id, &target)
        }
        Command::Run { shots, rounds } => {
            if !shots.is_empty() {
                cfg.shots = shots;
            }
            if let Some(v) = rounds {
                cfg.rounds = v;
            }
            let manifest = run_experiment(&cfg)?;
            println!(
                "config_hash={} outputs={} dir={}",
                manifest.config_hash,
                manifest.outputs.len(),
                cfg.output_dir.display()
            );
            Ok(())
        }
        Command::Synth {
            samples_per_class,
            label_consistency,
        } => {
            let corpus = generate(&SynthConfig {
                seed: cfg.seed,
                samples_per_class,
                label_consistency,
                ..Default::default()
            })?;
            corpus.write(&cfg.output_dir)?;
            println!(
                "wrote {} samples to {}; joint backend: synthetic:seed={},planted={}",
                corpus.dataset.samples.len(),
                cfg.output_dir.display(),
                cfg.seed,
                cfg.output_dir.join("planted.json").display()
            );
            Ok(())
        }
    }
}

fn ingest(cfg: &RunConfig) -> Result<()> {
    let ds = load_manifest(&cfg.dataset)
        .with_context(|| format!("loading {}", cfg.dataset.display()))?;
    let mut out = hash_header(&cfg.hash(), cfg.seed);
    out.push_str("label\tsamples\tsentences\twords\n");
    for label in Label::ALL {
        let s: Vec<&TranscriptSample> = ds.samples.iter().filter(|s| s.label == label).collect();
        let sentences: usize = s.iter().map(|s| s.len()).sum();
        let words: usize = s.iter().map(|s| s.word_count()).sum();
        writeln!(out, "{label}\t{}\t{sentences}\t{words}", s.len())?;
    }
    if let Some(tags) = &ds.split_tags {
        for split in [Split::Train, Split::Test] {
            let n = tags.values().filter(|t| **t == split).count();
            writeln!(out, "# split {split}: {n}")?;
        }
    }
    writeln!(out, "# picture {}", ds.picture_path.display())?;
    print!("{out}");
    Ok(())
}

fn score(cfg: RunConfig) -> Result<()> {
    let s = Session::open(cfg)?;
    s.dataset.require_both_labels()?;
    let (joint, _) = with_cache(&s.backends, s.cache.as_ref());
    let ws = Workspace::new(
        &s.dataset,
        &s.picture,
        &*joint,
        &*s.backends.text,
        Vec::new(),
    )?;
    let rel = relevance_from_vectors(
        &ws.picture_vector,
        &s.dataset.samples,
        &ws.sentence_vectors,
        joint.descriptor().logit_scale,
    )?;
    let mut body = s.header();
    body.push_str("sample_id\tlabel\tsentences\tc_i\n");
    for r in &rel {
        writeln!(
            body,
            "{}\t{}\t{}\t{:.9}",
            r.sample_id,
            r.label,
            r.per_sentence.len(),
            r.total
        )?;
    }
    s.write("sample_relevance.tsv", &body)?;
    let g = group_stats_from(&s.dataset, &rel)?;
    let mut body = s.header();
    body.push_str("label\tc\tmean_sentences\tmean_words\n");
    for (label, c) in [(Label::Hc, g.c_hc), (Label::Ad, g.c_ad)] {
        writeln!(
            body,
            "{label}\t{c:.6}\t{:.4}\t{:.4}",
            g.mean_sentences_per_sample[&label], g.mean_words_per_sample[&label]
        )?;
    }
    writeln!(body, "# scale_factor={}", g.scale_factor)?;
    s.write("group_stats.tsv", &body)?;
    print!("{body}");
    s.finish()
}

fn regions_cmd(cfg: RunConfig, picture: Option<PathBuf>, overlay: bool) -> Result<()> {
    let picture_path = match picture {
        Some(p) => p,
        None => load_manifest(&cfg.dataset)?.picture_path,
    };
    let pic = Picture::load(&picture_path)?;
    let proposals = propose(&pic.image, &cfg.region_config(), cfg.proposal_strategy)?;
    let hash = cfg.hash();
    let mut body = hash_header(&hash, cfg.seed);
    body.push_str("x0\ty0\tx1\ty1\n");
    for b in &proposals {
        writeln!(body, "{}\t{}\t{}\t{}", b.x0, b.y0, b.x1, b.y1)?;
    }
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("proposals.tsv"), &body)?;
    if overlay {
        let boxes: Vec<(BoundingBox, [u8; 3])> = proposals
            .iter()
            .enumerate()
            .map(|(i, b)| (*b, PALETTE[i % PALETTE.len()]))
            .collect();
        let comment = format!("config_hash={hash} seed={}", cfg.seed);
        write_ppm(
            &draw_boxes(&pic, &boxes, 1)?,
            &cfg.output_dir.join("proposals.ppm"),
            Some(&comment),
        )?;
    }
    println!("{} proposals", proposals.len());
    Ok(())
}

fn filter_cmd(cfg: RunConfig, target: Target, spec: FilterSpec) -> Result<()> {
    let s = Session::open(cfg)?;
    let (joint, _) = with_cache(&s.backends, s.cache.as_ref());
    let target_vec =
        picrel_core::embedding::embed_image_joint(&s.picture, target.region(), &*joint)?;
    let sentence_vecs =
        picrel_core::embedding::embed_corpus_sentences(&s.dataset.samples, &*joint)?;
    let outcomes = filter_samples(
        &s.dataset.samples,
        &sentence_vecs,
        &target_vec,
        spec,
        joint.descriptor().logit_scale,
    )?;

    let mut processed_samples = Vec::with_capacity(outcomes.len());
    let mut markup = Vec::new();
    let mut ranked = String::new();
    for (sample, o) in s.dataset.samples.iter().zip(&outcomes) {
        let texts: Vec<&str> = o
            .processed
            .kept_sentence_indices
            .iter()
            .map(|&i| sample.sentences[i].text.as_str())
            .collect();
        processed_samples.push(TranscriptSample::new(
            sample.sample_id.clone(),
            sample.label,
            &texts,
        )?);
        let mut lines = render_sample_markup(sample, &SampleMarkup::Selection(&o.selection));
        lines
            .iter_mut()
            .for_each(|l| l.config_hash = Some(s.hash.clone()));
        markup.extend(lines);
        let mut v = serde_json::to_value(o)?;
        v["config_hash"] = s.hash.clone().into();
        ranked.push_str(&serde_json::to_string(&v)?);
        ranked.push('\n');
    }
    let mut processed_ds = Dataset::new(processed_samples, s.dataset.picture_path.clone())?;
    processed_ds.split_tags = s.dataset.split_tags.clone();
    let dir = s.path("processed");
    write_manifest(&processed_ds, &dir)?;
    fs::write(dir.join("CONFIG_HASH"), format!("{}\n", s.hash))?;
    s.write("filter_outcomes.jsonl", &ranked)?;
    let mut buf = Vec::new();
    write_markup(&markup, &mut buf)?;
    s.write("markup.jsonl", std::str::from_utf8(&buf)?)?;
    println!(
        "filtered {} samples against {target} with ({spec}) into {}",
        outcomes.len(),
        dir.display()
    );
    s.finish()
}

fn subimage_cmd(cfg: RunConfig, spec: FilterSpec) -> Result<()> {
    let s = Session::open(cfg)?;
    let (joint, text) = with_cache(&s.backends, s.cache.as_ref());
    let ws = Workspace::new(&s.dataset, &s.picture, &*joint, &*text, s.proposals()?)?;
    let bank = ws.subimage_bank(spec)?;
    let scope = if s.cfg.train_only {
        Some(s.dataset.split_indices(Split::Train)?)
    } else {
        None
    };
    let result = bank.search(scope.as_deref())?;
    let mut body = s.header();
    body.push_str("x0\ty0\tx1\ty1\td_s\n");
    for sc in &result.all_scores {
        let b = sc.bbox;
        writeln!(
            body,
            "{}\t{}\t{}\t{}\t{:.9}",
            b.x0, b.y0, b.x1, b.y1, sc.d_s
        )?;
    }
    s.write("subimage_scores.tsv", &body)?;
    write_processed_jsonl(
        &s.path("subimage_processed.jsonl"),
        &result.processed,
        &s.hash,
    )?;
    write_ppm(
        &draw_boxes(&s.picture, &[(result.best.bbox, PALETTE[0])], 3)?,
        &s.path("subimage.ppm"),
        Some(&s.comment()),
    )?;
    println!(
        "best {} d_s={:.6} spec ({spec})",
        result.best.bbox, result.best.d_s
    );
    s.finish()
}

fn areas_cmd(cfg: RunConfig) -> Result<()> {
    let s = Session::open(cfg)?;
    let (joint, text) = with_cache(&s.backends, s.cache.as_ref());
    let ws = Workspace::new(&s.dataset, &s.picture, &*joint, &*text, s.proposals()?)?
        .with_focused_areas(s.cfg.k_f, s.cfg.nms_threshold);
    let (areas, scored) = ws.focused_areas()?;
    let mut body = s.header();
    body.push_str("rank\tx0\ty0\tx1\ty1\tsummed_score\n");
    for (i, (b, sc)) in areas.areas.iter().zip(&areas.summed_scores).enumerate() {
        writeln!(
            body,
            "{}\t{}\t{}\t{}\t{}\t{sc:.9}",
            i + 1,
            b.x0,
            b.y0,
            b.x1,
            b.y1
        )?;
    }
    s.write("focused_areas.tsv", &body)?;
    print!("{body}");
    let mut body = s.header();
    body.push_str("x0\ty0\tx1\ty1\tsummed_score\n");
    for sb in &scored {
        let b = sb.bbox;
        writeln!(
            body,
            "{}\t{}\t{}\t{}\t{:.9}",
            b.x0, b.y0, b.x1, b.y1, sb.score
        )?;
    }
    s.write("area_scores.tsv", &body)?;
    let assignments = ws.assignments(&areas)?;
    let mut body = s.header();
    body.push_str("sample_id\tsentence_index\tarea_rank\n");
    for a in &assignments {
        writeln!(
            body,
            "{}\t{}\t{}",
            a.sample_id, a.sentence_index, a.area_rank
        )?;
    }
    s.write("assignments.tsv", &body)?;
    write_areas_overlay(&s, &areas.areas)?;
    s.finish()
}

fn write_areas_overlay(s: &Session, areas: &[BoundingBox]) -> Result<()> {
    let boxes: Vec<(BoundingBox, [u8; 3])> = areas
        .iter()
        .enumerate()
        .rev()
        .map(|(i, b)| (*b, PALETTE[i % PALETTE.len()]))
        .collect();
    write_ppm(
        &draw_boxes(&s.picture, &boxes, 3)?,
        &s.path("focused_areas.ppm"),
        Some(&s.comment()),
    )?;
    Ok(())
}

fn evaluate_cmd(cfg: RunConfig, pipelines: Vec<Pipeline>) -> Result<()> {
    let s = Session::open(cfg)?;
    let (joint, text) = with_cache(&s.backends, s.cache.as_ref());
    let needs_proposals = pipelines
        .iter()
        .any(|p| matches!(p, Pipeline::SubImage(_) | Pipeline::Areas(_)));
    let proposals = if needs_proposals {
        s.proposals()?
    } else {
        Vec::new()
    };
    let ws = Workspace::new(&s.dataset, &s.picture, &*joint, &*text, proposals)?
        .with_focused_areas(s.cfg.k_f, s.cfg.nms_threshold);
    let mut cells: Vec<CellResult> = Vec::new();
    for p in &pipelines {
        info!("evaluating {p}");
        cells.extend(evaluate_cells(&ws, p, &s.cfg)?);
    }
    let columns: Vec<Option<usize>> = match s.cfg.protocol {
        Protocol::Fixed => vec![None],
        Protocol::Fewshot => s.cfg.shots.iter().map(|&k| Some(k)).collect(),
    };
    let mut body = s.header();
    body.push_str("pipeline");
    for c in &columns {
        match c {
            Some(k) => write!(body, "\tk{k}")?,
            None => body.push_str("\tfixed"),
        }
    }
    body.push('\n');
    for p in &pipelines {
        let id = p.to_string();
        body.push_str(&id);
        for c in &columns {
            let cell = cells
                .iter()
                .find(|x| x.pipeline == id && x.shots == *c)
                .context("missing cell")?;
            write!(body, "\t{}", cell.cell())?;
        }
        body.push('\n');
    }
    s.write("evaluate.tsv", &body)?;
    print!("{body}");
    s.finish()
}

fn visualize_cmd(
    cfg: RunConfig,
    mode: VizMode,
    spec: Option<FilterSpec>,
    sample_id: Option<String>,
    target: &str,
) -> Result<()> {
    let s = Session::open(cfg)?;
    let (joint, text) = with_cache(&s.backends, s.cache.as_ref());
    let ws = Workspace::new(&s.dataset, &s.picture, &*joint, &*text, s.proposals()?)?
        .with_focused_areas(s.cfg.k_f, s.cfg.nms_threshold);
    match mode {
        VizMode::Heatmap => {
            let maps = group_heatmaps(
                &s.dataset.samples,
                &ws.sentence_vectors,
                &ws.proposals,
                &ws.proposal_vectors,
                s.picture.width(),
                s.picture.height(),
            )?;
            for (label, grid) in &maps {
                let path = s.path(&format!("heatmap_{label}.ppm"));
                write_ppm(
                    &render_heatmap(grid, &s.picture)?,
                    &path,
                    Some(&s.comment()),
                )?;
                println!("{label}: {} (max count {})", path.display(), grid.max());
            }
        }
        VizMode::Subimage => {
            let spec = spec.context("--spec is required for subimage mode")?;
            let result = ws.subimage_bank(spec)?.search(None)?;
            let path = s.path("subimage.ppm");
            write_ppm(
                &draw_boxes(&s.picture, &[(result.best.bbox, PALETTE[0])], 3)?,
                &path,
                Some(&s.comment()),
            )?;
            println!("best {} -> {}", result.best.bbox, path.display());
        }
        VizMode::Areas => {
            let (areas, _) = ws.focused_areas()?;
            write_areas_overlay(&s, &areas.areas)?;
            println!(
                "{} areas -> {}",
                areas.len(),
                s.path("focused_areas.ppm").display()
            );
        }
        VizMode::Sample => {
            let id = sample_id.context("--sample-id is required for sample mode")?;
            let idx = s
                .dataset
                .samples
                .iter()
                .position(|x| x.sample_id == id)
                .with_context(|| format!("no sample `{id}`"))?;
            let sample = &s.dataset.samples[idx];
            let mut lines = if target == "areas" {
                let (areas, _) = ws.focused_areas()?;
                let assignments = ws.assignments(&areas)?;
                render_sample_markup(sample, &SampleMarkup::Areas(&assignments))
            } else {
                let spec = spec.context("--spec is required unless --target areas")?;
                let target_vec = match target {
                    "subimage" => {
                        let bank = ws.subimage_bank(spec)?;
                        ws.proposal_vectors[bank.best_index(None)?].clone()
                    }
                    t => {
                        let t: Target = t.parse()?;
                        picrel_core::embedding::embed_image_joint(&s.picture, t.region(), &*joint)?
                    }
                };
                let outcome = filter_samples(
                    std::slice::from_ref(sample),
                    &ws.sentence_vectors[idx..=idx],
                    &target_vec,
                    spec,
                    joint.descriptor().logit_scale,
                )?
                .remove(0);
                render_sample_markup(sample, &SampleMarkup::Selection(&outcome.selection))
            };
            lines
                .iter_mut()
                .for_each(|l| l.config_hash = Some(s.hash.clone()));
            let path = s.path(&format!("sample_{id}.jsonl"));
            let mut buf = Vec::new();
            write_markup(&lines, &mut buf)?;
            fs::write(&path, &buf)?;
            print!("{}", String::from_utf8(buf)?);
        }
    }
    s.finish()
}
