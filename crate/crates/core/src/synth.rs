//! Generator for a planted corpus: a picture with four solid regions, and
//! transcripts in which only sentences about one region ("R") carry the
//! label. Used by tests, the acceptance suite and the `synth` subcommand.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_manifest, Dataset, Label, TranscriptSample};
use crate::embedding::{PlantedGroup, PlantedStructure};
use crate::error::{Error, Result};
use crate::picture::Picture;
use crate::regions::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub samples_per_class: usize,
    /// Sentences about R per transcript.
    pub signal_sentences: usize,
    /// Sentences about the other three regions or nothing in particular.
    pub filler_sentences: usize,
    /// Chance that an R word comes from the sample's own label vocabulary.
    pub label_consistency: f64,
    /// Index of R among the four planted regions.
    pub discriminative_region: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            samples_per_class: 50,
            signal_sentences: 2,
            filler_sentences: 12,
            label_consistency: 0.8,
            discriminative_region: 0,
        }
    }
}

pub const PICTURE_SIZE: u32 = 256;

const REGION_COLORS: [[u8; 3]; 4] = [[200, 40, 40], [40, 160, 60], [40, 70, 200], [220, 190, 40]];
const BACKGROUND: [u8; 3] = [225, 225, 225];

/// The four 96x96 planted squares, row by row.
pub fn planted_regions() -> Vec<BoundingBox> {
    [(16, 16), (144, 16), (16, 144), (144, 144)]
        .iter()
        .map(|&(x, y)| BoundingBox::new(x, y, x + 96, y + 96).expect("static box"))
        .collect()
}

pub fn planted_picture() -> RgbImage {
    let regions = planted_regions();
    RgbImage::from_fn(PICTURE_SIZE, PICTURE_SIZE, |x, y| {
        match regions.iter().position(|r| r.contains(x, y)) {
            Some(i) => Rgb(REGION_COLORS[i]),
            None => Rgb(BACKGROUND),
        }
    })
}

fn vocab(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub struct SynthCorpus {
    pub dataset: Dataset,
    pub picture: Picture,
    pub planted: PlantedStructure,
    pub regions: Vec<BoundingBox>,
    pub discriminative: BoundingBox,
}

impl SynthCorpus {
    /// Writes the manifest, transcripts, picture and `planted.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let pic_path = dir.join("picture.png");
        self.picture.image.save(&pic_path)?;
        let mut ds = self.dataset.clone();
        ds.picture_path = pic_path;
        write_manifest(&ds, dir)?;
        self.planted.save(dir.join("planted.json"))
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.samples_per_class == 0 || config.signal_sentences == 0 {
        return Err(Error::InvalidConfig(
            "synthetic corpus needs samples and signal sentences".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.label_consistency) {
        return Err(Error::InvalidConfig(
            "label_consistency must lie in [0, 1]".into(),
        ));
    }
    let regions = planted_regions();
    let r = *regions
        .get(config.discriminative_region)
        .ok_or(Error::IndexOutOfRange {
            index: config.discriminative_region,
            len: regions.len(),
        })?;

    let hc_words = vocab("hcw", 12);
    let ad_words = vocab("adw", 12);
    let region_words: Vec<Vec<String>> = (0..regions.len())
        .map(|i| vocab(&format!("reg{i}w"), 12))
        .collect();
    let filler = vocab("fill", 300);

    let mut groups = vec![
        PlantedGroup {
            name: "r-hc".into(),
            region: r,
            words: hc_words.clone(),
        },
        PlantedGroup {
            name: "r-ad".into(),
            region: r,
            words: ad_words.clone(),
        },
    ];
    for (i, reg) in regions.iter().enumerate() {
        if i != config.discriminative_region {
            groups.push(PlantedGroup {
                name: format!("region-{i}"),
                region: *reg,
                words: region_words[i].clone(),
            });
        }
    }
    let planted = PlantedStructure::new(groups);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let others: Vec<usize> = (0..regions.len())
        .filter(|&i| i != config.discriminative_region)
        .collect();
    let mut samples = Vec::with_capacity(2 * config.samples_per_class);
    for n in 0..config.samples_per_class {
        for label in Label::ALL {
            let (own, other) = match label {
                Label::Hc => (&hc_words, &ad_words),
                Label::Ad => (&ad_words, &hc_words),
            };
            let mut sentences: Vec<String> = Vec::new();
            for _ in 0..config.signal_sentences {
                let mut words: Vec<&str> = (0..3)
                    .map(|_| {
                        let src = if rng.random_bool(config.label_consistency) {
                            own
                        } else {
                            other
                        };
                        src.choose(&mut rng).expect("non-empty").as_str()
                    })
                    .collect();
                words.extend((0..3).map(|_| filler.choose(&mut rng).expect("non-empty").as_str()));
                sentences.push(words.join(" "));
            }
            for _ in 0..config.filler_sentences {
                let len = rng.random_range(5..=9);
                let mut words: Vec<&str> = Vec::with_capacity(len);
                if rng.random_bool(0.75) {
                    let region = *others.choose(&mut rng).expect("three regions");
                    words.extend((0..3).map(|_| {
                        region_words[region]
                            .choose(&mut rng)
                            .expect("non-empty")
                            .as_str()
                    }));
                }
                while words.len() < len {
                    words.push(filler.choose(&mut rng).expect("non-empty"));
                }
                sentences.push(words.join(" "));
            }
            // signal sentences land anywhere in the transcript
            for i in (1..sentences.len()).rev() {
                let j = rng.random_range(0..=i);
                sentences.swap(i, j);
            }
            let id = format!("{}{n:03}", label.as_str());
            samples.push(TranscriptSample::new(id, label, &sentences)?);
        }
    }
    Ok(SynthCorpus {
        dataset: Dataset::new(samples, "picture.png")?,
        picture: Picture::from_image(planted_picture()),
        planted,
        regions,
        discriminative: r,
    })
}
