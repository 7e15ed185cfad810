//! Heatmaps, box overlays and tagged sentence dumps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, TranscriptSample};
use crate::embedding::JointVector;
use crate::error::{Error, Result};
use crate::filtering::Selection;
use crate::focused_areas::TopicAssignment;
use crate::picture::Picture;
use crate::regions::BoundingBox;

/// Per-pixel box coverage counts, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapGrid {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl HeatmapGrid {
    pub fn zeros(width: u32, height: u32) -> Self {
        HeatmapGrid {
            width,
            height,
            counts: vec![0; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.counts[y as usize * self.width as usize + x as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

/// Counts how many boxes cover each pixel, via a 2-D difference table.
pub fn accumulate_heatmap(boxes: &[BoundingBox], width: u32, height: u32) -> Result<HeatmapGrid> {
    let (w, h) = (width as usize, height as usize);
    let mut diff = vec![0i64; (w + 1) * (h + 1)];
    for b in boxes {
        if !b.fits(width, height) {
            return Err(Error::BoxOutOfBounds {
                bbox: *b,
                width,
                height,
            });
        }
        let (x0, y0, x1, y1) = (b.x0 as usize, b.y0 as usize, b.x1 as usize, b.y1 as usize);
        diff[y0 * (w + 1) + x0] += 1;
        diff[y0 * (w + 1) + x1] -= 1;
        diff[y1 * (w + 1) + x0] -= 1;
        diff[y1 * (w + 1) + x1] += 1;
    }
    let mut grid = HeatmapGrid::zeros(width, height);
    let mut above = vec![0i64; w];
    for y in 0..h {
        let mut run = 0i64;
        for x in 0..w {
            run += diff[y * (w + 1) + x];
            above[x] += run;
            grid.counts[y * w + x] = above[x] as u32;
        }
    }
    Ok(grid)
}

/// Blue (0) to red (1).
fn ramp(t: f64) -> [f64; 3] {
    [255.0 * t, 0.0, 255.0 * (1.0 - t)]
}

pub const OVERLAY_ALPHA: f64 = 0.5;

/// Min-max normalises the counts (a flat grid maps to 0) and blends the
/// blue-to-red ramp over the picture.
pub fn render_heatmap(grid: &HeatmapGrid, picture: &Picture) -> Result<RgbImage> {
    if grid.width != picture.width() || grid.height != picture.height() {
        return Err(Error::DimensionMismatch {
            expected: picture.width() as usize * picture.height() as usize,
            actual: grid.width as usize * grid.height as usize,
        });
    }
    let lo = grid.counts.iter().copied().min().unwrap_or(0) as f64;
    let range = grid.max() as f64 - lo;
    let mut out = picture.image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let t = if range > 0.0 {
            (grid.get(x, y) as f64 - lo) / range
        } else {
            0.0
        };
        let c = ramp(t);
        for ch in 0..3 {
            let v = OVERLAY_ALPHA * c[ch] + (1.0 - OVERLAY_ALPHA) * px[ch] as f64;
            px[ch] = v.round() as u8;
        }
    }
    Ok(out)
}

/// Distinct outline colours, cycled by rank.
pub const PALETTE: [[u8; 3]; 6] = [
    [230, 25, 25],
    [25, 110, 230],
    [30, 170, 60],
    [240, 160, 20],
    [150, 40, 190],
    [20, 180, 180],
];

/// Draws each box as a `thickness`-pixel outline. Later boxes paint over
/// earlier ones.
pub fn draw_boxes(
    picture: &Picture,
    boxes: &[(BoundingBox, [u8; 3])],
    thickness: u32,
) -> Result<RgbImage> {
    let mut out = picture.image.clone();
    for (b, color) in boxes {
        picture.check_box(*b)?;
        let t = thickness.max(1);
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                let edge = x < b.x0 + t || x + t >= b.x1 || y < b.y0 + t || y + t >= b.y1;
                if edge {
                    out.put_pixel(x, y, Rgb(*color));
                }
            }
        }
    }
    Ok(out)
}

/// Binary PPM with an optional comment line after the magic number.
pub fn write_ppm(image: &RgbImage, path: &Path, comment: Option<&str>) -> Result<()> {
    let mut bytes = Vec::with_capacity(image.as_raw().len() + 64);
    bytes.extend_from_slice(b"P6\n");
    if let Some(c) = comment {
        for line in c.lines() {
            bytes.extend_from_slice(format!("# {line}\n").as_bytes());
        }
    }
    bytes.extend_from_slice(format!("{} {}\n255\n", image.width(), image.height()).as_bytes());
    bytes.extend_from_slice(image.as_raw());
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceTag {
    Top,
    Bottom,
    Area(usize),
}

impl SentenceTag {
    pub fn as_string(&self) -> String {
        match self {
            SentenceTag::Top => "top".into(),
            SentenceTag::Bottom => "bottom".into(),
            SentenceTag::Area(r) => format!("area:{r}"),
        }
    }
}

/// What to tag a sample's sentences with.
#[derive(Debug, Clone)]
pub enum SampleMarkup<'a> {
    Selection(&'a Selection),
    Areas(&'a [TopicAssignment]),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkupLine {
    pub sample_id: String,
    pub label: Label,
    pub sentence_index: usize,
    pub text: String,
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn render_sample_markup(sample: &TranscriptSample, meta: &SampleMarkup<'_>) -> Vec<MarkupLine> {
    let mut tags: BTreeMap<usize, Vec<SentenceTag>> = BTreeMap::new();
    match meta {
        SampleMarkup::Selection(sel) => {
            for &i in &sel.top {
                tags.entry(i).or_default().push(SentenceTag::Top);
            }
            for &i in &sel.bottom {
                tags.entry(i).or_default().push(SentenceTag::Bottom);
            }
        }
        SampleMarkup::Areas(assignments) => {
            for a in assignments
                .iter()
                .filter(|a| a.sample_id == sample.sample_id)
            {
                tags.entry(a.sentence_index)
                    .or_default()
                    .push(SentenceTag::Area(a.area_rank));
            }
        }
    }
    sample
        .sentences
        .iter()
        .map(|s| MarkupLine {
            sample_id: sample.sample_id.clone(),
            label: sample.label,
            sentence_index: s.index,
            text: s.text.clone(),
            tags: tags
                .get(&s.index)
                .map(|t| t.iter().map(SentenceTag::as_string).collect())
                .unwrap_or_default(),
            config_hash: None,
        })
        .collect()
}

pub fn write_markup(lines: &[MarkupLine], mut out: impl Write) -> Result<()> {
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("writing markup", e))?;
    }
    Ok(())
}

/// For each sentence, the proposal whose text-to-images probability is
/// highest (ties to the lower proposal index). Softmax is monotone, so the
/// raw dot products decide.
pub fn most_relevant_boxes(
    sentence_vectors: &[JointVector],
    proposals: &[BoundingBox],
    proposal_vectors: &[JointVector],
) -> Result<Vec<BoundingBox>> {
    if proposals.is_empty() {
        return Err(Error::NoProposals);
    }
    if proposals.len() != proposal_vectors.len() {
        return Err(Error::DimensionMismatch {
            expected: proposals.len(),
            actual: proposal_vectors.len(),
        });
    }
    Ok(sentence_vectors
        .iter()
        .map(|s| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (k, p) in proposal_vectors.iter().enumerate() {
                let v = p.dot(s);
                if v > best_score {
                    best = k;
                    best_score = v;
                }
            }
            proposals[best]
        })
        .collect())
}

/// One heatmap per label, merging the most relevant proposal of every
/// sentence of that label's samples.
pub fn group_heatmaps(
    samples: &[TranscriptSample],
    sentence_vectors: &[Vec<JointVector>],
    proposals: &[BoundingBox],
    proposal_vectors: &[JointVector],
    width: u32,
    height: u32,
) -> Result<BTreeMap<Label, HeatmapGrid>> {
    let mut out = BTreeMap::new();
    for label in Label::ALL {
        let mut boxes = Vec::new();
        for (s, vecs) in samples.iter().zip(sentence_vectors) {
            if s.label == label {
                boxes.extend(most_relevant_boxes(vecs, proposals, proposal_vectors)?);
            }
        }
        out.insert(label, accumulate_heatmap(&boxes, width, height)?);
    }
    Ok(out)
}
