//! Region proposals over the stimulus picture, plus IoU and greedy
//! non-maximum suppression.

mod grid;
mod segment;
mod selective;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid::sliding_grid;
pub use segment::{oversegment, LabelMap};
pub use selective::selective_search;

/// Axis-aligned pixel box; `x0, y0` inclusive, `x1, y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        let b = BoundingBox { x0, y0, x1, y1 };
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::DegenerateCrop(b));
        }
        Ok(b)
    }

    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w as u64 * h as u64
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 as f64 + self.x1 as f64) / 2.0,
            (self.y0 as f64 + self.y1 as f64) / 2.0,
        )
    }

    fn coords(&self) -> (u32, u32, u32, u32) {
        (self.x0, self.y0, self.x1, self.y1)
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.x1, self.y1)
    }
}

impl FromStr for BoundingBox {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<u32> = s
            .split(',')
            .map(|p| p.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidConfig(format!("bad box `{s}`: {e}")))?;
        match parts.as_slice() {
            [x0, y0, x1, y1] => BoundingBox::new(*x0, *y0, *x1, *y1),
            _ => Err(Error::InvalidConfig(format!(
                "bad box `{s}`: need x0,y0,x1,y1"
            ))),
        }
    }
}

/// Intersection and union pixel counts of two boxes.
pub fn iou_parts(a: &BoundingBox, b: &BoundingBox) -> (u64, u64) {
    let inter = a.intersection_area(b);
    (inter, a.area() + b.area() - inter)
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (inter, union) = iou_parts(a, b);
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Ordering used wherever boxes are ranked by score: higher score first, then
/// smaller area, then lexicographic coordinates.
pub fn rank_order(a: &ScoredBox, b: &ScoredBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.bbox.area().cmp(&b.bbox.area()))
        .then_with(|| a.bbox.coords().cmp(&b.bbox.coords()))
}

/// Greedy non-maximum suppression: keep the best remaining box, drop every
/// box whose IoU with it exceeds `iou_threshold`, repeat.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    let mut sorted = boxes.to_vec();
    sorted.sort_by(rank_order);
    let mut kept: Vec<ScoredBox> = Vec::with_capacity(sorted.len());
    let mut suppressed = vec![false; sorted.len()];
    for i in 0..sorted.len() {
        if suppressed[i] {
            continue;
        }
        kept.push(sorted[i]);
        for j in (i + 1)..sorted.len() {
            if !suppressed[j] && iou(&sorted[i].bbox, &sorted[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProposalConfig {
    pub segmentation_scale: f64,
    pub smoothing_sigma: f64,
    pub min_component_size: usize,
    pub min_box_area_fraction: f64,
    pub max_proposals: usize,
}

impl Default for RegionProposalConfig {
    fn default() -> Self {
        RegionProposalConfig {
            segmentation_scale: 200.0,
            smoothing_sigma: 0.8,
            min_component_size: 50,
            min_box_area_fraction: 0.05,
            max_proposals: 200,
        }
    }
}

impl RegionProposalConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.segmentation_scale > 0.0
            && self.smoothing_sigma > 0.0
            && self.min_component_size > 0
            && self.min_box_area_fraction > 0.0
            && self.min_box_area_fraction < 1.0
            && self.max_proposals > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "region proposal config out of range: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalStrategy {
    #[default]
    SelectiveSearch,
    SlidingGrid,
}

impl FromStr for ProposalStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selective-search" | "selective" => Ok(ProposalStrategy::SelectiveSearch),
            "sliding-grid" | "grid" => Ok(ProposalStrategy::SlidingGrid),
            other => Err(Error::InvalidConfig(format!(
                "unknown proposal strategy `{other}`"
            ))),
        }
    }
}

/// Runs the configured proposal strategy over an RGB raster.
pub fn propose(
    image: &image::RgbImage,
    config: &RegionProposalConfig,
    strategy: ProposalStrategy,
) -> Result<Vec<BoundingBox>> {
    match strategy {
        ProposalStrategy::SelectiveSearch => selective_search(image, config),
        ProposalStrategy::SlidingGrid => sliding_grid(image.width(), image.height(), config),
    }
}

pub(crate) fn check_image_size(width: u32, height: u32) -> Result<()> {
    if width < 16 || height < 16 {
        return Err(Error::ImageTooSmall { width, height });
    }
    Ok(())
}
