//! Hierarchical grouping over an initial over-segmentation. Similarity is the
//! sum of colour-histogram intersection, size and fill terms; there is no
//! texture term.

use std::collections::{BTreeSet, HashSet};

use image::RgbImage;

use super::{oversegment, BoundingBox, RegionProposalConfig};
use crate::error::Result;

const BINS: usize = 25;

#[derive(Debug, Clone)]
struct Region {
    size: usize,
    bbox: BoundingBox,
    hist: Vec<f64>,
    alive: bool,
}

fn similarity(a: &Region, b: &Region, image_size: f64) -> f64 {
    let color: f64 = a.hist.iter().zip(&b.hist).map(|(p, q)| p.min(*q)).sum();
    let size = 1.0 - (a.size + b.size) as f64 / image_size;
    let fill =
        1.0 - (a.bbox.union(&b.bbox).area() as f64 - a.size as f64 - b.size as f64) / image_size;
    color + size + fill
}

/// Bounding boxes of every region formed while greedily merging the most
/// similar neighbouring pair, in formation order. Identical boxes are
/// reported once, boxes under `min_box_area_fraction` of the picture are
/// dropped, and the list is cut at `max_proposals`.
pub fn selective_search(
    image: &RgbImage,
    config: &RegionProposalConfig,
) -> Result<Vec<BoundingBox>> {
    let labels = oversegment(image, config)?;
    let (w, h) = (labels.width, labels.height);
    let image_size = (w as f64) * (h as f64);

    let mut regions: Vec<Region> = (0..labels.count)
        .map(|_| Region {
            size: 0,
            bbox: BoundingBox {
                x0: u32::MAX,
                y0: u32::MAX,
                x1: 0,
                y1: 0,
            },
            hist: vec![0.0; 3 * BINS],
            alive: true,
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let r = &mut regions[labels.get(x, y) as usize];
            r.size += 1;
            r.bbox.x0 = r.bbox.x0.min(x);
            r.bbox.y0 = r.bbox.y0.min(y);
            r.bbox.x1 = r.bbox.x1.max(x + 1);
            r.bbox.y1 = r.bbox.y1.max(y + 1);
            let px = image.get_pixel(x, y);
            for c in 0..3 {
                r.hist[c * BINS + px[c] as usize * BINS / 256] += 1.0;
            }
        }
    }
    for r in &mut regions {
        let total: f64 = r.hist.iter().sum();
        r.hist.iter_mut().for_each(|v| *v /= total);
    }

    let mut neighbours: BTreeSet<(usize, usize)> = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = labels.get(x, y) as usize;
            if x + 1 < w {
                let b = labels.get(x + 1, y) as usize;
                if a != b {
                    neighbours.insert((a.min(b), a.max(b)));
                }
            }
            if y + 1 < h {
                let b = labels.get(x, y + 1) as usize;
                if a != b {
                    neighbours.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    let mut pairs: Vec<((usize, usize), f64)> = neighbours
        .into_iter()
        .map(|(a, b)| ((a, b), similarity(&regions[a], &regions[b], image_size)))
        .collect();

    let mut formed: Vec<BoundingBox> = regions.iter().map(|r| r.bbox).collect();
    while !pairs.is_empty() {
        // highest similarity; ties resolved by the lowest pair key
        let best = pairs
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("non-empty");
        let (i, j) = pairs[best].0;
        let (ri, rj) = (&regions[i], &regions[j]);
        let size = ri.size + rj.size;
        let hist = ri
            .hist
            .iter()
            .zip(&rj.hist)
            .map(|(a, b)| (a * ri.size as f64 + b * rj.size as f64) / size as f64)
            .collect();
        let merged = Region {
            size,
            bbox: ri.bbox.union(&rj.bbox),
            hist,
            alive: true,
        };
        let t = regions.len();
        regions[i].alive = false;
        regions[j].alive = false;
        formed.push(merged.bbox);
        regions.push(merged);

        let mut touching: BTreeSet<usize> = BTreeSet::new();
        pairs.retain(|&((a, b), _)| {
            let hit_a = a == i || a == j;
            let hit_b = b == i || b == j;
            if hit_a && !hit_b {
                touching.insert(b);
            } else if hit_b && !hit_a {
                touching.insert(a);
            }
            !(hit_a || hit_b)
        });
        for k in touching {
            if regions[k].alive {
                let s = similarity(&regions[k], &regions[t], image_size);
                pairs.push(((k, t), s));
            }
        }
    }

    let min_area = config.min_box_area_fraction * image_size;
    let mut seen = HashSet::new();
    let mut out: Vec<BoundingBox> = formed
        .into_iter()
        .filter(|b| seen.insert(*b))
        .filter(|b| b.area() as f64 >= min_area)
        .take(config.max_proposals)
        .collect();
    if out.is_empty() {
        // every region was below the area floor; the full picture always qualifies
        out.push(BoundingBox {
            x0: 0,
            y0: 0,
            x1: w,
            y1: h,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::iou;
    use image::Rgb;

    #[test]
    fn uniform_image_single_full_box() {
        let img = RgbImage::from_pixel(64, 48, Rgb([10, 10, 10]));
        let boxes = selective_search(&img, &RegionProposalConfig::default()).unwrap();
        assert_eq!(
            boxes,
            vec![BoundingBox {
                x0: 0,
                y0: 0,
                x1: 64,
                y1: 48
            }]
        );
    }

    #[test]
    fn two_planted_regions_recovered() {
        let a = BoundingBox {
            x0: 10,
            y0: 10,
            x1: 60,
            y1: 70,
        };
        let b = BoundingBox {
            x0: 75,
            y0: 30,
            x1: 120,
            y1: 110,
        };
        let img = RgbImage::from_fn(128, 128, |x, y| {
            if a.contains(x, y) {
                Rgb([220, 30, 30])
            } else if b.contains(x, y) {
                Rgb([30, 30, 220])
            } else {
                Rgb([200, 200, 200])
            }
        });
        let boxes = selective_search(&img, &RegionProposalConfig::default()).unwrap();
        for planted in [a, b] {
            let best = boxes.iter().map(|p| iou(p, &planted)).fold(0.0, f64::max);
            assert!(best >= 0.9, "best IoU {best} for {planted}");
        }
        assert!(boxes.iter().all(|b| b.fits(128, 128)));
    }

    #[test]
    fn deterministic() {
        let img = RgbImage::from_fn(64, 64, |x, y| {
            Rgb([(x * 4) as u8, (y * 4) as u8, ((x ^ y) * 4) as u8])
        });
        let cfg = RegionProposalConfig::default();
        assert_eq!(
            selective_search(&img, &cfg).unwrap(),
            selective_search(&img, &cfg).unwrap()
        );
    }

    #[test]
    fn respects_max_proposals() {
        let img = RgbImage::from_fn(96, 96, |x, y| {
            Rgb([
                ((x / 8 * 53 + y / 8 * 97) % 256) as u8,
                ((x / 8) * 20) as u8,
                ((y / 8) * 20) as u8,
            ])
        });
        let cfg = RegionProposalConfig {
            max_proposals: 3,
            min_box_area_fraction: 0.01,
            ..Default::default()
        };
        let boxes = selective_search(&img, &cfg).unwrap();
        assert!(!boxes.is_empty() && boxes.len() <= 3);
    }
}
