use std::collections::HashSet;

use super::{check_image_size, BoundingBox, RegionProposalConfig};
use crate::error::Result;

const SCALES: [f64; 3] = [0.25, 0.5, 0.75];

fn positions(extent: u32, size: u32, stride: u32) -> Vec<u32> {
    let mut out: Vec<u32> = (0..=extent - size)
        .step_by(stride.max(1) as usize)
        .collect();
    if *out.last().unwrap() != extent - size {
        out.push(extent - size);
    }
    out
}

/// Fallback proposal strategy: the full picture followed by square and 2:1
/// wide windows at three scales, strided by half the window size.
pub fn sliding_grid(
    width: u32,
    height: u32,
    config: &RegionProposalConfig,
) -> Result<Vec<BoundingBox>> {
    check_image_size(width, height)?;
    let short = width.min(height) as f64;
    let mut out = vec![BoundingBox {
        x0: 0,
        y0: 0,
        x1: width,
        y1: height,
    }];
    for scale in SCALES {
        let side = scale * short;
        for (bw, bh) in [(side, side), (side * 2f64.sqrt(), side / 2f64.sqrt())] {
            let bw = (bw.round() as u32).clamp(1, width);
            let bh = (bh.round() as u32).clamp(1, height);
            for y in positions(height, bh, bh / 2) {
                for x in positions(width, bw, bw / 2) {
                    out.push(BoundingBox {
                        x0: x,
                        y0: y,
                        x1: x + bw,
                        y1: y + bh,
                    });
                }
            }
        }
    }
    let min_area = config.min_box_area_fraction * width as f64 * height as f64;
    let mut seen = HashSet::new();
    Ok(out
        .into_iter()
        .filter(|b| seen.insert(*b))
        .filter(|b| b.area() as f64 >= min_area)
        .take(config.max_proposals)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_boxes_are_valid_and_unique() {
        let cfg = RegionProposalConfig::default();
        let boxes = sliding_grid(200, 120, &cfg).unwrap();
        assert_eq!(
            boxes[0],
            BoundingBox {
                x0: 0,
                y0: 0,
                x1: 200,
                y1: 120
            }
        );
        assert!(boxes.len() > 10);
        assert!(boxes.iter().all(|b| b.fits(200, 120)));
        let uniq: HashSet<_> = boxes.iter().collect();
        assert_eq!(uniq.len(), boxes.len());
    }
}
