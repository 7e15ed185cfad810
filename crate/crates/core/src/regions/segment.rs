//! Graph-based over-segmentation (Felzenszwalb-Huttenlocher style) used to
//! seed selective search.

use image::RgbImage;

use super::{check_image_size, RegionProposalConfig};
use crate::error::Result;

/// Per-pixel component labels in raster order, numbered `0..count` by first
/// appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl LabelMap {
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[(y * self.width + x) as usize]
    }

    pub fn component_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
    threshold: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize, k: f64) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
            threshold: vec![k; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn join(&mut self, a: usize, b: usize) -> usize {
        let (big, small) = if self.size[a] >= self.size[b] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        big
    }
}

pub(crate) fn gaussian_smooth(image: &RgbImage, sigma: f64) -> Vec<[f64; 3]> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);

    let src: Vec<[f64; 3]> = image
        .pixels()
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;

    let mut tmp = vec![[0.0; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + ki as isize - radius, w);
                let p = src[y * w + sx];
                for c in 0..3 {
                    acc[c] += kv * p[c];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![[0.0; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + ki as isize - radius, h);
                let p = tmp[sy * w + x];
                for c in 0..3 {
                    acc[c] += kv * p[c];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// 8-connected pixel graph edges `(weight, a, b)` in generation order.
pub(crate) fn pixel_edges(
    smoothed: &[[f64; 3]],
    width: usize,
    height: usize,
) -> Vec<(f64, usize, usize)> {
    let dist = |a: usize, b: usize| {
        let (p, q) = (smoothed[a], smoothed[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    let mut edges = Vec::with_capacity(width * height * 4);
    for y in 0..height {
        for x in 0..width {
            let a = y * width + x;
            if x + 1 < width {
                edges.push((dist(a, a + 1), a, a + 1));
            }
            if y + 1 < height {
                let b = a + width;
                edges.push((dist(a, b), a, b));
                if x + 1 < width {
                    edges.push((dist(a, b + 1), a, b + 1));
                }
                if x > 0 {
                    edges.push((dist(a, b - 1), a, b - 1));
                }
            }
        }
    }
    edges
}

/// Partitions the image into connected components. Every component holds at
/// least `min_component_size` pixels unless the whole image is smaller.
pub fn oversegment(image: &RgbImage, config: &RegionProposalConfig) -> Result<LabelMap> {
    check_image_size(image.width(), image.height())?;
    config.validate()?;
    let (w, h) = (image.width() as usize, image.height() as usize);
    let smoothed = gaussian_smooth(image, config.smoothing_sigma);
    let mut edges = pixel_edges(&smoothed, w, h);
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));

    let k = config.segmentation_scale;
    let mut sets = DisjointSet::new(w * h, k);
    for &(weight, a, b) in &edges {
        let ra = sets.find(a);
        let rb = sets.find(b);
        if ra != rb && weight <= sets.threshold[ra] && weight <= sets.threshold[rb] {
            let root = sets.join(ra, rb);
            sets.threshold[root] = weight + k / sets.size[root] as f64;
        }
    }
    for &(_, a, b) in &edges {
        let ra = sets.find(a);
        let rb = sets.find(b);
        if ra != rb
            && (sets.size[ra] < config.min_component_size
                || sets.size[rb] < config.min_component_size)
        {
            sets.join(ra, rb);
        }
    }

    let mut remap = vec![u32::MAX; w * h];
    let mut labels = Vec::with_capacity(w * h);
    let mut count = 0u32;
    for p in 0..w * h {
        let r = sets.find(p);
        if remap[r] == u32::MAX {
            remap[r] = count;
            count += 1;
        }
        labels.push(remap[r]);
    }
    Ok(LabelMap {
        width: w as u32,
        height: h as u32,
        labels,
        count: count as usize,
    })
}
