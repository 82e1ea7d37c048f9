//! Graph-based super-pixel segmentation (Felzenszwalb & Huttenlocher, 2004).
//!
//! Pixels are graph nodes; edges join 4- or 8-neighbours and weigh the RGB
//! distance between Gaussian-smoothed pixels on the 0..255 scale. Edges are
//! visited in non-decreasing weight order and two components merge unless the
//! edge weight exceeds the smaller of their internal differences plus
//! `k / size`. A final pass absorbs components smaller than `min_size`.
//!
//! Ties are broken by `(lower pixel index, higher pixel index)` so label maps
//! are reproducible bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{brightness, io_error, Image};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegParams {
    /// Standard deviation of the pre-smoothing Gaussian, in pixels.
    pub sigma: f64,
    /// Scale constant of the threshold `k / |c|`.
    pub k: f64,
    pub min_size: usize,
    /// 4 or 8.
    pub connectivity: u8,
}

impl Default for SegParams {
    fn default() -> Self {
        SegParams {
            sigma: 0.8,
            k: 300.0,
            min_size: 50,
            connectivity: 8,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", format!("must be >= 0, got {}", self.sigma)));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::param("k", format!("must be > 0, got {}", self.k)));
        }
        if self.min_size < 1 {
            return Err(Error::param("min_size", "must be >= 1"));
        }
        if self.connectivity != 4 && self.connectivity != 8 {
            return Err(Error::param(
                "connectivity",
                format!("must be 4 or 8, got {}", self.connectivity),
            ));
        }
        Ok(())
    }
}

/// Partition of the pixel grid into `region_count` labelled regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    region_sizes: Vec<usize>,
}

impl RegionMap {
    /// Validates that `labels` uses every id in `0..C` at least once.
    pub fn from_labels(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::mismatch(
                format!("{} labels", height * width),
                format!("{} labels", labels.len()),
            ));
        }
        let count = labels.iter().max().map_or(0, |m| *m as usize + 1);
        let mut region_sizes = vec![0usize; count];
        for &l in &labels {
            region_sizes[l as usize] += 1;
        }
        if let Some(empty) = region_sizes.iter().position(|s| *s == 0) {
            return Err(Error::InvalidImage(format!("label {empty} has no pixels")));
        }
        Ok(RegionMap {
            height,
            width,
            labels,
            region_sizes,
        })
    }

    /// The whole grid as one region.
    pub fn single(height: usize, width: usize) -> Self {
        RegionMap {
            height,
            width,
            labels: vec![0; height * width],
            region_sizes: vec![height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn region_count(&self) -> usize {
        self.region_sizes.len()
    }

    pub fn region_sizes(&self) -> &[usize] {
        &self.region_sizes
    }

    pub(crate) fn check_dims(&self, img: &Image) -> Result<()> {
        if img.height() != self.height || img.width() != self.width {
            return Err(Error::mismatch(
                format!("{}x{} image", self.width, self.height),
                format!("{}x{} image", img.width(), img.height()),
            ));
        }
        Ok(())
    }

    /// Writes labels as a 16-bit grayscale PNG.
    pub fn write_label_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.region_count() > usize::from(u16::MAX) + 1 {
            return Err(Error::TooManyLabels(self.region_count()));
        }
        let raw: Vec<u16> = self.labels.iter().map(|l| *l as u16).collect();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("label buffer size");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| io_error(path, e))
    }

    /// `label,size,mean_brightness` rows, one per region.
    pub fn summary_csv(&self, img: &Image) -> Result<String> {
        let means = region_mean_brightness(img, self)?;
        let mut out = String::from("label,size,mean_brightness\n");
        for (label, (size, mean)) in self.region_sizes.iter().zip(means).enumerate() {
            let _ = writeln!(out, "{label},{size},{mean:.6}");
        }
        Ok(out)
    }
}

struct DisjointSets {
    parent: Vec<usize>,
    rank: Vec<u8>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            rank: vec![0; n],
            size: vec![1; n],
            internal: vec![0.0; n],
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

    /// Joins two roots; the merged internal difference is `max(int_a, int_b, w)`.
    fn union(&mut self, a: usize, b: usize, w: f64) -> usize {
        let (hi, lo) = if self.rank[a] >= self.rank[b] { (a, b) } else { (b, a) };
        if self.rank[hi] == self.rank[lo] {
            self.rank[hi] += 1;
        }
        self.parent[lo] = hi;
        self.size[hi] += self.size[lo];
        self.internal[hi] = self.internal[hi].max(self.internal[lo]).max(w);
        hi
    }
}

#[derive(Clone, Copy, Debug)]
struct Edge {
    a: usize,
    b: usize,
    w: f64,
}

pub fn segment(img: &Image, params: &SegParams) -> Result<RegionMap> {
    params.validate()?;
    let (h, w) = (img.height(), img.width());
    let smoothed = smooth(img, params.sigma);
    let mut edges = build_edges(&smoothed, h, w, params.connectivity);
    edges.sort_by(|e, f| e.w.total_cmp(&f.w).then(e.a.cmp(&f.a)).then(e.b.cmp(&f.b)));

    let mut sets = DisjointSets::new(h * w);
    for e in &edges {
        let (ra, rb) = (sets.find(e.a), sets.find(e.b));
        if ra == rb {
            continue;
        }
        let tau_a = sets.internal[ra] + params.k / sets.size[ra] as f64;
        let tau_b = sets.internal[rb] + params.k / sets.size[rb] as f64;
        if e.w <= tau_a.min(tau_b) {
            sets.union(ra, rb, e.w);
        }
    }
    for e in &edges {
        let (ra, rb) = (sets.find(e.a), sets.find(e.b));
        if ra != rb && (sets.size[ra] < params.min_size || sets.size[rb] < params.min_size) {
            sets.union(ra, rb, e.w);
        }
    }

    let mut root_label = vec![u32::MAX; h * w];
    let mut labels = Vec::with_capacity(h * w);
    let mut region_sizes = Vec::new();
    for i in 0..h * w {
        let root = sets.find(i);
        if root_label[root] == u32::MAX {
            root_label[root] = region_sizes.len() as u32;
            region_sizes.push(0);
        }
        let label = root_label[root];
        region_sizes[label as usize] += 1;
        labels.push(label);
    }
    Ok(RegionMap {
        height: h,
        width: w,
        labels,
        region_sizes,
    })
}

/// Separable Gaussian blur on 255-scaled channels with edge clamping.
fn smooth(img: &Image, sigma: f64) -> Vec<f64> {
    let scaled: Vec<f64> = img.data().iter().map(|v| v * 255.0).collect();
    if sigma <= 0.0 {
        return scaled;
    }
    let radius = (4.0 * sigma).ceil() as usize;
    let mut mask: Vec<f64> = (0..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let norm = 2.0 * mask.iter().sum::<f64>() - mask[0];
    mask.iter_mut().for_each(|m| *m /= norm);

    let (h, w) = (img.height(), img.width());
    let blur = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let at = |yy: usize, xx: usize| src[(yy * w + xx) * 3 + c];
                    let mut acc = mask[0] * at(y, x);
                    for (i, m) in mask.iter().enumerate().skip(1) {
                        acc += m * if along_x {
                            at(y, x.saturating_sub(i)) + at(y, (x + i).min(w - 1))
                        } else {
                            at(y.saturating_sub(i), x) + at((y + i).min(h - 1), x)
                        };
                    }
                    out[(y * w + x) * 3 + c] = acc;
                }
            }
        }
        out
    };
    let tmp = blur(&scaled, true);
    blur(&tmp, false)
}

fn build_edges(px: &[f64], h: usize, w: usize, connectivity: u8) -> Vec<Edge> {
    let dist = |i: usize, j: usize| {
        let (p, q) = (&px[i * 3..i * 3 + 3], &px[j * 3..j * 3 + 3]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    let mut edges = Vec::with_capacity(h * w * if connectivity == 8 { 4 } else { 2 });
    let mut push = |i: usize, j: usize| {
        edges.push(Edge {
            a: i.min(j),
            b: i.max(j),
            w: dist(i, j),
        })
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                push(i, i + 1);
            }
            if y + 1 < h {
                push(i, i + w);
            }
            if connectivity == 8 && x + 1 < w {
                if y + 1 < h {
                    push(i, i + w + 1);
                }
                if y > 0 {
                    push(i, i - w + 1);
                }
            }
        }
    }
    edges
}

/// Mean brightness of every region, indexed by label.
pub fn region_mean_brightness(img: &Image, regions: &RegionMap) -> Result<Vec<f64>> {
    regions.check_dims(img)?;
    // Offsets from each region's first value keep constant regions exact.
    let mut first: Vec<Option<f64>> = vec![None; regions.region_count()];
    let mut offsets = vec![0.0; regions.region_count()];
    for (b, l) in brightness(img).data.iter().zip(&regions.labels) {
        let l = *l as usize;
        let base = *first[l].get_or_insert(*b);
        offsets[l] += b - base;
    }
    Ok(first
        .into_iter()
        .zip(offsets)
        .zip(&regions.region_sizes)
        .map(|((f, o), n)| f.unwrap_or(0.0) + o / *n as f64)
        .collect())
}
