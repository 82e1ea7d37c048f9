//! Latent features and their first- and second-order statistics.
//!
//! The built-in extractor is a fixed linear filter bank: at each of four
//! scales (2x2 average pooling between scales) the channels R, G, B and their
//! mean are cross-correlated with identity, Sobel-x, Sobel-y and Laplacian
//! 3x3 kernels under reflect padding, giving 16 channels per layer. Because
//! the bank is linear, [`backward`] is its exact adjoint.
//!
//! Pyramids exported by other extractors can be loaded from the `PIEF` raw
//! tensor format.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

pub const LAYERS: usize = 4;
pub const BASE_CHANNELS: usize = 4;
pub const KERNELS: usize = 4;
pub const CHANNELS_PER_LAYER: usize = BASE_CHANNELS * KERNELS;

/// Smallest image side the bank accepts: the coarsest layer must keep one pixel.
pub const MIN_SIDE: usize = 1 << (LAYERS - 1);

/// A 3x3 kernel written as weighted tap differences `w * (v[a] - v[b])`, so
/// derivative kernels give exactly 0 on constant input. Offsets are `(dy, dx)`.
type Stencil = &'static [(f64, (isize, isize), Option<(isize, isize)>)];

/// Identity, Sobel-x, Sobel-y and Laplacian, applied as cross-correlations.
const KERNEL_BANK: [Stencil; KERNELS] = [
    &[(1.0, (0, 0), None)],
    &[
        (1.0, (-1, 1), Some((-1, -1))),
        (2.0, (0, 1), Some((0, -1))),
        (1.0, (1, 1), Some((1, -1))),
    ],
    &[
        (1.0, (1, -1), Some((-1, -1))),
        (2.0, (1, 0), Some((-1, 0))),
        (1.0, (1, 1), Some((-1, 1))),
    ],
    &[
        (1.0, (-1, 0), Some((0, 0))),
        (1.0, (0, -1), Some((0, 0))),
        (1.0, (0, 1), Some((0, 0))),
        (1.0, (1, 0), Some((0, 0))),
    ],
];

/// `C x H x W` feature block, channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLayer {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureLayer {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureLayer {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    fn same_shape(&self, other: &FeatureLayer) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub layers: Vec<FeatureLayer>,
}

impl FeaturePyramid {
    pub fn new(layers: Vec<FeatureLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::MalformedFeatures("pyramid has no layers".into()));
        }
        for l in &layers {
            if l.channels == 0 || l.height == 0 || l.width == 0 {
                return Err(Error::MalformedFeatures("layer with a zero dimension".into()));
            }
            if l.data.len() != l.channels * l.height * l.width {
                return Err(Error::mismatch(l.channels * l.height * l.width, l.data.len()));
            }
        }
        Ok(FeaturePyramid { layers })
    }

    pub fn shape(&self) -> Vec<(usize, usize, usize)> {
        self.layers.iter().map(|l| (l.channels, l.height, l.width)).collect()
    }

    pub fn check_same_shape(&self, other: &FeaturePyramid) -> Result<()> {
        if self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
        {
            Ok(())
        } else {
            Err(Error::mismatch(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ))
        }
    }
}

/// One channel-by-channel Gram matrix per layer, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GramSet {
    pub grams: Vec<GramMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub size: usize,
    pub data: Vec<f64>,
}

impl GramMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }
}

/// Per-channel spatial means, concatenated layer by layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationVector(pub Vec<f64>);

/// A plane of `h x w` values.
struct Plane<'a> {
    h: usize,
    w: usize,
    v: &'a [f64],
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// Levels smaller than this are not worth splitting across threads.
const PARALLEL_MIN_PIXELS: usize = 4096;

/// Reflected row offsets and column indices for taps at -1, 0, +1.
struct Taps {
    rows: Vec<[usize; 3]>,
    cols: Vec<[usize; 3]>,
}

impl Taps {
    fn new(h: usize, w: usize) -> Self {
        let offsets = |n: usize, scale: usize| -> Vec<[usize; 3]> {
            (0..n as isize)
                .map(|i| std::array::from_fn(|d| reflect(i + d as isize - 1, n) * scale))
                .collect()
        };
        Taps {
            rows: offsets(h, w),
            cols: offsets(w, 1),
        }
    }

    fn index(&self, y: usize, x: usize, (dy, dx): (isize, isize)) -> usize {
        self.rows[y][(dy + 1) as usize] + self.cols[x][(dx + 1) as usize]
    }
}

fn correlate(src: Plane<'_>, stencil: Stencil, taps: &Taps, out: &mut [f64]) {
    let (h, w) = (src.h, src.w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(k, a, b) in stencil {
                let mut d = src.v[taps.index(y, x, a)];
                if let Some(b) = b {
                    d -= src.v[taps.index(y, x, b)];
                }
                acc += k * d;
            }
            out[y * w + x] = acc;
        }
    }
}

/// Adjoint of [`correlate`]: scatters `grad` back through the reflected taps.
fn correlate_adjoint(grad: Plane<'_>, stencil: Stencil, taps: &Taps, acc: &mut [f64]) {
    let (h, w) = (grad.h, grad.w);
    for y in 0..h {
        for x in 0..w {
            let g = grad.v[y * w + x];
            if g == 0.0 {
                continue;
            }
            for &(k, a, b) in stencil {
                acc[taps.index(y, x, a)] += k * g;
                if let Some(b) = b {
                    acc[taps.index(y, x, b)] -= k * g;
                }
            }
        }
    }
}

/// Three RGB planes at one scale.
#[derive(Clone)]
struct RgbPlanes {
    h: usize,
    w: usize,
    planes: [Vec<f64>; 3],
}

impl RgbPlanes {
    fn from_image(img: &Image) -> Self {
        let d = img.data();
        let planes = std::array::from_fn(|c| d.iter().skip(c).step_by(3).copied().collect());
        RgbPlanes {
            h: img.height(),
            w: img.width(),
            planes,
        }
    }

    fn zeros(h: usize, w: usize) -> Self {
        RgbPlanes {
            h,
            w,
            planes: std::array::from_fn(|_| vec![0.0; h * w]),
        }
    }

    /// 2x2 block averages; a trailing odd row or column is dropped.
    fn downsample(&self) -> Self {
        let (h, w) = (self.h / 2, self.w / 2);
        let planes = std::array::from_fn(|c| {
            let p = &self.planes[c];
            let mut out = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let i = 2 * y * self.w + 2 * x;
                    out.push(0.25 * (p[i] + p[i + 1] + p[i + self.w] + p[i + self.w + 1]));
                }
            }
            out
        });
        RgbPlanes { h, w, planes }
    }

    /// Adds the adjoint of [`Self::downsample`] applied to `coarse` into `self`.
    fn accumulate_upsampled(&mut self, coarse: &RgbPlanes) {
        for c in 0..3 {
            for y in 0..coarse.h {
                for x in 0..coarse.w {
                    let g = 0.25 * coarse.planes[c][y * coarse.w + x];
                    let i = 2 * y * self.w + 2 * x;
                    let p = &mut self.planes[c];
                    p[i] += g;
                    p[i + 1] += g;
                    p[i + self.w] += g;
                    p[i + self.w + 1] += g;
                }
            }
        }
    }
}

fn check_extractable(height: usize, width: usize) -> Result<()> {
    if height.min(width) < MIN_SIDE {
        return Err(Error::ImageTooSmall {
            width,
            height,
            min: MIN_SIDE,
        });
    }
    Ok(())
}

pub fn extract_features(img: &Image) -> Result<FeaturePyramid> {
    check_extractable(img.height(), img.width())?;
    let mut level = RgbPlanes::from_image(img);
    let mut layers = Vec::with_capacity(LAYERS);
    for l in 0..LAYERS {
        if l > 0 {
            level = level.downsample();
        }
        let n = level.h * level.w;
        let mean: Vec<f64> = (0..n)
            .map(|i| (level.planes[0][i] + level.planes[1][i] + level.planes[2][i]) / 3.0)
            .collect();
        let mut layer = FeatureLayer::zeros(CHANNELS_PER_LAYER, level.h, level.w);
        let bases = [
            &level.planes[0][..],
            &level.planes[1][..],
            &level.planes[2][..],
            &mean[..],
        ];
        let taps = Taps::new(level.h, level.w);
        let run = |(c, out): (usize, &mut [f64])| {
            let src = Plane {
                h: level.h,
                w: level.w,
                v: bases[c / KERNELS],
            };
            correlate(src, KERNEL_BANK[c % KERNELS], &taps, out);
        };
        if n >= PARALLEL_MIN_PIXELS {
            layer.data.par_chunks_mut(n).enumerate().for_each(run);
        } else {
            layer.data.chunks_mut(n).enumerate().for_each(run);
        }
        layers.push(layer);
    }
    Ok(FeaturePyramid { layers })
}

/// Pulls per-layer feature gradients back to an interleaved RGB image gradient
/// for an `height x width` input.
pub fn backward(height: usize, width: usize, grads: &[FeatureLayer]) -> Result<Vec<f64>> {
    check_extractable(height, width)?;
    let mut dims = vec![(height, width)];
    for _ in 1..LAYERS {
        let (h, w) = *dims.last().unwrap();
        dims.push((h / 2, w / 2));
    }
    if grads.len() != LAYERS
        || grads
            .iter()
            .zip(&dims)
            .any(|(g, (h, w))| (g.channels, g.height, g.width) != (CHANNELS_PER_LAYER, *h, *w))
    {
        return Err(Error::mismatch(
            format!("bank gradients for {width}x{height}"),
            format!(
                "{:?}",
                grads
                    .iter()
                    .map(|g| (g.channels, g.height, g.width))
                    .collect::<Vec<_>>()
            ),
        ));
    }

    let mut acc: Option<RgbPlanes> = None;
    for (l, g) in grads.iter().enumerate().rev() {
        let (h, w) = dims[l];
        let n = h * w;
        let mut level = RgbPlanes::zeros(h, w);
        if let Some(coarse) = &acc {
            level.accumulate_upsampled(coarse);
        }
        let taps = Taps::new(h, w);
        let pull = |b: usize| {
            let mut base_grad = vec![0.0; n];
            for (k, kernel) in KERNEL_BANK.iter().enumerate() {
                let c = b * KERNELS + k;
                correlate_adjoint(Plane { h, w, v: g.channel(c) }, kernel, &taps, &mut base_grad);
            }
            base_grad
        };
        let base_grads: Vec<Vec<f64>> = if n >= PARALLEL_MIN_PIXELS {
            (0..BASE_CHANNELS).into_par_iter().map(pull).collect()
        } else {
            (0..BASE_CHANNELS).map(pull).collect()
        };
        for (b, base_grad) in base_grads.iter().enumerate() {
            if b < 3 {
                level.planes[b].iter_mut().zip(base_grad).for_each(|(p, d)| *p += d);
            } else {
                for plane in level.planes.iter_mut() {
                    plane.iter_mut().zip(base_grad).for_each(|(p, d)| *p += d / 3.0);
                }
            }
        }
        acc = Some(level);
    }

    let finest = acc.expect("at least one layer");
    let mut out = Vec::with_capacity(height * width * 3);
    for i in 0..height * width {
        out.extend(finest.planes.iter().map(|p| p[i]));
    }
    Ok(out)
}

/// Pixels per cache block in the channel-by-channel loops.
pub(crate) const BLOCK: usize = 512;

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            lanes[k] += x[k] * y[k];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Per-layer `G_ij = <f_i, f_j> / (C H W)`.
pub fn gram(pyr: &FeaturePyramid) -> GramSet {
    GramSet {
        grams: pyr.layers.iter().map(layer_gram).collect(),
    }
}

fn layer_gram(layer: &FeatureLayer) -> GramMatrix {
    let c = layer.channels;
    let plane = layer.plane_len();
    let mut data = vec![0.0; c * c];
    for start in (0..plane).step_by(BLOCK) {
        let end = (start + BLOCK).min(plane);
        for i in 0..c {
            let fi = &layer.channel(i)[start..end];
            for j in i..c {
                let fj = &layer.channel(j)[start..end];
                data[i * c + j] += dot4(fi, fj);
            }
        }
    }
    let norm = (c * plane) as f64;
    for i in 0..c {
        for j in i..c {
            let v = data[i * c + j] / norm;
            data[i * c + j] = v;
            data[j * c + i] = v;
        }
    }
    GramMatrix { size: c, data }
}

pub fn expectation(pyr: &FeaturePyramid) -> ExpectationVector {
    ExpectationVector(
        pyr.layers
            .iter()
            .flat_map(|layer| {
                let n = layer.plane_len() as f64;
                (0..layer.channels).map(move |c| layer.channel(c).iter().sum::<f64>() / n)
            })
            .collect(),
    )
}

const MAGIC: &[u8; 4] = b"PIEF";
const FORMAT_VERSION: u32 = 1;

pub fn load_external_features(path: impl AsRef<Path>) -> Result<FeaturePyramid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io {
            path: path.to_path_buf(),
            source,
        },
    })?;
    decode_features(&bytes)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeaturePyramid> {
    let truncated = |_| Error::MalformedFeatures("truncated file".into());
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::MalformedFeatures("bad magic bytes".into()));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != FORMAT_VERSION {
        return Err(Error::MalformedFeatures(format!("unsupported version {version}")));
    }
    let layer_count = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    if layer_count == 0 {
        return Err(Error::MalformedFeatures("zero layers".into()));
    }
    let mut dims = Vec::new();
    for _ in 0..layer_count {
        let c = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let h = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let w = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        dims.push((c, h, w));
    }
    let expected: usize = dims.iter().map(|(c, h, w)| c * h * w).sum();
    let remaining = bytes.len() - cur.position() as usize;
    if remaining != expected * 4 {
        return Err(Error::MalformedFeatures(format!(
            "payload holds {remaining} bytes, header declares {}",
            expected * 4
        )));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for (c, h, w) in dims {
        let mut data = vec![0f32; c * h * w];
        cur.read_f32_into::<LittleEndian>(&mut data).map_err(truncated)?;
        layers.push(FeatureLayer {
            channels: c,
            height: h,
            width: w,
            data: data.into_iter().map(f64::from).collect(),
        });
    }
    FeaturePyramid::new(layers)
}

/// Serializes to the `PIEF` format; values are stored as `f32`.
pub fn encode_features(pyr: &FeaturePyramid) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let mut put = |v: u32| out.write_u32::<LittleEndian>(v).expect("vec write");
    put(FORMAT_VERSION);
    put(pyr.layers.len() as u32);
    for l in &pyr.layers {
        put(l.channels as u32);
        put(l.height as u32);
        put(l.width as u32);
    }
    for l in &pyr.layers {
        for v in &l.data {
            out.write_f32::<LittleEndian>(*v as f32).expect("vec write");
        }
    }
    out
}

pub fn save_external_features(pyr: &FeaturePyramid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(pyr)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
