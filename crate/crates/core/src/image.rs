//! RGB raster type, PNG/JPEG I/O, brightness and histograms.
//!
//! Every value stored in an [`Image`] lies in `[0, 1]`. Operations that can
//! leave that range clamp on construction, so downstream code never has to
//! re-check.

use std::fmt::Write as _;
use std::path::Path;

use image::{ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};

/// Default cap on either image side accepted by [`load_image`].
pub const DEFAULT_MAX_SIDE: usize = 4096;

pub const HISTOGRAM_BINS: usize = 256;

/// Row-major `H x W x 3` RGB raster with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::mismatch(
                format!("{} values", height * width * 3),
                format!("{} values", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("value {bad} outside [0, 1]")));
        }
        Ok(Image { height, width, data })
    }

    /// Builds an image from a per-pixel closure; results are clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x).iter().map(|v| clamp_unit(*v)));
            }
        }
        Image { height, width, data }
    }

    pub fn uniform(height: usize, width: usize, value: f64) -> Self {
        Self::from_fn(height, width, |_, _| [value; 3])
    }

    /// Caller guarantees the length and range invariants.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * 3);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Image { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Interleaved RGB values, row-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Applies `f` to every channel value, clamping the result to `[0, 1]`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| clamp_unit(f(*v))).collect(),
        }
    }

    /// Spatial mean of channel `c` (0 = R, 1 = G, 2 = B).
    pub fn channel_mean(&self, c: usize) -> f64 {
        self.data.iter().skip(c).step_by(3).sum::<f64>() / self.pixel_count() as f64
    }

    pub fn mean_brightness(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

fn clamp_unit(v: f64) -> f64 {
    debug_assert!(!v.is_nan(), "NaN pixel value");
    v.clamp(0.0, 1.0)
}

/// Single-channel `H x W` field of scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel brightness `(R + G + B) / 3`.
pub fn brightness(img: &Image) -> Plane {
    Plane {
        height: img.height,
        width: img.width,
        data: img.data.chunks_exact(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect(),
    }
}

/// 256-bin brightness histogram. Bin `k` covers `[k/256, (k+1)/256)`; the
/// last bin is closed at 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    pub bins: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    /// Fraction of pixels whose bin lies entirely below `threshold`.
    pub fn mass_below(&self, threshold: f64) -> f64 {
        let edge = ((threshold * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS);
        self.bins[..edge].iter().sum::<u64>() as f64 / self.total as f64
    }

    /// Fraction of pixels whose bin lies entirely at or above `threshold`.
    pub fn mass_above(&self, threshold: f64) -> f64 {
        let edge = ((threshold * HISTOGRAM_BINS as f64).ceil() as usize).min(HISTOGRAM_BINS);
        self.bins[edge..].iter().sum::<u64>() as f64 / self.total as f64
    }

    /// `bin,count` CSV with a header row followed by 256 data rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,count\n");
        for (k, count) in self.bins.iter().enumerate() {
            let _ = writeln!(out, "{k},{count}");
        }
        out
    }
}

pub fn histogram(img: &Image) -> Histogram {
    let mut bins = vec![0u64; HISTOGRAM_BINS];
    for b in brightness(img).data {
        bins[histogram_bin(b)] += 1;
    }
    Histogram {
        bins,
        total: img.pixel_count() as u64,
    }
}

fn histogram_bin(b: f64) -> usize {
    ((b * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    load_image_with_limit(path, DEFAULT_MAX_SIDE)
}

/// Loads an 8-bit PNG or JPEG, mapping each byte `u` to `u / 255`.
pub fn load_image_with_limit(path: impl AsRef<Path>, max_side: usize) -> Result<Image> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut header = [0u8; 16];
    let read = std::fs::File::open(path)
        .and_then(|mut f| std::io::Read::read(&mut f, &mut header))
        .map_err(io)?;
    let format = match image::guess_format(&header[..read]) {
        Ok(f @ (ImageFormat::Png | ImageFormat::Jpeg)) => f,
        _ => return Err(Error::UnsupportedFormat(path.to_path_buf())),
    };
    let mut reader = ImageReader::open(path).map_err(io)?;
    reader.set_format(format);
    let decoded = reader.decode().map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    if width > max_side || height > max_side {
        return Err(Error::ImageTooLarge {
            width,
            height,
            max: max_side,
        });
    }
    let rgb = decoded.into_rgb8();
    let data = rgb.as_raw().iter().map(|&u| f64::from(u) / 255.0).collect();
    Image::new(height, width, data)
}

/// Quantizes a unit value to a byte, rounding half away from zero.
pub fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes `img` as an 8-bit RGB PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|v| to_byte(*v)).collect();
    let buf =
        RgbImage::from_raw(img.width as u32, img.height as u32, bytes).expect("buffer length matches image dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| io_error(path, e))
}

pub(crate) fn io_error(path: &Path, e: image::ImageError) -> Error {
    let source = match e {
        image::ImageError::IoError(io) => io,
        other => std::io::Error::other(other.to_string()),
    };
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pixel_png(dir: &Path, rgb: [u8; 3]) -> std::path::PathBuf {
        let path = dir.join("px.png");
        RgbImage::from_raw(1, 1, rgb.to_vec()).unwrap().save(&path).unwrap();
        path
    }

    #[test]
    fn load_maps_bytes_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let white = load_image(one_pixel_png(dir.path(), [255, 255, 255])).unwrap();
        assert_eq!(white.data(), &[1.0, 1.0, 1.0]);
        let black = load_image(one_pixel_png(dir.path(), [0, 0, 0])).unwrap();
        assert_eq!(black.data(), &[0.0, 0.0, 0.0]);
        let mixed = load_image(one_pixel_png(dir.path(), [128, 64, 32])).unwrap();
        for (got, want) in mixed.data().iter().zip([0.50196, 0.25098, 0.12549]) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn load_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = load_image(dir.path().join("nope.png")).unwrap_err();
        assert!(matches!(missing, Error::NotFound(_)));

        let text = dir.path().join("notes.png");
        std::fs::write(&text, b"this is not an image").unwrap();
        assert!(matches!(load_image(&text).unwrap_err(), Error::UnsupportedFormat(_)));

        let good = one_pixel_png(dir.path(), [1, 2, 3]);
        let bytes = std::fs::read(&good).unwrap();
        let truncated = dir.path().join("cut.png");
        std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&truncated).unwrap_err(), Error::Corrupt { .. }));
    }

    #[test]
    fn oversized_images_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.png");
        save_image(&Image::uniform(2, 9, 0.5), &path).unwrap();
        assert!(matches!(
            load_image_with_limit(&path, 8).unwrap_err(),
            Error::ImageTooLarge { width: 9, .. }
        ));
    }

    #[test]
    fn save_rounds_half_away_from_zero() {
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(0.0), 0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.png");
        save_image(&Image::uniform(1, 1, 0.5), &path).unwrap();
        let back = image::open(&path).unwrap().into_rgb8();
        assert_eq!(back.as_raw(), &vec![128, 128, 128]);
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let err = save_image(&Image::uniform(1, 1, 0.5), "/nonexistent-dir/x.png").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn brightness_is_channel_mean() {
        let img = Image::from_fn(1, 3, |_, x| match x {
            0 => [0.3, 0.3, 0.3],
            1 => [1.0, 0.0, 0.0],
            _ => [0.0, 0.0, 0.0],
        });
        let b = brightness(&img);
        assert!((b.data[0] - 0.3).abs() < 1e-15);
        assert!((b.data[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.data[2], 0.0);
    }

    #[test]
    fn histogram_extremes() {
        let black = histogram(&Image::uniform(2, 5, 0.0));
        assert_eq!(black.bins[0], 10);
        let white = histogram(&Image::uniform(2, 5, 1.0));
        assert_eq!(white.bins[255], 10);
        let split = histogram(&Image::from_fn(2, 5, |y, _| [y as f64; 3]));
        assert_eq!((split.bins[0], split.bins[255], split.total), (5, 5, 10));
    }

    #[test]
    fn histogram_csv_has_256_rows() {
        let csv = histogram(&Image::uniform(3, 3, 0.25)).to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 257);
        assert_eq!(lines[0], "bin,count");
        assert_eq!(lines[65], "64,9");
    }

    #[test]
    fn new_validates_range_and_length() {
        assert!(Image::new(1, 1, vec![0.0, 1.2, 0.0]).is_err());
        assert!(Image::new(1, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(0, 1, vec![]).is_err());
    }
}
