//! Builds the loss context for one low-light image and runs the optimizer.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::boc::{generate_pool_with, sample_contrastive_pair, Polarity};
use crate::config::{Config, FeatureBank};
use crate::enhancer::{optimize, Enhancement};
use crate::error::{Error, Result};
use crate::features::{extract_features, load_external_features, FeaturePyramid};
use crate::image::{load_image, Image};
use crate::losses::{LossContext, SampleStats};
use crate::segmentation::segment;

/// Mean brightness the segmentation view and the pseudo-positive are tone
/// mapped to.
const TARGET_BRIGHTNESS: f64 = 0.5;

/// Normal-light material the contrastive terms draw from.
#[derive(Clone, Debug)]
pub enum Exemplars {
    /// Positive images; negatives are synthesized from them with the bag of
    /// curves. An empty list falls back to [`pseudo_positive`].
    Images(Vec<Image>),
    /// Pre-extracted pyramids for positives and both negative polarities.
    External {
        positive: Vec<FeaturePyramid>,
        under: Vec<FeaturePyramid>,
        over: Vec<FeaturePyramid>,
    },
}

impl Exemplars {
    /// Resolves the configured feature bank. `positives` is only consulted for
    /// the built-in bank.
    pub fn load(cfg: &Config, positives: Option<&Path>) -> Result<Self> {
        match &cfg.feature_bank {
            FeatureBank::Builtin => {
                let images = match positives {
                    Some(dir) => load_image_dir(dir)?.into_iter().map(|(_, img)| img).collect(),
                    None => Vec::new(),
                };
                Ok(Exemplars::Images(images))
            }
            FeatureBank::External(dir) => {
                let load = |sub: &str| -> Result<Vec<FeaturePyramid>> {
                    let files = list_files(&dir.join(sub), &["pief"])?;
                    if files.is_empty() {
                        return Err(Error::MalformedFeatures(format!(
                            "no .pief files in {}",
                            dir.join(sub).display()
                        )));
                    }
                    files.iter().map(load_external_features).collect()
                };
                Ok(Exemplars::External {
                    positive: load("positive")?,
                    under: load("negative_under")?,
                    over: load("negative_over")?,
                })
            }
        }
    }
}

/// Sorted PNG/JPEG files directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    list_files(dir, &["png", "jpg", "jpeg"])
}

fn list_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let io = |source| Error::Io {
        path: dir.to_path_buf(),
        source,
    };
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let matches = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| extensions.iter().any(|x| e.eq_ignore_ascii_case(x)));
        if matches && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_image_dir(dir: &Path) -> Result<Vec<(PathBuf, Image)>> {
    list_images(dir)?
        .into_iter()
        .map(|p| load_image(&p).map(|img| (p, img)))
        .collect()
}

/// Power-law tone map `v^g` with `g` chosen so the mean brightness is about
/// `target`. Pure black or white images are returned unchanged.
pub fn tone_to_mean(img: &Image, target: f64) -> Image {
    let mean_at = |g: f64| img.map_values(|v| v.powf(g)).mean_brightness();
    let (mut lo, mut hi) = (1.0 / 64.0, 64.0);
    if mean_at(lo) <= target || mean_at(hi) >= target {
        return img.clone();
    }
    // The mean is decreasing in g; bisect in log space.
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        if mean_at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    img.map_values(|v| v.powf((lo * hi).sqrt()))
}

/// Stand-in positive when no normal-light exemplars are supplied: the input
/// itself, tone mapped to mid brightness.
pub fn pseudo_positive(low: &Image) -> Image {
    tone_to_mean(low, TARGET_BRIGHTNESS)
}

/// Image the region map is computed on. Segmenting the raw dark input would
/// see compressed colour differences and return a few huge regions.
pub fn segmentation_view(low: &Image) -> Image {
    tone_to_mean(low, TARGET_BRIGHTNESS)
}

/// Samples one positive and one negative of each polarity (1:1 rate) and
/// assembles the fixed context the optimizer minimizes against.
pub fn build_context(low: &Image, exemplars: &Exemplars, cfg: &Config, seed: u64) -> Result<LossContext> {
    let weights = cfg.loss_weights;
    let mut ctx = LossContext::new(weights);
    let mut rng = SplitMix64::seed_from_u64(seed);

    if weights.w_c > 0.0 {
        match exemplars {
            Exemplars::Images(images) => {
                let fallback;
                let positive = if images.is_empty() {
                    fallback = pseudo_positive(low);
                    &fallback
                } else {
                    &images[rng.gen_range(0..images.len())]
                };
                let pool = generate_pool_with(positive, &cfg.boc)?;
                let pair = sample_contrastive_pair(&pool, rng.gen())?;
                ctx = ctx
                    .with_positive(SampleStats::from_image(positive)?)
                    .with_negative(Polarity::Under, SampleStats::from_image(&pair.under.image)?)
                    .with_negative(Polarity::Over, SampleStats::from_image(&pair.over.image)?);
            }
            Exemplars::External { positive, under, over } => {
                let mut pick = |set: &[FeaturePyramid]| SampleStats::from_pyramid(&set[rng.gen_range(0..set.len())]);
                ctx = ctx
                    .with_positive(pick(positive))
                    .with_negative(Polarity::Under, pick(under))
                    .with_negative(Polarity::Over, pick(over));
            }
        }
    }
    if weights.w_rc > 0.0 {
        ctx = ctx.with_regions(segment(&segmentation_view(low), &cfg.segmentation)?);
    }
    if weights.w_fp > 0.0 {
        ctx = ctx.with_input(extract_features(low)?);
    }
    Ok(ctx)
}

pub fn enhance(low: &Image, exemplars: &Exemplars, cfg: &Config, seed: u64) -> Result<Enhancement> {
    let ctx = build_context(low, exemplars, cfg, seed)?;
    optimize(low, &ctx, &cfg.optimizer)
}
