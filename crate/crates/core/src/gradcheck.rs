//! Analytic-versus-finite-difference check of [`loss_gradient`].
//!
//! A random instance (low-light image, curve maps, contrastive samples,
//! regions, input features) is built from a seed. Every coefficient's
//! analytic derivative is compared with a central difference. Coordinates
//! whose stencil straddles a kink of the `|dA|` smoothness penalty are
//! skipped, since finite differences are meaningless there.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::Serialize;

use crate::boc::{generate_negative_pool, sample_contrastive_pair};
use crate::enhancer::{apply_curves, loss_at, loss_gradient, CurveParamMaps, DEFAULT_CURVE_ITERATIONS};
use crate::error::{Error, Result};
use crate::features::{extract_features, gram};
use crate::image::Image;
use crate::losses::{gram_distance, LossContext, LossWeights, SampleStats};
use crate::segmentation::{segment, SegParams};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const PASS_THRESHOLD: f64 = 1e-4;
pub const MIN_SIZE: usize = 8;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    /// Offset added to one analytic derivative; exercises the failure path.
    #[doc(hidden)]
    pub perturb: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: DEFAULT_STEP,
            perturb: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub size: usize,
    pub checked: usize,
    pub skipped: usize,
    /// `max |analytic - numeric|` over checked coordinates.
    pub max_abs_error: f64,
    /// `max_abs_error` divided by the largest derivative magnitude.
    pub max_rel_error: f64,
    /// Smallest `|d_pos - d_neg + alpha|` over triplet pairs.
    pub min_triplet_margin: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < PASS_THRESHOLD
    }
}

/// A reproducible gradient-check instance.
pub struct Instance {
    pub low: Image,
    pub params: CurveParamMaps,
    pub ctx: LossContext,
}

pub fn random_instance(seed: u64, size: usize) -> Result<Instance> {
    if size < MIN_SIZE {
        return Err(Error::param("size", format!("must be >= {MIN_SIZE}, got {size}")));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let low = Image::from_fn(size, size, |_, _| {
        let base = rng.gen_range(0.03..0.45);
        [base, base * rng.gen_range(0.8..1.2), base * rng.gen_range(0.8..1.2)]
    });
    let positive = Image::from_fn(size, size, |y, x| {
        let t = (y + x) as f64 / (2 * size) as f64;
        let v = 0.3 + 0.4 * t + rng.gen_range(-0.1..0.1);
        [v, v * rng.gen_range(0.9..1.1), v * rng.gen_range(0.9..1.1)]
    });
    let coeffs: Vec<f64> = (0..DEFAULT_CURVE_ITERATIONS * 3 * size * size)
        .map(|_| rng.gen_range(-0.9..0.9))
        .collect();
    let params = CurveParamMaps::from_data(DEFAULT_CURVE_ITERATIONS, size, size, coeffs)?;

    let pool = generate_negative_pool(&positive);
    let pair = sample_contrastive_pair(&pool, seed)?;
    let regions = segment(
        &low,
        &SegParams {
            min_size: 4,
            ..SegParams::default()
        },
    )?;
    let ctx = LossContext::new(LossWeights::default())
        .with_positive(SampleStats::from_image(&positive)?)
        .with_negative(pair.under.spec.polarity(), SampleStats::from_image(&pair.under.image)?)
        .with_negative(pair.over.spec.polarity(), SampleStats::from_image(&pair.over.image)?)
        .with_regions(regions)
        .with_input(extract_features(&low)?);
    Ok(Instance { low, params, ctx })
}

pub fn gradcheck(seed: u64, size: usize) -> Result<GradcheckReport> {
    gradcheck_with(seed, size, GradcheckOptions::default())
}

pub fn gradcheck_with(seed: u64, size: usize, opts: GradcheckOptions) -> Result<GradcheckReport> {
    let inst = random_instance(seed, size)?;
    let mut report = check_instance(&inst, opts)?;
    report.seed = seed;
    report.size = size;
    Ok(report)
}

pub fn check_instance(inst: &Instance, opts: GradcheckOptions) -> Result<GradcheckReport> {
    let h = opts.step;
    let mut analytic = loss_gradient(&inst.low, &inst.params, &inst.ctx)?.gradient;
    if let Some(offset) = opts.perturb {
        analytic[0] += offset;
    }

    let params = &inst.params;
    let numeric: Vec<Option<f64>> = (0..params.len())
        .into_par_iter()
        .map(|i| -> Result<Option<f64>> {
            if near_smoothness_kink(params, i, 2.0 * h) {
                return Ok(None);
            }
            let mut plus = params.clone();
            plus.set_flat(i, params.values()[i] + h);
            let mut minus = params.clone();
            minus.set_flat(i, params.values()[i] - h);
            let lp = loss_at(&inst.low, &plus, &inst.ctx)?.total;
            let lm = loss_at(&inst.low, &minus, &inst.ctx)?.total;
            Ok(Some((lp - lm) / (2.0 * h)))
        })
        .collect::<Result<_>>()?;

    let (mut max_abs, mut scale, mut checked, mut skipped) = (0.0f64, 0.0f64, 0, 0);
    for (a, n) in analytic.iter().zip(&numeric) {
        match n {
            Some(n) => {
                checked += 1;
                max_abs = max_abs.max((a - n).abs());
                scale = scale.max(a.abs()).max(n.abs());
            }
            None => skipped += 1,
        }
    }
    Ok(GradcheckReport {
        seed: 0,
        size: inst.low.width(),
        checked,
        skipped,
        max_abs_error: max_abs,
        max_rel_error: if scale > 0.0 { max_abs / scale } else { max_abs },
        min_triplet_margin: triplet_margin(inst)?,
    })
}

/// True when a forward difference touching coefficient `i` is within `reach`
/// of zero, or the coefficient is within `reach` of the clamp bounds.
fn near_smoothness_kink(params: &CurveParamMaps, i: usize, reach: f64) -> bool {
    let (h, w) = (params.height(), params.width());
    let plane = h * w;
    let (map, pix) = (i / plane, i % plane);
    let (y, x) = (pix / w, pix % w);
    let v = params.values();
    let a = v[i];
    if 1.0 - a.abs() < reach {
        return true;
    }
    let at = |yy: usize, xx: usize| v[map * plane + yy * w + xx];
    let mut neighbours = Vec::with_capacity(4);
    if x > 0 {
        neighbours.push(at(y, x - 1));
    }
    if x + 1 < w {
        neighbours.push(at(y, x + 1));
    }
    if y > 0 {
        neighbours.push(at(y - 1, x));
    }
    if y + 1 < h {
        neighbours.push(at(y + 1, x));
    }
    neighbours.iter().any(|n| (n - a).abs() < reach)
}

fn triplet_margin(inst: &Instance) -> Result<f64> {
    let enhanced = apply_curves(&inst.low, &inst.params)?;
    let anchor = gram(&extract_features(&enhanced)?);
    let alpha = inst.ctx.weights.alpha;
    let mut min = f64::INFINITY;
    for pos in &inst.ctx.positives {
        let d_pos = gram_distance(&anchor, &pos.gram)?;
        for (_, neg) in &inst.ctx.negatives {
            let d_neg = gram_distance(&anchor, &neg.gram)?;
            min = min.min((d_pos - d_neg + alpha).abs());
        }
    }
    Ok(min)
}
