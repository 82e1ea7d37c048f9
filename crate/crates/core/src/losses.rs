//! Contrastive, regional-consistency, feature-retention and color-constancy
//! losses, and their weighted total.
//!
//! Every component is paired with its analytic gradient; [`evaluate`] returns
//! both the gradient with respect to the enhanced image and the part that
//! acts on the curve parameter maps directly (the smoothness penalty).

use serde::{Deserialize, Serialize};

use crate::boc::Polarity;
use crate::enhancer::CurveParamMaps;
use crate::error::{Error, Result};
use crate::features::{self, expectation, gram, ExpectationVector, FeatureLayer, FeaturePyramid, GramSet};
use crate::image::{brightness, Image};
use crate::segmentation::{region_mean_brightness, RegionMap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the contrastive pair `L_cG + L_cE`.
    pub w_c: f64,
    /// Weight of the regional brightness consistency term.
    pub w_rc: f64,
    /// Weight of feature preservation `L_fr + L_cc`.
    pub w_fp: f64,
    /// Triplet margin.
    pub alpha: f64,
    /// Illumination smoothness coefficient inside `L_cc`.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_c: 1.0,
            w_rc: 1.0,
            w_fp: 1.0,
            alpha: 0.3,
            lambda: 200.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            w_c: 0.0,
            w_rc: 0.0,
            w_fp: 0.0,
            alpha: 0.3,
            lambda: 200.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_c", self.w_c),
            ("w_rc", self.w_rc),
            ("w_fp", self.w_fp),
            ("alpha", self.alpha),
            ("lambda", self.lambda),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Gram matrices and expectation vector of one contrastive sample.
#[derive(Clone, Debug)]
pub struct SampleStats {
    pub gram: GramSet,
    pub expectation: ExpectationVector,
}

impl SampleStats {
    pub fn from_pyramid(pyr: &FeaturePyramid) -> Self {
        SampleStats {
            gram: gram(pyr),
            expectation: expectation(pyr),
        }
    }

    pub fn from_image(img: &Image) -> Result<Self> {
        Ok(Self::from_pyramid(&features::extract_features(img)?))
    }
}

/// Everything the total loss needs besides the enhanced image itself.
#[derive(Clone, Debug)]
pub struct LossContext {
    pub positives: Vec<SampleStats>,
    pub negatives: Vec<(Polarity, SampleStats)>,
    /// Regions of the image being enhanced; held fixed during optimization.
    pub regions: Option<RegionMap>,
    /// Features of the low-light input.
    pub input_pyramid: Option<FeaturePyramid>,
    pub weights: LossWeights,
}

impl LossContext {
    pub fn new(weights: LossWeights) -> Self {
        LossContext {
            positives: Vec::new(),
            negatives: Vec::new(),
            regions: None,
            input_pyramid: None,
            weights,
        }
    }

    pub fn with_positive(mut self, stats: SampleStats) -> Self {
        self.positives.push(stats);
        self
    }

    pub fn with_negative(mut self, polarity: Polarity, stats: SampleStats) -> Self {
        self.negatives.push((polarity, stats));
        self
    }

    pub fn with_regions(mut self, regions: RegionMap) -> Self {
        self.regions = Some(regions);
        self
    }

    pub fn with_input(mut self, pyr: FeaturePyramid) -> Self {
        self.input_pyramid = Some(pyr);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.weights.w_c > 0.0 {
            if self.positives.is_empty() {
                return Err(Error::MissingContext("a positive sample"));
            }
            if self.negatives.is_empty() {
                return Err(Error::MissingContext("a negative sample"));
            }
        }
        if self.weights.w_rc > 0.0 && self.regions.is_none() {
            return Err(Error::MissingContext("a region map"));
        }
        if self.weights.w_fp > 0.0 && self.input_pyramid.is_none() {
            return Err(Error::MissingContext("input features"));
        }
        Ok(())
    }
}

/// Named loss components and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "l_cG")]
    pub l_cg: f64,
    #[serde(rename = "l_cE")]
    pub l_ce: f64,
    pub l_rc: f64,
    pub l_fr: f64,
    pub l_cc: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn weighted(l_cg: f64, l_ce: f64, l_rc: f64, l_fr: f64, l_cc: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            l_cg,
            l_ce,
            l_rc,
            l_fr,
            l_cc,
            total: w.w_c * (l_cg + l_ce) + w.w_rc * l_rc + w.w_fp * (l_fr + l_cc),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_cg, self.l_ce, self.l_rc, self.l_fr, self.l_cc, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn check_gram_shapes(a: &GramSet, b: &GramSet) -> Result<()> {
    let shape = |g: &GramSet| g.grams.iter().map(|m| m.size).collect::<Vec<_>>();
    if shape(a) != shape(b) {
        return Err(Error::mismatch(
            format!("gram sizes {:?}", shape(a)),
            format!("{:?}", shape(b)),
        ));
    }
    Ok(())
}

/// Mean over layers of the mean squared element-wise Gram difference.
pub fn gram_distance(a: &GramSet, b: &GramSet) -> Result<f64> {
    check_gram_shapes(a, b)?;
    let per_layer: f64 = a
        .grams
        .iter()
        .zip(&b.grams)
        .map(|(x, y)| {
            let sq: f64 = x.data.iter().zip(&y.data).map(|(p, q)| (p - q).powi(2)).sum();
            sq / x.data.len() as f64
        })
        .sum();
    Ok(per_layer / a.grams.len() as f64)
}

/// `max(d(anchor, positive) - d(anchor, negative) + alpha, 0)`.
pub fn triplet_gram_loss(anchor: &GramSet, positive: &GramSet, negative: &GramSet, alpha: f64) -> Result<f64> {
    let d_pos = gram_distance(anchor, positive)?;
    let d_neg = gram_distance(anchor, negative)?;
    Ok(triplet_hinge(d_pos, d_neg, alpha))
}

pub fn triplet_hinge(d_pos: f64, d_neg: f64, alpha: f64) -> f64 {
    (d_pos - d_neg + alpha).max(0.0)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_lengths(a: &ExpectationVector, b: &ExpectationVector) -> Result<()> {
    if a.0.len() != b.0.len() {
        return Err(Error::mismatch(
            format!("length {}", a.0.len()),
            format!("length {}", b.0.len()),
        ));
    }
    Ok(())
}

/// InfoNCE over one positive and one negative with similarity
/// `s(x, y) = -||x - y||`: `-log(e^s_pos / (e^s_pos + e^s_neg))`.
pub fn infonce_expectation_loss(
    anchor: &ExpectationVector,
    positive: &ExpectationVector,
    negative: &ExpectationVector,
) -> Result<f64> {
    check_lengths(anchor, positive)?;
    check_lengths(anchor, negative)?;
    let s_pos = -euclidean(&anchor.0, &positive.0);
    let s_neg = -euclidean(&anchor.0, &negative.0);
    Ok(softplus(s_neg - s_pos))
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Within-region brightness variance, summed over regions and divided by the
/// pixel count.
pub fn regional_consistency_loss(img: &Image, regions: &RegionMap) -> Result<f64> {
    let means = region_mean_brightness(img, regions)?;
    let b = brightness(img);
    let sum: f64 = b
        .data
        .iter()
        .zip(regions.labels())
        .map(|(v, l)| (v - means[*l as usize]).powi(2))
        .sum();
    Ok(sum / img.pixel_count() as f64)
}

/// Mean over layers of `||f_l(input) - f_l(enhanced)||^2 / (C_l H_l W_l)`.
pub fn feature_retention_loss(input: &FeaturePyramid, enhanced: &FeaturePyramid) -> Result<f64> {
    input.check_same_shape(enhanced)?;
    let sum: f64 = input
        .layers
        .iter()
        .zip(&enhanced.layers)
        .map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len() as f64)
        .sum();
    Ok(sum / input.layers.len() as f64)
}

const CHANNEL_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

fn gray_world_term(img: &Image) -> (f64, [f64; 3]) {
    let j = [img.channel_mean(0), img.channel_mean(1), img.channel_mean(2)];
    let value = CHANNEL_PAIRS.iter().map(|(p, q)| (j[*p] - j[*q]).powi(2)).sum();
    (value, j)
}

/// `lambda / M * sum_{m,p} mean(|dx A| + |dy A|)` with forward differences,
/// zero on the last column and row.
pub fn smoothness_penalty(params: &CurveParamMaps, lambda: f64) -> f64 {
    let (h, w) = (params.height(), params.width());
    let mut total = 0.0;
    for map in params.maps() {
        for y in 0..h {
            for x in 0..w {
                let a = map[y * w + x];
                if x + 1 < w {
                    total += (map[y * w + x + 1] - a).abs();
                }
                if y + 1 < h {
                    total += (map[(y + 1) * w + x] - a).abs();
                }
            }
        }
    }
    lambda * total / (params.iterations() as f64 * (h * w) as f64)
}

fn smoothness_gradient(params: &CurveParamMaps, lambda: f64, scale: f64, grad: &mut [f64]) {
    let (h, w) = (params.height(), params.width());
    let n = h * w;
    let k = scale * lambda / (params.iterations() as f64 * n as f64);
    for (map_idx, map) in params.maps().enumerate() {
        let g = &mut grad[map_idx * n..(map_idx + 1) * n];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                // The subgradient of |d| at d = 0 is taken as 0.
                if x + 1 < w {
                    let s = sign(map[i + 1] - map[i]) * k;
                    g[i + 1] += s;
                    g[i] -= s;
                }
                if y + 1 < h {
                    let s = sign(map[i + w] - map[i]) * k;
                    g[i + w] += s;
                    g[i] -= s;
                }
            }
        }
    }
}

/// Extra one-sided slope of the smoothness penalty along `direction` from
/// differences that are exactly zero, where the gradient uses subgradient 0.
pub(crate) fn smoothness_kink_slope(params: &CurveParamMaps, direction: &[f64], lambda: f64) -> f64 {
    let (h, w) = (params.height(), params.width());
    let n = h * w;
    let mut total = 0.0;
    for (map_idx, map) in params.maps().enumerate() {
        let d = &direction[map_idx * n..(map_idx + 1) * n];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w && map[i + 1] == map[i] {
                    total += (d[i + 1] - d[i]).abs();
                }
                if y + 1 < h && map[i + w] == map[i] {
                    total += (d[i + w] - d[i]).abs();
                }
            }
        }
    }
    lambda * total / (params.iterations() as f64 * n as f64)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gray-world pairwise term plus the smoothness penalty on the parameter maps.
pub fn color_constancy_loss(enhanced: &Image, params: &CurveParamMaps, lambda: f64) -> Result<f64> {
    params.check_dims(enhanced)?;
    Ok(gray_world_term(enhanced).0 + smoothness_penalty(params, lambda))
}

pub fn total_loss(enhanced: &Image, params: &CurveParamMaps, ctx: &LossContext) -> Result<LossBreakdown> {
    Ok(evaluate(enhanced, params, ctx, false)?.breakdown)
}

pub(crate) struct Evaluation {
    pub breakdown: LossBreakdown,
    /// d total / d enhanced image, interleaved RGB.
    pub image_grad: Vec<f64>,
    /// d total / d parameter maps through terms that read the maps directly.
    pub param_grad: Vec<f64>,
}

/// Computes the breakdown and, when `with_grad` is set, its gradients.
/// Components with zero weight are reported as 0 and skipped.
pub(crate) fn evaluate(
    enhanced: &Image,
    params: &CurveParamMaps,
    ctx: &LossContext,
    with_grad: bool,
) -> Result<Evaluation> {
    ctx.validate()?;
    params.check_dims(enhanced)?;
    let w = &ctx.weights;
    let n = enhanced.pixel_count();
    let mut image_grad = if with_grad { vec![0.0; n * 3] } else { Vec::new() };
    let mut param_grad = if with_grad { vec![0.0; params.len()] } else { Vec::new() };

    let (mut l_cg, mut l_ce, mut l_rc, mut l_fr, mut l_cc) = (0.0, 0.0, 0.0, 0.0, 0.0);

    let wants_features = w.w_c > 0.0 || w.w_fp > 0.0;
    if wants_features {
        let pyr = features::extract_features(enhanced)?;
        let mut feat_grad: Vec<FeatureLayer> = if with_grad {
            pyr.layers
                .iter()
                .map(|l| FeatureLayer::zeros(l.channels, l.height, l.width))
                .collect()
        } else {
            Vec::new()
        };

        if w.w_c > 0.0 {
            let stats = SampleStats::from_pyramid(&pyr);
            let (cg, ce) = contrastive(&pyr, &stats, ctx, with_grad.then_some(&mut feat_grad))?;
            l_cg = cg;
            l_ce = ce;
        }
        if w.w_fp > 0.0 {
            let input = ctx.input_pyramid.as_ref().expect("validated");
            l_fr = feature_retention_loss(input, &pyr)?;
            if with_grad {
                let layers = pyr.layers.len() as f64;
                for ((g, enh), inp) in feat_grad.iter_mut().zip(&pyr.layers).zip(&input.layers) {
                    let k = w.w_fp * 2.0 / (layers * enh.data.len() as f64);
                    for ((gv, e), i) in g.data.iter_mut().zip(&enh.data).zip(&inp.data) {
                        *gv += k * (e - i);
                    }
                }
            }
        }
        if with_grad {
            let back = features::backward(enhanced.height(), enhanced.width(), &feat_grad)?;
            image_grad.iter_mut().zip(back).for_each(|(g, b)| *g += b);
        }
    }

    if w.w_rc > 0.0 {
        let regions = ctx.regions.as_ref().expect("validated");
        l_rc = regional_consistency_loss(enhanced, regions)?;
        if with_grad {
            let means = region_mean_brightness(enhanced, regions)?;
            let b = brightness(enhanced);
            let k = w.w_rc * 2.0 / (3.0 * n as f64);
            for (i, (v, l)) in b.data.iter().zip(regions.labels()).enumerate() {
                let g = k * (v - means[*l as usize]);
                image_grad[i * 3..i * 3 + 3].iter_mut().for_each(|x| *x += g);
            }
        }
    }

    if w.w_fp > 0.0 {
        let (pairwise, j) = gray_world_term(enhanced);
        l_cc = pairwise + smoothness_penalty(params, w.lambda);
        if with_grad {
            let mut dj = [0.0; 3];
            for (p, q) in CHANNEL_PAIRS {
                dj[p] += 2.0 * (j[p] - j[q]);
                dj[q] -= 2.0 * (j[p] - j[q]);
            }
            for px in image_grad.chunks_exact_mut(3) {
                for c in 0..3 {
                    px[c] += w.w_fp * dj[c] / n as f64;
                }
            }
            smoothness_gradient(params, w.lambda, w.w_fp, &mut param_grad);
        }
    }

    Ok(Evaluation {
        breakdown: LossBreakdown::weighted(l_cg, l_ce, l_rc, l_fr, l_cc, w),
        image_grad,
        param_grad,
    })
}

/// Triplet-Gram and InfoNCE terms averaged over every (positive, negative)
/// pair in the context. Accumulates `w_c`-weighted feature gradients.
fn contrastive(
    pyr: &FeaturePyramid,
    anchor: &SampleStats,
    ctx: &LossContext,
    feat_grad: Option<&mut Vec<FeatureLayer>>,
) -> Result<(f64, f64)> {
    let pairs = (ctx.positives.len() * ctx.negatives.len()) as f64;
    let alpha = ctx.weights.alpha;
    let layers = anchor.gram.grams.len() as f64;

    // Accumulated d/dG per layer and d/dE.
    let mut d_gram: Vec<Vec<f64>> = anchor.gram.grams.iter().map(|g| vec![0.0; g.data.len()]).collect();
    let mut d_exp = vec![0.0; anchor.expectation.0.len()];
    let (mut l_cg, mut l_ce) = (0.0, 0.0);

    for pos in &ctx.positives {
        let d_pos = gram_distance(&anchor.gram, &pos.gram)?;
        check_lengths(&anchor.expectation, &pos.expectation)?;
        let e_pos = euclidean(&anchor.expectation.0, &pos.expectation.0);
        for (_, neg) in &ctx.negatives {
            let d_neg = gram_distance(&anchor.gram, &neg.gram)?;
            let margin = d_pos - d_neg + alpha;
            l_cg += margin.max(0.0);
            if margin > 0.0 {
                // d(d_pos - d_neg)/dG = 2 (G_neg - G_pos) / (L C^2).
                for ((dg, gp), gn) in d_gram.iter_mut().zip(&pos.gram.grams).zip(&neg.gram.grams) {
                    let k = 2.0 / (layers * gp.data.len() as f64 * pairs);
                    for ((d, p), q) in dg.iter_mut().zip(&gp.data).zip(&gn.data) {
                        *d += k * (q - p);
                    }
                }
            }

            check_lengths(&anchor.expectation, &neg.expectation)?;
            let e_neg = euclidean(&anchor.expectation.0, &neg.expectation.0);
            // s_neg - s_pos = e_pos - e_neg.
            l_ce += softplus(e_pos - e_neg);
            let weight = logistic(e_pos - e_neg) / pairs;
            let anchor_e = &anchor.expectation.0;
            if e_pos > 0.0 {
                for ((d, a), p) in d_exp.iter_mut().zip(anchor_e).zip(&pos.expectation.0) {
                    *d += weight * (a - p) / e_pos;
                }
            }
            if e_neg > 0.0 {
                for ((d, a), q) in d_exp.iter_mut().zip(anchor_e).zip(&neg.expectation.0) {
                    *d -= weight * (a - q) / e_neg;
                }
            }
        }
    }

    if let Some(feat_grad) = feat_grad {
        let w_c = ctx.weights.w_c;
        let mut offset = 0;
        for ((g, layer), dg) in feat_grad.iter_mut().zip(&pyr.layers).zip(&d_gram) {
            let c = layer.channels;
            let plane = layer.plane_len();
            let norm = (c * plane) as f64;
            // dL/df_a = 2 (S f)_a / (C H W) for symmetric S = dL/dG.
            let scale: Vec<f64> = dg.iter().map(|s| w_c * 2.0 * s / norm).collect();
            let shift: Vec<f64> = (0..c).map(|a| w_c * d_exp[offset + a] / plane as f64).collect();
            for start in (0..plane).step_by(features::BLOCK) {
                let end = (start + features::BLOCK).min(plane);
                for a in 0..c {
                    let out = &mut g.data[a * plane + start..a * plane + end];
                    for b in 0..c {
                        let k = scale[a * c + b];
                        if k != 0.0 {
                            let f = &layer.channel(b)[start..end];
                            out.iter_mut().zip(f).for_each(|(o, f)| *o += k * f);
                        }
                    }
                    if shift[a] != 0.0 {
                        out.iter_mut().for_each(|o| *o += shift[a]);
                    }
                }
            }
            offset += c;
        }
    }

    Ok((l_cg / pairs, l_ce / pairs))
}
