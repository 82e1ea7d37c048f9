//! Iterative quadratic curve model and per-image optimizer.
//!
//! Each channel value is pushed through `M` steps of
//! `x <- x + A * x * (1 - x)` with a per-pixel, per-channel, per-step
//! coefficient `A` in `[-1, 1]`. For such coefficients the step maps `[0, 1]`
//! onto itself monotonically, so any parameter maps give a valid image.
//!
//! [`optimize`] fits the maps to one image by projected descent on the total
//! loss, starting from the identity (`A = 0`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{evaluate, smoothness_kink_slope, LossBreakdown, LossContext, LossWeights};

pub const DEFAULT_CURVE_ITERATIONS: usize = 8;

/// `M x 3 x H x W` curve coefficients, each in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveParamMaps {
    iterations: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl CurveParamMaps {
    pub fn zeros(iterations: usize, height: usize, width: usize) -> Self {
        assert!(iterations >= 1, "at least one curve iteration");
        CurveParamMaps {
            iterations,
            height,
            width,
            data: vec![0.0; iterations * 3 * height * width],
        }
    }

    pub fn constant(iterations: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::from_data(iterations, height, width, vec![value; iterations * 3 * height * width])
    }

    /// `data` is laid out iteration-major, then channel, then row-major pixels.
    pub fn from_data(iterations: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::param("iterations", "must be >= 1"));
        }
        if data.len() != iterations * 3 * height * width {
            return Err(Error::mismatch(iterations * 3 * height * width, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::param("A", format!("value {v} outside [-1, 1]")));
        }
        Ok(CurveParamMaps {
            iterations,
            height,
            width,
            data,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    fn index(&self, m: usize, p: usize, y: usize, x: usize) -> usize {
        ((m * 3 + p) * self.height + y) * self.width + x
    }

    pub fn get(&self, m: usize, p: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(m, p, y, x)]
    }

    /// Sets one coefficient, clamped to `[-1, 1]`.
    pub fn set(&mut self, m: usize, p: usize, y: usize, x: usize, v: f64) {
        let i = self.index(m, p, y, x);
        self.data[i] = v.clamp(-1.0, 1.0);
    }

    /// The `M * 3` maps in storage order.
    pub fn maps(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact((self.height * self.width).max(1))
    }

    pub(crate) fn set_flat(&mut self, i: usize, v: f64) {
        self.data[i] = v.clamp(-1.0, 1.0);
    }

    pub(crate) fn check_dims(&self, img: &Image) -> Result<()> {
        if img.height() != self.height || img.width() != self.width {
            return Err(Error::mismatch(
                format!("{}x{} parameter maps", self.width, self.height),
                format!("{}x{} image", img.width(), img.height()),
            ));
        }
        Ok(())
    }
}

/// Runs the curve iterations, keeping each step's input for the backward pass.
struct CurveTrace {
    /// `inputs[m]` holds `x_m` for `m = 0..M`, interleaved RGB.
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

fn run_curves(img: &Image, params: &CurveParamMaps) -> CurveTrace {
    let n = img.pixel_count();
    let mut x = img.data().to_vec();
    let mut inputs = Vec::with_capacity(params.iterations);
    for m in 0..params.iterations {
        inputs.push(x.clone());
        for p in 0..3 {
            let map = &params.data[(m * 3 + p) * n..(m * 3 + p + 1) * n];
            for (i, a) in map.iter().enumerate() {
                let v = &mut x[i * 3 + p];
                // Exact arithmetic keeps v in [0, 1]; the clamp absorbs rounding.
                *v = (*v + a * *v * (1.0 - *v)).clamp(0.0, 1.0);
            }
        }
    }
    CurveTrace { inputs, output: x }
}

pub fn apply_curves(img: &Image, params: &CurveParamMaps) -> Result<Image> {
    params.check_dims(img)?;
    let trace = run_curves(img, params);
    Ok(Image::from_raw(img.height(), img.width(), trace.output))
}

/// Loss value and its gradient with respect to every coefficient.
#[derive(Clone, Debug)]
pub struct LossGradient {
    pub breakdown: LossBreakdown,
    /// Same layout as [`CurveParamMaps::values`].
    pub gradient: Vec<f64>,
}

/// Exact gradient of the weighted total loss through the curve iterations.
pub fn loss_gradient(img_low: &Image, params: &CurveParamMaps, ctx: &LossContext) -> Result<LossGradient> {
    params.check_dims(img_low)?;
    let trace = run_curves(img_low, params);
    let enhanced = Image::from_raw(img_low.height(), img_low.width(), trace.output.clone());
    let eval = evaluate(&enhanced, params, ctx, true)?;

    let n = img_low.pixel_count();
    let mut gradient = eval.param_grad;
    let mut upstream = eval.image_grad;
    for m in (0..params.iterations).rev() {
        let x_prev = &trace.inputs[m];
        for p in 0..3 {
            let offset = (m * 3 + p) * n;
            for i in 0..n {
                let k = i * 3 + p;
                let x = x_prev[k];
                let a = params.data[offset + i];
                gradient[offset + i] += upstream[k] * x * (1.0 - x);
                upstream[k] *= 1.0 + a * (1.0 - 2.0 * x);
            }
        }
    }
    Ok(LossGradient {
        breakdown: eval.breakdown,
        gradient,
    })
}

/// Total loss of the image produced by `params`.
pub fn loss_at(img_low: &Image, params: &CurveParamMaps, ctx: &LossContext) -> Result<LossBreakdown> {
    let enhanced = apply_curves(img_low, params)?;
    Ok(evaluate(&enhanced, params, ctx, false)?.breakdown)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Number of curve iterations `M`.
    pub curve_iterations: usize,
    pub step_size: f64,
    pub max_iters: usize,
    /// Relative total-loss change below which a step counts as stalled.
    pub tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            curve_iterations: DEFAULT_CURVE_ITERATIONS,
            step_size: 0.05,
            max_iters: 200,
            tol: 1e-5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.curve_iterations < 1 {
            return Err(Error::param("curve_iterations", "must be >= 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::param(
                "step_size",
                format!("must be > 0, got {}", self.step_size),
            ));
        }
        if self.max_iters < 1 {
            return Err(Error::param("max_iters", "must be >= 1"));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::param("tol", format!("must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Consecutive stalled steps that end the run.
const PATIENCE: usize = 5;
const MAX_BACKTRACKS: usize = 12;
const ARMIJO: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct Enhancement {
    pub params: CurveParamMaps,
    pub image: Image,
    /// Loss before the first update, then after each update.
    pub trace: Vec<LossBreakdown>,
}

impl Enhancement {
    /// Number of parameter updates performed.
    pub fn updates(&self) -> usize {
        self.trace.len() - 1
    }
}

pub fn optimize(img_low: &Image, ctx: &LossContext, cfg: &OptimizerConfig) -> Result<Enhancement> {
    cfg.validate()?;
    ctx.validate()?;
    let (h, w) = (img_low.height(), img_low.width());
    let n = (h * w) as f64;
    let mut params = CurveParamMaps::zeros(cfg.curve_iterations, h, w);
    let mut current = loss_gradient(img_low, &params, ctx)?;
    if !current.breakdown.is_finite() {
        return Err(Error::Divergence { iteration: 0 });
    }
    let mut trace = vec![current.breakdown];
    let mut stalled = 0;

    let mut t0 = cfg.step_size;
    for iteration in 1..=cfg.max_iters {
        let fine = precondition(&current.gradient, &params, n);
        let coarse = map_means(&fine, h * w);
        let mut accepted = None;
        for direction in [fine, coarse] {
            let direction = feasible(&params, direction);
            let slope = directional_derivative(&params, &current.gradient, &direction, &ctx.weights);
            if slope >= 0.0 {
                continue;
            }
            accepted = line_search(
                img_low,
                ctx,
                &params,
                current.breakdown.total,
                &direction,
                slope,
                t0,
                iteration,
            )?;
            if accepted.is_some() {
                break;
            }
        }
        let Some((next, t)) = accepted else {
            // No descent along either direction: stationary.
            break;
        };
        t0 = 2.0 * t;
        let previous = current.breakdown.total;
        params = next;
        current = loss_gradient(img_low, &params, ctx)?;
        if !current.breakdown.is_finite() {
            return Err(Error::Divergence { iteration });
        }
        trace.push(current.breakdown);

        let change = (previous - current.breakdown.total).abs() / previous.abs().max(f64::MIN_POSITIVE);
        stalled = if change < cfg.tol { stalled + 1 } else { 0 };
        if stalled >= PATIENCE {
            break;
        }
    }

    let image = apply_curves(img_low, &params)?;
    Ok(Enhancement { params, image, trace })
}

/// Zeroes components that would push a coefficient already at a bound
/// further out.
fn feasible(params: &CurveParamMaps, mut direction: Vec<f64>) -> Vec<f64> {
    for (d, a) in direction.iter_mut().zip(&params.data) {
        if (*a >= 1.0 && *d > 0.0) || (*a <= -1.0 && *d < 0.0) {
            *d = 0.0;
        }
    }
    direction
}

/// One-sided derivative of the total loss along `direction`, including the
/// smoothness penalty's kinks.
fn directional_derivative(params: &CurveParamMaps, gradient: &[f64], direction: &[f64], weights: &LossWeights) -> f64 {
    let smooth: f64 = gradient.iter().zip(direction).map(|(g, d)| g * d).sum();
    let kinks = if weights.w_fp > 0.0 {
        weights.w_fp * smoothness_kink_slope(params, direction, weights.lambda)
    } else {
        0.0
    };
    smooth + kinks
}

/// Armijo backtracking from `t0`. Returns the accepted point and step, or
/// `None` when no trial step gives sufficient decrease.
#[allow(clippy::too_many_arguments)]
fn line_search(
    img_low: &Image,
    ctx: &LossContext,
    params: &CurveParamMaps,
    total: f64,
    direction: &[f64],
    slope: f64,
    t0: f64,
    iteration: usize,
) -> Result<Option<(CurveParamMaps, f64)>> {
    let mut t = t0;
    for _ in 0..=MAX_BACKTRACKS {
        let candidate = step(params, direction, t);
        let loss = loss_at(img_low, &candidate, ctx)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration });
        }
        if loss.total <= total + ARMIJO * t * slope {
            return Ok(Some((candidate, t)));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Replaces every map by its mean, which carries no smoothness cost.
fn map_means(direction: &[f64], plane: usize) -> Vec<f64> {
    direction
        .chunks_exact(plane)
        .flat_map(|map| {
            let mean = map.iter().sum::<f64>() / plane as f64;
            std::iter::repeat_n(mean, plane)
        })
        .collect()
}

fn step(params: &CurveParamMaps, direction: &[f64], t: f64) -> CurveParamMaps {
    let mut next = params.clone();
    for (i, d) in direction.iter().enumerate() {
        next.set_flat(i, params.data[i] + t * d);
    }
    next
}

/// Descent direction: the negated gradient rescaled to per-pixel units and
/// low-pass filtered per map with a symmetric positive semi-definite blur.
fn precondition(gradient: &[f64], params: &CurveParamMaps, n: f64) -> Vec<f64> {
    let (h, w) = (params.height, params.width);
    let radius = (h.min(w) / 16).max(1);
    gradient
        .chunks_exact(h * w)
        .flat_map(|map| {
            let scaled: Vec<f64> = map.iter().map(|g| -g * n).collect();
            let once = box_blur(&scaled, h, w, radius);
            box_blur(&once, h, w, radius)
        })
        .collect()
}

/// Zero-padded box filter with a fixed divisor, so the operator is symmetric.
fn box_blur(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let norm = (2 * r + 1) as f64;
    let pass = |src: &[f64], len: usize, stride: usize, count: usize, lane_stride: usize| {
        let mut out = vec![0.0; src.len()];
        for lane in 0..count {
            let base = lane * lane_stride;
            let mut acc = 0.0;
            for i in 0..r.min(len) {
                acc += src[base + i * stride];
            }
            for i in 0..len {
                if i + r < len {
                    acc += src[base + (i + r) * stride];
                }
                out[base + i * stride] = acc / norm;
                if i >= r {
                    acc -= src[base + (i - r) * stride];
                }
            }
        }
        out
    };
    let rows = pass(src, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}
