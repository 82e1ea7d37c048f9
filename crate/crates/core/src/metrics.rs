//! Full-reference quality metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{brightness, Image, Plane};

/// Reported in place of infinity when two images are bit-identical.
pub const PSNR_IDENTICAL_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn identical(&self) -> bool {
        self.psnr_db == PSNR_IDENTICAL_DB
    }
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::mismatch(
            format!("{}x{}", a.width(), a.height()),
            format!("{}x{}", b.width(), b.height()),
        ));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / MSE)` over all channels on the unit scale.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = mse(a, b)?;
    Ok(psnr_from_mse(e))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_IDENTICAL_DB
    } else {
        -10.0 * mse.log10()
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable weighted sum over every fully-contained window position.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Single-scale SSIM of the brightness fields, averaged over all window
/// positions of an 11x11 Gaussian window (sigma 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: a.width(),
            height: a.height(),
            min: SSIM_WINDOW,
        });
    }
    Ok(ssim_planes(&brightness(a), &brightness(b)))
}

fn ssim_planes(a: &Plane, b: &Plane) -> f64 {
    let (h, w) = (a.height, a.width);
    let k = gaussian_window();
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect() };
    let (mu_a, oh, ow) = filter_valid(&a.data, h, w, &k);
    let (mu_b, ..) = filter_valid(&b.data, h, w, &k);
    let (aa, ..) = filter_valid(&prod(|x, _| x * x), h, w, &k);
    let (bb, ..) = filter_valid(&prod(|_, y| y * y), h, w, &k);
    let (ab, ..) = filter_valid(&prod(|x, y| x * y), h, w, &k);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (var_a + var_b + C2));
    }
    total / (oh * ow) as f64
}

pub fn compare(a: &Image, b: &Image) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_db: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x| {
            let v = 0.5 + 0.3 * ((x as f64 * 0.7).sin() * (y as f64 * 0.45).cos());
            [v, v * 0.9, v * 0.8]
        })
    }

    #[test]
    fn psnr_examples() {
        let a = textured(12, 12);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-9);
        let black = Image::uniform(2, 2, 0.0);
        let white = Image::uniform(2, 2, 1.0);
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
        let shifted = Image::uniform(2, 2, 0.1);
        assert!((psnr(&black, &shifted).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_examples() {
        let a = textured(16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let half = Image::uniform(11, 11, 0.5);
        let quarter = Image::uniform(11, 11, 0.25);
        let want = (2.0 * 0.125 + 1e-4) / (0.3125 + 1e-4);
        let got = ssim(&half, &quarter).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.80006).abs() < 1e-4);
        let b = textured(16, 16).map_values(|v| v * 0.7);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let small = Image::uniform(10, 12, 0.5);
        assert!(matches!(ssim(&small, &small), Err(Error::ImageTooSmall { .. })));
        assert!(psnr(&small, &Image::uniform(12, 10, 0.5)).is_err());
    }

    #[test]
    fn noise_lowers_both_metrics() {
        let base = textured(32, 32);
        let mut last = compare(&base, &base).unwrap();
        for amp in [0.02, 0.05, 0.1, 0.2] {
            let noisy = Image::from_fn(32, 32, |y, x| {
                let p = base.pixel(y, x);
                let n = amp * (((y * 31 + x * 17) % 7) as f64 / 3.0 - 1.0);
                [p[0] + n, p[1] - n, p[2] + n]
            });
            let r = compare(&base, &noisy).unwrap();
            assert!(
                r.psnr_db < last.psnr_db && r.ssim < last.ssim,
                "{amp}: {r:?} vs {last:?}"
            );
            last = r;
        }
    }
}
