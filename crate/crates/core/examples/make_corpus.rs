//! Regenerates the bundled test corpus under `tests/data/`.
//!
//! The images are procedural "landscapes": a sky gradient, a noisy horizon,
//! textured ground and a few soft blobs, tone-adjusted so their mean
//! brightness lands in `[0.46, 0.58]`, the well-exposed middle of the
//! range.
//!
//! ```text
//! cargo run -p pie-core --example make_corpus
//! ```

use std::path::PathBuf;

use pie_core::{save_image, Image};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const CORPUS_SIZE: usize = 30;
const SIDE: usize = 64;
const REFERENCE_SIDE: usize = 256;

/// Bilinearly interpolated lattice noise with `octaves` halving amplitudes.
struct ValueNoise {
    lattice: Vec<f64>,
    n: usize,
}

impl ValueNoise {
    fn new(rng: &mut impl Rng) -> Self {
        let n = 64;
        ValueNoise {
            lattice: (0..n * n).map(|_| rng.gen::<f64>()).collect(),
            n,
        }
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let (fx, fy) = (u.rem_euclid(self.n as f64), v.rem_euclid(self.n as f64));
        let (x0, y0) = (fx.floor() as usize % self.n, fy.floor() as usize % self.n);
        let (x1, y1) = ((x0 + 1) % self.n, (y0 + 1) % self.n);
        let (tx, ty) = (smooth(fx.fract()), smooth(fy.fract()));
        let at = |x: usize, y: usize| self.lattice[y * self.n + x];
        let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
        let bottom = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    fn fractal(&self, u: f64, v: f64, octaves: usize) -> f64 {
        let (mut sum, mut amp, mut freq, mut norm) = (0.0, 1.0, 1.0, 0.0);
        for _ in 0..octaves {
            sum += amp * self.sample(u * freq, v * freq);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        sum / norm
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    std::array::from_fn(|c| a[c] * (1.0 - t) + b[c] * t)
}

fn random_color(rng: &mut impl Rng, lo: f64, hi: f64) -> [f64; 3] {
    std::array::from_fn(|_| rng.gen_range(lo..hi))
}

fn landscape(seed: u64, side: usize) -> Image {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let noise = ValueNoise::new(&mut rng);
    let sky_top = random_color(&mut rng, 0.45, 0.8);
    let sky_low = random_color(&mut rng, 0.55, 0.85);
    let ground_a = random_color(&mut rng, 0.2, 0.5);
    let ground_b = random_color(&mut rng, 0.35, 0.65);
    let horizon = rng.gen_range(0.3..0.6);
    let scale = rng.gen_range(3.0..8.0);
    let blobs: Vec<([f64; 3], f64, f64, f64)> = (0..rng.gen_range(2..6))
        .map(|_| {
            (
                random_color(&mut rng, 0.2, 0.8),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.06..0.2),
            )
        })
        .collect();

    let raw = Image::from_fn(side, side, |y, x| {
        let (u, v) = (x as f64 / side as f64, y as f64 / side as f64);
        let ridge = horizon + 0.15 * (noise.fractal(u * 3.0, 7.3, 4) - 0.5);
        let texture = noise.fractal(u * scale, v * scale, 5);
        let mut px = if v < ridge {
            mix(sky_top, sky_low, v / ridge)
        } else {
            mix(ground_a, ground_b, texture)
        };
        for &(color, bx, by, r) in &blobs {
            let d = ((u - bx).powi(2) + (v - by).powi(2)).sqrt() / r;
            if d < 1.0 {
                px = mix(px, color, 0.8 * (1.0 - d * d));
            }
        }
        let grain = 0.08 * (texture - 0.5);
        std::array::from_fn(|c| px[c] + grain)
    });
    let target: f64 = rng.gen_range(0.46..0.58);
    // Power-law tone adjustment converging on the target mean brightness.
    let mut gamma = 1.0f64;
    for _ in 0..40 {
        let mean = raw.map_values(|v| v.powf(gamma)).mean_brightness();
        gamma *= (target.ln() / mean.ln()).clamp(0.5, 2.0);
    }
    raw.map_values(|v| v.powf(gamma))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    std::fs::create_dir_all(dir.join("corpus"))?;
    for i in 0..CORPUS_SIZE {
        let img = landscape(1000 + i as u64, SIDE);
        let path = dir.join(format!("corpus/scene_{i:02}.png"));
        save_image(&img, &path)?;
        println!("{} mean={:.3}", path.display(), img.mean_brightness());
    }
    let reference = landscape(42, REFERENCE_SIDE);
    save_image(&reference, dir.join("reference_256.png"))?;
    println!("reference mean={:.3}", reference.mean_brightness());
    Ok(())
}
