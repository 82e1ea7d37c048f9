//! Bag of Curves: synthesizes under- and overexposed negatives from a
//! normal-light image with Gamma, Sigmoid and Logarithmic transfer curves.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveFamily {
    Gamma,
    Sigmoid,
    #[serde(alias = "log")]
    Logarithmic,
}

impl CurveFamily {
    pub const ALL: [CurveFamily; 3] = [CurveFamily::Gamma, CurveFamily::Sigmoid, CurveFamily::Logarithmic];

    /// Short name used in file names and on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            CurveFamily::Gamma => "gamma",
            CurveFamily::Sigmoid => "sigmoid",
            CurveFamily::Logarithmic => "log",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Under,
    Over,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Under => "under",
            Polarity::Over => "over",
        }
    }
}

/// One curve of the bag: a family, its scalar parameter and the exposure
/// label it is meant to produce.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveSpec {
    family: CurveFamily,
    parameter: f64,
    polarity: Polarity,
}

impl CurveSpec {
    pub fn new(family: CurveFamily, parameter: f64, polarity: Polarity) -> Result<Self> {
        validate(family, parameter)?;
        Ok(CurveSpec {
            family,
            parameter,
            polarity,
        })
    }

    pub fn family(&self) -> CurveFamily {
        self.family
    }

    pub fn parameter(&self) -> f64 {
        self.parameter
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn apply(&self, img: &Image) -> Image {
        let p = self.parameter;
        match self.family {
            CurveFamily::Gamma => img.map_values(|v| gamma_curve(v, p)),
            CurveFamily::Sigmoid => img.map_values(|v| sigmoid_curve(v, p)),
            CurveFamily::Logarithmic => img.map_values(|v| log_curve(v, p)),
        }
    }
}

fn validate(family: CurveFamily, p: f64) -> Result<()> {
    match family {
        CurveFamily::Gamma if !(p > 0.0 && p.is_finite()) => {
            Err(Error::param("gamma", format!("must be positive, got {p}")))
        }
        CurveFamily::Sigmoid if !(p > 0.0 && p < 1.0) => Err(Error::param("c", format!("must lie in (0, 1), got {p}"))),
        CurveFamily::Logarithmic if !(p > 0.0 && p.is_finite()) => {
            Err(Error::param("m", format!("must be positive, got {p}")))
        }
        _ => Ok(()),
    }
}

fn gamma_curve(v: f64, gamma: f64) -> f64 {
    v.powf(gamma)
}

fn sigmoid_curve(v: f64, c: f64) -> f64 {
    1.0 / (1.0 + (10.0 * (c - v)).exp())
}

/// Evaluated on the 8-bit scale and clamped to the displayable range.
fn log_curve(v: f64, m: f64) -> f64 {
    (m * (1.0 + v * 255.0).log2()).clamp(0.0, 255.0) / 255.0
}

/// `v -> v^gamma`.
pub fn apply_gamma(img: &Image, gamma: f64) -> Result<Image> {
    validate(CurveFamily::Gamma, gamma)?;
    Ok(img.map_values(|v| gamma_curve(v, gamma)))
}

/// `v -> 1 / (1 + exp(10 (c - v)))`.
pub fn apply_sigmoid(img: &Image, c: f64) -> Result<Image> {
    validate(CurveFamily::Sigmoid, c)?;
    Ok(img.map_values(|v| sigmoid_curve(v, c)))
}

/// `v -> clamp(m log2(1 + 255 v), 0, 255) / 255`.
pub fn apply_logarithmic(img: &Image, m: f64) -> Result<Image> {
    validate(CurveFamily::Logarithmic, m)?;
    Ok(img.map_values(|v| log_curve(v, m)))
}

/// Fixed curve parameters, one under/over pair per family.
///
/// `sigmoid_under` is the larger offset: a Sigmoid centred above the image's
/// brightness pushes most pixels toward 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BocPresets {
    pub gamma_under: f64,
    pub gamma_over: f64,
    pub sigmoid_under: f64,
    pub sigmoid_over: f64,
    pub log_under: f64,
    pub log_over: f64,
}

impl Default for BocPresets {
    fn default() -> Self {
        BocPresets {
            gamma_under: 8.0,
            gamma_over: 0.2,
            sigmoid_under: 0.8,
            sigmoid_over: 0.3,
            log_under: 10.0,
            log_over: 40.0,
        }
    }
}

impl BocPresets {
    /// The six curves in preset-index order: per family, Under then Over.
    pub fn specs(&self) -> Result<[CurveSpec; 6]> {
        use CurveFamily::*;
        use Polarity::*;
        Ok([
            CurveSpec::new(Gamma, self.gamma_under, Under)?,
            CurveSpec::new(Gamma, self.gamma_over, Over)?,
            CurveSpec::new(Sigmoid, self.sigmoid_under, Under)?,
            CurveSpec::new(Sigmoid, self.sigmoid_over, Over)?,
            CurveSpec::new(Logarithmic, self.log_under, Under)?,
            CurveSpec::new(Logarithmic, self.log_over, Over)?,
        ])
    }

    pub fn validate(&self) -> Result<()> {
        self.specs().map(|_| ())
    }
}

#[derive(Clone, Debug)]
pub struct Negative {
    pub image: Image,
    pub spec: CurveSpec,
}

/// Negatives derived from a single positive image.
#[derive(Clone, Debug)]
pub struct NegativePool {
    entries: Vec<Negative>,
}

impl NegativePool {
    pub fn entries(&self) -> &[Negative] {
        &self.entries
    }

    pub fn with_polarity(&self, polarity: Polarity) -> impl Iterator<Item = &Negative> {
        self.entries.iter().filter(move |n| n.spec.polarity == polarity)
    }
}

pub fn generate_negative_pool(positive: &Image) -> NegativePool {
    generate_pool_with(positive, &BocPresets::default()).expect("default presets are valid")
}

pub fn generate_pool_with(positive: &Image, presets: &BocPresets) -> Result<NegativePool> {
    Ok(pool_from_specs(positive, presets.specs()?))
}

fn pool_from_specs(positive: &Image, specs: impl IntoIterator<Item = CurveSpec>) -> NegativePool {
    NegativePool {
        entries: specs
            .into_iter()
            .map(|spec| Negative {
                image: spec.apply(positive),
                spec,
            })
            .collect(),
    }
}

/// Parameter intervals for the randomized variant of the bag. Only used to
/// compare against the fixed presets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParameterRanges {
    pub gamma_under: (f64, f64),
    pub gamma_over: (f64, f64),
    pub sigmoid_under: (f64, f64),
    pub sigmoid_over: (f64, f64),
    pub log_under: (f64, f64),
    pub log_over: (f64, f64),
}

impl Default for ParameterRanges {
    fn default() -> Self {
        ParameterRanges {
            gamma_under: (4.0, 12.0),
            gamma_over: (0.1, 0.4),
            sigmoid_under: (0.7, 0.9),
            sigmoid_over: (0.2, 0.4),
            log_under: (5.0, 15.0),
            log_over: (30.0, 50.0),
        }
    }
}

#[doc(hidden)]
pub fn generate_ranged_pool(positive: &Image, ranges: &ParameterRanges, rng: &mut impl Rng) -> Result<NegativePool> {
    let mut draw = |(lo, hi): (f64, f64)| rng.gen_range(lo..=hi);
    let presets = BocPresets {
        gamma_under: draw(ranges.gamma_under),
        gamma_over: draw(ranges.gamma_over),
        sigmoid_under: draw(ranges.sigmoid_under),
        sigmoid_over: draw(ranges.sigmoid_over),
        log_under: draw(ranges.log_under),
        log_over: draw(ranges.log_over),
    };
    generate_pool_with(positive, &presets)
}

#[derive(Clone, Copy, Debug)]
pub struct ContrastivePair<'a> {
    pub under: &'a Negative,
    pub over: &'a Negative,
}

/// Picks one Under and one Over negative uniformly at random. The Under draw
/// is made first, so a given seed always yields the same pair.
pub fn sample_contrastive_pair(pool: &NegativePool, seed: u64) -> Result<ContrastivePair<'_>> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut pick = |polarity| {
        let candidates: Vec<&Negative> = pool.with_polarity(polarity).collect();
        if candidates.is_empty() {
            return Err(Error::MissingContext(match polarity {
                Polarity::Under => "an underexposed negative",
                Polarity::Over => "an overexposed negative",
            }));
        }
        Ok(candidates[rng.gen_range(0..candidates.len())])
    };
    let under = pick(Polarity::Under)?;
    let over = pick(Polarity::Over)?;
    Ok(ContrastivePair { under, over })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::histogram;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn gamma_examples() {
        let mid = Image::uniform(1, 1, 0.5);
        assert_eq!(apply_gamma(&mid, 8.0).unwrap().data()[0], 0.00390625);
        assert!(close(apply_gamma(&mid, 0.2).unwrap().data()[0], 0.870550563, 1e-8));
        for v in [0.0, 1.0] {
            let img = Image::uniform(1, 1, v);
            assert_eq!(apply_gamma(&img, 3.7).unwrap().data()[0], v);
        }
        assert!(apply_gamma(&mid, 0.0).is_err());
        assert!(apply_gamma(&mid, -1.0).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        let mid = Image::uniform(1, 1, 0.5);
        assert_eq!(apply_sigmoid(&mid, 0.5).unwrap().data()[0], 0.5);
        assert!(close(
            apply_sigmoid(&mid, 0.8).unwrap().data()[0],
            1.0 / (1.0 + 3f64.exp()),
            1e-15
        ));
        assert!(close(apply_sigmoid(&mid, 0.8).unwrap().data()[0], 0.04743, 1e-5));
        assert!(close(apply_sigmoid(&mid, 0.3).unwrap().data()[0], 0.88080, 1e-5));
        assert!(apply_sigmoid(&mid, 0.0).is_err());
        assert!(apply_sigmoid(&mid, 1.0).is_err());
    }

    #[test]
    fn logarithmic_examples() {
        let v = Image::uniform(1, 1, 128.0 / 255.0);
        assert_eq!(
            apply_logarithmic(&Image::uniform(1, 1, 0.0), 10.0).unwrap().data()[0],
            0.0
        );
        assert!(close(apply_logarithmic(&v, 10.0).unwrap().data()[0], 0.27495, 1e-5));
        assert_eq!(apply_logarithmic(&v, 40.0).unwrap().data()[0], 1.0);
        assert!(apply_logarithmic(&v, 0.0).is_err());
    }

    #[test]
    fn pool_has_six_fixed_presets() {
        let pool = generate_negative_pool(&Image::uniform(4, 4, 0.5));
        assert_eq!(pool.entries().len(), 6);
        assert_eq!(pool.with_polarity(Polarity::Under).count(), 3);
        assert_eq!(pool.with_polarity(Polarity::Over).count(), 3);
        let gamma_under = &pool.entries()[0];
        assert_eq!(gamma_under.spec.family(), CurveFamily::Gamma);
        assert!(gamma_under.image.data().iter().all(|v| *v == 0.00390625));
        let log_over = &pool.entries()[5];
        assert_eq!(log_over.spec.family(), CurveFamily::Logarithmic);
        assert!(log_over.image.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn presets_order_under_then_over_per_family() {
        let specs = BocPresets::default().specs().unwrap();
        for (i, spec) in specs.iter().enumerate() {
            assert_eq!(spec.family(), CurveFamily::ALL[i / 2]);
            let want = if i % 2 == 0 { Polarity::Under } else { Polarity::Over };
            assert_eq!(spec.polarity(), want);
        }
    }

    #[test]
    fn sampling_is_seeded_and_polarized() {
        let pool = generate_negative_pool(&Image::uniform(2, 2, 0.5));
        let a = sample_contrastive_pair(&pool, 42).unwrap();
        let b = sample_contrastive_pair(&pool, 42).unwrap();
        assert_eq!(a.under.spec, b.under.spec);
        assert_eq!(a.over.spec, b.over.spec);
        for seed in 0..50 {
            let pair = sample_contrastive_pair(&pool, seed).unwrap();
            assert_eq!(pair.under.spec.polarity(), Polarity::Under);
            assert_eq!(pair.over.spec.polarity(), Polarity::Over);
        }
    }

    #[test]
    fn sampling_is_uniform_over_under_presets() {
        let pool = generate_negative_pool(&Image::uniform(1, 1, 0.5));
        let mut counts = [0usize; 3];
        for seed in 0..6000u64 {
            let pair = sample_contrastive_pair(&pool, seed).unwrap();
            let idx = CurveFamily::ALL
                .iter()
                .position(|f| *f == pair.under.spec.family())
                .unwrap();
            counts[idx] += 1;
        }
        for c in counts {
            assert!((1800..=2200).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn presets_order_mid_gray_brightness() {
        let mid = Image::uniform(3, 3, 0.5);
        for neg in generate_negative_pool(&mid).entries() {
            let b = neg.image.mean_brightness();
            match neg.spec.polarity() {
                Polarity::Under => assert!(b < 0.5, "{:?} gave {b}", neg.spec),
                Polarity::Over => assert!(b > 0.5, "{:?} gave {b}", neg.spec),
            }
        }
    }

    #[test]
    fn unit_gamma_is_identity() {
        let img = Image::from_fn(3, 4, |y, x| [y as f64 / 3.0, x as f64 / 4.0, 0.37]);
        assert_eq!(apply_gamma(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn ranged_pool_draws_inside_ranges() {
        let mut rng = SplitMix64::seed_from_u64(3);
        let ranges = ParameterRanges::default();
        let pool = generate_ranged_pool(&Image::uniform(1, 1, 0.5), &ranges, &mut rng).unwrap();
        let p = pool.entries()[0].spec.parameter();
        assert!((ranges.gamma_under.0..=ranges.gamma_under.1).contains(&p));
        assert_eq!(pool.entries().len(), 6);
    }

    #[test]
    fn histogram_shift_on_gradient_scene() {
        // Mid-tone ramp over [0.35, 0.65].
        let img = Image::from_fn(16, 16, |y, x| [0.35 + 0.3 * ((y * 16 + x) as f64 / 255.0); 3]);
        for neg in generate_negative_pool(&img).entries() {
            let h = histogram(&neg.image);
            match neg.spec.polarity() {
                Polarity::Under => assert!(h.mass_below(0.3) >= 0.7),
                Polarity::Over => assert!(h.mass_above(0.6) >= 0.7),
            }
        }
    }

    proptest! {
        #[test]
        fn curves_are_monotone_and_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0, gamma in 0.05f64..20.0,
                                           c in 0.01f64..0.99, m in 0.1f64..80.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let img = Image::from_fn(1, 2, |_, x| [if x == 0 { lo } else { hi }; 3]);
            for out in [apply_gamma(&img, gamma).unwrap(), apply_sigmoid(&img, c).unwrap(),
                        apply_logarithmic(&img, m).unwrap()] {
                let d = out.data();
                prop_assert!(d[0] <= d[3]);
                prop_assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
