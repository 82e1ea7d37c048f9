use pie_core::features::{extract_features, gram, ExpectationVector};
use pie_core::gradcheck::random_instance;
use pie_core::losses::{
    color_constancy_loss, infonce_expectation_loss, regional_consistency_loss, triplet_gram_loss, triplet_hinge,
};
use pie_core::{apply_curves, total_loss, CurveParamMaps, Image, LossBreakdown, LossContext, LossWeights, RegionMap};
use proptest::prelude::*;

fn assert_breakdown(got: LossBreakdown, want: [f64; 6]) {
    let got_arr = [got.l_cg, got.l_ce, got.l_rc, got.l_fr, got.l_cc, got.total];
    for (g, w) in got_arr.iter().zip(want) {
        assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{got:?} vs {want:?}");
    }
}

#[test]
fn golden_breakdown_on_pinned_fixture() {
    let inst = random_instance(2024, 16).unwrap();
    let enhanced = apply_curves(&inst.low, &inst.params).unwrap();
    assert_breakdown(
        total_loss(&enhanced, &inst.params, &inst.ctx).unwrap(),
        [
            0.2999440452384369,
            0.5395819862170257,
            0.0316840987934281,
            0.16339519139145828,
            667.864824244711,
            668.8994295663514,
        ],
    );
    let identity = CurveParamMaps::zeros(8, 16, 16);
    assert_breakdown(
        total_loss(&inst.low, &identity, &inst.ctx).unwrap(),
        [
            0.299950728761622,
            0.5211023064637065,
            0.01520067707843109,
            0.0,
            2.527718359917341e-5,
            0.8362789894873587,
        ],
    );
}

#[test]
fn zero_weights_give_zero_total() {
    let img = Image::uniform(8, 8, 0.4);
    let params = CurveParamMaps::zeros(8, 8, 8);
    let b = total_loss(&img, &params, &LossContext::new(LossWeights::zero())).unwrap();
    assert_eq!(b.total, 0.0);
}

#[test]
fn contrastive_only_weights_reduce_to_l_c() {
    let inst = random_instance(5, 16).unwrap();
    let mut ctx = inst.ctx.clone();
    ctx.weights = LossWeights {
        w_rc: 0.0,
        w_fp: 0.0,
        ..LossWeights::default()
    };
    let enhanced = apply_curves(&inst.low, &inst.params).unwrap();
    let b = total_loss(&enhanced, &inst.params, &ctx).unwrap();
    assert_eq!(b.total, b.l_cg + b.l_ce);
}

fn unit_image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0..=1.0f64, h * w * 3).prop_map(move |d| Image::new(h, w, d).unwrap())
}

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triplet_loss_is_nonnegative_and_zero_past_the_margin(
        a in unit_image(8, 8), p in unit_image(8, 8), n in unit_image(8, 8),
    ) {
        let g = |img: &Image| gram(&extract_features(img).unwrap());
        let (ga, gp, gn) = (g(&a), g(&p), g(&n));
        let loss = triplet_gram_loss(&ga, &gp, &gn, 0.3).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
        prop_assert_eq!(triplet_gram_loss(&ga, &ga, &gn, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn hinge_matches_its_definition(d_pos in 0.0..2.0f64, d_neg in 0.0..2.0f64, alpha in 0.0..1.0f64) {
        let h = triplet_hinge(d_pos, d_neg, alpha);
        if d_pos + alpha <= d_neg {
            prop_assert_eq!(h, 0.0);
        } else {
            prop_assert!((h - (d_pos - d_neg + alpha)).abs() < 1e-15);
        }
        prop_assert_eq!(triplet_hinge(d_pos, d_pos, alpha), alpha);
    }

    #[test]
    fn infonce_is_monotone_in_both_distances(
        a in vector(6), dir in vector(6), scale in 0.1..1.0f64, grow in 1.01..3.0f64,
    ) {
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let at = |t: f64| ExpectationVector(a.iter().zip(&dir).map(|(x, d)| x + t * d / norm).collect());
        let anchor = ExpectationVector(a.clone());
        let near = at(scale);
        let far = at(scale * grow);
        let base = infonce_expectation_loss(&anchor, &near, &near).unwrap();
        // Negative further away: loss drops. Positive further away: loss grows.
        prop_assert!(infonce_expectation_loss(&anchor, &near, &far).unwrap() < base);
        prop_assert!(infonce_expectation_loss(&anchor, &far, &near).unwrap() > base);
    }

    #[test]
    fn regional_loss_vanishes_on_regionwise_constant_brightness(
        values in prop::collection::vec(0.0..=1.0f64, 4), noise in prop::collection::vec(0.0..=1.0f64, 64),
    ) {
        let labels: Vec<u32> = (0..64).map(|i| ((i / 8) / 4 * 2 + (i % 8) / 4) as u32).collect();
        let regions = RegionMap::from_labels(8, 8, labels.clone()).unwrap();
        let flat = Image::from_fn(8, 8, |y, x| [values[labels[y * 8 + x] as usize]; 3]);
        prop_assert_eq!(regional_consistency_loss(&flat, &regions).unwrap(), 0.0);
        let noisy = Image::from_fn(8, 8, |y, x| [noise[y * 8 + x]; 3]);
        let loss = regional_consistency_loss(&noisy, &regions).unwrap();
        let constant_within = (0..4).all(|r| {
            let vals: Vec<f64> = (0..64).filter(|i| labels[*i] == r).map(|i| noise[i]).collect();
            vals.iter().all(|v| *v == vals[0])
        });
        prop_assert_eq!(loss == 0.0, constant_within);
    }

    #[test]
    fn gray_world_term_ignores_channel_order(img in unit_image(6, 6)) {
        let params = CurveParamMaps::zeros(1, 6, 6);
        let swapped = Image::from_fn(6, 6, |y, x| {
            let [r, g, b] = img.pixel(y, x);
            [b, r, g]
        });
        let a = color_constancy_loss(&img, &params, 200.0).unwrap();
        let b = color_constancy_loss(&swapped, &params, 200.0).unwrap();
        prop_assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn total_loss_is_finite_and_nonnegative(seed in 0u64..1000) {
        let inst = random_instance(seed, 8).unwrap();
        let enhanced = apply_curves(&inst.low, &inst.params).unwrap();
        let b = total_loss(&enhanced, &inst.params, &inst.ctx).unwrap();
        prop_assert!(b.is_finite());
        for v in [b.l_cg, b.l_ce, b.l_rc, b.l_fr, b.l_cc, b.total] {
            prop_assert!(v >= 0.0);
        }
    }
}
