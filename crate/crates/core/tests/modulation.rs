mod common;

use common::{brute_stats, corrupted_patch_argmax, random_trace};
use hdvggt::geometry::{generate_scene, SceneConfig};
use hdvggt::modulation::*;
use hdvggt::tensor::Tensor;
use hdvggt::transformer::QKTrace;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn window_statistics_match_brute_force() {
    let bands = BandPartition::default();
    for (n, k, seed) in [(2, 4, 0), (4, 9, 1), (6, 16, 2)] {
        let trace = random_trace(6, n, k, 8, seed);
        for r in 1..3 {
            for t in 0..n {
                let stats = temporal_stats(&trace, t, r, &bands).unwrap();
                for (kind, band) in STAT_PAIRS {
                    let (s, v) = brute_stats(&trace, t, r, kind, bands.layers(band));
                    let ds = stats
                        .s(kind, band)
                        .data()
                        .iter()
                        .zip(&s)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    let dv = stats
                        .v(kind, band)
                        .data()
                        .iter()
                        .zip(&v)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    assert!(
                        ds < 1e-12 && dv < 1e-12,
                        "n={n} k={k} t={t} r={r}: {ds} {dv}"
                    );
                }
            }
        }
    }
}

#[test]
fn identical_views_have_zero_variance() {
    let base = random_trace(6, 1, 8, 8, 3);
    let copy = |v: &Vec<Vec<Tensor>>| v.iter().map(|l| vec![l[0].clone(); 4]).collect();
    let trace = QKTrace {
        q: copy(&base.q),
        k: copy(&base.k),
    };
    for t in 0..4 {
        let stats = temporal_stats(&trace, t, 2, &BandPartition::default()).unwrap();
        for pair in STAT_PAIRS {
            assert!(stats.v[&pair].data().iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn single_view_has_no_window() {
    let trace = random_trace(6, 1, 4, 8, 4);
    assert!(matches!(
        temporal_stats(&trace, 0, 1, &BandPartition::default()),
        Err(hdvggt::Error::InsufficientViews(1))
    ));
}

#[test]
fn corrupted_depth_patch_has_the_largest_distortion() {
    for seed in [11, 12, 13] {
        let (best, target) = corrupted_patch_argmax(seed, (1, 2));
        assert_eq!(best, target, "seed {seed}");
    }
}

#[test]
fn unstable_tokens_get_no_distortion() {
    let scene = generate_scene(&SceneConfig::default(), 12).unwrap();
    let (gh, gw) = scene.token_grid();
    let n = scene.len();
    let k = gh * gw;
    let stability = Tensor::from_fn(&[n, k], |i| f64::from(i % 3 != 0));
    let dist = aggregated_gradient(
        &scene.views,
        &scene.cameras,
        &scene.depths,
        &stability,
        (gh, gw),
        1.0,
    )
    .unwrap();
    for (i, &v) in dist.data().iter().enumerate() {
        if i % 3 == 0 {
            assert_eq!(v, 0.0);
        } else {
            assert!(v >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gramian_entries_are_in_unit_interval(seed in 0u64..10_000, ka in 1usize..8, kb in 1usize..8, c in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::uniform(&[ka, c], 2.0, &mut rng);
        let b = Tensor::uniform(&[kb, c], 2.0, &mut rng);
        let g = gramian_matrix(&a, &b).unwrap();
        prop_assert!(g.data().iter().all(|&v| (-1e-15..=1.0 + 1e-15).contains(&v)));
        let self_g = gramian_matrix(&a, &a).unwrap();
        for i in 0..ka {
            prop_assert!((self_g.data()[i * ka + i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_is_bounded_and_flips(scores in prop::collection::vec(0.0f64..1.0, 2..40), seed in 0u64..1000) {
        let n = scores.len();
        let labels: Vec<bool> = (0..n).map(|i| (i as u64 * 7 + seed).is_multiple_of(3) || i == 0).collect();
        prop_assume!(labels.iter().any(|&l| !l));
        let auc = roc_auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((roc_auc(&neg, &labels).unwrap() - (1.0 - auc)).abs() < 1e-12);
    }

    #[test]
    fn quantile_mask_keeps_the_expected_count(values in prop::collection::vec(-5.0f64..5.0, 1..64), q in 0.05f64..0.95) {
        let k = values.len();
        let mut uniq = values.clone();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        prop_assume!(uniq.len() == k);
        let sal = Tensor::new(vec![1, k], values).unwrap();
        let (mask, _) = initial_mask(&sal, AlphaMode::Quantile(q)).unwrap();
        let kept = mask.data().iter().filter(|&&m| m == 1.0).count();
        prop_assert_eq!(kept, quantile_count(q, k));
        prop_assert_eq!(kept, ((1.0 - q) * k as f64 - 1e-9).ceil() as usize);
    }

    #[test]
    fn union_refinement_contains_the_initial_mask(seed in 0u64..10_000, n in 1usize..4, k in 2usize..20, q in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sal = Tensor::uniform(&[n, k], 1.0, &mut rng);
        let dist = Tensor::uniform(&[n, k], 1.0, &mut rng).map(f64::abs);
        let (initial, _) = initial_mask(&sal, AlphaMode::Quantile(q)).unwrap();
        let refined = refine_mask(&initial, &dist, AlphaMode::Quantile(q), RefineMode::Union).unwrap();
        for (a, b) in initial.data().iter().zip(refined.mask.data()) {
            prop_assert!(*b >= *a);
            prop_assert!(*b == 0.0 || *b == 1.0);
        }
    }

    #[test]
    fn saliency_is_in_unit_interval(seed in 0u64..500) {
        let trace = random_trace(6, 3, 9, 8, seed);
        let (sal, _) = saliency_map(&trace, 1, &BandPartition::default(), Reduction::default()).unwrap();
        prop_assert!(sal.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
