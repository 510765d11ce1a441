mod common;

use histlayer::hist::{self, Binning, HistogramConfig, HistogramLayer, HistogramParams, InitScheme};
use histlayer::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{oracle_forward, random_case, rot90, Case};

fn binning_strategy() -> impl Strategy<Value = Binning> {
    prop_oneof![Just(Binning::Rbf), Just(Binning::PiecewiseLinear)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_matches_literal_double_sum(
        seed in any::<u64>(),
        bins in 1usize..6,
        binning in binning_strategy(),
        normalize in any::<bool>(),
        sum_to_one in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Case { x, params, cfg, .. } = random_case(&mut rng, bins, binning, normalize, sum_to_one);
        let got = hist::bin_forward(&x, &params, &cfg).unwrap();
        let want = oracle_forward(&x, &params, &cfg);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert!(got.max_abs_diff(&want) <= 1e-13, "diff {}", got.max_abs_diff(&want));
    }

    #[test]
    fn gradients_match_central_differences(
        seed in any::<u64>(),
        bins in 1usize..5,
        binning in binning_strategy(),
        normalize in any::<bool>(),
        sum_to_one in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_case(&mut rng, bins, binning, normalize, sum_to_one);
        let [c, w, x] = common::layer_gradient_errors(&case);
        prop_assert!(c <= 1e-6 && w <= 1e-6 && x <= 1e-6, "centers {c:e} widths {w:e} input {x:e}");
    }

    #[test]
    fn composed_matches_direct(seed in any::<u64>(), bins in 1usize..17, normalize in any::<bool>(), sum_to_one in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Case { x, params, cfg, .. } = random_case(&mut rng, bins, Binning::Rbf, normalize, sum_to_one);
        let direct = hist::rbf_bin_forward(&x, &params, &cfg).unwrap();
        let composed = hist::forward_composed(&x, &params, None, &cfg).unwrap();
        prop_assert!(direct.max_abs_diff(&composed) <= 1e-12);
    }

    #[test]
    fn window_permutation_is_exact(
        values in prop::collection::vec(-1.0f64..2.0, 9),
        perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle(),
        binning in binning_strategy(),
        sum_to_one in any::<bool>(),
    ) {
        let cfg = HistogramConfig { binning, sum_to_one, ..HistogramConfig::rbf(4, 1, (3, 3), (3, 3)) };
        let params = hist::init_params(&cfg, 0).unwrap();
        let shuffled: Vec<f64> = perm.iter().map(|&i| values[i]).collect();
        let a = hist::bin_forward(&Tensor::new([1, 1, 3, 3], values).unwrap(), &params, &cfg).unwrap();
        let b = hist::bin_forward(&Tensor::new([1, 1, 3, 3], shuffled).unwrap(), &params, &cfg).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rotation_equivariance(seed in any::<u64>(), s in 1usize..4, tiles in 1usize..4, binning in binning_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = s * tiles;
        let cfg = HistogramConfig { binning, ..HistogramConfig::rbf(3, 2, (s, s), (s, s)) };
        let params = hist::init_params(&cfg, 0).unwrap();
        let x = Tensor::from_fn([2, 2, m, m], |_| rand::Rng::gen_range(&mut rng, 0.0..1.0));
        let y = hist::bin_forward(&x, &params, &cfg).unwrap();
        let y_rot = hist::bin_forward(&rot90(&x), &params, &cfg).unwrap();
        prop_assert!(rot90(&y).max_abs_diff(&y_rot) <= 1e-12);
    }

    #[test]
    fn normalized_outputs_are_bounded(seed in any::<u64>(), bins in 1usize..8, binning in binning_strategy(), sum_to_one in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Case { x, params, cfg, .. } = random_case(&mut rng, bins, binning, true, sum_to_one);
        let x = x.map(|v| 4.0 * v - 1.5);
        let y = hist::bin_forward(&x, &params, &cfg).unwrap();
        prop_assert!(y.min_value() >= 0.0 && y.max_value() <= 1.0 + 1e-15);
    }

    #[test]
    fn outlier_response_decays(center in 0.0f64..1.0, width in 0.2f64..5.0, start in 0.01f64..1.0) {
        let cfg = HistogramConfig::rbf(1, 1, (2, 2), (1, 1));
        let params = HistogramParams::new(1, 1, vec![center], vec![width]).unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..20 {
            let x = Tensor::filled([1, 1, 2, 2], center + start + step as f64 * 0.25);
            let y = hist::bin_forward(&x, &params, &cfg).unwrap().data()[0];
            prop_assert!(y <= prev);
            prev = y;
        }
        prop_assert!(prev < (-(width * width) * 16.0f64).exp() + 1e-300);
    }
}

#[test]
fn rbf_two_bin_window_matches_hand_sum() {
    let x = Tensor::new([1, 1, 3, 3], vec![0.0, 0.5, 1.0, 0.0, 0.5, 1.0, 0.0, 0.5, 1.0]).unwrap();
    let cfg = HistogramConfig::rbf(2, 1, (3, 3), (1, 1));
    let params = HistogramParams::new(2, 1, vec![0.0, 1.0], vec![2.0, 2.0]).unwrap();
    let y = hist::rbf_bin_forward(&x, &params, &cfg).unwrap();
    // each bin sees three exact hits, three at distance 0.5, three at 1
    let expected = (3.0 + 3.0 * (-1.0f64).exp() + 3.0 * (-4.0f64).exp()) / 9.0;
    assert!((y.data()[0] - expected).abs() < 1e-15);
    assert!((y.data()[1] - expected).abs() < 1e-15);
}

#[test]
fn window_at_every_center_gives_one() {
    let cfg = HistogramConfig::rbf(3, 1, (2, 2), (1, 1));
    let params = hist::init_params(&cfg, 0).unwrap();
    for b in 0..3 {
        let x = Tensor::filled([1, 1, 3, 3], params.center(b, 0));
        let y = hist::rbf_bin_forward(&x, &params, &cfg).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(y.at(0, b, r, c), 1.0);
            }
        }
    }
}

#[test]
fn sum_to_one_spreads_each_element_over_bins() {
    let cfg = HistogramConfig {
        sum_to_one: true,
        ..HistogramConfig::rbf(4, 1, (2, 2), (1, 1))
    };
    let params = hist::init_params(&cfg, 0).unwrap();
    let x = Tensor::from_fn([1, 1, 4, 4], |[_, _, i, j]| (i * 4 + j) as f64 / 15.0);
    let y = hist::bin_forward(&x, &params, &cfg).unwrap();
    for r in 0..3 {
        for c in 0..3 {
            let total: f64 = (0..4).map(|b| y.at(0, b, r, c)).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn unnormalized_is_window_size_times_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let Case { x, params, cfg, .. } = random_case(&mut rng, 3, Binning::Rbf, true, false);
    let raw = HistogramConfig {
        normalize_count: false,
        ..cfg.clone()
    };
    let a = hist::bin_forward(&x, &params, &cfg).unwrap();
    let b = hist::bin_forward(&x, &params, &raw).unwrap();
    let area = (cfg.window.0 * cfg.window.1) as f64;
    assert!(a.scale(area).max_abs_diff(&b) < 1e-12);
}

#[test]
fn equispaced_init_values() {
    let cfg = HistogramConfig::rbf(3, 2, (3, 3), (1, 1));
    let p = hist::init_params(&cfg, 9).unwrap();
    for k in 0..2 {
        for (b, want) in [1.0 / 6.0, 0.5, 5.0 / 6.0].iter().enumerate() {
            assert!((p.center(b, k) - want).abs() < 1e-15);
            assert_eq!(p.width(b, k), 3.0);
        }
    }
}

#[test]
fn uniform_init_is_bounded_and_seeded() {
    let cfg = HistogramConfig {
        init: InitScheme::UniformSymmetric,
        ..HistogramConfig::rbf(4, 4, (3, 3), (1, 1))
    };
    let a = hist::init_params(&cfg, 1).unwrap();
    let b = hist::init_params(&cfg, 1).unwrap();
    let c = hist::init_params(&cfg, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let bound = 1.0 / 4.0;
    assert!(a.centers().iter().chain(a.widths()).all(|v| v.abs() < bound));
}

#[test]
fn layer_with_reduction_backpropagates_to_input() {
    let cfg = HistogramConfig {
        reduce_from: Some(3),
        ..HistogramConfig::rbf(2, 2, (2, 2), (1, 1))
    };
    let layer = HistogramLayer::new(cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::from_fn([2, 3, 4, 4], |_| rand::Rng::gen_range(&mut rng, 0.0..1.0));
    let (y, cache) = layer.forward(&x).unwrap();
    let upstream = y.map(|_| 1.0);
    let g = layer.backward(&cache, &upstream).unwrap();
    let numeric = common::central_diff(
        |d| {
            let x = Tensor::new(x.shape(), d.to_vec()).unwrap();
            layer.forward(&x).unwrap().0.data().iter().sum()
        },
        x.data(),
    );
    for (a, n) in g.input.data().iter().zip(&numeric) {
        assert!(common::rel_err(*a, *n) < 1e-6);
    }
}

#[test]
fn params_json_round_trip() {
    let p = HistogramParams::new(2, 1, vec![0.25, 0.75], vec![2.0, -1.5]).unwrap();
    let json = p.to_json().unwrap();
    assert_eq!(HistogramParams::from_json(&json).unwrap(), p);
    assert!(HistogramParams::from_json(r#"{"bins":2,"channels":1,"centers":[0.1],"widths":[1,1]}"#).is_err());
}
