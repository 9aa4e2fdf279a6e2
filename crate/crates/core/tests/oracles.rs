//! Hand-derived values and brute-force oracles for the numeric core.

mod common;

use common::*;
use fgd_core::ensemble::multi_net;
use fgd_core::imgcore::SoftMask;
use fgd_core::metrics;
use proptest::prelude::*;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (name, err) in layer_gradient_errors() {
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn every_student_matches_finite_differences() {
    for (name, err) in student_gradient_errors(100) {
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn pca_matches_brute_force_eigendecomposition() {
    for (k, seed) in [(1, 1), (3, 2), (5, 3)] {
        let o = pca_oracle(12, 10, 9, k, seed);
        assert!(o.reconstruction < 1e-8, "k={k}: residual {}", o.reconstruction);
        assert!(o.eigenvector < 1e-8, "k={k}: eigenvector {}", o.eigenvector);
        assert!(o.eigenvalue < 1e-8, "k={k}: eigenvalue {}", o.eigenvalue);
    }
}

#[test]
fn metric_fixtures_hold() {
    let bad = metric_fixtures();
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn metrics_match_pixel_loops() {
    let err = metric_oracle_error(1000, 4);
    assert!(err < 1e-12, "max difference {err}");
}

#[test]
fn f_beta_prefers_precision() {
    // P=0.9, R=0.6 versus the swapped pair
    let f = |p: f64, r: f64| 1.3 * p * r / (0.3 * p + r);
    assert!(f(0.9, 0.6) > f(0.6, 0.9));
}

fn mask_tuple() -> impl Strategy<Value = (Vec<SoftMask>, Vec<usize>, Vec<f64>)> {
    (2usize..5, 1usize..5, 1usize..5).prop_flat_map(|(m, w, h)| {
        let masks = prop::collection::vec(
            prop::collection::vec(0.0f64..=1.0, w * h)
                .prop_map(move |v| SoftMask::new(w, h, v).unwrap()),
            m,
        );
        let perm = Just((0..m).collect::<Vec<_>>()).prop_shuffle();
        // few distinct values, so ties are common
        let scores = prop::collection::vec((0u8..4).prop_map(f64::from), m);
        (masks, perm, scores)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn ensemble_laws_hold((masks, perm, scores) in mask_tuple()) {
        if let Some(why) = ensemble_laws(&masks, &perm, &scores) {
            prop_assert!(false, "{}", why);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn metrics_stay_in_range(seed in any::<u64>()) {
        let c = metric_case(&mut rng(seed));
        let f = metrics::f_beta(&c.pred, &c.gt, 0.3).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let m = metrics::mae(&c.pred, &c.gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        let b = fgd_core::postproc::binarize(&c.pred, 0.5);
        let (p, j) = metrics::pj(&b, &c.gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&j));
        let (_, j2) = metrics::pj(&c.gt, &b).unwrap();
        prop_assert_eq!(j, j2);
        let cl = metrics::corloc(&[c.record("x")]).unwrap();
        prop_assert!(cl == 0.0 || cl == 100.0);
    }
}

#[test]
fn product_of_one_mask_is_rejected() {
    let m = SoftMask::filled(2, 2, 0.5).unwrap();
    assert!(multi_net(&[m]).is_err());
}
