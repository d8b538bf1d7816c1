mod common;

use common::scenario;
use deepc::reduction::{largest_log_gap, range_distance, reduce, reduce_with_svd, select_rank, svd, RankRule, ReducedLibrary};
use deepc::rng_from_seed;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn low_rank(rows: usize, cols: usize, rank: usize, rng: &mut deepc::Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(rows, rank, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(rank, cols, |_, _| rng.random_range(-1.0..1.0));
    a * b
}

#[test]
fn scenario_reduction() {
    let (_, libs) = scenario();
    assert_eq!(libs.full.matrix().shape(), (120, 371));
    assert_eq!(libs.reduced.rank, 64);
    assert_eq!(libs.reduced.h_bar.matrix().shape(), (120, 64));
    let structural = select_rank(&libs.bundle, RankRule::Structural { ml_plus_n: 2 * 30 + 4 }).unwrap();
    assert_eq!(structural, 64);
    let (idx, decades) = largest_log_gap(&libs.bundle.singular_values).unwrap();
    assert_eq!(idx, 64);
    assert!(decades > 1.0, "gap of {decades} decades");

    let h = libs.full.matrix();
    let v1 = &libs.reduced.v1;
    assert!((v1.tr_mul(v1) - DMatrix::identity(64, 64)).amax() <= 1e-12);
    let hv = h * v1;
    assert!((&hv - libs.reduced.h_bar.matrix()).amax() <= 1e-10 * h.amax());
    // columns of H_bar are orthogonal with norms sigma_1..sigma_r
    let gram = libs.reduced.h_bar.matrix().tr_mul(libs.reduced.h_bar.matrix());
    for i in 0..64 {
        let s = libs.reduced.retained[i];
        assert!((gram[(i, i)] - s * s).abs() <= 1e-9 * s * s);
    }
    // the range is close to H's up to the noise floor
    let tail = libs.reduced.discarded[0] / libs.reduced.retained[0];
    assert!(tail < 1e-2);
}

#[test]
fn fixed_rank_and_truncation_shapes() {
    let (_, libs) = scenario();
    let h = libs.full.matrix();
    let fixed = reduce_with_svd(h, &libs.bundle, RankRule::Fixed { rank: 10 }).unwrap();
    assert_eq!(fixed.h_bar.matrix().shape(), (120, 10));
    let cut = reduce_with_svd(h, &libs.bundle, RankRule::TruncateColumns { rank: 64 }).unwrap();
    assert_eq!(cut.h_bar.matrix(), &h.columns(0, 64).into_owned());
    assert_eq!(libs.truncated(64), h.columns(0, 64).into_owned());
}

#[test]
fn reduced_library_file_round_trip() {
    let (_, libs) = scenario();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reduced.json");
    libs.reduced.save(&path).unwrap();
    let back = ReducedLibrary::load(&path).unwrap();
    assert_eq!(back.h_bar.matrix(), libs.reduced.h_bar.matrix());
    assert_eq!(back.rank, 64);
}

#[test]
fn zero_library_is_an_error() {
    assert!(reduce(&DMatrix::zeros(4, 6), RankRule::default()).is_err());
}

#[test]
fn range_distance_cases() {
    let mut rng = rng_from_seed(2);
    let a = low_rank(8, 5, 3, &mut rng);
    let mix = DMatrix::from_fn(5, 7, |_, _| rng.random_range(-1.0..1.0));
    assert!(range_distance(&a, &(&a * mix)).unwrap() <= 1e-10);
    let b = low_rank(8, 5, 3, &mut rng);
    assert!(range_distance(&a, &b).unwrap() > 1e-2);
    assert_eq!(range_distance(&a, &low_rank(8, 5, 2, &mut rng)).unwrap(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exact_rank_reduction_preserves_range(seed in 0u64..100_000, rank in 1usize..6) {
        let mut rng = rng_from_seed(seed);
        let rows = rng.random_range(rank + 1..=12);
        let cols = rng.random_range(rank + 1..=20);
        let h = low_rank(rows, cols, rank, &mut rng);
        let red = reduce(&h, RankRule::default()).unwrap();
        prop_assert_eq!(red.rank, rank);
        prop_assert!(range_distance(&h, red.h_bar.matrix()).unwrap() <= 1e-9);
        let v1 = &red.v1;
        prop_assert!((v1.tr_mul(v1) - DMatrix::identity(rank, rank)).amax() <= 1e-12);
        // H = H_bar V1'
        prop_assert!((&h - red.h_bar.matrix() * v1.transpose()).amax() <= 1e-10 * (1.0 + h.amax()));
        prop_assert_eq!(select_rank(&svd(&h).unwrap(), RankRule::Threshold { rel_tol: 1e-9 }).unwrap(), rank);
    }

    #[test]
    fn svd_reconstructs(seed in 0u64..100_000) {
        let mut rng = rng_from_seed(seed);
        let (rows, cols) = (rng.random_range(1..=14), rng.random_range(1..=20));
        let rank = rng.random_range(1..=rows.min(cols));
        let h = low_rank(rows, cols, rank, &mut rng);
        let b = svd(&h).unwrap();
        prop_assert!((b.reconstruct() - &h).amax() <= 1e-12 * (1.0 + h.amax()));
        prop_assert!(b.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn fixed_rank_is_clipped(seed in 0u64..100_000, rank in 0usize..30) {
        let mut rng = rng_from_seed(seed);
        let h = DMatrix::from_fn(6, 9, |_, _| rng.random_range(-1.0..1.0));
        let red = reduce(&h, RankRule::Fixed { rank }).unwrap();
        prop_assert_eq!(red.rank, rank.clamp(1, 6));
        prop_assert_eq!(red.h_bar.cols(), red.rank);
    }
}

