use deepc::data::{
    build_hankel, build_mosaic_hankel, build_page, build_shifted_page, check_persistent_excitation,
    membership_residual, Structure, Trajectory, DEFAULT_RANK_TOLERANCE,
};
use deepc::deepc::hankel_library;
use deepc::plant::{collect_data, BoxSet, CollectionSpec, LtiSystem};
use deepc::rng_from_seed;
use deepc::suites::random_minimal_plant;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn random_trajectory(channels: usize, len: usize, rng: &mut deepc::Rng) -> Trajectory {
    Trajectory::new(channels, (0..channels * len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn clean_data(sys: &LtiSystem, len: usize, seed: u64) -> (Trajectory, Trajectory) {
    let spec = CollectionSpec {
        length: len,
        input: BoxSet::uniform(sys.m(), -1.0, 1.0).unwrap(),
        noise: BoxSet::uniform(sys.p(), 0.0, 0.0).unwrap(),
        initial_state: None,
    };
    let data = collect_data(sys, &spec, seed).unwrap();
    (data.u, data.y)
}

/// `x0 = O_L^+ (y - T_L u)`, then re-simulate.
fn replay_error(sys: &LtiSystem, u: &DVector<f64>, y: &DVector<f64>, depth: usize) -> f64 {
    let o = sys.extended_observability(depth);
    let t = sys.convolution_matrix(depth);
    let x0 = o.clone().pseudo_inverse(1e-12).unwrap() * (y - &t * u);
    let u_traj = Trajectory::new(sys.m(), u.as_slice().to_vec()).unwrap();
    let (_, y_replay) = sys.simulate(&x0, &u_traj).unwrap();
    (DVector::from_column_slice(y_replay.as_slice()) - y).amax() / (1.0 + y.amax())
}

#[test]
fn trajectories_of_the_plant_lie_in_the_library_range() {
    let mut rng = rng_from_seed(4);
    for _ in 0..10 {
        let (n, m, p) = (rng.random_range(1..=4), rng.random_range(1..=2), rng.random_range(1..=2));
        let sys = random_minimal_plant(n, m, p, &mut rng);
        let depth = n + 3;
        let (u, y) = clean_data(&sys, (m + 1) * (depth + n) + 30, rng.random());
        let lib = hankel_library(&u, &y, depth).unwrap();

        // any fresh trajectory of length L is in the range
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let u_new = random_trajectory(m, depth, &mut rng);
        let (_, y_new) = sys.simulate(&x0, &u_new).unwrap();
        let v = DVector::from_iterator(
            (m + p) * depth,
            u_new.as_slice().iter().chain(y_new.as_slice()).copied(),
        );
        assert!(membership_residual(lib.matrix(), &v).unwrap() <= 1e-8 * (1.0 + v.norm()));

        // any combination of columns is a trajectory
        let g = DVector::from_fn(lib.cols(), |_, _| rng.random_range(-1.0..1.0));
        let w = lib.matrix() * g;
        let (wu, wy) = (w.rows(0, m * depth).into_owned(), w.rows(m * depth, p * depth).into_owned());
        assert!(replay_error(&sys, &wu, &wy, depth) <= 1e-8);
    }
}

#[test]
fn a_perturbed_vector_is_not_a_trajectory() {
    let mut rng = rng_from_seed(5);
    let sys = random_minimal_plant(3, 1, 1, &mut rng);
    let depth = 8;
    let (u, y) = clean_data(&sys, 80, 9);
    let lib = hankel_library(&u, &y, depth).unwrap();
    let mut v = lib.matrix().column(3).into_owned();
    v[depth + 2] += 1.0;
    assert!(membership_residual(lib.matrix(), &v).unwrap() > 1e-3);
    let (wu, wy) = (v.rows(0, depth).into_owned(), v.rows(depth, depth).into_owned());
    assert!(replay_error(&sys, &wu, &wy, depth) > 1e-3);
}

#[test]
fn excitation_report_flags_short_data() {
    let mut rng = rng_from_seed(6);
    let u = random_trajectory(2, 20, &mut rng);
    let r = check_persistent_excitation(&u, 15, DEFAULT_RANK_TOLERANCE).unwrap();
    assert!(!r.satisfied);
    let s = r.shortfall.unwrap();
    assert_eq!((s.columns_available, s.columns_required), (6, 30));
    let u = random_trajectory(2, 200, &mut rng);
    let r = check_persistent_excitation(&u, 15, DEFAULT_RANK_TOLERANCE).unwrap();
    assert!(r.satisfied && r.shortfall.is_none());
}

#[test]
fn csv_round_trip_is_exact() {
    let mut rng = rng_from_seed(7);
    let w = random_trajectory(3, 57, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.csv");
    w.save(&path).unwrap();
    assert_eq!(Trajectory::load(&path).unwrap(), w);
}

#[test]
fn malformed_csv_is_rejected() {
    assert!(Trajectory::read_csv("a,b\n1,2\n3\n".as_bytes()).is_err());
    assert!(Trajectory::read_csv("a\nx\n".as_bytes()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn hankel_shape_and_entries(seed in 0u64..100_000, ch in 1usize..4, len in 1usize..40, depth_frac in 0.0f64..1.0) {
        let mut rng = rng_from_seed(seed);
        let w = random_trajectory(ch, len, &mut rng);
        let depth = 1 + ((len - 1) as f64 * depth_frac) as usize;
        let h = build_hankel(&w, depth).unwrap();
        prop_assert_eq!(h.structure(), Structure::Hankel);
        prop_assert_eq!(h.cols(), len - depth + 1);
        prop_assert_eq!(h.rows(), ch * depth);
        for j in 0..h.cols() {
            for i in 0..depth {
                for c in 0..ch {
                    prop_assert_eq!(h.matrix()[(i * ch + c, j)], w.sample(i + j)[c]);
                }
            }
        }
    }

    #[test]
    fn page_shape_and_entries(seed in 0u64..100_000, ch in 1usize..4, len in 1usize..40, depth_frac in 0.0f64..1.0) {
        let mut rng = rng_from_seed(seed);
        let w = random_trajectory(ch, len, &mut rng);
        let depth = 1 + ((len - 1) as f64 * depth_frac) as usize;
        let h = build_page(&w, depth).unwrap();
        prop_assert_eq!(h.cols(), len / depth);
        prop_assert_eq!(h.discarded_samples(), len % depth);
        for j in 0..h.cols() {
            for i in 0..depth {
                for c in 0..ch {
                    prop_assert_eq!(h.matrix()[(i * ch + c, j)], w.sample(j * depth + i)[c]);
                }
            }
        }
    }

    #[test]
    fn mosaic_concatenates_hankels(seed in 0u64..100_000, lens in proptest::collection::vec(3usize..20, 1..5)) {
        let mut rng = rng_from_seed(seed);
        let ws: Vec<_> = lens.iter().map(|&l| random_trajectory(2, l, &mut rng)).collect();
        let depth = 3;
        let m = build_mosaic_hankel(&ws, depth).unwrap();
        prop_assert_eq!(m.cols(), lens.iter().map(|l| l - depth + 1).sum::<usize>());
        let mut offset = 0;
        for w in &ws {
            let h = build_hankel(w, depth).unwrap();
            prop_assert_eq!(m.matrix().columns(offset, h.cols()).into_owned(), h.matrix().clone());
            offset += h.cols();
        }
    }

    #[test]
    fn shifted_page_blocks_share_columns(seed in 0u64..100_000, len in 12usize..60, depth in 1usize..4, order in 1usize..4) {
        let mut rng = rng_from_seed(seed);
        let w = random_trajectory(1, len, &mut rng);
        let m = build_shifted_page(&w, depth, order).unwrap();
        prop_assert_eq!(m.cols(), (len - (order - 1) * depth) / depth);
        prop_assert_eq!(m.rows(), depth * order);
    }

    #[test]
    fn oversized_depth_is_an_error(len in 1usize..20, extra in 1usize..5) {
        let w = Trajectory::scalar(&vec![1.0; len]).unwrap();
        prop_assert!(build_hankel(&w, len + extra).is_err());
        prop_assert!(build_page(&w, len + extra).is_err());
        prop_assert!(build_hankel(&w, 0).is_err());
    }

    #[test]
    fn library_columns_are_members(seed in 0u64..100_000) {
        let mut rng = rng_from_seed(seed);
        let lib = DMatrix::from_fn(10, 4, |_, _| rng.random_range(-1.0..1.0));
        let g = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        prop_assert!(membership_residual(&lib, &(&lib * g)).unwrap() <= 1e-12);
    }
}
