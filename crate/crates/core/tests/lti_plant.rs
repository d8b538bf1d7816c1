use deepc::data::{Trajectory, DEFAULT_RANK_TOLERANCE};
use deepc::plant::{collect_data, BoxSet, CollectionSpec, LtiSystem};
use deepc::rng_from_seed;
use deepc::suites::{factorization_error, random_minimal_plant};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

fn spec(sys: &LtiSystem, length: usize, noise: f64) -> CollectionSpec {
    CollectionSpec {
        length,
        input: BoxSet::uniform(sys.m(), -3.0, 3.0).unwrap(),
        noise: BoxSet::uniform(sys.p(), -noise, noise).unwrap(),
        initial_state: None,
    }
}

#[test]
fn coupled_plant_impulse_response() {
    let sys = LtiSystem::coupled_four_state();
    assert_eq!((sys.n(), sys.m(), sys.p()), (4, 2, 2));
    let u = Trajectory::from_samples(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
    let (_, y) = sys.simulate(&DVector::zeros(4), &u).unwrap();
    assert_eq!(y.sample(0), &[0.0, 0.0]);
    assert_eq!(y.sample(1), &[0.017, 0.001]);
    assert!(sys.is_controllable(DEFAULT_RANK_TOLERANCE));
    assert_eq!(sys.observability_index(DEFAULT_RANK_TOLERANCE).unwrap(), 2);
}

#[test]
fn toml_round_trip_is_exact() {
    let mut rng = rng_from_seed(1);
    for sys in [LtiSystem::coupled_four_state(), LtiSystem::random_stable(5, 2, 3, &mut rng)] {
        assert_eq!(LtiSystem::from_toml(&sys.to_toml()).unwrap(), sys);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plant.toml");
        sys.save(&path).unwrap();
        assert_eq!(LtiSystem::load(&path).unwrap(), sys);
    }
}

#[test]
fn inconsistent_plant_file_is_rejected() {
    let text = "n = 2\nm = 1\np = 1\na = [[1.0, 0.0]]\nb = [[1.0], [0.0]]\nc = [[1.0, 0.0]]\nd = [[0.0]]\n";
    assert!(LtiSystem::from_toml(text).is_err());
}

#[test]
fn noise_free_collection_matches_resimulation() {
    let sys = LtiSystem::coupled_four_state();
    let data = collect_data(&sys, &spec(&sys, 400, 0.0), 17).unwrap();
    let (_, y) = sys.simulate(&DVector::zeros(4), &data.u).unwrap();
    assert_eq!(data.y, y);
    assert_eq!(data.y_clean, y);
    assert!(data.u.as_slice().iter().all(|v| v.abs() <= 3.0));
}

#[test]
fn noisy_collection_stays_within_noise_box() {
    let sys = LtiSystem::coupled_four_state();
    let data = collect_data(&sys, &spec(&sys, 400, 2e-3), 17).unwrap();
    let dev = data
        .y
        .as_slice()
        .iter()
        .zip(data.y_clean.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(dev <= 2e-3 && dev > 1e-3);
}

#[test]
fn collection_is_deterministic_in_the_seed() {
    let sys = LtiSystem::coupled_four_state();
    let a = collect_data(&sys, &spec(&sys, 100, 2e-3), 5).unwrap();
    let b = collect_data(&sys, &spec(&sys, 100, 2e-3), 5).unwrap();
    let c = collect_data(&sys, &spec(&sys, 100, 2e-3), 6).unwrap();
    assert_eq!(a.u, b.u);
    assert_eq!(a.y, b.y);
    assert_ne!(a.u, c.u);
}

#[test]
fn extended_observability_and_toeplitz_blocks() {
    let sys = LtiSystem::coupled_four_state();
    let o = sys.extended_observability(3);
    assert_eq!(o.shape(), (6, 4));
    assert_eq!(o.rows(2, 2).into_owned(), sys.c() * sys.a());
    let t = sys.convolution_matrix(3);
    assert_eq!(t.shape(), (6, 6));
    assert_eq!(t.view((0, 0), (2, 2)).into_owned(), sys.d().clone());
    assert_eq!(t.view((2, 0), (2, 2)).into_owned(), sys.c() * sys.b());
    assert_eq!(t.view((4, 0), (2, 2)).into_owned(), sys.c() * sys.a() * sys.b());
    assert!(t.view((0, 2), (2, 4)).iter().all(|v| *v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn factorization_identity_holds(seed in 0u64..100_000, depth in 1usize..8) {
        let mut rng = rng_from_seed(seed);
        let (n, m, p) = (rng.random_range(1..=5), rng.random_range(1..=3), rng.random_range(1..=3));
        let sys = random_minimal_plant(n, m, p, &mut rng);
        let data = collect_data(&sys, &CollectionSpec {
            length: depth + 30,
            input: BoxSet::uniform(m, -1.0, 1.0).unwrap(),
            noise: BoxSet::uniform(p, 0.0, 0.0).unwrap(),
            initial_state: Some((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()),
        }, rng.random()).unwrap();
        let err = factorization_error(&sys, &data.u, &data.x, &data.y, depth).unwrap();
        prop_assert!(err <= 1e-10, "error {err}");
    }

    #[test]
    fn superposition(seed in 0u64..100_000) {
        let mut rng = rng_from_seed(seed);
        let sys = LtiSystem::random_stable(3, 2, 2, &mut rng);
        let u1 = Trajectory::new(2, (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let u2 = Trajectory::new(2, (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let sum = Trajectory::new(2, u1.as_slice().iter().zip(u2.as_slice()).map(|(a, b)| a + b).collect()).unwrap();
        let z = DVector::zeros(3);
        let (_, y1) = sys.simulate(&z, &u1).unwrap();
        let (_, y2) = sys.simulate(&z, &u2).unwrap();
        let (_, ys) = sys.simulate(&z, &sum).unwrap();
        for ((a, b), s) in y1.as_slice().iter().zip(y2.as_slice()).zip(ys.as_slice()) {
            prop_assert!((a + b - s).abs() <= 1e-12 * (1.0 + s.abs()));
        }
    }
}
