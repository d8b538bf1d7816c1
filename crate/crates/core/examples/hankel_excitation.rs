//! Data matrices from a recorded input and their excitation diagnostics.

use deepc::data::{
    build_hankel, build_mosaic_hankel, build_page, check_collective_excitation, check_page_excitation,
    check_persistent_excitation, Trajectory, DEFAULT_RANK_TOLERANCE,
};
use deepc::rng_from_seed;
use rand::Rng;

fn uniform(channels: usize, len: usize, rng: &mut deepc::Rng) -> Trajectory {
    Trajectory::new(channels, (0..channels * len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> deepc::Result<()> {
    let w = Trajectory::scalar(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])?;
    println!("Hankel depth 3:\n{}", build_hankel(&w, 3)?.matrix());
    let page = build_page(&w, 3)?;
    println!("Page depth 3 ({} trailing sample dropped):\n{}", page.discarded_samples(), page.matrix());

    // m = 2, n = 4, L = 30: order n + L = 34 needs T >= (m + 1)(n + L) - 1 = 101
    let mut rng = rng_from_seed(3);
    for t in [60, 101, 400] {
        let u = uniform(2, t, &mut rng);
        let r = check_persistent_excitation(&u, 34, DEFAULT_RANK_TOLERANCE)?;
        println!(
            "T = {t:3}: rank {:2}/{} satisfied {} shortfall {:?}",
            r.computed_rank, r.required_rank, r.satisfied, r.shortfall
        );
    }

    let u = uniform(2, 600, &mut rng);
    for (depth, order) in [(5, 4), (30, 5)] {
        let r = check_page_excitation(&u, depth, order, DEFAULT_RANK_TOLERANCE)?;
        println!("T = 600, depth {depth}, order {order}: page exciting {} (rank {}/{})", r.satisfied, r.computed_rank, r.required_rank);
    }

    let pieces: Vec<_> = (0..4).map(|_| uniform(2, 40, &mut rng)).collect();
    let mosaic = build_mosaic_hankel(&pieces, 10)?;
    let r = check_collective_excitation(&pieces, 10, DEFAULT_RANK_TOLERANCE)?;
    println!("mosaic of 4 records: {}x{}, collective excitation {}", mosaic.rows(), mosaic.cols(), r.satisfied);
    Ok(())
}
