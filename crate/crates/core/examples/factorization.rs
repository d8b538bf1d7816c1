//! `[H_L(u); H_L(y)] = [I 0; T_L O_L] [H_L(u); H_1(x)]` on noise-free data.

use deepc::plant::{collect_data, BoxSet, CollectionSpec, LtiSystem};
use deepc::rng_from_seed;
use deepc::suites::{factorization_error, random_minimal_plant};

fn main() -> deepc::Result<()> {
    let sys = LtiSystem::coupled_four_state();
    let spec = CollectionSpec {
        length: 400,
        input: BoxSet::uniform(2, -3.0, 3.0)?,
        noise: BoxSet::uniform(2, 0.0, 0.0)?,
        initial_state: None,
    };
    let data = collect_data(&sys, &spec, 1)?;
    let err = factorization_error(&sys, &data.u, &data.x, &data.y, 30)?;
    println!("coupled plant, L = 30: relative error {err:.2e}");

    let mut rng = rng_from_seed(2);
    for n in 1..=6 {
        let sys = random_minimal_plant(n, 2, 2, &mut rng);
        let spec = CollectionSpec {
            length: 120,
            input: BoxSet::uniform(2, -1.0, 1.0)?,
            noise: BoxSet::uniform(2, 0.0, 0.0)?,
            initial_state: Some(vec![0.3; n]),
        };
        let data = collect_data(&sys, &spec, n as u64)?;
        let err = factorization_error(&sys, &data.u, &data.x, &data.y, 12)?;
        println!("random plant n = {n}: relative error {err:.2e}");
    }
    Ok(())
}
