//! The four-state coupled plant: impulse response, data collection and the
//! TOML plant format.

use deepc::data::{Trajectory, DEFAULT_RANK_TOLERANCE};
use deepc::plant::{collect_data, BoxSet, CollectionSpec, LtiSystem};
use nalgebra::DVector;

fn main() -> deepc::Result<()> {
    let sys = LtiSystem::coupled_four_state();
    println!("{}", sys.to_toml());
    println!(
        "controllable {}, observability index {}",
        sys.is_controllable(DEFAULT_RANK_TOLERANCE),
        sys.observability_index(DEFAULT_RANK_TOLERANCE)?
    );

    let impulse = Trajectory::from_samples(&[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])?;
    let (_, y) = sys.simulate(&DVector::zeros(4), &impulse)?;
    for (t, s) in y.samples().enumerate() {
        println!("y({t}) = {s:?}");
    }

    let spec = CollectionSpec {
        length: 400,
        input: BoxSet::uniform(2, -3.0, 3.0)?,
        noise: BoxSet::uniform(2, -0.002, 0.002)?,
        initial_state: None,
    };
    let data = collect_data(&sys, &spec, 1)?;
    let worst_noise = data
        .y
        .as_slice()
        .iter()
        .zip(data.y_clean.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("collected {} samples, largest output noise {worst_noise:.2e}", data.u.len());
    Ok(())
}
