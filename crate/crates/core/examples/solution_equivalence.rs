//! Full and minimum-dimension problems give the same inputs, outputs and
//! slacks when the reduction keeps the whole range of the library.

use deepc::deepc::{assemble_full, assemble_reduced, verify_theorem1, LibraryPartition};
use deepc::experiment::Experiment;
use deepc::plant::BoxSet;
use deepc::qp::Settings;
use deepc::suites::{theorem1_suite, Theorem1Options};

fn main() -> deepc::Result<()> {
    // noise-free collection: the library has exact rank mL + n = 64
    let mut exp = Experiment::builtin("out");
    exp.config.collection.noise = BoxSet::uniform(2, 0.0, 0.0)?;
    let (u, y) = exp.collect()?;
    let libs = exp.libraries(&u, &y)?;
    let config = exp.config.deepc_config(2, 2)?;
    let pt = LibraryPartition::from_block(&libs.full, 10, 20, 2, 2)?;
    let (u_ini, y_ini) = (u.stacked(200, 10), y.stacked(200, 10));
    let y_r = config.reference.stack(0, 20);

    let full = assemble_full(&pt, &config, &u_ini, &y_ini, &y_r)?;
    let reduced = assemble_reduced(&libs.reduced, &config, &u_ini, &y_ini, &y_r)?;
    println!("decision dimension {} -> {}", full.dim(), reduced.dim());
    let report = verify_theorem1(&full, &reduced, &libs.reduced.v1, 1e-6, &Settings::default())?;
    println!("{report:#?}");

    let suite = theorem1_suite(&Theorem1Options::default(), 42, &Settings::default())?;
    println!(
        "random instances: {}/{} passed, worst {:.2e}; {}",
        suite.passed, suite.trials, suite.worst, suite.notes[0]
    );
    Ok(())
}
