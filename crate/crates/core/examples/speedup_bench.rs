//! Solve-time ratio of reduced vs full problems on the scenario and on a
//! synthetic plant family with growing data length.

use deepc::experiment::{bench, Experiment};

fn main() -> deepc::Result<()> {
    let mut exp = Experiment::builtin("out");
    exp.config.bench.solves = 20;
    let report = bench(&exp)?;
    for case in std::iter::once(&report.scenario).chain(&report.synthetic) {
        println!(
            "{:>15}: d {:3} -> {:3}, full {:8.3} ms, reduced {:6.3} ms, speedup {:7.1}x",
            case.label, case.full_dimension, case.reduced_dimension, case.full.mean_ms, case.reduced.mean_ms, case.speedup
        );
    }
    println!("speedup grows with T: {}", report.synthetic_trend_increasing);
    Ok(())
}
