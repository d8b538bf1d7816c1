//! Receding-horizon tracking of the setpoint (0.65, 0.77) with the reduced
//! library. Writes the step log as CSV to stdout with `--csv`.

use deepc::experiment::Experiment;

fn main() -> deepc::Result<()> {
    let exp = Experiment::builtin("out");
    let (u, y) = exp.collect()?;
    let libs = exp.libraries(&u, &y)?;
    let log = exp.closed_loop(libs.reduced.h_bar.matrix(), "reduced")?;

    if std::env::args().any(|a| a == "--csv") {
        return log.write_csv(std::io::stdout());
    }
    for r in log.records.iter().step_by(10) {
        println!(
            "t {:3}  u [{:+.3}, {:+.3}]  y [{:.4}, {:.4}]  iters {}",
            r.t, r.u[0], r.u[1], r.y[0], r.y[1], r.iterations
        );
    }
    let timing = log.timing();
    println!(
        "dimension {}, accumulated cost {:.3}, solve mean {:.3} ms, median {:.3} ms",
        log.dimension,
        log.accumulated_cost(),
        timing.mean_ms,
        timing.median_ms
    );
    Ok(())
}
