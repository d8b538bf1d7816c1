//! Keeping the first r library columns instead of the leading singular
//! directions loses most of the range and the tracking with it.

use deepc::experiment::Experiment;
use deepc::reduction::range_distance;

fn main() -> deepc::Result<()> {
    let exp = Experiment::builtin("out");
    let (u, y) = exp.collect()?;
    let libs = exp.libraries(&u, &y)?;
    let r = libs.reduced.rank;
    let truncated = libs.truncated(r);
    println!(
        "sine of largest angle between the ranges of H_bar and the first {r} columns: {:.3}",
        range_distance(libs.reduced.h_bar.matrix(), &truncated)?
    );

    for (label, library) in [("full", libs.full.matrix().clone()), ("reduced", libs.reduced.h_bar.matrix().clone()), ("truncated", truncated)] {
        let log = exp.closed_loop(&library, label)?;
        let last = &log.records.last().unwrap().y;
        println!(
            "{label:>9}: dim {:3}, cost {:8.3}, final y [{:.3}, {:.3}]",
            log.dimension,
            log.accumulated_cost(),
            last[0],
            last[1]
        );
    }
    Ok(())
}
