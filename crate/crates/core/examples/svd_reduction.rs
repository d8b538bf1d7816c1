//! Singular spectrum of the 120x371 scenario library and its reduction to 64
//! columns. Pass `--csv` to print the whole spectrum.

use deepc::experiment::Experiment;
use deepc::reduction::{largest_log_gap, range_distance, select_rank, write_spectrum_csv, RankRule};

fn main() -> deepc::Result<()> {
    let exp = Experiment::builtin("out");
    let (u, y) = exp.collect()?;
    let libs = exp.libraries(&u, &y)?;
    let sigma = &libs.bundle.singular_values;

    if std::env::args().any(|a| a == "--csv") {
        return write_spectrum_csv(sigma, std::io::stdout());
    }

    println!("library {}x{}", libs.full.rows(), libs.full.cols());
    for i in [0, 1, 62, 63, 64, 65, 119] {
        println!("sigma_{:<3} = {:.3e}", i + 1, sigma[i]);
    }
    let (idx, decades) = largest_log_gap(sigma).unwrap();
    println!("largest drop after index {idx}: {decades:.2} decades");

    for rule in [
        RankRule::default(),
        RankRule::Structural { ml_plus_n: 64 },
        RankRule::Threshold { rel_tol: 1e-9 },
        RankRule::Threshold { rel_tol: 1e-3 },
    ] {
        println!("{rule}: r = {}", select_rank(&libs.bundle, rule)?);
    }

    let h_bar = libs.reduced.h_bar.matrix();
    let v1 = &libs.reduced.v1;
    println!("H_bar {}x{}", h_bar.nrows(), h_bar.ncols());
    println!("|H V1 - H_bar| = {:.2e}", (libs.full.matrix() * v1 - h_bar).amax());
    let dropped = libs.full.matrix() - h_bar * v1.transpose();
    println!("|H - H_bar V1'| / |H| = {:.2e}", dropped.norm() / libs.full.matrix().norm());

    let truncated = libs.truncated(64);
    println!("range distance H_bar vs first 64 columns of H: {:.3}", range_distance(h_bar, &truncated)?);
    Ok(())
}
