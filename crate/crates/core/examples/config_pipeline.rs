//! The CLI pipeline driven from code: write a config, override it, then
//! collect, reduce, run and check into a temporary directory.

use deepc::experiment::{cmd_check, cmd_collect, cmd_init, cmd_reduce, cmd_run, Experiment, Overrides, Variant};

fn main() -> deepc::Result<()> {
    let dir = std::env::temp_dir().join("deepc-config-pipeline");
    let written = cmd_init(&dir)?;
    println!("wrote {:?}", written);

    let overrides = Overrides {
        seed: Some(7),
        out: Some(dir.join("out")),
        variant: Some(Variant::Both),
    };
    let mut exp = Experiment::load(dir.join("experiment.toml"), &overrides)?;
    exp.config.run.steps = 40;
    exp.config.check.theorem1_trials = 10;
    exp.config.check.qp_instances = 50;

    let manifest = cmd_collect(&exp)?;
    println!("collected with seed {} ({}), plant sha256 {}", manifest.seed, manifest.rng, manifest.plant_sha256);
    let reduce = cmd_reduce(&exp)?;
    println!("{}x{} -> rank {} by {}", reduce.rows, reduce.cols, reduce.rank, reduce.rule_description);
    let run = cmd_run(&exp)?;
    print!("{}", run.comparison_csv());
    let check = cmd_check(&exp)?;
    for s in &check.report.suites {
        println!("{:<24} {}/{} worst {:.1e}", s.name, s.passed, s.trials, s.worst);
    }
    println!("outputs in {}", exp.output_dir.display());
    Ok(())
}
