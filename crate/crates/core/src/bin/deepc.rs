use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deepc::experiment::{self, Experiment, Overrides, Variant};
use deepc::Error;

#[derive(Parser)]
#[command(name = "deepc", version, about = "DeePC experiments on full and SVD-reduced data libraries")]
struct Cli {
    /// Experiment config; the built-in defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// full | reduced | both
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a commented experiment.toml and plant.toml.
    Init,
    /// Collect offline input/output data.
    Collect,
    /// Reduce the Hankel library and export its spectrum.
    Reduce,
    /// Run closed-loop controllers and compare them.
    Run,
    /// Run the randomized property suites.
    Check,
    /// Time full vs reduced solves.
    Bench,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(cli: &Cli) -> Result<Experiment, Error> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        variant: cli.variant,
    };
    match &cli.config {
        Some(path) => Experiment::load(path, &overrides),
        None => {
            let mut exp = Experiment::builtin(cli.out.clone().unwrap_or_else(|| PathBuf::from("out")));
            if let Some(seed) = cli.seed {
                exp.config.seed = seed;
            }
            if let Some(v) = cli.variant {
                exp.config.variant = v;
            }
            Ok(exp)
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    if let Command::Init = cli.command {
        let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
        for path in experiment::cmd_init(&dir)? {
            println!("wrote {}", path.display());
        }
        return Ok(ExitCode::SUCCESS);
    }
    let exp = load(cli)?;
    match cli.command {
        Command::Init => unreachable!(),
        Command::Collect => {
            let m = experiment::cmd_collect(&exp)?;
            println!(
                "collected {} samples (seed {}, plant sha256 {}) into {}",
                m.length,
                m.seed,
                m.plant_sha256,
                exp.output_dir.display()
            );
        }
        Command::Reduce => {
            let r = experiment::cmd_reduce(&exp)?;
            println!("library {}x{}: rank {} by {}", r.rows, r.cols, r.rank, r.rule_description);
        }
        Command::Run => {
            let r = experiment::cmd_run(&exp)?;
            print!("{}", r.comparison_csv());
        }
        Command::Check => {
            let r = experiment::cmd_check(&exp)?;
            print_json(&r.report);
            if !r.report.passed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Bench => {
            let r = experiment::cmd_bench(&exp)?;
            print_json(&r.scenario);
            for case in &r.synthetic {
                println!("{}: d {} -> {}, speedup {:.2}", case.label, case.full_dimension, case.reduced_dimension, case.speedup);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } | Error::Parse { .. } | Error::InvalidParameter { .. } | Error::Dimension { .. } => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}
