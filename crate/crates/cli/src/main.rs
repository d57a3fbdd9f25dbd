use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crossnet::evalmetrics::EvalConfig;
use crossnet::gradcheck::{run_suite, SUITE_TOLERANCE};
use crossnet_cli::compare::{cmd_compare, results_table};
use crossnet_cli::gendata::{gen_data, GenSpec};
use crossnet_cli::run::{cmd_eval, cmd_train, EvalArgs, TaskArg};
use crossnet_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "crossnet", version, about = "Cross-connected multi-task CNN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the detection, segmentation and transfer datasets.
    GenData {
        /// Scene spec file; built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Pre-train or fine-tune one network.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate weights on the test split of a dataset.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// det or seg
        #[arg(long)]
        task: TaskArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = EvalConfig::default().nms_threshold)]
        nms: f64,
        #[arg(long, default_value_t = EvalConfig::default().fppi_lo)]
        fppi_lo: f64,
        #[arg(long, default_value_t = EvalConfig::default().fppi_hi)]
        fppi_hi: f64,
        #[arg(long, default_value_t = EvalConfig::default().match_iou)]
        match_iou: f64,
        #[arg(long, default_value_t = EvalConfig::default().score_floor)]
        score_floor: f64,
    },
    /// Train and evaluate the variants of a plan file.
    Compare {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn gradcheck(seed: u64) -> CliResult<()> {
    let results = run_suite(seed)?;
    println!(
        "{:<24} {:>9} {:>8} {:>14} {:>9}",
        "case", "instances", "redrawn", "max_rel_error", "seconds"
    );
    for r in &results {
        println!(
            "{:<24} {:>9} {:>8} {:>14.3e} {:>9.2}",
            r.name,
            r.instances,
            r.redrawn,
            r.max_rel_error,
            r.elapsed.as_secs_f64()
        );
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        println!("all cases below {SUITE_TOLERANCE:e}");
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { spec, out, force } => {
            let spec = match spec {
                Some(p) => GenSpec::read(&p)?,
                None => GenSpec::default(),
            };
            gen_data(&spec, &out, force)?;
            println!("wrote datasets to {}", out.display());
        }
        Command::Train { config } => {
            let trace = cmd_train(&config)?;
            println!("trained {} iterations", trace.records.len());
        }
        Command::Eval {
            weights,
            dataset,
            task,
            out,
            nms,
            fppi_lo,
            fppi_hi,
            match_iou,
            score_floor,
        } => {
            let args = EvalArgs {
                weights,
                dataset,
                task: task.0,
                config: EvalConfig {
                    nms_threshold: nms,
                    fppi_lo,
                    fppi_hi,
                    match_iou,
                    score_floor,
                },
                out,
            };
            print!("{}", cmd_eval(&args)?.summary_table());
        }
        Command::Compare { plan } => {
            let outcome = cmd_compare(&plan)?;
            print!("{}", results_table(&outcome.results));
        }
        Command::Gradcheck { seed } => gradcheck(seed)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
