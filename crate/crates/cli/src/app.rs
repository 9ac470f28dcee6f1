//! Argument parsing and dispatch for the `droprate` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, BenchArgs, SampleArgs, MIN_BENCH_REPEATS};
use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "droprate", version, about = "Dropout-schedule experiments on a character-level GPT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// JSON file of flat dotted keys, e.g. {"model.n_layer": 2}
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides such as --schedule=linear --p0=0.2 --train.max_iters=500
    #[arg(value_name = "--KEY=VALUE", allow_hyphen_values = true, trailing_var_arg = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one run; writes metrics.csv, ckpt.bin and run.json to out.dir
    Train {
        /// Continue from a checkpoint written by an earlier run of the same config
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train every schedule in turn and write report.md, combined.csv and loss_curves.svg
    Compare {
        /// Comma-separated schedule labels (baseline is always included)
        #[arg(long, value_name = "LIST")]
        schedules: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate text from a checkpoint
    Sample {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "\n")]
        prompt: String,
        #[arg(long, default_value_t = 500)]
        max_new: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Measure generation throughput; appends to bench.csv
    Bench {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 500)]
        n_tokens: usize,
        #[arg(long, default_value_t = MIN_BENCH_REPEATS)]
        repeats: usize,
        /// CSV to append to (default: bench.csv next to the checkpoint)
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a combined CSV as a two-panel SVG of train and val loss
    Plot {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { resume, cfg } => {
            let result = commands::cmd_train(cfg.config.as_deref(), &cfg.overrides, resume.as_deref())?;
            println!("{}", commands::summarize(&result));
        }
        Command::Compare { schedules, cfg } => {
            let mut overrides = cfg.overrides;
            if let Some(list) = schedules {
                overrides.push(format!("--compare.schedules={list}"));
            }
            let outcome = commands::cmd_compare(cfg.config.as_deref(), &overrides)?;
            print!("{}", outcome.report.to_markdown());
            println!("artifacts in {}", outcome.out_dir.display());
        }
        Command::Sample {
            checkpoint,
            prompt,
            max_new,
            temperature,
            top_k,
            seed,
        } => {
            let text = commands::cmd_sample(&SampleArgs {
                checkpoint,
                prompt,
                max_new,
                temperature,
                top_k,
                seed,
            })?;
            println!("{text}");
        }
        Command::Bench {
            checkpoint,
            n_tokens,
            repeats,
            output,
            seed,
        } => {
            let summary = commands::cmd_bench(&BenchArgs {
                checkpoint,
                n_tokens,
                repeats,
                output,
                seed,
            })?;
            for line in summary.lines() {
                println!("{line}");
            }
        }
        Command::Plot { input, output } => {
            let n = commands::cmd_plot(&input, &output)?;
            println!("wrote {} ({n} schedules)", output.display());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
