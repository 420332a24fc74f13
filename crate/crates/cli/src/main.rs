use std::path::PathBuf;
use std::process::ExitCode;

use asclt_lab::{config, list_experiments, run, CliError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "asclt-lab", version, about = "Numerical checks of almost-sure central limit theorems")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment and write its report files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List experiments with their default configs.
    List,
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Args::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(args: Args) -> Result<u8, CliError> {
    match args.cmd {
        Cmd::List => {
            print!("{}", list_experiments());
            Ok(0)
        }
        Cmd::Validate { config: path } => {
            let cfg = config::load(&path)?;
            println!("{}: ok ({})", path.display(), cfg.experiment);
            Ok(0)
        }
        Cmd::Run {
            config: path,
            seed,
            workers,
            out,
        } => {
            let mut cfg = config::load(&path)?;
            if let Some(s) = seed {
                cfg.seeds.master_seed = s;
            }
            if let Some(w) = workers {
                if w == 0 {
                    return Err(CliError::Config {
                        field: "workers".into(),
                        message: "must be positive".into(),
                    });
                }
                cfg.workers = Some(w);
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let output = run(&cfg)?;
            output.write(&cfg.output_dir, cfg.workers)?;
            print!("{}", output.summary());
            Ok(output.report.overall.exit_code() as u8)
        }
    }
}
