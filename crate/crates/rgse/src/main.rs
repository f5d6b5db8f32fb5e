use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rgse::commands::{cmd_ablate, cmd_train, cmd_translate, cmd_verify};
use rgse::error::exit;
use rgse::verify::Suite;

/// Recurrent graph syntax encoder experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every cell of an ablation grid and tabulate the scores.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run gradient, oracle and invariant checks.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
    },
    /// Translate a CoNLL-U file with a trained checkpoint.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out } => cmd_train(&config, &out).map(|m| {
            for a in &m.artifacts {
                println!("{}", out.join(a).display());
            }
        }),
        Command::Ablate { grid, out, jobs } => cmd_ablate(&grid, &out, jobs).map(|p| println!("{}", p.display())),
        Command::Verify { suite } => {
            let (checks, status) = cmd_verify(suite);
            for c in &checks {
                println!("{c}");
            }
            println!("{} checks, {} failed", checks.len(), checks.iter().filter(|c| !c.passed).count());
            status
        }
        Command::Translate { ckpt, input } => cmd_translate(&ckpt, &input).map(|lines| {
            for l in lines {
                println!("{l}");
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
