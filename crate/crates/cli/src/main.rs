//! `psfsim`: dataset generation, training, kernel inspection and image
//! degradation from the command line.
//!
//! Exit codes: 0 on success, 1 for domain errors (invalid parameters, values
//! out of range, divergence), 2 for usage, file and format errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod args;
mod commands;
mod common;
mod config;
mod record;

use args::{
    DatasetGenArgs, DefocusArgs, DegradeArgs, ErrorReportArgs, GeometryArgs, LensArgs,
    PsfEvalArgs, TrainArgs,
};
use config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "psfsim", version, about = "Spatially-variant lens PSF simulation")]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the synthetic lens into a kernel dataset.
    #[command(allow_negative_numbers = true)]
    DatasetGen {
        #[command(flatten)]
        args: DatasetGenArgs,
        #[command(flatten)]
        lens: LensArgs,
    },
    /// Fit a regressor to a dataset.
    #[command(allow_negative_numbers = true)]
    Train {
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Evaluate a model at one field point.
    #[command(allow_negative_numbers = true)]
    PsfEval {
        #[command(flatten)]
        args: PsfEvalArgs,
        #[command(flatten)]
        lens: LensArgs,
    },
    /// Apply spatially-variant blur to an image.
    #[command(allow_negative_numbers = true)]
    Degrade {
        #[command(flatten)]
        args: DegradeArgs,
        #[command(flatten)]
        lens: LensArgs,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[command(flatten)]
        defocus: DefocusArgs,
    },
    /// Compare grid interpolation against per-pixel kernels.
    #[command(allow_negative_numbers = true)]
    ErrorReport {
        #[command(flatten)]
        args: ErrorReportArgs,
        #[command(flatten)]
        lens: LensArgs,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[command(flatten)]
        defocus: DefocusArgs,
    },
}

/// Bad invocation: missing or conflicting options, unreadable config.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Settings shared by every subcommand after merging flags and config.
pub struct Context {
    pub seed: u64,
    pub threads: usize,
    pub file: FileConfig,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let threads = cli.threads.or(file.threads).unwrap_or(1);
    if threads == 0 {
        return Err(UsageError("--threads must be at least 1".into()).into());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let ctx = Context {
        seed,
        threads,
        file,
    };
    pool.install(|| match cli.command {
        Command::DatasetGen { args, lens } => commands::dataset_gen(&ctx, args, lens),
        Command::Train { args } => commands::train(&ctx, args),
        Command::PsfEval { args, lens } => commands::psf_eval(&ctx, args, lens),
        Command::Degrade {
            args,
            lens,
            geometry,
            defocus,
        } => commands::degrade(&ctx, args, lens, geometry, defocus),
        Command::ErrorReport {
            args,
            lens,
            geometry,
            defocus,
        } => commands::error_report(&ctx, args, lens, geometry, defocus),
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<psfsim::Error>() {
            return match e {
                psfsim::Error::Io { .. } | psfsim::Error::Format { .. } => 2,
                _ => 1,
            };
        }
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

/// The error chain joined by `: `, skipping causes their parent already quotes.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        let domain = anyhow::Error::new(psfsim::Error::OutOfRange("dz".into()));
        assert_eq!(exit_code(&domain), 1);
        let io = anyhow::Error::new(std::io::Error::other("x"));
        assert_eq!(exit_code(&io), 2);
        let usage = anyhow::Error::new(UsageError("x".into())).context("outer");
        assert_eq!(exit_code(&usage), 2);
    }

    #[test]
    fn global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "psfsim", "train", "--dataset", "d", "--out", "m", "--seed", "3", "--threads", "2",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(3));
        assert_eq!(cli.threads, Some(2));
    }

    #[test]
    fn negative_values_parse() {
        let cli = Cli::try_parse_from([
            "psfsim", "degrade", "--input", "a.pfm", "--output", "b.pfm",
            "--defocus-gradient", "50,-50",
        ])
        .unwrap();
        match cli.command {
            Command::Degrade { defocus, .. } => {
                assert_eq!(defocus.defocus_gradient, Some(vec![50.0, -50.0]))
            }
            _ => panic!(),
        }
    }
}
