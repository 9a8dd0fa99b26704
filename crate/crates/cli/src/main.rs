use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use oqgen::{run, Command, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "oqgen", version, about = "Type-aware open-ended question generation pipeline")]
struct Args {
    #[arg(value_enum)]
    command: Command,

    #[arg(long)]
    config: PathBuf,

    /// Replaces the config's base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Dotted `key=value`, applied after includes; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let config = match PipelineConfig::load(&args.config, &args.overrides, args.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("oqgen {}: {e}", args.command.name());
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let report = run(args.command, &config);
    print!("{}", report.summary());
    if report.ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
