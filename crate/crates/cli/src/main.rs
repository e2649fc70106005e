use std::path::PathBuf;
use std::process::ExitCode;

use afm_cli::{run, CliError, Command, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afm", version, about = "Additive factor models with spline loadings")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a panel with known loadings and factors.
    Simulate(Common),
    /// Estimate loadings and factors from a panel.
    Fit(Common),
    /// Score estimates against simulated truth.
    Eval(Common),
    /// Repeat simulate, fit and eval over a grid of panel sizes.
    Mc(Common),
    /// Map estimated factors to a Gaussian or empirical scale.
    Transform(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Fit(a) => (Command::Fit, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::Mc(a) => (Command::Mc, a),
        Cmd::Transform(a) => (Command::Transform, a),
    };
    let result = RunConfig::load(&args.config)
        .map(|c| c.with_overrides(args.seed, args.workers, args.out))
        .and_then(|cfg| run(command, &cfg));
    match result {
        Ok(outcome) => {
            if let Some(report) = outcome.report {
                println!("{}", serde_json::to_string_pretty(&report).expect("plain data"));
            }
            for f in outcome.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => report_error(command, &e),
    }
}

fn report_error(command: Command, e: &CliError) -> ExitCode {
    eprintln!("afm {}: {e}", command.name());
    ExitCode::from(e.exit_code() as u8)
}
