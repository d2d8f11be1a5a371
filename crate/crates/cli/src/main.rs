use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quasidyn_cli::{load_config, run, Command, CliError};

/// Experiments on one-dimensional quasi-periodic Schrödinger operators.
///
/// Every subcommand reads a JSON config whose `command` field must name the
/// subcommand. Outputs go to the config's `output_dir`, or to the directory
/// in QUASIDYN_OUT when set. Exit status: 0 on success, 2 on bad input,
/// 3 when a numerical routine did not converge.
#[derive(Parser)]
#[command(name = "quasidyn", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the JSON experiment config
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Args)]
struct GreenboxArg {
    #[command(flatten)]
    base: ConfigArg,
    /// Also write |G| of the first good interval as a CSV heat table
    #[arg(long)]
    dump_green: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Continued fraction, convergents and Diophantine margin of a frequency
    Frequency(ConfigArg),
    /// Exact discrepancy of Kronecker orbits against the ETK and dks bounds
    Discrepancy(ConfigArg),
    /// Phase-averaged finite-scale Lyapunov exponents
    Lyapunov(ConfigArg),
    /// Large-deviation fractions across scales with a decay fit
    Ldt(ConfigArg),
    /// Good-interval scan of finite-box Green's functions
    Greenbox(GreenboxArg),
    /// Abel-averaged position moments, optionally by both routes
    Moments(ConfigArg),
    /// Moments maximized over phases against a transport bound
    VerifyBounds(ConfigArg),
}

impl Sub {
    fn split(&self) -> (Command, &PathBuf) {
        match self {
            Sub::Frequency(a) => (Command::Frequency, &a.config),
            Sub::Discrepancy(a) => (Command::Discrepancy, &a.config),
            Sub::Lyapunov(a) => (Command::Lyapunov, &a.config),
            Sub::Ldt(a) => (Command::Ldt, &a.config),
            Sub::Greenbox(a) => (Command::Greenbox, &a.base.config),
            Sub::Moments(a) => (Command::Moments, &a.config),
            Sub::VerifyBounds(a) => (Command::VerifyBounds, &a.config),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, path) = cli.command.split();
    let dump_green = matches!(&cli.command, Sub::Greenbox(a) if a.dump_green);
    let result = load_config(path).and_then(|mut cfg| {
        if cfg.command != cmd {
            return Err(CliError::Config(format!(
                "config is for `{}` but the subcommand is `{}`",
                cfg.command.name(),
                cmd.name()
            )));
        }
        if dump_green {
            if let Some(obj) = cfg.params.as_object_mut() {
                obj.insert("dump_green".into(), serde_json::Value::Bool(true));
            }
        }
        run(&cfg)
    });
    match result {
        Ok(out) => {
            for f in &out.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
