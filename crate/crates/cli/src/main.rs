use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spiral_euler::config::{Format, RunConfig};
use spiral_euler::run::{run, Command, Failure};

#[derive(Parser)]
#[command(name = "spiral-euler", version, about = "Self-similar spiral solutions of the 2D Euler equations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the sampling suites; overrides `verify.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact formats; overrides `output.formats`.
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    format: Option<Vec<FormatArg>>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Evaluate the operator-norm certificate.
    Certify,
    /// Solve for the profile and save it.
    Solve,
    /// Sample the physical fields and spiral curves.
    Reconstruct,
    /// Run the verification suites.
    Verify,
    /// Render the spiral SVG from a saved field.
    Render,
}

#[derive(ValueEnum, Clone, Copy)]
enum FormatArg {
    Json,
    Csv,
    Svg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match go(&cli) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code() as u8)
        }
    }
}

fn go(cli: &Cli) -> Result<Vec<PathBuf>, Failure> {
    if let Ok(v) = std::env::var("SPIRAL_EULER_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Config(format!("SPIRAL_EULER_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(f) = &cli.format {
        let mut v: Vec<Format> = f
            .iter()
            .map(|x| match x {
                FormatArg::Json => Format::Json,
                FormatArg::Csv => Format::Csv,
                FormatArg::Svg => Format::Svg,
            })
            .collect();
        v.sort();
        v.dedup();
        cfg.formats = v;
    }
    let cmd = match cli.cmd {
        Cmd::Certify => Command::Certify,
        Cmd::Solve => Command::Solve,
        Cmd::Reconstruct => Command::Reconstruct,
        Cmd::Verify => Command::Verify,
        Cmd::Render => Command::Render,
    };
    run(cmd, &cfg)
}
