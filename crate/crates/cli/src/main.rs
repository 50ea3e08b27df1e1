use clap::{Args, Parser, Subcommand};
use helmstab_cli::{run, Command, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "helmstab", version, about = "Helmholtz corner-scattering experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Forward solves and far-field patterns for every scene.
    Solve(Flags),
    /// Three-balls calibration and Hankel bound certificate.
    Calibrate(Flags),
    /// Invariant suites; exits 1 if any check fails.
    Verify(Flags),
    /// Support-stability sweep, corner ladder and optional τ sweep.
    Stability(Flags),
}

#[derive(Args)]
struct Flags {
    /// Run manifest (JSON).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output directory; defaults to $HELMSTAB_OUT, then ./helmstab-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding the manifest.
    #[arg(long)]
    seed: Option<u64>,
    /// Calibration JSON from `helmstab calibrate`.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Relative GMRES tolerance of the forward solves.
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, f) = match cli.cmd {
        Cmd::Solve(f) => (Command::Solve, f),
        Cmd::Calibrate(f) => (Command::Calibrate, f),
        Cmd::Verify(f) => (Command::Verify, f),
        Cmd::Stability(f) => (Command::Stability, f),
    };
    let ov = Overrides {
        scene: f.scene,
        out: f.out,
        seed: f.seed,
        calibration: f.calibration,
        tol: f.tol,
        threads: f.threads,
        force: f.force,
    };
    match run(cmd, &ov) {
        Ok(o) => {
            for p in &o.files {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
