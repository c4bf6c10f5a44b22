use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cavsqueeze_cli::commands::{
    cmd_evolve, cmd_fit_scaling, cmd_plot, cmd_sweep, cmd_verify, load_config, CliError,
};

#[derive(Parser)]
#[command(name = "cavsqueeze", version, about = "Spin squeezing of atoms in a driven leaky cavity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (deterministic, or an ensemble when conditional = true).
    Evolve {
        config: PathBuf,
        /// Output directory (overrides output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write an SVG plot.
        #[arg(long)]
        plot: bool,
    },
    /// Same as evolve with conditional = true.
    Trajectories {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: bool,
        /// Override n_traj.
        #[arg(long)]
        n_traj: Option<usize>,
        /// Override base_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Optimal squeezing over the config's n_list, with a power-law fit.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: bool,
    },
    /// Check elimination coefficients, generators, jump factorization and integrators.
    VerifyCoefficients {
        /// Skip the coefficient quadrature (the slow part).
        #[arg(long)]
        quick: bool,
    },
    /// Fit xi2_m = A N^a to a sweep CSV.
    FitScaling { csv: PathBuf },
    /// Plot a time-series or sweep CSV as SVG.
    Plot {
        csv: PathBuf,
        /// Output file (default: CSV path with .svg).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Evolve { config, out, plot } => {
            let cfg = load_config(&config)?;
            report_run(cmd_evolve(&cfg, out.as_deref(), plot)?)
        }
        Command::Trajectories { config, out, plot, n_traj, seed } => {
            let mut cfg = load_config(&config)?;
            cfg.conditional = true;
            if let Some(n) = n_traj {
                cfg.n_traj = n;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            report_run(cmd_evolve(&cfg, out.as_deref(), plot)?)
        }
        Command::Sweep { config, out, plot } => {
            let cfg = load_config(&config)?;
            let (sweep, written) = cmd_sweep(&cfg, out.as_deref(), plot)?;
            println!("{:>6} {:>12} {:>12} {:>12}", "N", "t_m", "xi2_m", "stderr");
            for p in &sweep.points {
                let se = p.xi2_m_stderr.map(|s| format!("{s:.3e}")).unwrap_or_else(|| "-".into());
                let mark = if p.excluded_from_fit { " (excluded)" } else { "" };
                println!("{:>6} {:>12.5} {:>12.6} {:>12}{mark}", p.n_atoms, p.t_m, p.xi2_m, se);
            }
            if let Some(f) = &sweep.fit {
                println!("fit: exponent {:.4}, prefactor {:.4}, r^2 {:.5}", f.exponent, f.prefactor, f.r_squared);
            }
            for f in &sweep.flags {
                println!("flag: {f}");
            }
            print_written(&written);
            Ok(())
        }
        Command::VerifyCoefficients { quick } => {
            let checks = cmd_verify(quick)?;
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            if failed > 0 {
                return Err(CliError::Runtime(format!("{failed} verification checks failed")));
            }
            Ok(())
        }
        Command::FitScaling { csv } => {
            let f = cmd_fit_scaling(&csv)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&cavsqueeze_cli::summary::fit_json(&f)).expect("fit serializes")
            );
            Ok(())
        }
        Command::Plot { csv, out } => {
            let path = cmd_plot(&csv, out.as_deref())?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn report_run((run, written): (cavsqueeze_cli::scenario::RunOutput, Vec<PathBuf>)) -> Result<(), CliError> {
    print!("N={} t_m={:.5} xi2_m={:.6}", run.n_atoms, run.optimum.t_m, run.optimum.xi2_m);
    if let Some(se) = run.optimum_stderr {
        print!(" stderr={se:.3e}");
    }
    println!();
    for f in &run.flags {
        println!("flag: {f}");
    }
    print_written(&written);
    Ok(())
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
