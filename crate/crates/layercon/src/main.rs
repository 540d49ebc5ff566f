//! Command-line front end: table dumps, full runs, and the verification
//! suite. Exit codes: 0 success, 1 configuration error, 2 runtime error,
//! 3 verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use layercon::acceptance;
use layercon::config::RunConfig;
use layercon::domain::conduction_profile;
use layercon::error::{Error, Result};
use layercon::output::{self, RunEmitter};
use layercon::runner::{self, Schedule};
use layercon::transport::Transport;

#[derive(Parser)]
#[command(
    name = "layercon",
    version,
    about = "Spectral-Galerkin solver for Darcy-Boussinesq convection in layered porous strips"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the vertical spectrum and the kappa = 0 eigenfunctions
    Eigen(CommonArgs),
    /// Dump the steady conduction profile
    Steady(CommonArgs),
    /// Advance the configured initial state to the horizon
    Run(RunArgs),
    /// Run the built-in verification suite
    Verify(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (required for run and verify)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (defaults to the configured one)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress informational output
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint file to resume from
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::InvalidStack(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    configure_threads()?;
    match cli.command {
        Command::Eigen(args) => {
            eigen(&args)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Steady(args) => {
            steady(&args)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            run(&args)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(args) => verify(&args),
    }
}

/// LAYERCON_THREADS caps worker parallelism; 0 or unset picks automatically.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("LAYERCON_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        Error::InvalidConfig(format!(
            "LAYERCON_THREADS must be a nonnegative integer, got {raw:?}"
        ))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Single uniform layer; used by the table dumps when no config is given.
const DEFAULT_CONFIG: &str = "\
stack.interfaces = 0.0 -1.0
stack.permeability = 1.0
stack.porosity = 1.0
stack.diffusivity = 1.0
";

fn load_config(path: &Option<PathBuf>, required: bool) -> Result<RunConfig> {
    let config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::InvalidConfig(format!("reading {}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None if required => {
            return Err(Error::InvalidConfig(
                "--config is required for this subcommand".into(),
            ))
        }
        None => RunConfig::parse(DEFAULT_CONFIG)?,
    };
    config.validate()?;
    Ok(config)
}

fn out_dir(args: &CommonArgs, config: &RunConfig) -> PathBuf {
    args.out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.directory))
}

fn eigen(args: &CommonArgs) -> Result<()> {
    let config = load_config(&args.config, false)?;
    let grid = config.build_grid()?;
    let dir = out_dir(args, &config);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config_resolved.cfg"), config.emit())?;
    std::fs::write(dir.join("spectrum.csv"), output::spectrum_csv(&grid))?;
    std::fs::write(
        dir.join("eigenfunctions.csv"),
        output::eigenfunctions_csv(&grid),
    )?;
    if !args.quiet {
        println!(
            "spectrum for {} wavenumbers x {} eigenfunctions written to {}",
            grid.nx() / 2 + 1,
            grid.kmax(),
            dir.display()
        );
    }
    Ok(())
}

fn steady(args: &CommonArgs) -> Result<()> {
    let config = load_config(&args.config, false)?;
    let grid = config.build_grid()?;
    let lift = conduction_profile(&config.stack, &config.boundary);
    let dir = out_dir(args, &config);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config_resolved.cfg"), config.emit())?;
    std::fs::write(dir.join("lift.csv"), output::lift_csv(&grid, &lift))?;
    if !args.quiet {
        println!(
            "conduction profile (flux {:.6e}) written to {}",
            lift.flux(),
            dir.display()
        );
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let config = load_config(&args.common.config, true)?;
    let grid = config.build_grid()?;
    let tr = Transport::new(
        &grid,
        config.constants,
        config.boundary,
        config.elliptic_order,
        config.elems_per_layer,
        config.stepper,
    )?;
    let state = match &args.resume {
        Some(p) => runner::resume_state(&tr, p)?,
        None => tr.state_at(config.initial_coeffs(&grid)?, 0.0, 0)?,
    };
    let dir = out_dir(&args.common, &config);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config_resolved.cfg"), config.emit())?;
    let mut emitter = RunEmitter::new(&tr, &dir, config.formats);
    let schedule = Schedule {
        t_end: config.t_end,
        cadence: config.cadence,
        checkpoint_every: config.checkpoint_every,
    };
    let outcome = runner::run(&tr, state, &schedule, &mut emitter)?;
    emitter.finish(&outcome.state)?;
    if !args.common.quiet {
        let last = outcome.records.last().expect("the runner always records");
        println!(
            "advanced to t = {:.6e} over {} steps; {} records written to {}",
            outcome.state.t,
            outcome.state.step,
            outcome.records.len(),
            dir.display()
        );
        println!(
            "final energy {:.6e}, dissipation {:.6e}, max speed {:.3e}",
            last.energy, last.dissipation, outcome.state.max_speed
        );
    }
    Ok(())
}

fn verify(args: &CommonArgs) -> Result<ExitCode> {
    // the check suite is fixed; the config is still parsed and validated so
    // a broken file fails fast with the config exit code
    let _config = load_config(&args.config, true)?;
    let binary = std::env::current_exe().ok();
    let mut failures = 0usize;
    for index in 1..=acceptance::COUNT {
        let res = acceptance::run_criterion(index, binary.as_deref());
        if !res.passed {
            failures += 1;
        }
        println!(
            "[{}] {:2}. {} ({:.2}s)",
            if res.passed { "PASS" } else { "FAIL" },
            res.index,
            res.name,
            res.seconds
        );
        if !args.quiet {
            for line in &res.details {
                println!("        {line}");
            }
        }
    }
    if failures == 0 {
        println!("verification passed: all {} checks", acceptance::COUNT);
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "verification FAILED: {failures} of {} checks",
            acceptance::COUNT
        );
        Ok(ExitCode::from(3))
    }
}
