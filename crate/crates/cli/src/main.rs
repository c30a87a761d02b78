mod commands;
mod config;
mod error;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use weyl_ring::SystemParams;

use commands::Ctx;
use config::{PipelineMode, RunConfig};
use error::CliError;
use output::OutDir;

#[derive(Parser, Debug)]
#[command(name = "weyl-ring", version, about = "Weyl exceptional ring sweeps and synthetic experiments")]
struct Cli {
    /// JSON run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Biorthogonal eigensystem at one parameter point, printed as JSON.
    Eigensystem {
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        lambda_im: f64,
        #[arg(long, allow_hyphen_values = true)]
        delta: f64,
        /// Defaults to the config value.
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Berry phases of loops around the ring (fig2b.csv).
    Berry,
    /// Chern numbers of spheres around the ring (fig3e.csv, fig3cd.csv).
    Chern,
    /// Concurrence along loops and at φ = π (fig2c.csv, fig2d.csv).
    Concurrence,
    /// Full driven simulation against the effective coupling (rabi.csv).
    ValidateDrive,
    /// Berry, Chern and concurrence sweeps in one pipeline mode.
    Pipeline {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Shots per setting for synthetic-shots [default: 10000].
        #[arg(long)]
        shots: Option<u64>,
        /// Independent seeds for synthetic-shots [default: 1].
        #[arg(long)]
        seeds: Option<u64>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Analytic,
    SyntheticNoiseless,
    SyntheticShots,
}

fn pipeline_mode(current: PipelineMode, mode: Option<ModeArg>, shots: Option<u64>, seeds: Option<u64>) -> PipelineMode {
    let (cur_shots, cur_seeds) = match current {
        PipelineMode::SyntheticShots { shots, seeds } => (shots, seeds),
        _ => (10_000, 1),
    };
    let shot_mode = PipelineMode::SyntheticShots {
        shots: shots.unwrap_or(cur_shots),
        seeds: seeds.unwrap_or(cur_seeds),
    };
    match mode {
        Some(ModeArg::Analytic) => PipelineMode::Analytic,
        Some(ModeArg::SyntheticNoiseless) => PipelineMode::SyntheticNoiseless,
        Some(ModeArg::SyntheticShots) => shot_mode,
        None if matches!(current, PipelineMode::SyntheticShots { .. }) => shot_mode,
        None => current,
    }
}

/// Prints to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Command::Pipeline { mode, shots, seeds } = &cli.command {
        cfg.pipeline = pipeline_mode(cfg.pipeline, *mode, *shots, *seeds);
    }
    cfg.validate()?;

    if let Command::Eigensystem {
        lambda,
        lambda_im,
        delta,
        kappa,
    } = &cli.command
    {
        let p = SystemParams::new(Complex64::new(*lambda, *lambda_im), *delta, kappa.unwrap_or(cfg.kappa))?;
        let json = commands::eigensystem_json(&p)?;
        emit(&serde_json::to_string_pretty(&json).expect("eigensystem serializes"));
        if let Some(dir) = &cli.out {
            let out = OutDir::create(dir)?;
            out.write_json("eigensystem.json", &output::meta("eigensystem", "analytic", &cfg.hash(), cfg.seed), &json)?;
        }
        return Ok(());
    }

    let ctx = Ctx {
        hash: cfg.hash(),
        out: OutDir::create(cli.out.as_deref().unwrap_or("out".as_ref()))?,
        cfg,
    };
    let summary = match cli.command {
        Command::Berry => serde_json::to_value(commands::cmd_berry(&ctx)?),
        Command::Chern => serde_json::to_value(commands::cmd_chern(&ctx)?),
        Command::Concurrence => serde_json::to_value(commands::cmd_concurrence(&ctx)?),
        Command::ValidateDrive => serde_json::to_value(commands::cmd_validate_drive(&ctx)?),
        Command::Pipeline { .. } => serde_json::to_value(commands::cmd_pipeline(&ctx)?),
        Command::Eigensystem { .. } => unreachable!(),
    }
    .expect("summary serializes");
    emit(&serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
