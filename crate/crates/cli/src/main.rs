//! `ripple`: builds graphs, generates data, aligns, evaluates and backtests.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
//! Failures print one JSON line on standard error.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{Context, Format};
use crate::config::{DataPaths, RunConfig};
use crate::error::CliError;

/// Overrides the output directory when `--out` is not given.
const OUTPUT_ENV: &str = "RIPPLE_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "ripple",
    version,
    about = "Event-driven market shock propagation toolkit"
)]
struct Cli {
    /// Run document (TOML). Relative data paths resolve against its directory.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory; falls back to $RIPPLE_OUTPUT_DIR, then the config, then `out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dataset directory with the standard file names (edges.csv, returns.csv, ...).
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monthly knowledge-graph snapshots.
    #[command(subcommand)]
    Kg(KgCommand),
    /// Instruction datasets from graph snapshots.
    #[command(subcommand)]
    Instr(InstrCommand),
    /// Synthetic markets with known ground truth.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Parameter alignment against realized residuals.
    #[command(subcommand)]
    Align(AlignCommand),
    /// Pricing regressions of predicted shocks.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Long-short backtest against four benchmarks.
    #[command(subcommand)]
    Backtest(BacktestCommand),
    /// Serve the external propagator protocol on stdin/stdout.
    MockClient(MockArgs),
}

#[derive(Debug, Subcommand)]
enum KgCommand {
    Build,
    Stats,
    /// Export snapshots with one relation layer removed.
    Ablate {
        #[arg(long)]
        relation: String,
    },
}

#[derive(Debug, Subcommand)]
enum InstrCommand {
    Gen,
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    Gen,
}

#[derive(Debug, Subcommand)]
enum AlignCommand {
    Run {
        /// Trailing event months held out of training.
        #[arg(long)]
        holdout: Option<usize>,
        #[arg(long)]
        max_updates: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct PropagatorArgs {
    /// `diffusion`, `null`, `oracle` or `external:<command>`.
    #[arg(long)]
    propagator: Option<String>,
    /// Diffusion parameters (TOML), e.g. the `theta.toml` of an alignment run.
    #[arg(long, value_name = "FILE")]
    params: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    Run {
        #[command(flatten)]
        prop: PropagatorArgs,
        /// Add one row per removed relation layer.
        #[arg(long)]
        ablate: bool,
        /// Control for FF5 loadings.
        #[arg(long)]
        controls: bool,
    },
}

#[derive(Debug, Subcommand)]
enum BacktestCommand {
    Run {
        #[command(flatten)]
        prop: PropagatorArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MockModeArg {
    Heuristic,
    GoldenEcho,
    Chaos,
}

#[derive(Debug, Args)]
struct MockArgs {
    #[arg(long, value_enum, default_value_t = MockModeArg::Heuristic)]
    mode: MockModeArg,
    #[arg(long, default_value_t = 0.5)]
    decay: f64,
    #[arg(long, default_value_t = 0.0)]
    chaos_rate: f64,
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// Recorded responses (JSONL) for golden-echo mode.
    #[arg(long, value_name = "FILE")]
    golden: Option<PathBuf>,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_line());
            return err.code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(dir) = &cli.data {
        if !dir.is_dir() {
            return Err(CliError::data(format!(
                "data directory {} does not exist",
                dir.display()
            )));
        }
        cfg.data = DataPaths::in_dir(dir);
    }
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::usage("no command given; see --help"));
    };
    let out = cli
        .out
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let format = match cli.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Jsonl => Format::Jsonl,
    };

    if let Command::MockClient(a) = command {
        return commands::mock_client(
            match a.mode {
                MockModeArg::Heuristic => ripple_core::propagator::mock::MockMode::Heuristic,
                MockModeArg::GoldenEcho => ripple_core::propagator::mock::MockMode::GoldenEcho,
                MockModeArg::Chaos => ripple_core::propagator::mock::MockMode::Chaos,
            },
            a.decay,
            a.chaos_rate,
            a.delay_ms,
            cfg.seed.unwrap_or(0),
            a.golden.as_deref(),
        );
    }

    cfg.check_paths()?;
    let mut ctx = Context { cfg, out, format };
    let (name, outputs) = match command {
        Command::Kg(KgCommand::Build) => ("kg build", commands::kg_build(&ctx)?),
        Command::Kg(KgCommand::Stats) => ("kg stats", commands::kg_stats(&ctx)?),
        Command::Kg(KgCommand::Ablate { relation }) => {
            ("kg ablate", commands::kg_ablate(&ctx, &relation)?)
        }
        Command::Instr(InstrCommand::Gen) => ("instr gen", commands::instr_gen(&mut ctx)?),
        Command::Synth(SynthCommand::Gen) => ("synth gen", commands::synth_gen(&mut ctx)?),
        Command::Align(AlignCommand::Run {
            holdout,
            max_updates,
        }) => (
            "align run",
            commands::align_run(&mut ctx, holdout, max_updates)?,
        ),
        Command::Eval(EvalCommand::Run {
            prop,
            ablate,
            controls,
        }) => {
            commands::apply_propagator_args(&mut ctx, prop.propagator, prop.params.as_deref())?;
            ctx.cfg.eval.ablate |= ablate;
            ctx.cfg.eval.controls |= controls;
            ("eval run", commands::eval_run(&ctx)?)
        }
        Command::Backtest(BacktestCommand::Run { prop }) => {
            commands::apply_propagator_args(&mut ctx, prop.propagator, prop.params.as_deref())?;
            ("backtest run", commands::backtest_run(&ctx)?)
        }
        Command::MockClient(_) => unreachable!("handled above"),
    };
    let m = manifest::write_manifest(&ctx.out, name, &ctx.cfg, &outputs)?;
    log::info!("wrote {} outputs and {}", outputs.len(), m.display());
    Ok(())
}
