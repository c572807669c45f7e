use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use curvecast::config::RunConfig;
use curvecast::pipeline::{Pipeline, Stage};
use curvecast::Error;

#[derive(Parser, Debug)]
#[command(name = "curvecast", version, about = "Futures-curve forecasting, uncertainty and sizing backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set walk_forward.model.kind=bayes`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic quotes.
    Synth(Common),
    /// Parse quotes into per-contract microprice series.
    Ingest(Common),
    /// Align, down-sample and cut window samples.
    Sample(Common),
    /// Fit one model per walk-forward fold.
    Train(Common),
    /// Forecast each fold's test month.
    Predict(Common),
    /// Size positions and build ledgers for every strategy and sweep point.
    Backtest(Common),
    /// Write the report tables.
    Report(Common),
    /// All stages in order.
    Run(Common),
}

fn load(c: &Common) -> curvecast::Result<Pipeline> {
    let mut cfg = RunConfig::load(&c.config, &c.overrides)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    Ok(Pipeline::new(cfg))
}

fn execute(cmd: &Command) -> curvecast::Result<()> {
    let (common, stage) = match cmd {
        Command::Synth(c) => (c, Some(Stage::Synth)),
        Command::Ingest(c) => (c, Some(Stage::Ingest)),
        Command::Sample(c) => (c, Some(Stage::Sample)),
        Command::Train(c) => (c, Some(Stage::Train)),
        Command::Predict(c) => (c, Some(Stage::Predict)),
        Command::Backtest(c) => (c, Some(Stage::Backtest)),
        Command::Report(c) => (c, Some(Stage::Report)),
        Command::Run(c) => (c, None),
    };
    let p = load(common)?;
    match stage {
        Some(s) => p.run_stage(s),
        None => p.run_all(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if let Error::Diverged { history, .. } = &e {
                if let Some(last) = history.epochs.last() {
                    log::error!("last epoch {}: train {} val {}", last.epoch, last.train_loss, last.val_loss);
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
