use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use heliocast_core::{Error, Pipeline, Predictor, RunConfig};

/// Next-hour forecasting of gridded solar irradiance maps.
#[derive(Debug, Parser)]
#[command(name = "heliocast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Key-value run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[arg(long, global = true, value_enum)]
    predictor: Option<PredictorArg>,

    /// Directory holding every stage's inputs and outputs.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize (or import) irradiance plus the clear-sky stack.
    Generate,
    /// Per-pixel mutual-information lag selection.
    Lagselect,
    /// Train one network per pixel.
    Train,
    /// Forecast the scored period.
    Predict,
    /// Score forecasts: nRMSE, gamma maps, pass masks.
    Evaluate,
    /// Seasonal comparison table.
    Report,
    /// Every stage in order.
    Run,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PredictorArg {
    Persistence,
    Scaled,
    Clearsky,
    Mlp,
}

impl From<PredictorArg> for Predictor {
    fn from(p: PredictorArg) -> Self {
        match p {
            PredictorArg::Persistence => Predictor::Persistence,
            PredictorArg::Scaled => Predictor::ScaledPersistence,
            PredictorArg::Clearsky => Predictor::ClearSky,
            PredictorArg::Mlp => Predictor::Mlp,
        }
    }
}

fn config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(p) = cli.predictor {
        cfg.predictor = Some(Predictor::from(p).id().to_string());
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let pipeline = Pipeline::new(config(cli)?)?;
    let written = match cli.command {
        Command::Generate => pipeline.generate(),
        Command::Lagselect => pipeline.lagselect(),
        Command::Train => pipeline.train(),
        Command::Predict => pipeline.predict(),
        Command::Evaluate => pipeline.evaluate(),
        Command::Report => pipeline.report(),
        Command::Run => pipeline.run_all(),
    }?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let mut c = c.downcast_ref::<Error>();
        while let Some(Error::Stage { source, .. }) = c {
            c = Some(source);
        }
        matches!(c, Some(Error::InvalidArgument(_) | Error::Config(_)))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}
