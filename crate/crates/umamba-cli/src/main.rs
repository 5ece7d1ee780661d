//! Command-line surface: argument parsing and exit-code mapping only; the
//! work happens in the library's command functions.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use umamba_cli::commands::{
    cmd_ablate, cmd_bench, cmd_emit_plots, cmd_evaluate, cmd_predict, cmd_train, AblateArgs,
    BenchArgs, EvaluateArgs, PlotsArgs, PredictArgs, TrainArgs,
};

#[derive(Parser)]
#[command(
    name = "umamba",
    version,
    about = "Long-horizon multivariate time-series forecasting with selective state-space blocks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a model; writes the echoed config, a history CSV and a checkpoint
    Train {
        /// Run configuration TOML
        #[arg(long)]
        config: PathBuf,
        /// Run directory (default: config outdir, else runs/<timestamp>-seed<seed>)
        #[arg(long)]
        outdir: Option<String>,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's epoch count
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score checkpoints on one split; writes metrics and forecast CSVs
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to score; repeat for a horizon sweep (one metrics row each)
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// train | val | test
        #[arg(long, default_value = "test")]
        split: String,
        /// raw | standardized
        #[arg(long, default_value = "raw")]
        space: String,
        #[arg(long)]
        outdir: Option<String>,
        /// Skip the per-window forecast dump
        #[arg(long)]
        no_forecasts: bool,
    },
    /// Forecast a single window; writes one small CSV
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train | val | test
        #[arg(long, default_value = "test")]
        split: String,
        /// Window index within the split
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long)]
        outdir: Option<String>,
    },
    /// Train and score the documented variant grid with a shared seed
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        outdir: Option<String>,
        /// Override the config's epoch count for quicker sweeps
        #[arg(long)]
        epochs: Option<usize>,
        /// raw | standardized
        #[arg(long, default_value = "raw")]
        space: String,
    },
    /// Time model and quadratic-reference forwards across lookback lengths
    BenchScaling {
        /// Optional run config supplying the model section
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated lookback lengths, increasing, spanning at least 8x
        #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        channels: usize,
        #[arg(long, default_value_t = 96)]
        horizon: usize,
        /// Timing repeats per length (median reported)
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        outdir: Option<String>,
    },
    /// Reshape run artifacts into tidy per-figure CSV bundles
    EmitPlots {
        /// Output directory for the bundles
        #[arg(long)]
        out: PathBuf,
        /// Run directory with config.toml and metrics.csv; repeatable
        #[arg(long)]
        run: Vec<PathBuf>,
        /// scaling.csv from bench-scaling
        #[arg(long)]
        scaling: Option<PathBuf>,
        /// Forecast CSV from evaluate or predict
        #[arg(long)]
        forecasts: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train { config, outdir, seed, epochs } => {
            cmd_train(&TrainArgs { config, outdir, seed, epochs }).map(|_| ())
        }
        Cmd::Evaluate { config, checkpoint, split, space, outdir, no_forecasts } => {
            cmd_evaluate(&EvaluateArgs {
                config,
                checkpoints: checkpoint,
                split,
                space,
                outdir,
                no_forecasts,
            })
            .map(|_| ())
        }
        Cmd::Predict { config, checkpoint, split, window, outdir } => {
            cmd_predict(&PredictArgs { config, checkpoint, split, window, outdir }).map(|_| ())
        }
        Cmd::Ablate { config, outdir, epochs, space } => {
            cmd_ablate(&AblateArgs { config, outdir, epochs, space }).map(|_| ())
        }
        Cmd::BenchScaling { config, lengths, channels, horizon, repeats, seed, outdir } => {
            cmd_bench(&BenchArgs { config, lengths, channels, horizon, repeats, seed, outdir })
                .map(|_| ())
        }
        Cmd::EmitPlots { out, run, scaling, forecasts } => {
            cmd_emit_plots(&PlotsArgs { out, runs: run, scaling, forecasts })
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_declaration_is_consistent() {
        Cli::command().debug_assert();
    }
}
