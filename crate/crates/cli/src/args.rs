use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "mcnn",
    version,
    about = "Multi-scale CNN time-series classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and save it together with its training report.
    Train(TrainArgs),
    /// Train one model per hyperparameter point and keep the best.
    Grid(GridArgs),
    /// Report the vote-based error of a saved model on a labelled file.
    Eval(EvalArgs),
    /// Print one predicted label per series.
    Predict(PredictArgs),
    /// Nearest-neighbour baselines.
    Baseline(BaselineArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Znorm {
    /// Normalize only the datasets known to need it, matched by file name.
    Auto,
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ed,
    Dtw,
    Dtwcv,
}

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Args, Serialize)]
pub struct Common {
    /// Directory receiving the manifest and any artifacts.
    #[arg(long, default_value = "mcnn-run")]
    pub out: PathBuf,
    /// Also write the metrics as JSON to this file.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads. Computation is single-threaded, so results never depend on this.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: u64,
    #[arg(long, value_enum, default_value_t = Znorm::Auto)]
    pub znorm: Znorm,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Filters in every convolutional layer.
    #[arg(long, default_value_t = mcnn::McnnConfig::DEFAULT_FILTERS)]
    pub filters: usize,
    /// Local filter length as a share of each branch input length.
    #[arg(long, default_value_t = mcnn::McnnConfig::DEFAULT_FILTER_RATIO)]
    pub filter_ratio: f64,
    /// Outputs per channel of every max-pooling stage.
    #[arg(long, default_value_t = mcnn::McnnConfig::DEFAULT_POOLING_FACTOR)]
    pub pool_factor: usize,
    #[arg(long, default_value_t = mcnn::McnnConfig::DEFAULT_DENSE_UNITS)]
    pub dense_units: usize,
    /// Slice length as a share of the series length.
    #[arg(long, default_value_t = mcnn::McnnConfig::DEFAULT_SLICE_RATIO)]
    pub slice_ratio: f64,
    /// Down-sampling rates, comma separated; `none` for no scale branches.
    #[arg(long, default_value = "2,3", value_parser = parse_list)]
    pub k_rates: CountList,
    /// Moving-average windows, comma separated; `none` for no frequency branch.
    #[arg(long, default_value = "3,5", value_parser = parse_list)]
    pub ma_windows: CountList,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    /// Share of each class held out for validation.
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training file in UCR format.
    #[arg(long)]
    pub data: PathBuf,
    /// Optional test file in UCR format.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GridArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value = "0.05,0.1,0.2", value_parser = parse_ratios)]
    pub filter_ratios: RatioList,
    #[arg(long, default_value = "2,3,5", value_parser = parse_list)]
    pub pool_factors: CountList,
    #[arg(long, default_value = "16,32", value_parser = parse_list)]
    pub batch_sizes: CountList,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Saved model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled file in UCR format.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// UCR-format file; the first field of each line is ignored and series may differ in length.
    #[arg(long)]
    pub data: PathBuf,
    /// Append the per-class probability sums over all slices.
    #[arg(long)]
    pub probs: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Ed)]
    pub method: Method,
    /// Sakoe-Chiba window as a share of the series length; unconstrained when absent.
    #[arg(long)]
    pub window: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for the replay; defaults to the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Comma-separated counts; a newtype so clap treats the whole list as one value.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CountList(pub Vec<usize>);

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct RatioList(pub Vec<f64>);

fn parse_list(s: &str) -> Result<CountList, String> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("none") {
        return Ok(CountList(Vec::new()));
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("not a count: {v:?}"))
        })
        .collect::<Result<_, _>>()
        .map(CountList)
}

fn parse_ratios(s: &str) -> Result<RatioList, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("not a number: {v:?}"))
        })
        .collect::<Result<_, _>>()
        .map(RatioList)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists() {
        assert_eq!(parse_list("2, 3").unwrap(), CountList(vec![2, 3]));
        assert_eq!(parse_list("none").unwrap(), CountList(vec![]));
        assert!(parse_list("2,x").is_err());
        assert_eq!(parse_ratios("0.1").unwrap(), RatioList(vec![0.1]));
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
