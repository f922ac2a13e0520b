mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "shockfuse", version, about = "Shock-aware operator networks for parametric shock flows")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// JSON config layered over the preset defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Dataset manifest (JSON map of file name to condition and split).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Config override `key.path=value`, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve viscous Burgers for the default viscosity set and write a dataset.
    GenBurgers(GenBurgersArgs),
    /// Fit the shock-station (or shock-time) map on the training cases.
    Calibrate(CalibrateArgs),
    /// Train a model with the two-phase curriculum.
    Train(TrainArgs),
    /// Write prediction files with pointwise error columns.
    Predict(PredictArgs),
    /// Score predictions against truth.
    Eval(EvalArgs),
    /// Train and score shock-aware, fusion and vanilla models on equal budgets.
    Compare(CompareArgs),
    /// Run the five-variant ablation.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct GenBurgersArgs {
    #[arg(long, default_value_t = 256)]
    pub nx: usize,
    #[arg(long, default_value_t = 400)]
    pub nt: usize,
    /// Reference viscosity the default factors multiply.
    #[arg(long, default_value_t = shockfuse::burgers::NU_REF, allow_negative_numbers = true)]
    pub nu_ref: f64,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Internal spatial refinement of the solver.
    #[arg(long)]
    pub refine: Option<usize>,
    #[arg(long)]
    pub substeps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Also fit Huber-IRLS coefficients.
    #[arg(long)]
    pub robust: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// shock_aware, fusion or vanilla.
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest split to predict.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Monte Carlo dropout passes; adds `Sigma_<C>` columns.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Floor of the pointwise relative-error denominators.
    #[arg(long, default_value_t = 1e-9)]
    pub epsilon: f64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Score a trained model on the manifest's test split.
    #[arg(long, conflicts_with = "pred")]
    pub checkpoint: Option<PathBuf>,
    /// Prediction file to score against `--truth`.
    #[arg(long, requires = "truth")]
    pub pred: Option<PathBuf>,
    /// Reference field file with the same grid as `--pred`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Channels to score when comparing files.
    #[arg(long, value_delimiter = ',', default_value = "U")]
    pub channels: Vec<String>,
    /// Also write a centerline table at this y (or t).
    #[arg(long)]
    pub centerline: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "shock_aware,fusion,vanilla")]
    pub variants: Vec<String>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Test-split file to score; defaults to the first test case inside the
    /// training condition range.
    #[arg(long)]
    pub test_case: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if run::is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
