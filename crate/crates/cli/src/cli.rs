use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "devimplicit", version, about = "Fit, regularize and evaluate neural signed distance fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a network to the input cloud with the data term only.
    Fit {
        #[command(flatten)]
        common: Overrides,
    },
    /// Continue training a checkpoint with a curvature regularizer.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Overrides,
    },
    /// Extract the zero level set of a checkpoint as a mesh.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mesh path (`.obj` or `.ply`); defaults to `<output_dir>/mesh.obj`.
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Overrides,
    },
    /// Score a checkpoint against a reference mesh or cloud.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reference surface; defaults to the config's `reference`, then `input`.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Report path; defaults to `<output_dir>/report.json`.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Also write a log-binned histogram of |K| to this CSV.
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[command(flatten)]
        common: Overrides,
    },
    /// Fine-tune and evaluate once per regularizer weight.
    Sweep {
        /// Base checkpoint; fitted from the config when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        lambdas: Vec<f64>,
        /// Table path; defaults to `<output_dir>/sweep.csv`.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Run the weights concurrently, each in its own worker.
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        common: Overrides,
    },
    /// Perturb the input cloud, then fit, fine-tune and evaluate against the clean reference.
    Noise {
        /// Noise standard deviation as a fraction of the bounding-box diagonal.
        #[arg(long, default_value_t = 0.01)]
        fraction: f64,
        #[command(flatten)]
        common: Overrides,
    },
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Seeds network init, sampling, batching and evaluation.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs_fit: Option<usize>,
    #[arg(long)]
    pub epochs_finetune: Option<usize>,
    #[arg(long)]
    pub lr_fit: Option<f64>,
    #[arg(long)]
    pub lr_finetune: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Marching-cubes cells per axis.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Points sampled for Chamfer and curvature statistics.
    #[arg(long)]
    pub eval_samples: Option<usize>,
    /// Regularizer kind: nn, logdet, hdet or pnn.
    #[arg(long)]
    pub reg: Option<String>,
    /// Regularizer weight.
    #[arg(long)]
    pub lambda: Option<f64>,
}
