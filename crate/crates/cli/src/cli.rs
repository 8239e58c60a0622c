use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use vehiclesdf::params::{GeomParams, PARAM_COUNT};

#[derive(Debug, Parser)]
#[command(
    name = "vsdf",
    version,
    about = "Latent-code car shapes: training, optimization and drag estimation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate toy cars: manifest, SDF samples and optional meshes.
    GenCorpus(GenCorpus),
    /// Train the decoder and per-shape latents on a generated corpus.
    TrainSdf(TrainSdf),
    /// Augment by latent interpolation and fit the parameter estimator.
    TrainEstimator(TrainEstimator),
    /// Optimize latents towards target parameters and decode them.
    Optimize(Optimize),
    /// Measure the seven parameters of a mesh.
    Extract(Extract),
    /// Render normal maps, the atlas, a depth map and its edges.
    Render(Render),
    /// Label toy cars with the synthetic drag oracle and fit boosted trees.
    DragTrain(DragTrain),
    /// Predict the drag coefficient of a mesh.
    DragPredict(DragPredict),
    /// Run the HTTP job service.
    Serve(Serve),
}

#[derive(Debug, Args)]
pub struct GenCorpus {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// SDF samples per shape.
    #[arg(long, default_value_t = 5000)]
    pub samples: usize,
    /// Also write `meshes/<id>.obj` for every car.
    #[arg(long)]
    pub meshes: bool,
    #[arg(long, default_value_t = 128)]
    pub mesh_resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainSdf {
    /// Directory written by `gen-corpus`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainEstimator {
    /// Checkpoint from `train-sdf`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output checkpoint: the input plus the estimator.
    #[arg(long)]
    pub out: PathBuf,
    /// Augmented records to collect.
    #[arg(long, default_value_t = 2000)]
    pub records: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub decode_resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_target(s: &str) -> Result<GeomParams, String> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != PARAM_COUNT {
        return Err(format!(
            "expected {PARAM_COUNT} comma-separated values, got {}",
            values.len()
        ));
    }
    if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err("values must be positive and finite".into());
    }
    GeomParams::from_slice(&values).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct Optimize {
    /// Checkpoint holding decoder and estimator.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Seven comma-separated values, e.g. 1.0,0.28,0.43,0.037,0.6,0.2,0.2
    #[arg(long, value_parser = parse_target)]
    pub target: GeomParams,
    /// Number of random starts; start `k` uses seed `seed + k`.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=64))]
    pub seeds: u64,
    #[arg(long, default_value = "optimize-out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Extract {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Lattice resolution the mesh was extracted at; sets the tolerances.
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    /// Write the JSON result here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accepted for uniformity; extraction is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Render {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    /// Canny hysteresis thresholds on the gradient magnitude.
    #[arg(long, default_value_t = 0.1)]
    pub low: f64,
    #[arg(long, default_value_t = 0.3)]
    pub high: f64,
    /// Accepted for uniformity; rendering is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DragTrain {
    /// Output container holding the model and its metrics.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the cars of this manifest instead of generating new ones.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Cars to generate when no manifest is given.
    #[arg(long, default_value_t = 125)]
    pub count: usize,
    /// Skip the width and mirror variants.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, default_value_t = 64)]
    pub mesh_resolution: usize,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DragPredict {
    /// Container with a drag model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    /// Accepted for uniformity; prediction is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Serve {
    /// TOML config; environment variables override it and flags override both.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub drag_model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Base seed for requests without one.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_arity_checked() {
        assert!(parse_target("1.0,0.28,0.43,0.037,0.6,0.2,0.2").is_ok());
        assert!(parse_target("1.0,0.28").unwrap_err().contains("got 2"));
        assert!(parse_target("1,2,3,4,5,6,x").is_err());
        assert!(parse_target("1,2,3,4,5,6,-1").is_err());
    }

    #[test]
    fn definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
