mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use config::PipelineConfig;
use dvis_core::synth::SyntheticSceneSpec;
use error::{CliError, Result};

/// Unsupervised hyperspectral clustering from diffusion geometry and pixel
/// purity, with evaluation and synthetic-scene tooling.
#[derive(Parser)]
#[command(name = "dvis", version)]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster an ENVI cube and write label maps plus diagnostics
    Cluster(RunArgs),
    /// Score predicted labels against a reference labeling
    Eval(EvalArgs),
    /// Estimate the mixing model only: subspace, endmembers, abundances
    Unmix(RunArgs),
    /// Build the pixel graph and report its spectral summary
    GraphStats(RunArgs),
    /// Generate a synthetic linear-mixture scene with ground truth
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// ENVI header path (or set `cube` in the config file)
    cube: Option<PathBuf>,
    /// key=value config file; flags given here win over it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pixel mask CSV (row,col,keep); nonzero keeps the pixel
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Crown id CSV (row,col,id)
    #[arg(long)]
    crowns: Option<PathBuf>,
    /// Reference label CSV; adds accuracy numbers to the manifest
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Cluster count K
    #[arg(long)]
    k: Option<usize>,
    /// Graph and density neighbor count N
    #[arg(long)]
    n_neighbors: Option<usize>,
    /// Density kernel scale
    #[arg(long)]
    sigma0: Option<f64>,
    /// Diffusion time t
    #[arg(long)]
    time: Option<u32>,
    /// Endmember search seed
    #[arg(long)]
    seed: Option<u64>,
    /// Bicubic downsampling factor; 1 keeps full resolution
    #[arg(long)]
    factor: Option<u32>,
    /// Eigenpair truncation tolerance
    #[arg(long)]
    eigen_tolerance: Option<f64>,
    /// Scale every spectrum to unit norm before processing
    #[arg(long)]
    normalize: bool,
    /// Cap the worker thread count
    #[arg(long)]
    threads: Option<usize>,
    /// Recompute everything, ignoring the cache ($DVIS_CACHE_DIR)
    #[arg(long)]
    no_cache: bool,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        let RunArgs {
            cube,
            config: _,
            mask,
            crowns,
            reference,
            k,
            n_neighbors,
            sigma0,
            time,
            seed,
            factor,
            eigen_tolerance,
            normalize,
            threads,
            no_cache: _,
            out,
        } = self;
        config.cube = cube.or(config.cube);
        config.mask = mask.or(config.mask);
        config.crowns = crowns.or(config.crowns);
        config.reference = reference.or(config.reference);
        config.k = k.or(config.k);
        config.n_neighbors = n_neighbors.or(config.n_neighbors);
        config.sigma0 = sigma0.or(config.sigma0);
        config.time = time.or(config.time);
        config.seed = seed.or(config.seed);
        config.factor = factor.or(config.factor);
        config.eigen_tolerance = eigen_tolerance.or(config.eigen_tolerance);
        if normalize {
            config.normalize = Some(true);
        }
        config.threads = threads.or(config.threads);
        config.out = out.or(config.out);
        Ok(config)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted label CSV (row,col,label)
    predicted: Option<PathBuf>,
    /// Reference label CSV (row,col,label)
    reference: Option<PathBuf>,
    /// key=value config file; flags given here win over it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Crown id CSV; labels are crown-majority-voted before scoring
    #[arg(long)]
    crowns: Option<PathBuf>,
    /// Class count K; inferred from the label files when omitted
    #[arg(long)]
    k: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EvalArgs {
    fn into_config(self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        config.predicted = self.predicted.or(config.predicted);
        config.reference = self.reference.or(config.reference);
        config.crowns = self.crowns.or(config.crowns);
        config.k = self.k.or(config.k);
        config.out = self.out.or(config.out);
        Ok(config)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Total pixel count
    #[arg(long, default_value_t = 1024)]
    pixels: usize,
    /// Band count D
    #[arg(long, default_value_t = 32)]
    bands: usize,
    /// Endmember count m
    #[arg(long, default_value_t = 2)]
    endmembers: usize,
    /// Dirichlet weight on each cluster's dominant endmember
    #[arg(long, default_value_t = 8.0)]
    concentration: f64,
    /// Noise level in dB
    #[arg(long, default_value_t = 30.0, conflicts_with = "noiseless")]
    snr: f64,
    /// Generate without noise (exact mixtures)
    #[arg(long)]
    noiseless: bool,
    /// Comma-separated cluster sizes; two near-halves when omitted
    #[arg(long)]
    sizes: Option<String>,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SynthArgs {
    fn into_output(self) -> Result<commands::SynthOutput> {
        let cluster_sizes = match &self.sizes {
            Some(raw) => raw
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::flag("sizes", format!("bad size {part:?}")))
                })
                .collect::<Result<Vec<usize>>>()?,
            None => vec![self.pixels / 2, self.pixels - self.pixels / 2],
        };
        Ok(commands::SynthOutput {
            spec: SyntheticSceneSpec {
                pixels: self.pixels,
                bands: self.bands,
                endmembers: self.endmembers,
                concentration: self.concentration,
                snr_db: (!self.noiseless).then_some(self.snr),
                cluster_sizes,
                seed: self.seed,
            },
            out: self.out.unwrap_or_else(|| PathBuf::from("dvis-out")),
        })
    }
}

fn setup_threads(threads: Option<usize>) -> Result<()> {
    let Some(threads) = threads else {
        return Ok(());
    };
    if threads == 0 {
        return Err(CliError::flag("threads", "must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::flag("threads", e.to_string()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Cluster(args) => {
            let no_cache = args.no_cache;
            let config = args.into_config()?;
            setup_threads(config.threads)?;
            commands::run_cluster(&config, no_cache)
        }
        Command::Eval(args) => commands::run_eval(&args.into_config()?),
        Command::Unmix(args) => {
            let no_cache = args.no_cache;
            let config = args.into_config()?;
            setup_threads(config.threads)?;
            commands::run_unmix(&config, no_cache)
        }
        Command::GraphStats(args) => {
            let no_cache = args.no_cache;
            let config = args.into_config()?;
            setup_threads(config.threads)?;
            commands::run_graph_stats(&config, no_cache)
        }
        Command::Synth(args) => commands::run_synth(args.into_output()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
