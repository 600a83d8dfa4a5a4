use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsim_core::harness::{
    self, read_metrics, summarize, ExperimentConfig, Overrides, SweepEntry,
};
use fedsim_core::{Granularity, PartitionMode, SynthSpec};

/// Deterministic federated-learning simulator for intrusion-detection MLPs.
#[derive(Parser)]
#[command(name = "fedsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one federated experiment.
    Run(RunArgs),
    /// Train the same MLP on the pooled training data.
    Centralized(RunArgs),
    /// Run several configurations in sequence and write summary.csv.
    Sweep(SweepArgs),
    /// Re-run the experiment recorded in a manifest.json.
    Replay {
        manifest: PathBuf,
        /// Write outputs here instead of the recorded directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// fedavg, fedprox or scaffold.
    #[arg(long)]
    strategy: Option<String>,
    /// FedProx proximal weight.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Local epochs per round.
    #[arg(long)]
    epochs: Option<usize>,
    /// iid, noniid_category or label_shard.
    #[arg(long)]
    partition: Option<PartitionMode>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CICIoT2023-style feature CSV.
    #[arg(long, conflicts_with = "synth")]
    data: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    /// Synthetic blobs, e.g. `classes=8,per_class=500,dims=8,separation=6`.
    #[arg(long, num_args = 0..=1, default_missing_value = "", value_name = "SPEC")]
    synth: Option<SynthSpec>,
    /// binary, categories8 or attacks34.
    #[arg(long)]
    granularity: Option<Granularity>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Save parameters after every round.
    #[arg(long)]
    checkpoints: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    base: RunArgs,
    /// FedProx mu values to sweep.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.01,0.02,0.04,0.1,0.2,0.4"
    )]
    mus: Vec<f64>,
    /// Also run FedAvg and Scaffold.
    #[arg(long)]
    baselines: bool,
    /// Run these config files instead of a mu grid.
    #[arg(long, num_args = 1.., conflicts_with_all = ["mus", "baselines"])]
    configs: Vec<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> fedsim_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        self.overrides().apply(&mut cfg)?;
        Ok(cfg)
    }

    fn overrides(&self) -> Overrides {
        Overrides {
            strategy: self.strategy.clone(),
            mu: self.mu,
            rounds: self.rounds,
            epochs: self.epochs,
            partition: self.partition,
            clients: self.clients,
            seed: self.seed,
            data: self.data.clone(),
            label_column: self.label_column.clone(),
            synth: self.synth,
            granularity: self.granularity,
            batch_size: self.batch_size,
            checkpoints: self.checkpoints,
            out: self.out.clone(),
        }
    }
}

fn report(metrics: PathBuf) -> fedsim_core::Result<()> {
    let rows = read_metrics(&metrics)?;
    if let Some((best, round, final_loss)) = summarize(&rows) {
        println!(
            "{}: best accuracy {best:.4} at round {round}, final loss {final_loss:.4}",
            metrics.display()
        );
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> fedsim_core::Result<()> {
    let runs = if args.configs.is_empty() {
        let base = args.base.resolve()?;
        harness::strategy_grid(&base, &args.mus, args.baselines)
    } else {
        args.configs
            .iter()
            .map(|path| {
                let mut cfg = ExperimentConfig::from_json_file(path)?;
                args.base.overrides().apply(&mut cfg)?;
                let id = path.file_stem().map_or_else(
                    || path.display().to_string(),
                    |s| s.to_string_lossy().into_owned(),
                );
                Ok((id, cfg))
            })
            .collect::<fedsim_core::Result<Vec<_>>>()?
    };
    let out = args
        .base
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs/sweep"));
    let (path, entries) = harness::sweep(&runs, &out)?;
    for SweepEntry {
        config_id,
        best_accuracy,
        status,
        ..
    } in &entries
    {
        match best_accuracy {
            Some(acc) => println!("{config_id}: best accuracy {acc:.4}"),
            None => println!("{config_id}: {status}"),
        }
    }
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> fedsim_core::Result<()> {
    match cli.command {
        Command::Run(args) => report(harness::run_experiment(&args.resolve()?)?),
        Command::Centralized(args) => report(harness::run_centralized_baseline(&args.resolve()?)?),
        Command::Sweep(args) => sweep(&args),
        Command::Replay { manifest, out } => report(harness::replay(manifest, out)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
