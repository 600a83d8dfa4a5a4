use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DatasetSource, ExperimentConfig};
use crate::data::{
    balance_within_categories, collapse_labels, load_csv, normalize, redistribute_benign,
    split_server_test, synth_generate, write_csv, CategoryMap, Dataset, Granularity,
};
use crate::error::{Error, Result};
use crate::fl::{self, client_stream, make_clients, DatasetEvaluator, ServerState};
use crate::model::{
    evaluate, init_params, local_train, write_checkpoint, Identity, MlpConfig, MlpObjective,
    TrainSpec,
};
use crate::numerics::SeededRng;
use crate::partition::write_summary_csv;

pub const METRICS_HEADER: &str = "round,lr,global_accuracy,global_loss,mean_client_loss,wall_ms";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const THREADS_ENV: &str = "FEDSIM_THREADS";

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub lr: f64,
    pub global_accuracy: f64,
    pub global_loss: f64,
    pub mean_client_loss: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    /// Floats use shortest round-trip formatting, so every column but
    /// `wall_ms` is byte-stable across reruns.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.round,
            self.lr,
            self.global_accuracy,
            self.global_loss,
            self.mean_client_loss,
            self.wall_ms
        )
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Written next to the metrics; holds enough to replay the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub mode: RunMode,
    pub config: ExperimentConfig,
    pub input_hash: String,
    pub train_fingerprint: String,
    pub test_fingerprint: String,
    pub train_rows: usize,
    pub test_rows: usize,
    pub client_rows: Vec<usize>,
    pub layer_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Federated,
    Centralized,
}

/// Training and server-test sets after the full preparation pipeline.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    /// Git-style digest of the raw input (file bytes or synth parameters).
    pub input_hash: String,
}

fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Load → collapse → redistribute benign → balance → split → normalize for
/// CSVs; generate → split → normalize for synthetic data. Every random stage
/// draws from its own named child of the seed.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let root = SeededRng::new(cfg.seed);
    let (pooled, input_hash) = match &cfg.dataset {
        DatasetSource::Csv { path, label_column } => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let hash = blob_hash(&bytes);
            drop(bytes);
            let load = load_csv(path, label_column)?;
            log::info!(
                "loaded {} rows x {} features from {} ({} dropped)",
                load.dataset.len(),
                load.dataset.feature_count(),
                path.display(),
                load.dropped_rows
            );
            let mut d = load.dataset;
            if let Some(cap) = cfg.max_rows {
                d = d.subsample(cap, &mut root.split_named("subsample"));
            }
            let mut d = collapse_labels(&d, &CategoryMap::new(cfg.granularity))?;
            if cfg.granularity == Granularity::Categories8 {
                d = redistribute_benign(&d, &mut root.split_named("benign"))?;
                d = balance_within_categories(&d, &mut root.split_named("balance"))?;
            }
            (d, hash)
        }
        DatasetSource::Synth(spec) => {
            let d = synth_generate(spec, &mut root.split_named("synth"))?;
            (d, blob_hash(serde_json::to_string(spec)?.as_bytes()))
        }
    };
    let (train, test) =
        split_server_test(&pooled, cfg.test_fraction, &mut root.split_named("split"))?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "split left {} train / {} test rows",
            train.len(),
            test.len()
        )));
    }
    let (train, mut others) = normalize(&train, &[test])?;
    Ok(PreparedData {
        train,
        test: others.pop().expect("one held-out set"),
        input_hash,
    })
}

pub fn mlp_config(cfg: &ExperimentConfig, data: &Dataset) -> Result<MlpConfig> {
    MlpConfig::with_hidden(data.feature_count(), &cfg.hidden_layers, data.class_count())
}

/// Worker threads for client steps: `FEDSIM_THREADS` (0 = serial), or the
/// machine's parallelism when unset.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::config(THREADS_ENV, format!("expected a count, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(0, usize::from)),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
    last: Instant,
}

impl MetricsWriter {
    fn create(dir: &Path) -> Result<Self> {
        let path = dir.join(METRICS_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter {
            path,
            out,
            last: Instant::now(),
        })
    }

    fn push(
        &mut self,
        round: usize,
        lr: f64,
        accuracy: f64,
        loss: f64,
        client_loss: f64,
    ) -> Result<()> {
        let now = Instant::now();
        let row = MetricsRow {
            round,
            lr,
            global_accuracy: accuracy,
            global_loss: loss,
            mean_client_loss: client_loss,
            wall_ms: now.duration_since(self.last).as_millis() as u64,
        };
        self.last = now;
        writeln!(self.out, "{}", row.to_csv_line()).map_err(|e| Error::io(&self.path, e))?;
        // keep the file useful if a later round diverges
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn manifest(
    cfg: &ExperimentConfig,
    mode: RunMode,
    data: &PreparedData,
    client_rows: Vec<usize>,
    mlp: &MlpConfig,
) -> Manifest {
    Manifest {
        tool: "fedsim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        mode,
        config: cfg.resolved(),
        input_hash: data.input_hash.clone(),
        train_fingerprint: data.train.fingerprint(),
        test_fingerprint: data.test.fingerprint(),
        train_rows: data.train.len(),
        test_rows: data.test.len(),
        client_rows,
        layer_sizes: mlp.layer_sizes().to_vec(),
    }
}

fn dump(cfg: &ExperimentConfig, data: &PreparedData) -> Result<()> {
    if cfg.dump_dataset {
        let col = match &cfg.dataset {
            DatasetSource::Csv { label_column, .. } => label_column.as_str(),
            DatasetSource::Synth(_) => crate::data::DEFAULT_LABEL_COLUMN,
        };
        write_csv(&data.train, cfg.output_dir.join("train.csv"), col)?;
        write_csv(&data.test, cfg.output_dir.join("server_test.csv"), col)?;
    }
    Ok(())
}

/// Runs the federated experiment described by `cfg` and returns the path of
/// its metrics CSV. Also writes `manifest.json`, `partition.csv` and, when
/// enabled, per-round checkpoints.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<PathBuf> {
    run_experiment_with_threads(cfg, threads_from_env()?)
}

pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<PathBuf> {
    cfg.validate()?;
    let out_dir = &cfg.output_dir;
    create_dir(out_dir)?;
    let data = prepare_data(cfg)?;
    dump(cfg, &data)?;
    let root = SeededRng::new(cfg.seed);
    let parts = cfg
        .partition_plan()
        .apply(&data.train, &mut root.split_named("partition"))?;
    write_summary_csv(&parts, out_dir.join("partition.csv"))?;
    let mlp = mlp_config(cfg, &data.train)?;
    write_manifest(
        out_dir,
        &manifest(
            cfg,
            RunMode::Federated,
            &data,
            parts.iter().map(Dataset::len).collect(),
            &mlp,
        ),
    )?;

    let objectives = parts
        .into_iter()
        .map(|d| MlpObjective::new(mlp.clone(), d))
        .collect::<Result<Vec<_>>>()?;
    let mut clients = make_clients(objectives)?;
    let server = ServerState::new(
        init_params(&mlp, &mut root.split_named("init")),
        cfg.schedule(),
    );
    let evaluator = DatasetEvaluator {
        cfg: &mlp,
        test: &data.test,
    };
    let train_rng = root.split_named("train");
    let ckpt_dir = out_dir.join("checkpoints");
    if cfg.checkpoints {
        create_dir(&ckpt_dir)?;
    }
    let mut metrics = MetricsWriter::create(out_dir)?;
    log::info!(
        "{} with {} clients, {} rounds x {} epochs",
        cfg.strategy.name(),
        clients.len(),
        cfg.rounds,
        cfg.epochs
    );
    fl::run_training_with(
        server,
        &mut clients,
        &cfg.strategy,
        cfg.rounds,
        &cfg.round_options(threads),
        Some(&evaluator as &dyn fl::Evaluator),
        &train_rng,
        &mut |server, clients, report| {
            let g = report
                .global
                .ok_or_else(|| Error::Internal("round without global evaluation".into()))?;
            log::debug!(
                "round {} acc {:.4} loss {:.4}",
                report.round,
                g.accuracy,
                g.loss
            );
            metrics.push(
                report.round,
                report.lr,
                g.accuracy,
                g.loss,
                report.mean_client_loss,
            )?;
            if cfg.checkpoints {
                let path = ckpt_dir.join(format!("round_{}.bin", report.round));
                let mut vectors = vec![&server.global_params];
                if cfg.strategy == fl::Strategy::Scaffold {
                    vectors.push(&server.control);
                    vectors.extend(clients.iter().map(|c| &c.control));
                }
                write_checkpoint(path, &vectors)?;
            }
            Ok(())
        },
    )?;
    Ok(metrics.path)
}

/// Trains the same MLP on the pooled training set for `rounds × epochs`
/// epochs, reporting once per block of `epochs`. Uses the learning-rate
/// schedule and random stream a lone federated client 0 would see, so it
/// retraces single-client FedAvg exactly.
pub fn run_centralized_baseline(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out_dir = &cfg.output_dir;
    create_dir(out_dir)?;
    let data = prepare_data(cfg)?;
    dump(cfg, &data)?;
    let mlp = mlp_config(cfg, &data.train)?;
    write_manifest(
        out_dir,
        &manifest(
            cfg,
            RunMode::Centralized,
            &data,
            vec![data.train.len()],
            &mlp,
        ),
    )?;
    let root = SeededRng::new(cfg.seed);
    let schedule = cfg.schedule();
    let objective = MlpObjective::new(mlp.clone(), data.train.clone())?;
    let mut params = init_params(&mlp, &mut root.split_named("init"));
    let train_rng = root.split_named("train");
    let mut metrics = MetricsWriter::create(out_dir)?;
    for t in 0..cfg.rounds {
        let spec = TrainSpec {
            epochs: cfg.epochs,
            lr: schedule.lr(t),
            batch_size: cfg.batch_size,
        };
        let outcome = local_train(
            &objective,
            &params,
            &spec,
            &mut Identity,
            &mut client_stream(&train_rng, t, 0),
        )
        .map_err(|e| match e {
            Error::Divergence { context, loss } => Error::Divergence {
                context: format!("centralized block {}, {context}", t + 1),
                loss,
            },
            other => other,
        })?;
        params = outcome.params;
        let g = evaluate(&mlp, &params, &data.test)?;
        metrics.push(t + 1, spec.lr, g.accuracy, g.loss, outcome.mean_loss)?;
    }
    Ok(metrics.path)
}

/// Re-runs the experiment recorded in a manifest, optionally elsewhere.
pub fn replay(manifest_path: impl AsRef<Path>, output_dir: Option<PathBuf>) -> Result<PathBuf> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let mut cfg = m.config;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    match m.mode {
        RunMode::Federated => run_experiment(&cfg),
        RunMode::Centralized => run_centralized_baseline(&cfg),
    }
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub config_id: String,
    pub best_accuracy: Option<f64>,
    pub best_round: Option<usize>,
    pub final_loss: Option<f64>,
    /// `ok`, or the error that stopped the run.
    pub status: String,
}

/// Best accuracy (earliest round on ties) and final loss of a metrics file.
pub fn summarize(rows: &[MetricsRow]) -> Option<(f64, usize, f64)> {
    let last = rows.last()?;
    let best = rows.iter().fold(&rows[0], |b, r| {
        if r.global_accuracy > b.global_accuracy {
            r
        } else {
            b
        }
    });
    Some((best.global_accuracy, best.round, last.global_loss))
}

/// Runs each `(id, config)` in sequence under `out_dir/<id>` and writes
/// `out_dir/summary.csv`. A failing run is recorded and the sweep continues.
pub fn sweep(
    runs: &[(String, ExperimentConfig)],
    out_dir: impl AsRef<Path>,
) -> Result<(PathBuf, Vec<SweepEntry>)> {
    if runs.is_empty() {
        return Err(Error::config("sweep", "no configurations to run"));
    }
    let out_dir = out_dir.as_ref();
    create_dir(out_dir)?;
    let mut entries = Vec::with_capacity(runs.len());
    for (id, cfg) in runs {
        let mut cfg = cfg.clone();
        cfg.output_dir = out_dir.join(id);
        let outcome = run_experiment(&cfg).and_then(read_metrics);
        let entry = match outcome {
            Ok(rows) => {
                let s = summarize(&rows);
                SweepEntry {
                    config_id: id.clone(),
                    best_accuracy: s.map(|s| s.0),
                    best_round: s.map(|s| s.1),
                    final_loss: s.map(|s| s.2),
                    status: "ok".into(),
                }
            }
            Err(e) => {
                log::warn!("sweep run {id} failed: {e}");
                SweepEntry {
                    config_id: id.clone(),
                    best_accuracy: None,
                    best_round: None,
                    final_loss: None,
                    status: e.to_string(),
                }
            }
        };
        entries.push(entry);
    }
    let path = out_dir.join(SUMMARY_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "config_id",
        "best_accuracy",
        "best_round",
        "final_loss",
        "status",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for e in &entries {
        w.write_record([
            e.config_id.clone(),
            opt(e.best_accuracy.map(|v| v.to_string())),
            opt(e.best_round.map(|v| v.to_string())),
            opt(e.final_loss.map(|v| v.to_string())),
            e.status.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok((path, entries))
}

/// Strategy comparison grid: FedAvg, FedProx at each `mu`, and Scaffold,
/// all sharing `base`'s data, seed and schedule.
pub fn strategy_grid(
    base: &ExperimentConfig,
    mus: &[f64],
    include_baselines: bool,
) -> Vec<(String, ExperimentConfig)> {
    let mut runs = Vec::new();
    let with = |s: fl::Strategy| ExperimentConfig {
        strategy: s,
        ..base.clone()
    };
    if include_baselines {
        runs.push(("fedavg".to_string(), with(fl::Strategy::FedAvg)));
    }
    for &mu in mus {
        runs.push((
            format!("fedprox_mu{mu}"),
            with(fl::Strategy::FedProx { mu }),
        ));
    }
    if include_baselines {
        runs.push(("scaffold".to_string(), with(fl::Strategy::Scaffold)));
    }
    runs
}
