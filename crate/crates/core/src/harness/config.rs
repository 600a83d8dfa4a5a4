use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Granularity, SynthSpec, CATEGORY_COUNT, DEFAULT_LABEL_COLUMN};
use crate::error::{Error, Result};
use crate::fl::{LrSchedule, RoundOptions, Strategy};
use crate::partition::{PartitionMode, PartitionPlan};

fn default_label_column() -> String {
    DEFAULT_LABEL_COLUMN.to_string()
}

/// Where the rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
    Synth(SynthSpec),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synth(SynthSpec::default())
    }
}

/// Everything needed to replay one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub granularity: Granularity,
    pub partition: PartitionMode,
    /// Defaults: 5 for iid, 7 for noniid_category, 8 for label_shard.
    pub clients: Option<usize>,
    pub shards_per_client: usize,
    pub strategy: Strategy,
    pub rounds: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub decay: f64,
    pub decay_interval: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_layers: Vec<usize>,
    pub test_fraction: f64,
    pub server_lr: f64,
    /// Uniform subsample cap applied right after loading a CSV.
    pub max_rows: Option<usize>,
    pub checkpoints: bool,
    pub dump_dataset: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::default(),
            granularity: Granularity::Categories8,
            partition: PartitionMode::Iid,
            clients: None,
            shards_per_client: 1,
            strategy: Strategy::FedAvg,
            rounds: 100,
            epochs: 10,
            lr0: 0.01,
            decay: 0.8,
            decay_interval: 10,
            batch_size: 256,
            seed: 0,
            hidden_layers: vec![64, 32],
            test_fraction: 0.2,
            server_lr: 1.0,
            max_rows: None,
            checkpoints: false,
            dump_dataset: false,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
    }

    pub fn client_count(&self) -> usize {
        self.clients.unwrap_or(match self.partition {
            PartitionMode::Iid => 5,
            PartitionMode::NoniidCategory => CATEGORY_COUNT,
            PartitionMode::LabelShard => 8,
        })
    }

    pub fn partition_plan(&self) -> PartitionPlan {
        PartitionPlan {
            mode: self.partition,
            client_count: self.client_count(),
            shards_per_client: self.shards_per_client,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr0: self.lr0,
            decay: self.decay,
            decay_interval: self.decay_interval,
        }
    }

    pub fn round_options(&self, threads: usize) -> RoundOptions {
        RoundOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            server_lr: self.server_lr,
            threads,
        }
    }

    /// Copy with defaulted fields made explicit, as recorded in manifests.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.clients = Some(self.client_count());
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::config("hidden_layers", "layer sizes must be >= 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie in (0, 1)"));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return Err(Error::config("server_lr", "must be finite and > 0"));
        }
        if self.max_rows == Some(0) {
            return Err(Error::config("max_rows", "must be >= 1"));
        }
        self.schedule().validate()?;
        self.strategy.validate()?;
        self.partition_plan().validate()?;
        match &self.dataset {
            DatasetSource::Synth(s) => {
                s.validate()?;
                if self.partition == PartitionMode::NoniidCategory {
                    return Err(Error::config(
                        "partition",
                        "noniid_category needs attack categories; use label_shard for synthetic data",
                    ));
                }
            }
            DatasetSource::Csv { label_column, .. } => {
                if label_column.is_empty() {
                    return Err(Error::config("dataset.label_column", "must not be empty"));
                }
                if self.partition == PartitionMode::NoniidCategory
                    && self.granularity != Granularity::Categories8
                {
                    return Err(Error::config(
                        "partition",
                        "noniid_category requires categories8 granularity",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parses `fedavg`, `fedprox` (mu from `--mu`, default 0.01) or `scaffold`.
pub fn parse_strategy(name: &str, mu: Option<f64>) -> Result<Strategy> {
    match name.to_ascii_lowercase().as_str() {
        "fedavg" => Ok(Strategy::FedAvg),
        "fedprox" => Ok(Strategy::FedProx {
            mu: mu.unwrap_or(0.01),
        }),
        "scaffold" => Ok(Strategy::Scaffold),
        other => Err(Error::config(
            "strategy",
            format!("unknown strategy `{other}`"),
        )),
    }
}

/// Command-line overrides layered on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub strategy: Option<String>,
    pub mu: Option<f64>,
    pub rounds: Option<usize>,
    pub epochs: Option<usize>,
    pub partition: Option<PartitionMode>,
    pub clients: Option<usize>,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub label_column: Option<String>,
    pub synth: Option<SynthSpec>,
    pub granularity: Option<Granularity>,
    pub batch_size: Option<usize>,
    pub checkpoints: bool,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if self.data.is_some() && self.synth.is_some() {
            return Err(Error::config(
                "data",
                "--data and --synth are mutually exclusive",
            ));
        }
        match (&self.strategy, self.mu) {
            (Some(name), mu) => cfg.strategy = parse_strategy(name, mu)?,
            (None, Some(mu)) => match &mut cfg.strategy {
                Strategy::FedProx { mu: m } => *m = mu,
                other => {
                    return Err(Error::config(
                        "mu",
                        format!("--mu only applies to fedprox, strategy is {}", other.name()),
                    ))
                }
            },
            (None, None) => {}
        }
        if let Some(v) = self.rounds {
            cfg.rounds = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.partition {
            if v != cfg.partition && self.clients.is_none() {
                cfg.clients = None;
            }
            cfg.partition = v;
        }
        if let Some(v) = self.clients {
            cfg.clients = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(path) = &self.data {
            let label_column = match &cfg.dataset {
                DatasetSource::Csv { label_column, .. } => label_column.clone(),
                DatasetSource::Synth(_) => default_label_column(),
            };
            cfg.dataset = DatasetSource::Csv {
                path: path.clone(),
                label_column,
            };
        }
        if let Some(col) = &self.label_column {
            match &mut cfg.dataset {
                DatasetSource::Csv { label_column, .. } => *label_column = col.clone(),
                DatasetSource::Synth(_) => {
                    return Err(Error::config(
                        "label_column",
                        "only applies to CSV datasets",
                    ))
                }
            }
        }
        if let Some(s) = self.synth {
            cfg.dataset = DatasetSource::Synth(s);
        }
        if let Some(g) = self.granularity {
            cfg.granularity = g;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if self.checkpoints {
            cfg.checkpoints = true;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(())
    }
}
