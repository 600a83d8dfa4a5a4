//! Splitting the prepared training set across simulated clients.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Category, Dataset, CATEGORY_COUNT};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Shuffle, then deal round-robin.
    #[default]
    Iid,
    /// One client per attack category.
    NoniidCategory,
    /// Label-sorted contiguous shards dealt at random.
    LabelShard,
}

impl std::str::FromStr for PartitionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "iid" => Ok(PartitionMode::Iid),
            "noniid_category" | "noniid" | "category" => Ok(PartitionMode::NoniidCategory),
            "label_shard" | "shard" => Ok(PartitionMode::LabelShard),
            other => Err(format!("unknown partition mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub mode: PartitionMode,
    pub client_count: usize,
    /// Only meaningful for [`PartitionMode::LabelShard`].
    pub shards_per_client: usize,
}

impl PartitionPlan {
    pub fn iid(client_count: usize) -> Self {
        PartitionPlan {
            mode: PartitionMode::Iid,
            client_count,
            shards_per_client: 1,
        }
    }

    pub fn noniid_category() -> Self {
        PartitionPlan {
            mode: PartitionMode::NoniidCategory,
            client_count: CATEGORY_COUNT,
            shards_per_client: 1,
        }
    }

    pub fn label_shard(client_count: usize, shards_per_client: usize) -> Self {
        PartitionPlan {
            mode: PartitionMode::LabelShard,
            client_count,
            shards_per_client,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.client_count == 0 {
            return Err(Error::config("clients", "must be >= 1"));
        }
        match self.mode {
            PartitionMode::NoniidCategory if self.client_count != CATEGORY_COUNT => {
                Err(Error::config(
                    "clients",
                    format!(
                        "noniid_category always uses {CATEGORY_COUNT} clients, got {}",
                        self.client_count
                    ),
                ))
            }
            PartitionMode::LabelShard if self.shards_per_client == 0 => {
                Err(Error::config("shards_per_client", "must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// Apply this plan to `d`.
    pub fn apply(&self, d: &Dataset, rng: &mut SeededRng) -> Result<Vec<Dataset>> {
        self.validate()?;
        match self.mode {
            PartitionMode::Iid => partition_iid(d, self.client_count, rng),
            PartitionMode::NoniidCategory => partition_noniid_category(d),
            PartitionMode::LabelShard => {
                partition_label_shard(d, self.client_count, self.shards_per_client, rng)
            }
        }
    }
}

/// Shuffles rows and deals them round-robin, so client sizes differ by at
/// most one. Each client's rows keep their original relative order, which
/// makes `k = 1` return `d` unchanged.
pub fn partition_iid(d: &Dataset, k: usize, rng: &mut SeededRng) -> Result<Vec<Dataset>> {
    if k == 0 {
        return Err(Error::config("clients", "must be >= 1"));
    }
    if k > d.len() {
        return Err(Error::config(
            "clients",
            format!("{k} clients for only {} rows", d.len()),
        ));
    }
    let order = rng.permutation(d.len());
    let mut hands: Vec<Vec<usize>> = vec![Vec::with_capacity(d.len() / k + 1); k];
    for (pos, &row) in order.iter().enumerate() {
        hands[pos % k].push(row);
    }
    Ok(hands
        .into_iter()
        .map(|mut rows| {
            rows.sort_unstable();
            d.select(&rows)
        })
        .collect())
}

/// Client `j` receives exactly the rows affiliated with category `j`.
pub fn partition_noniid_category(d: &Dataset) -> Result<Vec<Dataset>> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); CATEGORY_COUNT];
    for (i, cat) in d.categories().iter().enumerate() {
        match cat {
            Some(c) => groups[c.index()].push(i),
            None => return Err(Error::config(
                "partition",
                format!(
                    "row {} has no category affiliation (benign rows must be redistributed first)",
                    d.row_ids()[i]
                ),
            )),
        }
    }
    if let Some(j) = groups.iter().position(Vec::is_empty) {
        return Err(Error::config(
            "partition",
            format!("category {} has no rows", Category::ALL[j].name()),
        ));
    }
    Ok(groups.iter().map(|rows| d.select(rows)).collect())
}

/// Sorts rows by label, cuts them into `k × shards_per_client` contiguous
/// shards of near-equal size and deals the shards at random.
pub fn partition_label_shard(
    d: &Dataset,
    k: usize,
    shards_per_client: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Dataset>> {
    let shards = k.saturating_mul(shards_per_client);
    if k == 0 || shards_per_client == 0 || shards > d.len() {
        return Err(Error::config(
            "shards_per_client",
            format!(
                "{k} clients x {shards_per_client} shards infeasible for {} rows",
                d.len()
            ),
        ));
    }
    let mut sorted: Vec<usize> = (0..d.len()).collect();
    sorted.sort_by_key(|&i| d.labels()[i]); // stable: ties keep row order
    let n = sorted.len();
    let bounds: Vec<usize> = (0..=shards).map(|s| s * n / shards).collect();
    let deal = rng.permutation(shards);
    Ok((0..k)
        .map(|client| {
            let mut rows: Vec<usize> = deal
                [client * shards_per_client..(client + 1) * shards_per_client]
                .iter()
                .flat_map(|&s| sorted[bounds[s]..bounds[s + 1]].iter().copied())
                .collect();
            rows.sort_unstable();
            d.select(&rows)
        })
        .collect())
}

/// `client_id,n_rows,<one count column per class>`.
pub fn summary_csv(clients: &[Dataset]) -> String {
    let mut out = String::from("client_id,n_rows");
    if let Some(first) = clients.first() {
        for name in first.label_names() {
            out.push(',');
            out.push_str(&csv_field(name));
        }
    }
    out.push('\n');
    for (id, c) in clients.iter().enumerate() {
        let _ = write!(out, "{id},{}", c.len());
        for n in c.class_counts() {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_summary_csv(clients: &[Dataset], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, summary_csv(clients)).map_err(|e| Error::io(path, e))
}
