//! Datasets, CSV ingestion and the preparation pipeline.

mod categories;
mod prep;
mod synth;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use categories::{
    Category, CategoryMap, Granularity, LabelTarget, BENIGN_LABEL, CATEGORY_COUNT,
    CICIOT2023_LABELS,
};
pub use prep::{
    balance_within_categories, normalize, redistribute_benign, split_server_test, Standardizer,
};
pub use synth::{synth_generate, SynthSpec};

pub const DEFAULT_LABEL_COLUMN: &str = "label";

/// Feature matrix plus per-row labels and bookkeeping.
///
/// Besides the class label every row carries an original row id, the raw
/// attack it came from, and an optional category affiliation. Benign rows
/// have no affiliation until [`redistribute_benign`] tags them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    label_names: Vec<String>,
    feature_names: Vec<String>,
    row_ids: Vec<usize>,
    attacks: Vec<usize>,
    attack_names: Vec<String>,
    categories: Vec<Option<Category>>,
    granularity: Option<Granularity>,
}

impl Dataset {
    /// Plain labelled dataset; raw attacks are the labels themselves.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        label_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::config(
                "dataset",
                format!("{} labels for {} rows", labels.len(), features.rows()),
            ));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::config(
                "dataset",
                format!(
                    "{} feature names for {} columns",
                    feature_names.len(),
                    features.cols()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_names.len()) {
            return Err(Error::config(
                "dataset",
                format!(
                    "label index {bad} outside vocabulary of {}",
                    label_names.len()
                ),
            ));
        }
        let n = labels.len();
        Ok(Dataset {
            features,
            attacks: labels.clone(),
            attack_names: label_names.clone(),
            labels,
            label_names,
            feature_names,
            row_ids: (0..n).collect(),
            categories: vec![None; n],
            granularity: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn class_count(&self) -> usize {
        self.label_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_count(&self) -> usize {
        self.features.cols()
    }

    /// Original row ids, stable through every pipeline stage.
    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn attacks(&self) -> &[usize] {
        &self.attacks
    }

    pub fn attack_names(&self) -> &[String] {
        &self.attack_names
    }

    pub fn categories(&self) -> &[Option<Category>] {
        &self.categories
    }

    pub fn granularity(&self) -> Option<Granularity> {
        self.granularity
    }

    /// Per-class row counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows `idx`, in that order, with all per-row metadata carried along.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
            feature_names: self.feature_names.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
            attacks: idx.iter().map(|&i| self.attacks[i]).collect(),
            attack_names: self.attack_names.clone(),
            categories: idx.iter().map(|&i| self.categories[i]).collect(),
            granularity: self.granularity,
        }
    }

    /// Uniform random subsample of at most `max_rows` rows, original order kept.
    pub fn subsample(&self, max_rows: usize, rng: &mut crate::numerics::SeededRng) -> Dataset {
        if self.len() <= max_rows {
            return self.clone();
        }
        let mut idx = rng.permutation(self.len());
        idx.truncate(max_rows);
        idx.sort_unstable();
        self.select(&idx)
    }

    pub(crate) fn with_features(&self, features: Matrix) -> Dataset {
        debug_assert_eq!(features.rows(), self.len());
        Dataset {
            features,
            ..self.clone()
        }
    }

    pub(crate) fn set_categories(&mut self, categories: Vec<Option<Category>>) {
        debug_assert_eq!(categories.len(), self.len());
        self.categories = categories;
    }

    /// Stable content digest over features, labels and vocabularies.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.feature_count() as u64).to_le_bytes());
        for v in self.features.data() {
            h.update(v.to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        for name in self.label_names.iter().chain(&self.feature_names) {
            h.update(name.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

/// Result of [`load_csv`]: the dataset plus how many malformed rows were dropped.
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

/// Reads a header-first, comma-separated file. Every non-label column is a
/// real-valued feature; rows with unparsable or non-finite values are
/// dropped and counted. Label vocabulary is the sorted set of label strings.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<CsvLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| {
            Error::Schema(format!(
                "label column `{label_column}` not found in {}",
                path.display()
            ))
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    let width = headers.len();

    let mut data = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut row_ids = Vec::new();
    let mut dropped = 0usize;
    let mut row_buf = Vec::with_capacity(feature_names.len());
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != width {
            dropped += 1;
            continue;
        }
        row_buf.clear();
        let mut ok = true;
        for (i, field) in record.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => row_buf.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        let label = &record[label_idx];
        if !ok || label.is_empty() {
            dropped += 1;
            continue;
        }
        data.extend_from_slice(&row_buf);
        raw_labels.push(label.to_string());
        row_ids.push(row_no);
    }
    if raw_labels.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no valid rows in {} ({dropped} dropped)",
            path.display()
        )));
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} malformed rows", path.display());
    }

    let mut vocab: Vec<String> = raw_labels.clone();
    vocab.sort();
    vocab.dedup();
    let labels = raw_labels
        .iter()
        .map(|l| vocab.binary_search(l).expect("label is in vocabulary"))
        .collect();
    let n = row_ids.len();
    let features = Matrix::from_vec(n, feature_names.len(), data)?;
    let mut dataset = Dataset::new(features, labels, vocab, feature_names)?;
    dataset.row_ids = row_ids;
    Ok(CsvLoad {
        dataset,
        dropped_rows: dropped,
    })
}

/// Writes `d` with the same schema `load_csv` reads: feature columns, then
/// the label column holding class names.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header: Vec<&str> = d.feature_names.iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for r in 0..d.len() {
        rec.clear();
        rec.extend(d.features.row(r).iter().map(|v| v.to_string()));
        rec.push(d.label_names[d.labels[r]].clone());
        w.write_record(&rec)?;
    }
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Remaps raw attack labels onto `map`'s classes. The raw attack of every
/// row is retained, and attack rows gain their category affiliation.
pub fn collapse_labels(d: &Dataset, map: &CategoryMap) -> Result<Dataset> {
    let mut targets = Vec::with_capacity(d.label_names.len());
    for name in &d.label_names {
        let t = map
            .lookup(name)
            .ok_or_else(|| Error::Schema(format!("unknown attack label `{name}`")))?;
        targets.push(t);
    }
    let mut out = d.clone();
    out.attack_names = d.label_names.clone();
    out.attacks = d.labels.clone();
    out.labels = d.labels.iter().map(|&l| targets[l].class).collect();
    out.label_names = map.classes().to_vec();
    out.categories = d.labels.iter().map(|&l| targets[l].category).collect();
    out.granularity = Some(map.granularity());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_toy_csv() {
        let f = write_tmp("a,b,label\n1,2,x\n3,4,y\n5,6,x\n");
        let load = load_csv(f.path(), "label").unwrap();
        let d = load.dataset;
        assert_eq!((d.len(), d.feature_count()), (3, 2));
        assert_eq!(d.label_names(), ["x", "y"]);
        assert_eq!(d.labels(), [0, 1, 0]);
        assert_eq!(load.dropped_rows, 0);
        assert_eq!(d.features().row(1), [3.0, 4.0]);
    }

    #[test]
    fn drops_nan_rows() {
        let f = write_tmp("a,b,label\n1,NaN,x\n3,4,y\n5,oops,x\n7,inf,x\n");
        let load = load_csv(f.path(), "label").unwrap();
        assert_eq!(load.dataset.len(), 1);
        assert_eq!(load.dropped_rows, 3);
        assert_eq!(load.dataset.row_ids(), [1]);
    }

    #[test]
    fn nan_only_counts_one() {
        let f = write_tmp("a,b,label\n1,NaN,x\n3,4,y\n");
        assert_eq!(load_csv(f.path(), "label").unwrap().dropped_rows, 1);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(
            load_csv("/nonexistent/x.csv", "label"),
            Err(Error::Io { .. })
        ));
        let f = write_tmp("a,b,klass\n1,2,x\n");
        assert!(matches!(load_csv(f.path(), "label"), Err(Error::Schema(_))));
        let f = write_tmp("a,b,label\nNaN,2,x\n");
        assert!(matches!(
            load_csv(f.path(), "label"),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn write_then_load_preserves_schema() {
        let f = write_tmp("a,b,label\n1.5,2,x\n3,-4.25,y\n");
        let d = load_csv(f.path(), "label").unwrap().dataset;
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&d, out.path(), "label").unwrap();
        let back = load_csv(out.path(), "label").unwrap().dataset;
        assert_eq!(back.features(), d.features());
        assert_eq!(back.labels(), d.labels());
        assert_eq!(back.feature_names(), d.feature_names());
    }

    fn raw(labels: &[&str]) -> Dataset {
        let mut vocab: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        vocab.sort();
        vocab.dedup();
        let idx = labels
            .iter()
            .map(|l| vocab.iter().position(|v| v == l).unwrap())
            .collect();
        let n = labels.len();
        Dataset::new(
            Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(),
            idx,
            vocab,
            vec!["f".into()],
        )
        .unwrap()
    }

    #[test]
    fn collapse_to_categories() {
        let d = raw(&["DDoS-TCP_Flood", "BenignTraffic", "DoS-UDP_Flood", "XSS"]);
        let c = collapse_labels(&d, &CategoryMap::new(Granularity::Categories8)).unwrap();
        let names: Vec<&str> = c
            .labels()
            .iter()
            .map(|&l| c.label_names()[l].as_str())
            .collect();
        assert_eq!(names, ["DDoS", "Benign", "DoS", "Web-based"]);
        assert_eq!(c.len(), d.len());
        assert_eq!(
            c.categories(),
            [
                Some(Category::Ddos),
                None,
                Some(Category::Dos),
                Some(Category::WebBased)
            ]
        );
        assert_eq!(c.attack_names()[c.attacks()[0]], "DDoS-TCP_Flood");
        assert_eq!(c.granularity(), Some(Granularity::Categories8));
    }

    #[test]
    fn collapse_binary() {
        let d = raw(&["Mirai-udpplain", "BenignTraffic", "SqlInjection"]);
        let c = collapse_labels(&d, &CategoryMap::new(Granularity::Binary)).unwrap();
        assert_eq!(c.labels(), [1, 0, 1]);
    }

    #[test]
    fn collapse_unknown_names_offender() {
        let d = raw(&["XSS", "Teleportation"]);
        match collapse_labels(&d, &CategoryMap::new(Granularity::Categories8)) {
            Err(Error::Schema(msg)) => assert!(msg.contains("Teleportation")),
            other => panic!("{other:?}"),
        }
    }
}
