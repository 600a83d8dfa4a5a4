use std::collections::BTreeMap;

use super::{Category, Dataset, Granularity, CATEGORY_COUNT};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

fn require_categories8(d: &Dataset, op: &str) -> Result<()> {
    if d.granularity() == Some(Granularity::Categories8) {
        Ok(())
    } else {
        Err(Error::config(
            op,
            "requires a dataset collapsed to categories8 granularity",
        ))
    }
}

// categories8 class order puts Benign after the seven categories
const BENIGN_CLASS: usize = CATEGORY_COUNT;

/// Tags every benign row with one of the seven categories, round-robin over
/// a seeded shuffle so per-category benign counts differ by at most one.
/// Labels are untouched.
pub fn redistribute_benign(d: &Dataset, rng: &mut SeededRng) -> Result<Dataset> {
    require_categories8(d, "redistribute_benign")?;
    let benign = BENIGN_CLASS;
    let mut rows: Vec<usize> = (0..d.len())
        .filter(|&i| d.labels()[i] == benign && d.categories()[i].is_none())
        .collect();
    if rows.is_empty() {
        log::warn!("redistribute_benign: no benign rows, nothing to do");
        return Ok(d.clone());
    }
    rng.shuffle(&mut rows);
    let mut categories = d.categories().to_vec();
    for (k, &r) in rows.iter().enumerate() {
        categories[r] = Category::from_index(k % CATEGORY_COUNT);
    }
    let mut out = d.clone();
    out.set_categories(categories);
    Ok(out)
}

/// Downsamples every attack within a category to that category's smallest
/// per-attack count. Benign rows pass through.
pub fn balance_within_categories(d: &Dataset, rng: &mut SeededRng) -> Result<Dataset> {
    require_categories8(d, "balance_within_categories")?;
    let benign = BENIGN_CLASS;
    // category -> attack -> rows
    let mut groups: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    let mut keep = Vec::with_capacity(d.len());
    for i in 0..d.len() {
        match d.categories()[i] {
            Some(c) if d.labels()[i] != benign => groups
                .entry(c.index())
                .or_default()
                .entry(d.attacks()[i])
                .or_default()
                .push(i),
            _ => keep.push(i),
        }
    }
    for attacks in groups.values_mut() {
        let min = attacks.values().map(Vec::len).min().unwrap_or(0);
        for rows in attacks.values_mut() {
            if rows.len() > min {
                rng.shuffle(rows);
                rows.truncate(min);
            }
            keep.extend_from_slice(rows);
        }
    }
    keep.sort_unstable();
    Ok(d.select(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stratum {
    Category(usize),
    Label(usize),
}

/// Moves `⌊fraction × count⌋` rows of every stratum to the server test set.
/// A row's stratum is its category affiliation when it has one, otherwise
/// its label. Both outputs keep the input's row order.
pub fn split_server_test(
    d: &Dataset,
    fraction: f64,
    rng: &mut SeededRng,
) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(
            "test_fraction",
            format!("must lie in (0, 1), got {fraction}"),
        ));
    }
    let mut strata: BTreeMap<Stratum, Vec<usize>> = BTreeMap::new();
    for i in 0..d.len() {
        let key = match d.categories()[i] {
            Some(c) => Stratum::Category(c.index()),
            None => Stratum::Label(d.labels()[i]),
        };
        strata.entry(key).or_default().push(i);
    }
    let mut is_test = vec![false; d.len()];
    for rows in strata.values_mut() {
        // the epsilon keeps e.g. 0.2 × 100 from flooring to 19
        let take = (fraction * rows.len() as f64 + 1e-9).floor() as usize;
        rng.shuffle(rows);
        for &r in &rows[..take] {
            is_test[r] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| is_test[i]);
    Ok((d.select(&train), d.select(&test)))
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
}

/// Columns whose spread falls below this are only centred.
const MIN_STDEV: f64 = 1e-12;

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset(
                "cannot normalize on empty training set".into(),
            ));
        }
        let x = train.features();
        let n = x.rows() as f64;
        let mut mean = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let stdev = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Standardizer { mean, stdev })
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        let x = d.features();
        if x.cols() != self.mean.len() {
            return Err(Error::config(
                "normalize",
                format!("{} columns, statistics for {}", x.cols(), self.mean.len()),
            ));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.stdev) {
                *v = if *s < MIN_STDEV { *v - m } else { (*v - m) / s };
            }
        }
        let out = Matrix::from_vec(out.rows(), out.cols(), out.into_data())?;
        Ok(d.with_features(out))
    }
}

/// Z-scores `train` and every dataset in `others` using statistics from
/// `train` alone.
pub fn normalize(train: &Dataset, others: &[Dataset]) -> Result<(Dataset, Vec<Dataset>)> {
    let stats = Standardizer::fit(train)?;
    let train = stats.apply(train)?;
    let others = others
        .iter()
        .map(|d| stats.apply(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, others))
}

#[cfg(test)]
mod tests {
    use super::super::{collapse_labels, CategoryMap, Granularity};
    use super::*;

    /// Raw CICIoT-style dataset: `counts[(name, n)]` rows per attack, with
    /// feature 0 holding the row index.
    fn raw(counts: &[(&str, usize)]) -> Dataset {
        let mut vocab: Vec<String> = counts.iter().map(|(n, _)| n.to_string()).collect();
        vocab.sort();
        let mut labels = Vec::new();
        for (name, n) in counts {
            let l = vocab.iter().position(|v| v == name).unwrap();
            labels.extend(std::iter::repeat_n(l, *n));
        }
        let n = labels.len();
        let d = Dataset::new(
            Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(),
            labels,
            vocab,
            vec!["id".into()],
        )
        .unwrap();
        collapse_labels(&d, &CategoryMap::new(Granularity::Categories8)).unwrap()
    }

    fn benign_counts(d: &Dataset) -> Vec<usize> {
        let mut c = vec![0; CATEGORY_COUNT];
        for i in 0..d.len() {
            if d.labels()[i] == 7 {
                c[d.categories()[i].unwrap().index()] += 1;
            }
        }
        c
    }

    #[test]
    fn seven_benign_one_each() {
        let d = raw(&[("BenignTraffic", 7), ("XSS", 3)]);
        let r = redistribute_benign(&d, &mut SeededRng::new(1)).unwrap();
        assert_eq!(benign_counts(&r), vec![1; 7]);
        assert_eq!(r.labels(), d.labels());
    }

    #[test]
    fn ten_benign_remainder() {
        let d = raw(&[("BenignTraffic", 10)]);
        let r = redistribute_benign(&d, &mut SeededRng::new(2)).unwrap();
        let mut c = benign_counts(&r);
        c.sort_unstable();
        assert_eq!(c, [1, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn no_benign_is_noop() {
        let d = raw(&[("XSS", 3)]);
        assert_eq!(redistribute_benign(&d, &mut SeededRng::new(2)).unwrap(), d);
    }

    #[test]
    fn redistribute_needs_categories8() {
        let mut vocab = vec!["BenignTraffic".to_string()];
        vocab.sort();
        let d = Dataset::new(Matrix::zeros(1, 1), vec![0], vocab, vec!["f".into()]).unwrap();
        let d = collapse_labels(&d, &CategoryMap::new(Granularity::Binary)).unwrap();
        assert!(redistribute_benign(&d, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn balance_to_min() {
        let d = raw(&[
            ("DDoS-TCP_Flood", 100),
            ("DDoS-UDP_Flood", 40),
            ("DDoS-ICMP_Flood", 60),
            ("DictionaryBruteForce", 13),
            ("BenignTraffic", 9),
        ]);
        let b = balance_within_categories(&d, &mut SeededRng::new(3)).unwrap();
        let mut per_attack = BTreeMap::new();
        for &a in b.attacks() {
            *per_attack.entry(b.attack_names()[a].as_str()).or_insert(0) += 1;
        }
        assert_eq!(per_attack["DDoS-TCP_Flood"], 40);
        assert_eq!(per_attack["DDoS-UDP_Flood"], 40);
        assert_eq!(per_attack["DDoS-ICMP_Flood"], 40);
        assert_eq!(per_attack["DictionaryBruteForce"], 13);
        assert_eq!(per_attack["BenignTraffic"], 9);
        // row ids still line up with the feature that encodes them
        for i in 0..b.len() {
            assert_eq!(b.features().get(i, 0) as usize, b.row_ids()[i]);
        }
    }

    #[test]
    fn split_counts_floor() {
        let d = raw(&[("XSS", 100), ("DNS_Spoofing", 7)]);
        let (train, test) = split_server_test(&d, 0.2, &mut SeededRng::new(4)).unwrap();
        assert_eq!(test.len(), 20 + 1);
        assert_eq!(train.len(), 80 + 6);
        let mut ids: Vec<usize> = train
            .row_ids()
            .iter()
            .chain(test.row_ids())
            .copied()
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..d.len()).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let d = raw(&[("XSS", 10)]);
        for f in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(split_server_test(&d, f, &mut SeededRng::new(0)).is_err());
        }
    }

    fn plain(cols: Vec<Vec<f64>>) -> Dataset {
        let rows = cols[0].len();
        let mut m = Matrix::zeros(rows, cols.len());
        for (c, col) in cols.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                m.set(r, c, *v);
            }
        }
        Dataset::new(
            m,
            vec![0; rows],
            vec!["a".into()],
            (0..cols.len()).map(|i| format!("f{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn normalize_cases() {
        let train = plain(vec![vec![0.0, 2.0], vec![5.0, 5.0]]);
        let test = plain(vec![vec![4.0], vec![6.0]]);
        let (t, others) = normalize(&train, &[test]).unwrap();
        assert_eq!(t.features().data(), &[-1.0, 0.0, 1.0, 0.0]);
        // test row uses train statistics: (4 - 1) / 1 and (6 - 5), constant col centred
        assert_eq!(others[0].features().data(), &[3.0, 1.0]);
    }

    #[test]
    fn normalized_train_is_standard() {
        let mut rng = SeededRng::new(8);
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|k| {
                (0..50)
                    .map(|_| rng.normal() * (k as f64 + 1.0) + 3.0)
                    .collect()
            })
            .collect();
        let (t, _) = normalize(&plain(cols), &[]).unwrap();
        let s = Standardizer::fit(&t).unwrap();
        for (m, sd) in s.mean.iter().zip(&s.stdev) {
            assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        }
    }
}
