use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

/// Gaussian-blob dataset parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dims: usize,
    pub separation: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 8,
            per_class: 500,
            dims: 8,
            separation: 6.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("synth.classes", "must be >= 2"));
        }
        if self.per_class < 1 {
            return Err(Error::config("synth.per_class", "must be >= 1"));
        }
        if self.dims < 1 {
            return Err(Error::config("synth.dims", "must be >= 1"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::config("synth.separation", "must be finite and > 0"));
        }
        Ok(())
    }
}

impl std::str::FromStr for SynthSpec {
    type Err = String;

    /// `classes=8,per_class=500,dims=8,separation=6`; omitted keys keep defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut spec = SynthSpec::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            let bad = |e: &dyn std::fmt::Display| format!("{k}: {e}");
            match k.trim() {
                "classes" => spec.classes = v.parse().map_err(|e| bad(&e))?,
                "per_class" => spec.per_class = v.parse().map_err(|e| bad(&e))?,
                "dims" => spec.dims = v.parse().map_err(|e| bad(&e))?,
                "separation" => spec.separation = v.parse().map_err(|e| bad(&e))?,
                other => return Err(format!("unknown synth key `{other}`")),
            }
        }
        Ok(spec)
    }
}

/// Class centre direction: `+e_k` for the first `dims` classes, `-e_k` for
/// the next `dims`, then random unit vectors.
fn direction(k: usize, dims: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut v = vec![0.0; dims];
    if k < 2 * dims {
        v[k % dims] = if k < dims { 1.0 } else { -1.0 };
        return v;
    }
    loop {
        v.iter_mut().for_each(|x| *x = rng.normal());
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// Unit-covariance Gaussian blobs, class `k` centred at
/// `separation × direction(k)`. Rows are grouped by class.
pub fn synth_generate(spec: &SynthSpec, rng: &mut SeededRng) -> Result<Dataset> {
    spec.validate()?;
    let SynthSpec {
        classes,
        per_class,
        dims,
        separation,
    } = *spec;
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            direction(k, dims, rng)
                .into_iter()
                .map(|x| x * separation)
                .collect()
        })
        .collect();
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for (k, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(centre.iter().map(|c| c + rng.normal()));
            labels.push(k);
        }
    }
    Dataset::new(
        Matrix::from_vec(n, dims, data)?,
        labels,
        (0..classes).map(|k| format!("class_{k}")).collect(),
        (0..dims).map(|j| format!("x{j}")).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest() {
        let spec = SynthSpec {
            classes: 2,
            per_class: 1,
            dims: 3,
            separation: 1.0,
        };
        let d = synth_generate(&spec, &mut SeededRng::new(0)).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), [0, 1]);
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec::default();
        let a = synth_generate(&spec, &mut SeededRng::new(42)).unwrap();
        let b = synth_generate(&spec, &mut SeededRng::new(42)).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&spec, &mut SeededRng::new(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn more_classes_than_dims() {
        let spec = SynthSpec {
            classes: 7,
            per_class: 2,
            dims: 2,
            separation: 3.0,
        };
        let d = synth_generate(&spec, &mut SeededRng::new(1)).unwrap();
        assert_eq!(d.len(), 14);
        assert_eq!(d.class_counts(), vec![2; 7]);
    }

    #[test]
    fn class_means_near_centres() {
        let spec = SynthSpec {
            classes: 3,
            per_class: 4000,
            dims: 3,
            separation: 5.0,
        };
        let d = synth_generate(&spec, &mut SeededRng::new(9)).unwrap();
        for k in 0..3 {
            let rows: Vec<usize> = (0..d.len()).filter(|&i| d.labels()[i] == k).collect();
            for j in 0..3 {
                let m =
                    rows.iter().map(|&r| d.features().get(r, j)).sum::<f64>() / rows.len() as f64;
                let want = if j == k { 5.0 } else { 0.0 };
                assert!((m - want).abs() < 0.06, "class {k} dim {j}: {m}");
            }
        }
    }

    #[test]
    fn parse_spec() {
        let s: SynthSpec = "classes=4, dims=2".parse().unwrap();
        assert_eq!((s.classes, s.dims, s.per_class), (4, 2, 500));
        assert!("bogus=1".parse::<SynthSpec>().is_err());
        assert!(SynthSpec {
            classes: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
