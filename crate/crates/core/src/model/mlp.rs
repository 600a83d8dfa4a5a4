use serde::{Deserialize, Serialize};

use super::ParameterVector;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

/// Layer widths from input to output; hidden layers use ReLU, the output
/// layer emits raw logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    layer_sizes: Vec<usize>,
}

/// Offsets of one affine layer inside the flat parameter vector. Weights are
/// a row-major `fan_in × fan_out` block followed by `fan_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub biases: usize,
}

impl MlpConfig {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::config("mlp", "need at least input and output sizes"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::config("mlp", "layer sizes must be >= 1"));
        }
        Ok(MlpConfig { layer_sizes })
    }

    /// `inputs → hidden… → classes`.
    pub fn with_hidden(inputs: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(inputs);
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        MlpConfig::new(sizes)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let l = LayerLayout {
                    fan_in: w[0],
                    fan_out: w[1],
                    weights: offset,
                    biases: offset + w[0] * w[1],
                };
                offset += (w[0] + 1) * w[1];
                l
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// A minibatch of rows.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() || labels.len() != features.rows() {
            return Err(Error::config(
                "batch",
                format!("{} labels for {} rows", labels.len(), features.rows()),
            ));
        }
        Ok(Batch { features, labels })
    }

    pub fn from_dataset(d: &Dataset, rows: &[usize]) -> Result<Self> {
        Batch::new(
            d.features().select_rows(rows),
            rows.iter().map(|&r| d.labels()[r]).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// He-uniform weights in `±sqrt(6 / fan_in)`, zero biases.
pub fn init_params(cfg: &MlpConfig, rng: &mut SeededRng) -> ParameterVector {
    let mut p = vec![0.0; cfg.param_count()];
    for l in cfg.layers() {
        let bound = (6.0 / l.fan_in as f64).sqrt();
        for w in &mut p[l.weights..l.biases] {
            *w = bound * (2.0 * rng.next_f64() - 1.0);
        }
    }
    ParameterVector::new(p)
}

fn check_shapes(cfg: &MlpConfig, p: &ParameterVector, x: &Matrix) -> Result<()> {
    if p.len() != cfg.param_count() {
        return Err(Error::config(
            "params",
            format!("length {} but network needs {}", p.len(), cfg.param_count()),
        ));
    }
    if x.cols() != cfg.inputs() {
        return Err(Error::config(
            "features",
            format!("{} columns but network expects {}", x.cols(), cfg.inputs()),
        ));
    }
    Ok(())
}

/// `x · W + b`; each output starts at its bias and accumulates inputs in order.
fn affine(x: &Matrix, p: &[f64], l: &LayerLayout) -> Matrix {
    let w = &p[l.weights..l.biases];
    let b = &p[l.biases..l.biases + l.fan_out];
    let mut out = Matrix::zeros(x.rows(), l.fan_out);
    for r in 0..x.rows() {
        let o = out.row_mut(r);
        o.copy_from_slice(b);
        for (i, &xi) in x.row(r).iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wi = &w[i * l.fan_out..(i + 1) * l.fan_out];
            for (oj, &wij) in o.iter_mut().zip(wi) {
                *oj += xi * wij;
            }
        }
    }
    out
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Logits (`B × C`, no softmax).
pub fn forward(cfg: &MlpConfig, p: &ParameterVector, x: &Batch) -> Result<Matrix> {
    forward_matrix(cfg, p, &x.features)
}

pub(crate) fn forward_matrix(cfg: &MlpConfig, p: &ParameterVector, x: &Matrix) -> Result<Matrix> {
    check_shapes(cfg, p, x)?;
    let layers = cfg.layers();
    let mut a = affine(x, p.as_slice(), &layers[0]);
    for l in &layers[1..] {
        relu_in_place(&mut a);
        a = affine(&a, p.as_slice(), l);
    }
    Ok(a)
}

/// Cross-entropy of one logit row against `label`, and its softmax.
fn softmax_xent(logits: &[f64], label: usize, probs: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = (z - max).exp();
        sum += *p;
    }
    let lse = max + sum.ln();
    for p in probs.iter_mut() {
        *p /= sum;
    }
    lse - logits[label]
}

/// Cross-entropy of one logit row against `label`, max-subtracted.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    max + sum.ln() - logits[label]
}

/// Mean softmax cross-entropy over the batch and its gradient by backprop.
pub fn loss_and_gradient(
    cfg: &MlpConfig,
    p: &ParameterVector,
    batch: &Batch,
) -> Result<(f64, ParameterVector)> {
    check_shapes(cfg, p, &batch.features)?;
    let params = p.as_slice();
    let layers = cfg.layers();
    let b = batch.len();

    // activations[0] = input; activations[l + 1] = post-activation of layer l
    // (the last entry holds logits)
    let mut activations: Vec<Matrix> = Vec::with_capacity(layers.len() + 1);
    activations.push(batch.features.clone());
    for (li, l) in layers.iter().enumerate() {
        let mut z = affine(&activations[li], params, l);
        if li + 1 < layers.len() {
            relu_in_place(&mut z);
        }
        activations.push(z);
    }

    let classes = cfg.outputs();
    let logits = activations.last().expect("at least one layer");
    let mut delta = Matrix::zeros(b, classes);
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for r in 0..b {
        let label = batch.labels[r];
        if label >= classes {
            return Err(Error::config(
                "labels",
                format!("label {label} but network has {classes} outputs"),
            ));
        }
        let d = delta.row_mut(r);
        loss += softmax_xent(logits.row(r), label, d);
        d[label] -= 1.0;
        d.iter_mut().for_each(|v| *v *= inv_b);
    }
    loss *= inv_b;

    let mut grad = vec![0.0; p.len()];
    for li in (0..layers.len()).rev() {
        let l = &layers[li];
        let input = &activations[li];
        {
            let (gw, gb) = grad[l.weights..l.biases + l.fan_out].split_at_mut(l.fan_in * l.fan_out);
            for r in 0..b {
                let dr = delta.row(r);
                for (gbj, &dj) in gb.iter_mut().zip(dr) {
                    *gbj += dj;
                }
                for (i, &ai) in input.row(r).iter().enumerate() {
                    if ai == 0.0 {
                        continue;
                    }
                    for (g, &dj) in gw[i * l.fan_out..(i + 1) * l.fan_out].iter_mut().zip(dr) {
                        *g += ai * dj;
                    }
                }
            }
        }
        if li == 0 {
            break;
        }
        // back through W, then through the ReLU of the previous layer
        let w = &params[l.weights..l.biases];
        let mut prev = Matrix::zeros(b, l.fan_in);
        for r in 0..b {
            let dr = delta.row(r);
            let act = input.row(r);
            for (i, out) in prev.row_mut(r).iter_mut().enumerate() {
                if act[i] <= 0.0 {
                    continue;
                }
                *out = w[i * l.fan_out..(i + 1) * l.fan_out]
                    .iter()
                    .zip(dr)
                    .map(|(wij, dj)| wij * dj)
                    .sum();
            }
        }
        delta = prev;
    }
    Ok((loss, ParameterVector::new(grad)))
}

/// Global metrics on a held-out set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 2048;

/// Accuracy (argmax, ties to the lowest class) and mean cross-entropy.
pub fn evaluate(cfg: &MlpConfig, p: &ParameterVector, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::config("test", "cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let rows: Vec<usize> = (0..test.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = test.features().select_rows(chunk);
        let logits = forward_matrix(cfg, p, &x)?;
        for (k, &r) in chunk.iter().enumerate() {
            let z = logits.row(k);
            let label = test.labels()[r];
            if label >= z.len() {
                return Err(Error::config(
                    "labels",
                    format!("label {label} but network has {} outputs", z.len()),
                ));
            }
            if argmax(z) == label {
                correct += 1;
            }
            loss_sum += cross_entropy(z, label);
        }
    }
    let n = test.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss_sum / n,
    })
}
