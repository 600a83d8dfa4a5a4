use super::mlp::{loss_and_gradient, Batch, MlpConfig};
use super::ParameterVector;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// A client's local loss, evaluated over subsets of its samples.
///
/// The federated engine only sees this trait, so anything from the MLP to
/// a closed-form quadratic can stand in as a client.
pub trait LocalObjective {
    /// `|D_i|`: samples held by this objective.
    fn sample_count(&self) -> usize;

    fn param_count(&self) -> usize;

    /// Mean loss and gradient over the samples with indices `rows`.
    fn loss_and_gradient(
        &self,
        params: &ParameterVector,
        rows: &[usize],
    ) -> Result<(f64, ParameterVector)>;
}

/// Per-step hook: rewrites the raw gradient before the SGD update.
/// `params` is the iterate the gradient was taken at.
pub trait GradientModifier {
    fn modify(&mut self, grad: &mut ParameterVector, params: &ParameterVector);
}

/// Leaves gradients untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl GradientModifier for Identity {
    fn modify(&mut self, _grad: &mut ParameterVector, _params: &ParameterVector) {}
}

impl<F> GradientModifier for F
where
    F: FnMut(&mut ParameterVector, &ParameterVector),
{
    fn modify(&mut self, grad: &mut ParameterVector, params: &ParameterVector) {
        self(grad, params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        // lr = 0 is allowed: it is the no-op baseline several identities rely on
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(
                "lr",
                format!("must be finite and >= 0, got {}", self.lr),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrainOutcome {
    pub params: ParameterVector,
    /// Mean of the per-step minibatch losses.
    pub mean_loss: f64,
    pub steps: usize,
}

/// Minibatch SGD. Every epoch reshuffles the sample order from `rng`; each
/// step applies `p ← p − lr · modifier(g, p)`.
pub fn local_train<O, M>(
    obj: &O,
    p0: &ParameterVector,
    spec: &TrainSpec,
    modifier: &mut M,
    rng: &mut SeededRng,
) -> Result<LocalTrainOutcome>
where
    O: LocalObjective + ?Sized,
    M: GradientModifier + ?Sized,
{
    spec.validate()?;
    let n = obj.sample_count();
    if n == 0 {
        return Err(Error::EmptyDataset("local objective has no samples".into()));
    }
    if p0.len() != obj.param_count() {
        return Err(Error::config(
            "params",
            format!(
                "length {} but objective needs {}",
                p0.len(),
                obj.param_count()
            ),
        ));
    }
    let mut p = p0.clone();
    let mut steps = 0usize;
    let mut loss_sum = 0.0;
    for epoch in 0..spec.epochs {
        let order = rng.permutation(n);
        for rows in order.chunks(spec.batch_size) {
            let (loss, mut g) = obj.loss_and_gradient(&p, rows)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    context: format!("epoch {epoch}, step {steps}"),
                    loss,
                });
            }
            modifier.modify(&mut g, &p);
            p.axpy(-spec.lr, &g);
            loss_sum += loss;
            steps += 1;
        }
    }
    if !p.is_finite() {
        return Err(Error::Divergence {
            context: format!("non-finite parameters after {steps} steps"),
            loss: f64::NAN,
        });
    }
    Ok(LocalTrainOutcome {
        params: p,
        mean_loss: loss_sum / steps as f64,
        steps,
    })
}

/// MLP cross-entropy over a client's local dataset.
#[derive(Debug, Clone)]
pub struct MlpObjective {
    cfg: MlpConfig,
    data: Dataset,
}

impl MlpObjective {
    pub fn new(cfg: MlpConfig, data: Dataset) -> Result<Self> {
        if data.feature_count() != cfg.inputs() {
            return Err(Error::config(
                "mlp",
                format!(
                    "network expects {} inputs, data has {}",
                    cfg.inputs(),
                    data.feature_count()
                ),
            ));
        }
        if data.class_count() > cfg.outputs() {
            return Err(Error::config(
                "mlp",
                format!(
                    "network has {} outputs, data has {} classes",
                    cfg.outputs(),
                    data.class_count()
                ),
            ));
        }
        Ok(MlpObjective { cfg, data })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }
}

impl LocalObjective for MlpObjective {
    fn sample_count(&self) -> usize {
        self.data.len()
    }

    fn param_count(&self) -> usize {
        self.cfg.param_count()
    }

    fn loss_and_gradient(
        &self,
        params: &ParameterVector,
        rows: &[usize],
    ) -> Result<(f64, ParameterVector)> {
        let batch = Batch::from_dataset(&self.data, rows)?;
        loss_and_gradient(&self.cfg, params, &batch)
    }
}

/// `½ (w − a)ᵀ diag(d) (w − a)`, a single-sample objective whose gradient
/// ignores the minibatch. Handy for checking federated algebra in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub diag: Vec<f64>,
    pub center: Vec<f64>,
}

impl QuadraticObjective {
    pub fn new(diag: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        if diag.len() != center.len() {
            return Err(Error::config("quadratic", "diag and center lengths differ"));
        }
        Ok(QuadraticObjective { diag, center })
    }
}

impl LocalObjective for QuadraticObjective {
    fn sample_count(&self) -> usize {
        1
    }

    fn param_count(&self) -> usize {
        self.diag.len()
    }

    fn loss_and_gradient(
        &self,
        params: &ParameterVector,
        _rows: &[usize],
    ) -> Result<(f64, ParameterVector)> {
        let mut loss = 0.0;
        let grad = params
            .as_slice()
            .iter()
            .zip(&self.diag)
            .zip(&self.center)
            .map(|((w, d), a)| {
                let r = w - a;
                loss += 0.5 * d * r * r;
                d * r
            })
            .collect();
        Ok((loss, ParameterVector::new(grad)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mlp::init_params;
    use crate::numerics::Matrix;

    fn quad() -> QuadraticObjective {
        QuadraticObjective::new(vec![1.0, 1.0, 1.0], vec![1.0, -2.0, 3.0]).unwrap()
    }

    #[test]
    fn zero_lr_is_noop() {
        let p0 = ParameterVector::new(vec![0.5, 0.5, 0.5]);
        let spec = TrainSpec {
            epochs: 3,
            lr: 0.0,
            batch_size: 1,
        };
        let out = local_train(&quad(), &p0, &spec, &mut Identity, &mut SeededRng::new(0)).unwrap();
        assert_eq!(out.params, p0);
        assert_eq!(out.steps, 3);
    }

    #[test]
    fn one_full_batch_step() {
        let cfg = MlpConfig::new(vec![2, 3, 2]).unwrap();
        let x = Matrix::from_vec(4, 2, vec![0.1, 0.2, -1.0, 0.4, 0.3, -0.7, 2.0, 1.0]).unwrap();
        let d = Dataset::new(
            x,
            vec![0, 1, 1, 0],
            vec!["a".into(), "b".into()],
            vec!["p".into(), "q".into()],
        )
        .unwrap();
        let obj = MlpObjective::new(cfg.clone(), d).unwrap();
        let p0 = init_params(&cfg, &mut SeededRng::new(4));
        let spec = TrainSpec {
            epochs: 1,
            lr: 0.1,
            batch_size: 4,
        };
        let out = local_train(&obj, &p0, &spec, &mut Identity, &mut SeededRng::new(1)).unwrap();
        let (_, g) = obj.loss_and_gradient(&p0, &[0, 1, 2, 3]).unwrap();
        let mut want = p0.clone();
        want.axpy(-0.1, &g);
        // full batch: row order only changes summation order
        assert!(out.params.max_abs_diff(&want) < 1e-15);
        assert_eq!(out.steps, 1);
    }

    #[test]
    fn quadratic_contraction() {
        let p0 = ParameterVector::zeros(3);
        let spec = TrainSpec {
            epochs: 100,
            lr: 0.1,
            batch_size: 1,
        };
        let out = local_train(&quad(), &p0, &spec, &mut Identity, &mut SeededRng::new(0)).unwrap();
        let a = ParameterVector::new(quad().center);
        let err = out.params.sub(&a).norm();
        // closed form: ‖p − a‖ = (1 − lr)^steps ‖p0 − a‖
        let want = 0.9f64.powi(100) * a.norm();
        assert!((err - want).abs() < 1e-12 && err < 1e-4, "{err} vs {want}");
    }

    #[test]
    fn steps_count_partial_batches() {
        let d = Dataset::new(
            Matrix::zeros(10, 1),
            vec![0; 10],
            vec!["a".into()],
            vec!["f".into()],
        )
        .unwrap();
        let cfg = MlpConfig::new(vec![1, 1]).unwrap();
        let obj = MlpObjective::new(cfg.clone(), d).unwrap();
        let spec = TrainSpec {
            epochs: 2,
            lr: 0.01,
            batch_size: 4,
        };
        let out = local_train(
            &obj,
            &ParameterVector::zeros(2),
            &spec,
            &mut Identity,
            &mut SeededRng::new(0),
        )
        .unwrap();
        assert_eq!(out.steps, 6);
    }

    #[test]
    fn divergence_is_reported() {
        let obj = QuadraticObjective::new(vec![1.0], vec![0.0]).unwrap();
        let spec = TrainSpec {
            epochs: 2000,
            lr: 3.0,
            batch_size: 1,
        };
        let r = local_train(
            &obj,
            &ParameterVector::new(vec![1.0]),
            &spec,
            &mut Identity,
            &mut SeededRng::new(0),
        );
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
    }

    #[test]
    fn modifier_sees_each_step() {
        let mut seen = 0;
        let mut m = |_: &mut ParameterVector, _: &ParameterVector| seen += 1;
        let spec = TrainSpec {
            epochs: 5,
            lr: 0.1,
            batch_size: 1,
        };
        local_train(
            &quad(),
            &ParameterVector::zeros(3),
            &spec,
            &mut m,
            &mut SeededRng::new(0),
        )
        .unwrap();
        assert_eq!(seen, 5);
    }

    #[test]
    fn rejects_bad_spec() {
        for spec in [
            TrainSpec {
                epochs: 0,
                lr: 0.1,
                batch_size: 1,
            },
            TrainSpec {
                epochs: 1,
                lr: -0.1,
                batch_size: 1,
            },
            TrainSpec {
                epochs: 1,
                lr: 0.1,
                batch_size: 0,
            },
        ] {
            assert!(local_train(
                &quad(),
                &ParameterVector::zeros(3),
                &spec,
                &mut Identity,
                &mut SeededRng::new(0)
            )
            .is_err());
        }
    }
}
