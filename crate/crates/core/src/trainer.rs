//! Minibatch training with an adaptive-moment optimizer and early stopping
//! on validation RMSE.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::tensor::Tensor;

/// One training sample: a whole bag, or a single instance carrying its
/// bag's label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainUnit {
    pub bag: usize,
    pub instance: Option<usize>,
}

/// A trainable model family: how to initialize it, what a training sample
/// is, and how to score one bag.
pub trait ModelFamily: Sync {
    type Params: Parameters + Clone + Send + Sync;

    fn init_params(&self, input_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self::Params>;

    fn training_units(&self, ds: &Dataset) -> Vec<TrainUnit>;

    /// Squared error of one unit and its gradient, one tensor per parameter.
    fn unit_loss_grad(
        &self,
        params: &Self::Params,
        ds: &Dataset,
        unit: TrainUnit,
    ) -> Result<(f64, Vec<Tensor>)>;

    fn predict_bag(&self, params: &Self::Params, bag: &Bag) -> Result<f64>;

    fn predict_dataset(&self, params: &Self::Params, ds: &Dataset) -> Result<Vec<f64>> {
        ds.bags()
            .iter()
            .map(|b| self.predict_bag(params, b))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Decoupled decay: each step also subtracts `learning_rate * weight_decay * p`.
    pub weight_decay: f64,
    /// Units per optimizer step (bags, or instances for instance-level training).
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 16,
            max_epochs: 500,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch size, patience and max epochs must all be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// CSV `epoch,train_loss,val_rmse`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_rmse")?;
        for e in &self.epochs {
            writeln!(w, "{},{:?},{:?}", e.epoch, e.train_loss, e.val_rmse)?;
        }
        Ok(())
    }
}

pub fn mse_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::shape(
            "mse_loss",
            &[predictions.len()],
            &[labels.len()],
        ));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(total / labels.len() as f64)
}

/// Bias-corrected first/second moment accumulators.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

pub fn optimizer_step<P: Parameters>(
    params: &mut P,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let names: Vec<&'static str> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let tensors = params.tensors_mut();
    if tensors.len() != grads.len() {
        return Err(Error::shape(
            "optimizer_step",
            &[tensors.len()],
            &[grads.len()],
        ));
    }
    for ((p, g), name) in tensors.iter().zip(grads).zip(&names) {
        if p.shape() != g.shape() {
            return Err(Error::shape("optimizer_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {name} after {} optimizer steps",
                state.step
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = cfg.learning_rate;
    let decay = cfg.learning_rate * cfg.weight_decay;
    for (i, p) in tensors.into_iter().enumerate() {
        let g = grads[i].data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + state.epsilon) + decay * *w;
        }
    }
    Ok(())
}

/// Trains on `train`, selecting the epoch with the lowest validation RMSE.
pub fn train<F: ModelFamily>(
    family: &F,
    train_set: &Dataset,
    validation: &Dataset,
    cfg: &TrainConfig,
) -> Result<(F::Params, TrainHistory)> {
    train_with_observer(family, train_set, validation, cfg, |_, _| {})
}

/// [`train`], calling `observer(step, params)` after every optimizer step.
pub fn train_with_observer<F: ModelFamily>(
    family: &F,
    train_set: &Dataset,
    validation: &Dataset,
    cfg: &TrainConfig,
    mut observer: impl FnMut(u64, &F::Params),
) -> Result<(F::Params, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty train and validation sets, got {} and {} bags",
            train_set.bag_count(),
            validation.bag_count()
        )));
    }
    if train_set.feature_count() != validation.feature_count() {
        return Err(Error::shape(
            "train/validation features",
            &[train_set.feature_count()],
            &[validation.feature_count()],
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = family.init_params(train_set.feature_count(), &mut rng)?;
    let mut adam = AdamState::new(&params);
    let units = family.training_units(train_set);
    let val_labels = validation.labels();

    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best_params = params.clone();
    let mut best_rmse = f64::INFINITY;
    let mut order: Vec<usize> = (0..units.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut acc = params.zeros_like();
            for &u in batch {
                let (loss, grads) = family.unit_loss_grad(&params, train_set, units[u])?;
                loss_sum += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_scaled(g, scale)?;
                }
            }
            optimizer_step(&mut params, &acc, &mut adam, cfg)?;
            observer(adam.steps(), &params);
        }
        let preds = family.predict_dataset(&params, validation)?;
        let val_rmse = mse_loss(&preds, &val_labels)?.sqrt();
        if !val_rmse.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation RMSE at epoch {epoch}"
            )));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / units.len() as f64,
            val_rmse,
        });
        if val_rmse < best_rmse {
            best_rmse = val_rmse;
            best_params = params.clone();
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= cfg.patience {
            break;
        }
    }
    Ok((best_params, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One scalar parameter `p`, predicting `p` for every bag.
    struct ConstantFamily;

    #[derive(Clone, Debug, PartialEq)]
    struct Scalar(Tensor);

    impl Parameters for Scalar {
        fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
            vec![("p", &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
            vec![&mut self.0]
        }
    }

    impl ModelFamily for ConstantFamily {
        type Params = Scalar;
        fn init_params(&self, _: usize, _: &mut ChaCha8Rng) -> Result<Scalar> {
            Ok(Scalar(Tensor::vector(vec![0.0])))
        }
        fn training_units(&self, ds: &Dataset) -> Vec<TrainUnit> {
            (0..ds.bag_count())
                .map(|bag| TrainUnit {
                    bag,
                    instance: None,
                })
                .collect()
        }
        fn unit_loss_grad(
            &self,
            p: &Scalar,
            ds: &Dataset,
            u: TrainUnit,
        ) -> Result<(f64, Vec<Tensor>)> {
            let diff = p.0.data()[0] - ds.bags()[u.bag].label();
            Ok((diff * diff, vec![Tensor::vector(vec![2.0 * diff])]))
        }
        fn predict_bag(&self, p: &Scalar, _: &Bag) -> Result<f64> {
            Ok(p.0.data()[0])
        }
    }

    fn labeled(labels: &[f64]) -> Dataset {
        let bags = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| Bag::from_rows(format!("b{i}"), y, &[vec![0.0]]).unwrap())
            .collect();
        Dataset::from_bags("t", bags).unwrap()
    }

    #[test]
    fn mse_basics() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0], &[3.0]).unwrap(), 9.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[2.0, -2.0]).unwrap().sqrt(), 2.0);
        assert!(mse_loss(&[0.0], &[1.0, 2.0]).is_err());
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Scalar(Tensor::vector(vec![1.5]));
        let mut s = AdamState::new(&p);
        let cfg = TrainConfig::default();
        for _ in 0..5 {
            optimizer_step(&mut p, &[Tensor::vector(vec![0.0])], &mut s, &cfg).unwrap();
        }
        assert_eq!(p.0.data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Scalar(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let mut s = AdamState::new(&p);
        let cfg = TrainConfig::default();
        let g = Tensor::vector(vec![3.0, -0.02, 3.0]);
        optimizer_step(&mut p, &[g], &mut s, &cfg).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let d = p.0.data();
        assert!((d[0] + 1e-3).abs() < 1e-11);
        assert!((d[1] - 1e-3).abs() < 1e-9);
        assert_eq!(d[0], d[2]);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = Scalar(Tensor::vector(vec![0.0]));
        let mut s = AdamState::new(&p);
        let err = optimizer_step(
            &mut p,
            &[Tensor::vector(vec![f64::NAN])],
            &mut s,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(err.is_numeric());
        assert!(err.to_string().contains('p'));
    }

    #[test]
    fn worsening_validation_stops_after_patience() {
        // Training pulls p towards 10, validation wants -10.
        let cfg = TrainConfig {
            learning_rate: 0.1,
            patience: 1,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let (best, hist) = train(
            &ConstantFamily,
            &labeled(&[10.0; 4]),
            &labeled(&[-10.0]),
            &cfg,
        )
        .unwrap();
        assert_eq!(hist.epochs.len(), 2);
        assert_eq!(hist.best_epoch, 1);
        assert!(hist.epochs[1].val_rmse > hist.epochs[0].val_rmse);
        // Re-evaluating the kept params reproduces the best epoch's RMSE.
        let rmse = (best.0.data()[0] + 10.0).abs();
        assert!((rmse - hist.best().val_rmse).abs() < 1e-12);
    }

    #[test]
    fn history_is_deterministic() {
        let cfg = TrainConfig {
            learning_rate: 0.05,
            max_epochs: 30,
            batch_size: 2,
            seed: 4,
            ..TrainConfig::default()
        };
        let tr = labeled(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let va = labeled(&[3.0]);
        let a = train(&ConstantFamily, &tr, &va, &cfg).unwrap();
        let b = train(&ConstantFamily, &tr, &va, &cfg).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn rejects_empty_sets_and_bad_config() {
        let tr = labeled(&[1.0]);
        let empty = Dataset::new("e", 1, vec![]).unwrap();
        assert!(train(&ConstantFamily, &tr, &empty, &TrainConfig::default()).is_err());
        assert!(train(&ConstantFamily, &empty, &tr, &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(train(&ConstantFamily, &tr, &tr, &bad).is_err());
    }

    #[test]
    fn history_csv() {
        let hist = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_rmse: 0.25,
            }],
            best_epoch: 1,
        };
        let mut out = Vec::new();
        hist.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "epoch,train_loss,val_rmse\n1,0.5,0.25\n"
        );
    }
}
