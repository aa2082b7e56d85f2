//! Fitting a single model on a whole dataset, saving it with its
//! preprocessing, and predicting from the saved file.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    self, AttentionConfig, AttentionFamily, AttentionModelParams, AttentionTrace,
};
use crate::baselines::{
    aggregated_predict, instance_predict, AggregatedFamily, Aggregator, InstanceFamily,
    MlpRegressorParams,
};
use crate::data::{apply_standardizer, fit_standardizer, Dataset, StandardizationStats};
use crate::error::{Error, Result};
use crate::eval::{derive_seed, Algorithm, Experiment};
use crate::moments::{augment_dataset, augmented_feature_count, MomentConfig};
use crate::params::Parameters;
use crate::tensor::Tensor;
use crate::trainer::{train, ModelFamily, TrainHistory};

pub const CHECKPOINT_FORMAT: &str = "mir-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub algorithm: Algorithm,
    pub hidden_size: usize,
    pub processing_steps: usize,
    pub width: usize,
    /// Feature count of the raw data, before moments are attached.
    pub feature_count: usize,
    pub standardizer: StandardizationStats,
    pub moments: MomentConfig,
    pub tensors: Vec<NamedTensor>,
}

/// Model reconstructed from a checkpoint.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum FittedModel {
    Attention {
        config: AttentionConfig,
        params: AttentionModelParams,
    },
    Aggregated(MlpRegressorParams),
    Instance {
        params: MlpRegressorParams,
        aggregator: Aggregator,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub bag_id: String,
    pub label: f64,
    pub prediction: f64,
    /// Attention model only.
    pub trace: Option<AttentionTrace>,
}

fn named<P: Parameters>(params: &P) -> Vec<NamedTensor> {
    params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| NamedTensor {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect()
}

impl Checkpoint {
    fn tensors(&self) -> Result<Vec<Tensor>> {
        self.tensors
            .iter()
            .map(|t| {
                Tensor::new(t.shape.clone(), t.data.clone())
                    .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", t.name)))
            })
            .collect()
    }

    pub fn model(&self) -> Result<FittedModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.standardizer.feature_count() != self.feature_count {
            return Err(Error::Checkpoint(
                "standardizer does not match the feature count".into(),
            ));
        }
        let input_dim = augmented_feature_count(self.feature_count, &self.moments);
        let tensors = self.tensors()?;
        let mlp = |tensors: Vec<Tensor>| -> Result<MlpRegressorParams> {
            let p = MlpRegressorParams::from_tensors(tensors)?;
            if p.input_dim() != input_dim || p.width() != self.width {
                return Err(Error::Checkpoint(format!(
                    "regressor is {}x{}, expected {}x{input_dim}",
                    p.width(),
                    p.input_dim(),
                    self.width
                )));
            }
            Ok(p)
        };
        Ok(match self.algorithm {
            Algorithm::Attention => {
                let config =
                    AttentionConfig::new(self.hidden_size, self.processing_steps, input_dim)
                        .map_err(|e| Error::Checkpoint(e.to_string()))?;
                let params = AttentionModelParams::from_tensors(&config, tensors)?;
                FittedModel::Attention { config, params }
            }
            Algorithm::Aggregated => FittedModel::Aggregated(mlp(tensors)?),
            Algorithm::InstanceMean => FittedModel::Instance {
                params: mlp(tensors)?,
                aggregator: Aggregator::Mean,
            },
            Algorithm::InstanceMedian => FittedModel::Instance {
                params: mlp(tensors)?,
                aggregator: Aggregator::Median,
            },
            Algorithm::TrainMean => {
                return Err(Error::Checkpoint("train-mean has no checkpoint".into()));
            }
        })
    }

    /// Standardizes with the stored statistics, attaches moments and predicts
    /// every bag of the raw dataset.
    pub fn predict(&self, raw: &Dataset) -> Result<Vec<Prediction>> {
        let model = self.model()?;
        let ds = augment_dataset(&apply_standardizer(&self.standardizer, raw)?, &self.moments)?;
        ds.bags()
            .iter()
            .map(|bag| {
                let (prediction, trace) = match &model {
                    FittedModel::Attention { config, params } => {
                        let (y, t) = attention::forward(params, config, bag)?;
                        (y, Some(t))
                    }
                    FittedModel::Aggregated(p) => (aggregated_predict(p, bag)?, None),
                    FittedModel::Instance { params, aggregator } => {
                        (instance_predict(params, bag, *aggregator)?, None)
                    }
                };
                Ok(Prediction {
                    bag_id: bag.id().to_string(),
                    label: bag.label(),
                    prediction,
                    trace,
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ckpt.model()?;
        Ok(ckpt)
    }
}

/// Trains one model on `ds`, holding out `validation_fraction` of the bags
/// (chosen with the experiment seed) for early stopping.
pub fn fit_checkpoint(
    ds: &Dataset,
    exp: &Experiment,
    validation_fraction: f64,
) -> Result<(Checkpoint, TrainHistory)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0, 1), got {validation_fraction}"
        )));
    }
    let b = ds.bag_count();
    let n_val = ((b as f64 * validation_fraction).round() as usize).max(1);
    if b < 2 || n_val >= b {
        return Err(Error::Data(format!(
            "{b} bags are too few to hold out a validation set"
        )));
    }
    let mut order: Vec<usize> = (0..b).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        exp.seed,
        u64::MAX,
        0,
    )));
    let (val_idx, train_idx) = order.split_at(n_val);

    let train_raw = ds.subset(train_idx);
    let standardizer = fit_standardizer(&train_raw);
    let prepare = |d: &Dataset| -> Result<Dataset> {
        augment_dataset(&apply_standardizer(&standardizer, d)?, &exp.moments)
    };
    let train_set = prepare(&train_raw)?;
    let val = prepare(&ds.subset(val_idx))?;
    let cfg = crate::trainer::TrainConfig {
        seed: exp.seed,
        ..exp.train.clone()
    };

    fn run<F: ModelFamily>(
        f: &F,
        t: &Dataset,
        v: &Dataset,
        c: &crate::trainer::TrainConfig,
    ) -> Result<(Vec<NamedTensor>, TrainHistory)> {
        let (p, h) = train(f, t, v, c)?;
        Ok((named(&p), h))
    }
    let (tensors, history) = match exp.algorithm {
        Algorithm::Attention => run(
            &AttentionFamily {
                hidden_size: exp.hidden_size,
                processing_steps: exp.processing_steps,
            },
            &train_set,
            &val,
            &cfg,
        )?,
        Algorithm::Aggregated => run(
            &AggregatedFamily { width: exp.width },
            &train_set,
            &val,
            &cfg,
        )?,
        Algorithm::InstanceMean | Algorithm::InstanceMedian => run(
            &InstanceFamily {
                width: exp.width,
                aggregator: if exp.algorithm == Algorithm::InstanceMean {
                    Aggregator::Mean
                } else {
                    Aggregator::Median
                },
            },
            &train_set,
            &val,
            &cfg,
        )?,
        Algorithm::TrainMean => {
            return Err(Error::Config("train-mean cannot be checkpointed".into()))
        }
    };
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        algorithm: exp.algorithm,
        hidden_size: exp.hidden_size,
        processing_steps: exp.processing_steps,
        width: exp.width,
        feature_count: ds.feature_count(),
        standardizer,
        moments: exp.moments,
        tensors,
    };
    Ok((ckpt, history))
}

/// CSV `bag_id,label,prediction`.
pub fn write_predictions_csv<W: Write>(preds: &[Prediction], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "bag_id,label,prediction")?;
    for p in preds {
        writeln!(w, "{},{:?},{:?}", p.bag_id, p.label, p.prediction)?;
    }
    Ok(())
}

/// CSV `bag_id,step,instance_index,score,coefficient`, steps and instances
/// 1-based. Bags without a trace are skipped.
pub fn write_trace_csv<W: Write>(preds: &[Prediction], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "bag_id,step,instance_index,score,coefficient")?;
    for p in preds {
        let Some(trace) = &p.trace else { continue };
        for (t, step) in trace.steps.iter().enumerate() {
            for (l, (s, a)) in step.scores.iter().zip(&step.coefficients).enumerate() {
                writeln!(w, "{},{},{},{:?},{:?}", p.bag_id, t + 1, l + 1, s, a)?;
            }
        }
    }
    Ok(())
}
