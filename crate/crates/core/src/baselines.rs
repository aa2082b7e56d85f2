//! Aggregated and instance-level baselines sharing one single-hidden-layer
//! regressor `w2 . tanh(W1 x + b1) + b2`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::uniform_fan_in;
use crate::data::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::Parameters;
use crate::tensor::Tensor;
use crate::trainer::{ModelFamily, TrainUnit};

pub const DEFAULT_WIDTH: usize = 256;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;

pub const MLP_PARAM_NAMES: [&str; 4] = [
    "mlp.hidden_weight",
    "mlp.hidden_bias",
    "mlp.output_weight",
    "mlp.output_bias",
];

#[derive(Clone, Debug, PartialEq)]
pub struct MlpRegressorParams {
    /// `W x d_in`
    pub hidden_weight: Tensor,
    /// `W`
    pub hidden_bias: Tensor,
    /// `1 x W`
    pub output_weight: Tensor,
    /// `1`
    pub output_bias: Tensor,
}

impl MlpRegressorParams {
    pub fn zeros(width: usize, input_dim: usize) -> Self {
        Self {
            hidden_weight: Tensor::zeros(&[width, input_dim]),
            hidden_bias: Tensor::zeros(&[width]),
            output_weight: Tensor::zeros(&[1, width]),
            output_bias: Tensor::zeros(&[1]),
        }
    }

    pub fn init<R: Rng + ?Sized>(width: usize, input_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(width, input_dim);
        uniform_fan_in(&mut p.hidden_weight, rng);
        uniform_fan_in(&mut p.output_weight, rng);
        p
    }

    pub fn width(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_weight.cols()
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let [hw, hb, ow, ob]: [Tensor; 4] = tensors.try_into().map_err(|t: Vec<Tensor>| {
            Error::Checkpoint(format!("expected 4 tensors, found {}", t.len()))
        })?;
        let (w, d) = (hw.rows(), hw.cols());
        let p = Self {
            hidden_weight: hw,
            hidden_bias: hb,
            output_weight: ow,
            output_bias: ob,
        };
        let expected = Self::zeros(w, d);
        for ((name, t), (_, e)) in p.named_tensors().into_iter().zip(expected.named_tensors()) {
            if t.shape() != e.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    e.shape(),
                    t.shape()
                )));
            }
        }
        Ok(p)
    }
}

impl Parameters for MlpRegressorParams {
    fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        MLP_PARAM_NAMES
            .into_iter()
            .zip([
                &self.hidden_weight,
                &self.hidden_bias,
                &self.output_weight,
                &self.output_bias,
            ])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.output_weight,
            &mut self.output_bias,
        ]
    }
}

/// How per-instance predictions are combined into a bag prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregator {
    Mean,
    Median,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Mean => "mean",
            Aggregator::Median => "median",
        })
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "median" => Ok(Aggregator::Median),
            other => Err(Error::Config(format!("unknown aggregator `{other}`"))),
        }
    }
}

impl Aggregator {
    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Aggregator::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregator::Median => median(values),
        }
    }
}

/// Median; the midpoint of the two central values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Feature-wise mean of the bag's instances.
pub fn aggregate_mean(bag: &Bag) -> Vec<f64> {
    let mut rows = bag.instances().row_iter();
    let mut acc = rows.next().expect("bags are non-empty").to_vec();
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = bag.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn mlp_nodes(g: &mut Graph<'_>, leaves: &[NodeId], x: NodeId) -> Result<NodeId> {
    let [hw, hb, ow, ob] = leaves else {
        return Err(Error::Config("mlp graph needs 4 parameter leaves".into()));
    };
    let h = g.matmul(*hw, x)?;
    let h = g.add(h, *hb)?;
    let h = g.tanh(h)?;
    let y = g.matmul(*ow, h)?;
    g.add(y, *ob)
}

fn check_dim(params: &MlpRegressorParams, x: &[f64]) -> Result<()> {
    if x.len() != params.input_dim() {
        return Err(Error::shape(
            "mlp_predict",
            params.hidden_weight.shape(),
            &[x.len()],
        ));
    }
    Ok(())
}

pub fn mlp_predict(params: &MlpRegressorParams, x: &[f64]) -> Result<f64> {
    check_dim(params, x)?;
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = params
        .tensors()
        .into_iter()
        .map(|t| g.constant_ref(t))
        .collect();
    let xn = g.constant(Tensor::vector(x.to_vec()));
    let y = mlp_nodes(&mut g, &leaves, xn)?;
    let v = g.value(y).data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("mlp prediction {v}")));
    }
    Ok(v)
}

/// Squared error of one input/label pair and its parameter gradient.
pub fn mlp_loss_and_grad(
    params: &MlpRegressorParams,
    x: &[f64],
    label: f64,
) -> Result<(f64, Vec<Tensor>)> {
    check_dim(params, x)?;
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = params.tensors().into_iter().map(|t| g.param(t)).collect();
    let xn = g.constant(Tensor::vector(x.to_vec()));
    let y = mlp_nodes(&mut g, &leaves, xn)?;
    let target = g.constant(Tensor::vector(vec![label]));
    let diff = g.sub(y, target)?;
    let sq = g.square(diff)?;
    let loss = g.sum(sq)?;
    let value = g.value(loss).data()[0];
    g.backward(loss)?;
    Ok((value, leaves.iter().map(|&l| g.grad(l)).collect()))
}

/// The regressor applied to the bag's mean. With replace-bag moment
/// augmentation the bag's single instance is its moment vector, so the same
/// rule applies unchanged.
pub fn aggregated_predict(params: &MlpRegressorParams, bag: &Bag) -> Result<f64> {
    mlp_predict(params, &aggregate_mean(bag))
}

pub fn instance_predict(
    params: &MlpRegressorParams,
    bag: &Bag,
    aggregator: Aggregator,
) -> Result<f64> {
    let preds = bag
        .instances()
        .row_iter()
        .map(|x| mlp_predict(params, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregator.apply(&preds))
}

/// Each bag is one training sample: its mean and its label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregatedFamily {
    pub width: usize,
}

/// Each instance is one training sample carrying its bag's label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceFamily {
    pub width: usize,
    pub aggregator: Aggregator,
}

fn init_mlp(width: usize, input_dim: usize, rng: &mut ChaCha8Rng) -> Result<MlpRegressorParams> {
    if width == 0 || input_dim == 0 {
        return Err(Error::Config(format!(
            "mlp needs width >= 1 and input_dim >= 1, got {width} and {input_dim}"
        )));
    }
    Ok(MlpRegressorParams::init(width, input_dim, rng))
}

impl ModelFamily for AggregatedFamily {
    type Params = MlpRegressorParams;

    fn init_params(&self, input_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self::Params> {
        init_mlp(self.width, input_dim, rng)
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
        params: &Self::Params,
        ds: &Dataset,
        unit: TrainUnit,
    ) -> Result<(f64, Vec<Tensor>)> {
        let bag = &ds.bags()[unit.bag];
        mlp_loss_and_grad(params, &aggregate_mean(bag), bag.label())
    }

    fn predict_bag(&self, params: &Self::Params, bag: &Bag) -> Result<f64> {
        aggregated_predict(params, bag)
    }
}

impl ModelFamily for InstanceFamily {
    type Params = MlpRegressorParams;

    fn init_params(&self, input_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self::Params> {
        init_mlp(self.width, input_dim, rng)
    }

    fn training_units(&self, ds: &Dataset) -> Vec<TrainUnit> {
        ds.bags()
            .iter()
            .enumerate()
            .flat_map(|(bag, b)| {
                (0..b.len()).map(move |l| TrainUnit {
                    bag,
                    instance: Some(l),
                })
            })
            .collect()
    }

    fn unit_loss_grad(
        &self,
        params: &Self::Params,
        ds: &Dataset,
        unit: TrainUnit,
    ) -> Result<(f64, Vec<Tensor>)> {
        let bag = &ds.bags()[unit.bag];
        let l = unit
            .instance
            .ok_or_else(|| Error::Config("instance-level unit without an instance".into()))?;
        mlp_loss_and_grad(params, bag.instance(l), bag.label())
    }

    fn predict_bag(&self, params: &Self::Params, bag: &Bag) -> Result<f64> {
        instance_predict(params, bag, self.aggregator)
    }
}
