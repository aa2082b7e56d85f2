//! Attention-based set regressor.
//!
//! Instances are embedded once (`m_l = tanh(W x_l + b)`). An LSTM cell with no
//! external input then runs for `T` processing steps; at each step its hidden
//! state `q_t` scores every memory row by dot product, a softmax turns the
//! scores into attention coefficients, and the coefficient-weighted sum of the
//! memory rows `r_t` is concatenated with `q_t` to form the next recurrent
//! input `q*_t = [q_t, r_t]`. A one-hidden-layer head maps `q*_T` to the
//! prediction.
//!
//! The weighted sum is the only place instances are combined, so the output
//! does not depend on instance order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::Parameters;
use crate::tensor::Tensor;
use crate::trainer::{ModelFamily, TrainUnit};

/// Tolerance on the attention coefficients summing to one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Width of the LSTM state, the memory rows and the head's hidden layer.
    pub hidden_size: usize,
    pub processing_steps: usize,
    pub input_dim: usize,
}

impl AttentionConfig {
    pub fn new(hidden_size: usize, processing_steps: usize, input_dim: usize) -> Result<Self> {
        let cfg = Self {
            hidden_size,
            processing_steps,
            input_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.input_dim == 0 {
            return Err(Error::Config(format!(
                "attention model needs hidden_size >= 1 and input_dim >= 1, got {} and {}",
                self.hidden_size, self.input_dim
            )));
        }
        if self.processing_steps == 0 {
            return Err(Error::Config(
                "at least one processing step is required; with none the attention never sees the instances"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionModelParams {
    /// `H x d_in`
    pub embed_weight: Tensor,
    /// `H`
    pub embed_bias: Tensor,
    /// `4H x 2H`, gate blocks in order input, forget, cell, output.
    pub gate_weight: Tensor,
    /// `4H`
    pub gate_bias: Tensor,
    /// `H x 2H`
    pub head_hidden_weight: Tensor,
    /// `H`
    pub head_hidden_bias: Tensor,
    /// `1 x H`
    pub head_output_weight: Tensor,
    /// `1`
    pub head_output_bias: Tensor,
}

pub const PARAM_NAMES: [&str; 8] = [
    "embed.weight",
    "embed.bias",
    "lstm.gate_weight",
    "lstm.gate_bias",
    "head.hidden_weight",
    "head.hidden_bias",
    "head.output_weight",
    "head.output_bias",
];

impl AttentionModelParams {
    fn shapes(cfg: &AttentionConfig) -> [Vec<usize>; 8] {
        let (h, d) = (cfg.hidden_size, cfg.input_dim);
        [
            vec![h, d],
            vec![h],
            vec![4 * h, 2 * h],
            vec![4 * h],
            vec![h, 2 * h],
            vec![h],
            vec![1, h],
            vec![1],
        ]
    }

    pub fn zeros(cfg: &AttentionConfig) -> Self {
        let [a, b, c, d, e, f, g, h] = Self::shapes(cfg).map(|s| Tensor::zeros(&s));
        Self {
            embed_weight: a,
            embed_bias: b,
            gate_weight: c,
            gate_bias: d,
            head_hidden_weight: e,
            head_hidden_bias: f,
            head_output_weight: g,
            head_output_bias: h,
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero except the forget
    /// gate bias, which starts at 1.
    pub fn init<R: Rng + ?Sized>(cfg: &AttentionConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        for w in [
            &mut p.embed_weight,
            &mut p.gate_weight,
            &mut p.head_hidden_weight,
            &mut p.head_output_weight,
        ] {
            uniform_fan_in(w, rng);
        }
        let h = cfg.hidden_size;
        p.gate_bias.data_mut()[h..2 * h].fill(1.0);
        p
    }

    pub fn from_tensors(cfg: &AttentionConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = Self::shapes(cfg);
        if tensors.len() != shapes.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((t, s), name) in tensors.iter().zip(&shapes).zip(PARAM_NAMES) {
            if t.shape() != s.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {s:?}, found {:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(Self {
            embed_weight: next(),
            embed_bias: next(),
            gate_weight: next(),
            gate_bias: next(),
            head_hidden_weight: next(),
            head_hidden_bias: next(),
            head_output_weight: next(),
            head_output_bias: next(),
        })
    }

    pub fn check_shapes(&self, cfg: &AttentionConfig) -> Result<()> {
        Self::from_tensors(cfg, self.tensors().into_iter().cloned().collect()).map(|_| ())
    }
}

impl Parameters for AttentionModelParams {
    fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let ts = [
            &self.embed_weight,
            &self.embed_bias,
            &self.gate_weight,
            &self.gate_bias,
            &self.head_hidden_weight,
            &self.head_hidden_bias,
            &self.head_output_weight,
            &self.head_output_bias,
        ];
        PARAM_NAMES.into_iter().zip(ts).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.embed_weight,
            &mut self.embed_bias,
            &mut self.gate_weight,
            &mut self.gate_bias,
            &mut self.head_hidden_weight,
            &mut self.head_hidden_bias,
            &mut self.head_output_weight,
            &mut self.head_output_bias,
        ]
    }
}

pub(crate) fn uniform_fan_in<R: Rng + ?Sized>(w: &mut Tensor, rng: &mut R) {
    let bound = 1.0 / (w.cols() as f64).sqrt();
    for v in w.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
}

/// Scores and coefficients of one processing step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub scores: Vec<f64>,
    pub coefficients: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub steps: Vec<StepTrace>,
}

impl AttentionTrace {
    /// Validates that every step's coefficients lie on the probability simplex.
    pub fn new(steps: Vec<StepTrace>) -> Result<Self> {
        for (t, step) in steps.iter().enumerate() {
            let total: f64 = step.coefficients.iter().sum();
            if step.coefficients.iter().any(|&a| a.is_nan() || a < 0.0)
                || (total - 1.0).abs() > SIMPLEX_TOLERANCE
            {
                return Err(Error::NonFinite(format!(
                    "attention coefficients at step {} leave the simplex (sum {total})",
                    t + 1
                )));
            }
        }
        Ok(Self { steps })
    }

    /// Final-step coefficients: how much each instance contributed to the
    /// representation the head saw.
    pub fn salience(&self) -> &[f64] {
        self.steps
            .last()
            .map(|s| s.coefficients.as_slice())
            .unwrap_or(&[])
    }
}

/// Per-step recurrent state.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessingState {
    pub query: Vec<f64>,
    pub cell: Vec<f64>,
    pub readout: Vec<f64>,
    /// `[query, readout]`
    pub q_star: Vec<f64>,
}

struct StepNodes {
    query: NodeId,
    cell: NodeId,
    scores: NodeId,
    coefficients: NodeId,
    readout: NodeId,
    q_star: NodeId,
}

struct ForwardNodes {
    prediction: NodeId,
    steps: Vec<StepNodes>,
}

fn build_forward(
    g: &mut Graph<'_>,
    leaves: &[NodeId],
    cfg: &AttentionConfig,
    instances: NodeId,
) -> Result<ForwardNodes> {
    let [ew, eb, gw, gb, hw, hb, ow, ob] = leaves else {
        return Err(Error::Config(format!(
            "attention graph needs 8 parameter leaves, got {}",
            leaves.len()
        )));
    };
    let h = cfg.hidden_size;

    let memory = embed_nodes(g, *ew, *eb, instances)?;
    let memory_t = g.transpose(memory)?;

    let mut q_star = g.constant(Tensor::zeros(&[2 * h]));
    let mut cell = g.constant(Tensor::zeros(&[h]));
    let mut steps = Vec::with_capacity(cfg.processing_steps);
    for _ in 0..cfg.processing_steps {
        let z = g.matmul(*gw, q_star)?;
        let z = g.add(z, *gb)?;
        let zi = g.slice(z, 0, h)?;
        let input_gate = g.sigmoid(zi)?;
        let zf = g.slice(z, h, h)?;
        let forget_gate = g.sigmoid(zf)?;
        let zc = g.slice(z, 2 * h, h)?;
        let candidate = g.tanh(zc)?;
        let zo = g.slice(z, 3 * h, h)?;
        let output_gate = g.sigmoid(zo)?;

        let kept = g.mul(forget_gate, cell)?;
        let written = g.mul(input_gate, candidate)?;
        cell = g.add(kept, written)?;
        let squashed = g.tanh(cell)?;
        let query = g.mul(output_gate, squashed)?;

        let scores = g.matmul(memory, query)?;
        let coefficients = g.softmax(scores)?;
        let readout = g.matmul(memory_t, coefficients)?;
        q_star = g.concat(query, readout)?;
        steps.push(StepNodes {
            query,
            cell,
            scores,
            coefficients,
            readout,
            q_star,
        });
    }

    let hidden = g.matmul(*hw, q_star)?;
    let hidden = g.add(hidden, *hb)?;
    let hidden = g.tanh(hidden)?;
    let out = g.matmul(*ow, hidden)?;
    let prediction = g.add(out, *ob)?;
    Ok(ForwardNodes { prediction, steps })
}

fn embed_nodes(g: &mut Graph<'_>, w: NodeId, b: NodeId, instances: NodeId) -> Result<NodeId> {
    let wt = g.transpose(w)?;
    let pre = g.matmul(instances, wt)?;
    let pre = g.add_row(pre, b)?;
    g.tanh(pre)
}

fn check_bag(cfg: &AttentionConfig, bag: &Bag) -> Result<()> {
    if bag.feature_count() != cfg.input_dim {
        return Err(Error::Data(format!(
            "bag {} has {} features but the model expects {}",
            bag.id(),
            bag.feature_count(),
            cfg.input_dim
        )));
    }
    Ok(())
}

fn param_leaves<'a>(g: &mut Graph<'a>, params: &'a AttentionModelParams) -> Vec<NodeId> {
    params.tensors().into_iter().map(|t| g.param(t)).collect()
}

/// Memory matrix `M` (`L x H`), row `l` = `tanh(W x_l + b)`.
pub fn embed_instances(params: &AttentionModelParams, bag: &Bag) -> Result<Tensor> {
    if bag.feature_count() != params.embed_weight.cols() {
        return Err(Error::shape(
            "embed_instances",
            params.embed_weight.shape(),
            bag.instances().shape(),
        ));
    }
    let mut g = Graph::new();
    let w = g.constant_ref(&params.embed_weight);
    let b = g.constant_ref(&params.embed_bias);
    let x = g.constant_ref(bag.instances());
    let m = embed_nodes(&mut g, w, b, x)?;
    Ok(g.value(m).clone())
}

fn collect_trace(g: &Graph<'_>, nodes: &ForwardNodes) -> Result<AttentionTrace> {
    AttentionTrace::new(
        nodes
            .steps
            .iter()
            .map(|s| StepTrace {
                scores: g.value(s.scores).data().to_vec(),
                coefficients: g.value(s.coefficients).data().to_vec(),
            })
            .collect(),
    )
}

fn prediction_value(g: &Graph<'_>, nodes: &ForwardNodes) -> Result<f64> {
    let y = g.value(nodes.prediction).data()[0];
    if !y.is_finite() {
        return Err(Error::NonFinite(format!("prediction {y}")));
    }
    Ok(y)
}

pub fn forward(
    params: &AttentionModelParams,
    cfg: &AttentionConfig,
    bag: &Bag,
) -> Result<(f64, AttentionTrace)> {
    let (y, trace, _) = forward_with_states(params, cfg, bag)?;
    Ok((y, trace))
}

/// Like [`forward`], additionally returning the recurrent state after each step.
pub fn forward_with_states(
    params: &AttentionModelParams,
    cfg: &AttentionConfig,
    bag: &Bag,
) -> Result<(f64, AttentionTrace, Vec<ProcessingState>)> {
    cfg.validate()?;
    check_bag(cfg, bag)?;
    let mut g = Graph::new();
    let leaves = param_leaves(&mut g, params);
    let x = g.constant_ref(bag.instances());
    let nodes = build_forward(&mut g, &leaves, cfg, x)?;
    let states = nodes
        .steps
        .iter()
        .map(|s| ProcessingState {
            query: g.value(s.query).data().to_vec(),
            cell: g.value(s.cell).data().to_vec(),
            readout: g.value(s.readout).data().to_vec(),
            q_star: g.value(s.q_star).data().to_vec(),
        })
        .collect();
    Ok((
        prediction_value(&g, &nodes)?,
        collect_trace(&g, &nodes)?,
        states,
    ))
}

pub fn salience(trace: &AttentionTrace) -> Vec<f64> {
    trace.salience().to_vec()
}

/// Predictions for every bag, in dataset order.
pub fn predict_dataset(
    params: &AttentionModelParams,
    cfg: &AttentionConfig,
    ds: &Dataset,
) -> Result<Vec<f64>> {
    ds.bags()
        .iter()
        .map(|bag| forward(params, cfg, bag).map(|(y, _)| y))
        .collect()
}

/// Squared error on one bag and its gradient with respect to every parameter
/// tensor, in [`PARAM_NAMES`] order.
pub fn loss_and_grad(
    params: &AttentionModelParams,
    cfg: &AttentionConfig,
    bag: &Bag,
) -> Result<(f64, Vec<Tensor>)> {
    check_bag(cfg, bag)?;
    let mut g = Graph::new();
    let leaves = param_leaves(&mut g, params);
    let x = g.constant_ref(bag.instances());
    let nodes = build_forward(&mut g, &leaves, cfg, x)?;
    collect_trace(&g, &nodes)?;
    let loss = squared_error(&mut g, nodes.prediction, bag.label())?;
    let value = g.value(loss).data()[0];
    g.backward(loss)?;
    Ok((value, leaves.iter().map(|&l| g.grad(l)).collect()))
}

fn squared_error(g: &mut Graph<'_>, prediction: NodeId, label: f64) -> Result<NodeId> {
    let target = g.constant(Tensor::vector(vec![label]));
    let diff = g.sub(prediction, target)?;
    let sq = g.square(diff)?;
    g.sum(sq)
}

/// Finite-difference check of the forward pass plus squared-error loss over `bags`.
pub fn grad_check_bags(
    params: &AttentionModelParams,
    cfg: &AttentionConfig,
    bags: &[Bag],
    eps: f64,
) -> Result<crate::gradcheck::GradCheckReport> {
    cfg.validate()?;
    for bag in bags {
        check_bag(cfg, bag)?;
    }
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    crate::gradcheck::grad_check(&PARAM_NAMES, &tensors, eps, |g, leaves| {
        let mut total = None;
        for bag in bags {
            let x = g.constant(bag.instances().clone());
            let nodes = build_forward(g, leaves, cfg, x)?;
            let loss = squared_error(g, nodes.prediction, bag.label())?;
            total = Some(match total {
                Some(t) => g.add(t, loss)?,
                None => loss,
            });
        }
        let total = total.ok_or_else(|| Error::Config("gradient check needs a bag".into()))?;
        g.scale(total, 1.0 / bags.len() as f64)
    })
}

/// Gradient check at seeded random parameters (biases included) on
/// `bag_count` random bags of `bag_len` instances.
pub fn random_grad_check(
    cfg: &AttentionConfig,
    bag_len: usize,
    bag_count: usize,
    eps: f64,
    seed: u64,
) -> Result<crate::gradcheck::GradCheckReport> {
    use rand::SeedableRng;
    cfg.validate()?;
    if bag_len == 0 || bag_count == 0 {
        return Err(Error::Config(
            "gradient check needs at least one non-empty bag".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = AttentionModelParams::init(cfg, &mut rng);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    let bags = (0..bag_count)
        .map(|i| {
            let rows: Vec<Vec<f64>> = (0..bag_len)
                .map(|_| {
                    (0..cfg.input_dim)
                        .map(|_| rng.random_range(-2.0..2.0))
                        .collect()
                })
                .collect();
            Bag::from_rows(format!("check{i}"), rng.random_range(-1.0..1.0), &rows)
        })
        .collect::<Result<Vec<_>>>()?;
    grad_check_bags(&params, cfg, &bags, eps)
}

/// Trains the attention model with one bag per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionFamily {
    pub hidden_size: usize,
    pub processing_steps: usize,
}

impl AttentionFamily {
    pub fn config(&self, input_dim: usize) -> Result<AttentionConfig> {
        AttentionConfig::new(self.hidden_size, self.processing_steps, input_dim)
    }

    fn config_for(&self, params: &AttentionModelParams) -> AttentionConfig {
        AttentionConfig {
            hidden_size: self.hidden_size,
            processing_steps: self.processing_steps,
            input_dim: params.embed_weight.cols(),
        }
    }
}

impl ModelFamily for AttentionFamily {
    type Params = AttentionModelParams;

    fn init_params(&self, input_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self::Params> {
        Ok(AttentionModelParams::init(&self.config(input_dim)?, rng))
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
        loss_and_grad(params, &self.config_for(params), &ds.bags()[unit.bag])
    }

    fn predict_bag(&self, params: &Self::Params, bag: &Bag) -> Result<f64> {
        forward(params, &self.config_for(params), bag).map(|(y, _)| y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random_bag(rng: &mut ChaCha8Rng, l: usize, d: usize) -> Bag {
        let rows: Vec<Vec<f64>> = (0..l)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        Bag::from_rows("b", rng.random_range(0.0..1.0), &rows).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_memory() {
        let cfg = AttentionConfig::new(3, 1, 2).unwrap();
        let p = AttentionModelParams::zeros(&cfg);
        let bag = Bag::from_rows("b", 0.0, &[vec![1.0, -4.0], vec![2.0, 5.0]]).unwrap();
        let m = embed_instances(&p, &bag).unwrap();
        assert_eq!(m.shape(), &[2, 3]);
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_embedding() {
        let cfg = AttentionConfig::new(1, 1, 1).unwrap();
        let mut p = AttentionModelParams::zeros(&cfg);
        p.embed_weight.data_mut()[0] = 1.0;
        let bag = Bag::from_rows("b", 0.0, &[vec![0.5]]).unwrap();
        let m = embed_instances(&p, &bag).unwrap();
        assert!((m.data()[0] - 0.46211715726).abs() < 1e-11);
    }

    #[test]
    fn duplicate_instances_embed_identically() {
        let cfg = AttentionConfig::new(4, 1, 3).unwrap();
        let p = AttentionModelParams::init(&cfg, &mut rng());
        let bag = Bag::from_rows("b", 0.0, &[vec![0.1, 0.2, 0.3], vec![0.1, 0.2, 0.3]]).unwrap();
        let m = embed_instances(&p, &bag).unwrap();
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn identical_instances_attend_uniformly() {
        let cfg = AttentionConfig::new(5, 3, 2).unwrap();
        let p = AttentionModelParams::init(&cfg, &mut rng());
        let bag = Bag::from_rows("b", 0.0, &vec![vec![0.7, -0.3]; 4]).unwrap();
        let (_, trace) = forward(&p, &cfg, &bag).unwrap();
        for step in &trace.steps {
            for &a in &step.coefficients {
                assert!((a - 0.25).abs() < 1e-15);
            }
        }
        assert_eq!(salience(&trace).len(), 4);
    }

    #[test]
    fn singleton_bag_salience_is_one() {
        let cfg = AttentionConfig::new(3, 2, 2).unwrap();
        let p = AttentionModelParams::init(&cfg, &mut rng());
        let bag = Bag::from_rows("b", 0.0, &[vec![0.3, 0.9]]).unwrap();
        let (_, trace) = forward(&p, &cfg, &bag).unwrap();
        assert_eq!(salience(&trace), vec![1.0]);
    }

    #[test]
    fn q_star_concatenates_query_and_readout() {
        let cfg = AttentionConfig::new(3, 2, 2).unwrap();
        let mut r = rng();
        let p = AttentionModelParams::init(&cfg, &mut r);
        let bag = random_bag(&mut r, 4, 2);
        let (_, _, states) = forward_with_states(&p, &cfg, &bag).unwrap();
        for s in states {
            let mut cat = s.query.clone();
            cat.extend_from_slice(&s.readout);
            assert_eq!(cat, s.q_star);
        }
    }

    #[test]
    fn rejects_zero_steps_and_wrong_width() {
        assert!(AttentionConfig::new(4, 0, 2).is_err());
        let cfg = AttentionConfig::new(4, 1, 2).unwrap();
        let p = AttentionModelParams::zeros(&cfg);
        let bag = Bag::from_rows("b", 0.0, &[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(forward(&p, &cfg, &bag).is_err());
        assert!(embed_instances(&p, &bag).is_err());
    }

    #[test]
    fn deterministic_forward() {
        let cfg = AttentionConfig::new(6, 2, 3).unwrap();
        let mut r = rng();
        let p = AttentionModelParams::init(&cfg, &mut r);
        let bag = random_bag(&mut r, 7, 3);
        let a = forward(&p, &cfg, &bag).unwrap();
        let b = forward(&p, &cfg, &bag).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn bag_size_changes_trace_not_params() {
        let cfg = AttentionConfig::new(4, 2, 2).unwrap();
        let mut r = rng();
        let p = AttentionModelParams::init(&cfg, &mut r);
        for l in [1, 3, 9] {
            let bag = random_bag(&mut r, l, 2);
            let (_, trace) = forward(&p, &cfg, &bag).unwrap();
            assert!(trace.steps.iter().all(|s| s.scores.len() == l));
            let (_, grads) = loss_and_grad(&p, &cfg, &bag).unwrap();
            for (g, t) in grads.iter().zip(p.tensors()) {
                assert_eq!(g.shape(), t.shape());
            }
        }
    }

    #[test]
    fn predict_dataset_edges() {
        let cfg = AttentionConfig::new(4, 2, 2).unwrap();
        let mut r = rng();
        let p = AttentionModelParams::init(&cfg, &mut r);
        let empty = Dataset::new("e", 2, vec![]).unwrap();
        assert!(predict_dataset(&p, &cfg, &empty).unwrap().is_empty());
        let bag = random_bag(&mut r, 5, 2);
        let single = Dataset::from_bags("s", vec![bag.clone()]).unwrap();
        let preds = predict_dataset(&p, &cfg, &single).unwrap();
        assert_eq!(preds, vec![forward(&p, &cfg, &bag).unwrap().0]);
        let wrong = Dataset::from_bags("w", vec![random_bag(&mut r, 2, 3)]).unwrap();
        assert!(predict_dataset(&p, &cfg, &wrong).is_err());
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let cfg = AttentionConfig::new(3, 1, 2).unwrap();
        let p = AttentionModelParams::init(&cfg, &mut rng());
        assert_eq!(&p.gate_bias.data()[3..6], &[1.0, 1.0, 1.0]);
        assert!(p.gate_bias.data()[..3].iter().all(|&v| v == 0.0));
        let bound = 1.0 / 2f64.sqrt();
        assert!(p.embed_weight.data().iter().all(|v| v.abs() <= bound));
    }
}
