//! Repeated K-fold cross-validation where the held-out fold is halved into
//! validation and test bags, plus the sweeps and grid search built on it.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionFamily;
use crate::baselines::{
    AggregatedFamily, Aggregator, InstanceFamily, DEFAULT_WEIGHT_DECAY, DEFAULT_WIDTH,
};
use crate::data::{apply_standardizer, fit_standardizer, Dataset};
use crate::error::{Error, Result};
use crate::moments::{augment_dataset, AttachMode, MomentConfig};
use crate::trainer::{mse_loss, train, ModelFamily, TrainConfig};

/// SplitMix64 finalizer over a seed and two tags.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldCell {
    /// 0-based.
    pub repetition: usize,
    /// 0-based.
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: usize,
    pub repetitions: usize,
    pub bag_count: usize,
    /// Repetition-major, then fold.
    pub cells: Vec<FoldCell>,
}

/// Shuffles bag indices once per repetition, cuts them into `folds`
/// near-equal folds (the first `B mod K` folds get one extra bag) and, for
/// each fold, sends alternate bags to validation and test. The other folds
/// form the training set.
pub fn make_fold_plan(
    ds: &Dataset,
    folds: usize,
    repetitions: usize,
    seed: u64,
) -> Result<FoldPlan> {
    plan_for_count(ds.bag_count(), folds, repetitions, seed)
}

pub fn plan_for_count(
    bag_count: usize,
    folds: usize,
    repetitions: usize,
    seed: u64,
) -> Result<FoldPlan> {
    if folds < 2 || repetitions == 0 {
        return Err(Error::Config(format!(
            "need at least 2 folds and 1 repetition, got {folds} and {repetitions}"
        )));
    }
    if bag_count < 2 * folds {
        return Err(Error::Data(format!(
            "{bag_count} bags cannot fill {folds} folds with separate validation and test bags"
        )));
    }
    let mut cells = Vec::with_capacity(folds * repetitions);
    for r in 0..repetitions {
        let mut order: Vec<usize> = (0..bag_count).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64, 0xF01D));
        order.shuffle(&mut rng);

        let base = bag_count / folds;
        let extra = bag_count % folds;
        let mut bounds = Vec::with_capacity(folds + 1);
        bounds.push(0);
        for k in 0..folds {
            bounds.push(bounds[k] + base + usize::from(k < extra));
        }
        for k in 0..folds {
            let held = &order[bounds[k]..bounds[k + 1]];
            let validation = held.iter().step_by(2).copied().collect();
            let test = held.iter().skip(1).step_by(2).copied().collect();
            let train = order[..bounds[k]]
                .iter()
                .chain(&order[bounds[k + 1]..])
                .copied()
                .collect();
            cells.push(FoldCell {
                repetition: r,
                fold: k,
                train,
                validation,
                test,
            });
        }
    }
    Ok(FoldPlan {
        folds,
        repetitions,
        bag_count,
        cells,
    })
}

impl FoldPlan {
    /// Checks every structural guarantee of the plan.
    pub fn audit(&self) -> Result<()> {
        let fail = |c: &FoldCell, what: &str| {
            Err(Error::Data(format!(
                "fold plan repetition {} fold {}: {what}",
                c.repetition + 1,
                c.fold + 1
            )))
        };
        if self.cells.len() != self.folds * self.repetitions {
            return Err(Error::Data(
                "fold plan has the wrong number of cells".into(),
            ));
        }
        for r in 0..self.repetitions {
            let mut tested = vec![false; self.bag_count];
            for c in self.cells.iter().filter(|c| c.repetition == r) {
                let mut seen = vec![0u8; self.bag_count];
                for (set, tag) in [(&c.train, 1u8), (&c.validation, 2), (&c.test, 4)] {
                    for &i in set {
                        if i >= self.bag_count || seen[i] != 0 {
                            return fail(c, "bag assigned twice or out of range");
                        }
                        seen[i] = tag;
                    }
                }
                if seen.contains(&0) {
                    return fail(c, "sets do not cover every bag");
                }
                if c.validation.len().abs_diff(c.test.len()) > 1 || c.test.is_empty() {
                    return fail(c, "validation and test halves are unbalanced");
                }
                for &i in &c.test {
                    if tested[i] {
                        return fail(c, "test sets overlap across folds");
                    }
                    tested[i] = true;
                }
            }
        }
        Ok(())
    }
}

/// `scale * sqrt(mse)`.
pub fn rmse(predictions: &[f64], labels: &[f64], scale: f64) -> Result<f64> {
    Ok(scale * mse_loss(predictions, labels)?.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Attention,
    Aggregated,
    InstanceMean,
    InstanceMedian,
    /// Predicts the mean training label; a reference floor, not a MIR method.
    TrainMean,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Attention,
        Algorithm::Aggregated,
        Algorithm::InstanceMean,
        Algorithm::InstanceMedian,
    ];

    /// Aggregated models see the bag as one moment vector; the others keep
    /// their instances and get the moments appended.
    pub fn default_attach_mode(self) -> AttachMode {
        match self {
            Algorithm::Aggregated => AttachMode::ReplaceBag,
            _ => AttachMode::AppendPerInstance,
        }
    }

    pub fn default_train_config(self) -> TrainConfig {
        match self {
            Algorithm::Attention | Algorithm::TrainMean => TrainConfig::default(),
            Algorithm::Aggregated => TrainConfig {
                weight_decay: DEFAULT_WEIGHT_DECAY,
                ..TrainConfig::default()
            },
            Algorithm::InstanceMean | Algorithm::InstanceMedian => TrainConfig {
                weight_decay: DEFAULT_WEIGHT_DECAY,
                batch_size: 256,
                ..TrainConfig::default()
            },
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Attention => "attention",
            Algorithm::Aggregated => "aggregated",
            Algorithm::InstanceMean => "instance-mean",
            Algorithm::InstanceMedian => "instance-median",
            Algorithm::TrainMean => "train-mean",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Algorithm::Attention),
            "aggregated" => Ok(Algorithm::Aggregated),
            "instance-mean" => Ok(Algorithm::InstanceMean),
            "instance-median" => Ok(Algorithm::InstanceMedian),
            other => Err(Error::Config(format!(
                "unknown algorithm `{other}` (expected attention, aggregated, instance-mean or instance-median)"
            ))),
        }
    }
}

/// Everything that determines one cross-validated result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub algorithm: Algorithm,
    /// LSTM and embedding width of the attention model.
    pub hidden_size: usize,
    pub processing_steps: usize,
    /// Hidden width of the baseline regressor.
    pub width: usize,
    pub train: TrainConfig,
    pub moments: MomentConfig,
    pub folds: usize,
    pub repetitions: usize,
    /// RMSE multiplier for reporting.
    pub scale: f64,
    pub seed: u64,
}

impl Experiment {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            hidden_size: 256,
            processing_steps: 2,
            width: DEFAULT_WIDTH,
            train: algorithm.default_train_config(),
            moments: MomentConfig {
                max_order: 0,
                attach_mode: algorithm.default_attach_mode(),
            },
            folds: 5,
            repetitions: 10,
            scale: 1.0,
            seed: 0,
        }
    }

    pub fn describe(&self) -> String {
        let model = match self.algorithm {
            Algorithm::Attention => format!(
                "hidden={} steps={}",
                self.hidden_size, self.processing_steps
            ),
            Algorithm::TrainMean => String::new(),
            _ => format!("width={}", self.width),
        };
        format!(
            "{model} lr={} weight_decay={} batch={} max_epochs={} patience={} moments={} attach={}",
            self.train.learning_rate,
            self.train.weight_decay,
            self.train.batch_size,
            self.train.max_epochs,
            self.train.patience,
            self.moments.max_order,
            self.moments.attach_mode,
        )
        .trim()
        .to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub repetition: usize,
    pub fold: usize,
    /// Scaled RMSE on the validation half at the selected epoch.
    pub val_rmse: f64,
    /// Scaled RMSE on the test half.
    pub test_rmse: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub algorithm: Algorithm,
    pub dataset: String,
    pub hyperparameters: String,
    pub scale: f64,
    pub cells: Vec<CellResult>,
    pub mean_test_rmse: f64,
    pub std_test_rmse: f64,
    pub mean_val_rmse: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl CvReport {
    fn assemble(exp: &Experiment, dataset: &str, cells: Vec<CellResult>) -> Self {
        let tests: Vec<f64> = cells.iter().map(|c| c.test_rmse).collect();
        let vals: Vec<f64> = cells.iter().map(|c| c.val_rmse).collect();
        let (mean_test_rmse, std_test_rmse) = mean_std(&tests);
        Self {
            algorithm: exp.algorithm,
            dataset: dataset.to_string(),
            hyperparameters: exp.describe(),
            scale: exp.scale,
            mean_val_rmse: mean_std(&vals).0,
            cells,
            mean_test_rmse,
            std_test_rmse,
        }
    }

    /// CSV `repetition,fold,test_rmse` (1-based indices) followed by a
    /// `#`-prefixed summary line.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "repetition,fold,test_rmse")?;
        for c in &self.cells {
            writeln!(w, "{},{},{:?}", c.repetition + 1, c.fold + 1, c.test_rmse)?;
        }
        writeln!(
            w,
            "# algorithm={} dataset={} runs={} scale={} mean_test_rmse={:?} std_test_rmse={:?} mean_val_rmse={:?} params=\"{}\"",
            self.algorithm,
            self.dataset,
            self.cells.len(),
            self.scale,
            self.mean_test_rmse,
            self.std_test_rmse,
            self.mean_val_rmse,
            self.hyperparameters
        )
    }
}

fn in_cell(e: Error, cell: &FoldCell) -> Error {
    let at = format!("repetition {} fold {}", cell.repetition + 1, cell.fold + 1);
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{at}: {m}")),
        Error::Data(m) => Error::Data(format!("{at}: {m}")),
        Error::Config(m) => Error::Config(format!("{at}: {m}")),
        other => other,
    }
}

fn fit_and_score<F: ModelFamily>(
    family: &F,
    cfg: &TrainConfig,
    train_set: &Dataset,
    val: &Dataset,
    test: &Dataset,
    scale: f64,
) -> Result<(f64, f64, usize, usize)> {
    let (params, history) = train(family, train_set, val, cfg)?;
    let preds = family.predict_dataset(&params, test)?;
    let test_rmse = rmse(&preds, &test.labels(), scale)?;
    Ok((
        scale * history.best().val_rmse,
        test_rmse,
        history.best_epoch,
        history.epochs.len(),
    ))
}

fn run_cell(ds: &Dataset, exp: &Experiment, cell: &FoldCell) -> Result<CellResult> {
    let train_raw = ds.subset(&cell.train);
    let stats = fit_standardizer(&train_raw);
    let prepare = |idx: &[usize]| -> Result<Dataset> {
        let z = apply_standardizer(&stats, &ds.subset(idx))?;
        augment_dataset(&z, &exp.moments)
    };
    let (train_set, val, test) = (
        prepare(&cell.train)?,
        prepare(&cell.validation)?,
        prepare(&cell.test)?,
    );

    let cfg = TrainConfig {
        seed: derive_seed(exp.seed, cell.repetition as u64, cell.fold as u64 + 1),
        ..exp.train.clone()
    };
    let (val_rmse, test_rmse, best_epoch, epochs_run) = match exp.algorithm {
        Algorithm::Attention => fit_and_score(
            &AttentionFamily {
                hidden_size: exp.hidden_size,
                processing_steps: exp.processing_steps,
            },
            &cfg,
            &train_set,
            &val,
            &test,
            exp.scale,
        )?,
        Algorithm::Aggregated => fit_and_score(
            &AggregatedFamily { width: exp.width },
            &cfg,
            &train_set,
            &val,
            &test,
            exp.scale,
        )?,
        Algorithm::InstanceMean | Algorithm::InstanceMedian => fit_and_score(
            &InstanceFamily {
                width: exp.width,
                aggregator: if exp.algorithm == Algorithm::InstanceMean {
                    Aggregator::Mean
                } else {
                    Aggregator::Median
                },
            },
            &cfg,
            &train_set,
            &val,
            &test,
            exp.scale,
        )?,
        Algorithm::TrainMean => {
            let labels = train_set.labels();
            let mean = labels.iter().sum::<f64>() / labels.len() as f64;
            let score = |d: &Dataset| rmse(&vec![mean; d.bag_count()], &d.labels(), exp.scale);
            (score(&val)?, score(&test)?, 0, 0)
        }
    };
    Ok(CellResult {
        repetition: cell.repetition,
        fold: cell.fold,
        val_rmse,
        test_rmse,
        best_epoch,
        epochs_run,
    })
}

/// Runs every (repetition, fold) cell of the plan, in parallel. Results are
/// identical regardless of scheduling.
pub fn run_cv(ds: &Dataset, exp: &Experiment) -> Result<CvReport> {
    let plan = make_fold_plan(ds, exp.folds, exp.repetitions, exp.seed)?;
    run_cv_with_plan(ds, exp, &plan)
}

pub fn run_cv_with_plan(ds: &Dataset, exp: &Experiment, plan: &FoldPlan) -> Result<CvReport> {
    if plan.bag_count != ds.bag_count() {
        return Err(Error::Data(format!(
            "fold plan covers {} bags but the dataset has {}",
            plan.bag_count,
            ds.bag_count()
        )));
    }
    plan.audit()?;
    let cells = plan
        .cells
        .par_iter()
        .map(|cell| run_cell(ds, exp, cell).map_err(|e| in_cell(e, cell)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport::assemble(exp, ds.name(), cells))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub x: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
}

impl From<(f64, &CvReport)> for SweepPoint {
    fn from((x, r): (f64, &CvReport)) -> Self {
        Self {
            x,
            mean_rmse: r.mean_test_rmse,
            std_rmse: r.std_test_rmse,
        }
    }
}

/// CSV `x,mean_rmse,std_rmse`.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "x,mean_rmse,std_rmse")?;
    for p in points {
        writeln!(w, "{},{:?},{:?}", p.x, p.mean_rmse, p.std_rmse)?;
    }
    Ok(())
}

/// Attention-model test RMSE for each number of processing steps.
pub fn processing_step_sweep(
    ds: &Dataset,
    steps: &[usize],
    base: &Experiment,
) -> Result<Vec<(SweepPoint, CvReport)>> {
    if steps.is_empty() {
        return Err(Error::Config(
            "processing-step sweep needs at least one value".into(),
        ));
    }
    if base.algorithm != Algorithm::Attention {
        return Err(Error::Config(
            "processing-step sweeps apply to the attention model only".into(),
        ));
    }
    steps
        .iter()
        .map(|&t| {
            let exp = Experiment {
                processing_steps: t,
                ..base.clone()
            };
            let report = run_cv(ds, &exp)?;
            Ok(((t as f64, &report).into(), report))
        })
        .collect()
}

/// Test RMSE for each number of appended/replacing raw moments, using the
/// base experiment's attach mode.
pub fn moment_sweep(
    ds: &Dataset,
    orders: &[usize],
    base: &Experiment,
) -> Result<Vec<(SweepPoint, CvReport)>> {
    if orders.is_empty() {
        return Err(Error::Config(
            "moment sweep needs at least one order".into(),
        ));
    }
    orders
        .iter()
        .map(|&m| {
            let exp = Experiment {
                moments: MomentConfig::new(m, base.moments.attach_mode)?,
                ..base.clone()
            };
            let report = run_cv(ds, &exp)?;
            Ok(((m as f64, &report).into(), report))
        })
        .collect()
}

/// Overrides applied on top of a base experiment; `None` keeps the base value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridPoint {
    pub hidden_size: Option<usize>,
    pub processing_steps: Option<usize>,
    pub width: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
}

impl GridPoint {
    pub fn apply(&self, base: &Experiment) -> Experiment {
        let mut e = base.clone();
        if let Some(v) = self.hidden_size {
            e.hidden_size = v;
        }
        if let Some(v) = self.processing_steps {
            e.processing_steps = v;
        }
        if let Some(v) = self.width {
            e.width = v;
        }
        if let Some(v) = self.learning_rate {
            e.train.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            e.train.weight_decay = v;
        }
        if let Some(v) = self.batch_size {
            e.train.batch_size = v;
        }
        e
    }
}

/// One grid point per non-empty line, as space-separated `key=value` pairs:
/// `hidden`, `steps`, `width`, `lr`, `weight_decay`, `batch`. `#` starts a comment.
pub fn parse_grid(text: &str) -> Result<Vec<GridPoint>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse {
            path: "grid".into(),
            line: i as u64 + 1,
            message: m,
        };
        let mut p = GridPoint::default();
        for pair in line.split_whitespace() {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{pair}`")))?;
            let count = || {
                v.parse::<usize>()
                    .map_err(|_| bad(format!("`{v}` is not a count")))
            };
            let real = || {
                v.parse::<f64>()
                    .map_err(|_| bad(format!("`{v}` is not a number")))
            };
            match k {
                "hidden" => p.hidden_size = Some(count()?),
                "steps" => p.processing_steps = Some(count()?),
                "width" => p.width = Some(count()?),
                "batch" => p.batch_size = Some(count()?),
                "lr" => p.learning_rate = Some(real()?),
                "weight_decay" => p.weight_decay = Some(real()?),
                other => return Err(bad(format!("unknown grid key `{other}`"))),
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::Config("grid file defines no points".into()));
    }
    Ok(points)
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub reports: Vec<CvReport>,
    /// Index of the report with the lowest mean validation RMSE.
    pub best: usize,
}

/// Cross-validates every grid point and picks the one with the lowest mean
/// validation RMSE. Test RMSE plays no part in the choice.
pub fn grid_search(ds: &Dataset, base: &Experiment, grid: &[GridPoint]) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let reports = grid
        .iter()
        .map(|p| run_cv(ds, &p.apply(base)))
        .collect::<Result<Vec<_>>>()?;
    let best = reports
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean_val_rmse.total_cmp(&b.1.mean_val_rmse))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    Ok(GridResult { reports, best })
}
