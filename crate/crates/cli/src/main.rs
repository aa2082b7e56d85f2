use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mir_core::attention::{random_grad_check, AttentionConfig};
use mir_core::checkpoint::{fit_checkpoint, write_predictions_csv, write_trace_csv, Checkpoint};
use mir_core::data::{load_csv, save_csv, synth_generate, Dataset, LabelRule, Manifest, SynthSpec};
use mir_core::eval::{
    grid_search, moment_sweep, parse_grid, processing_step_sweep, run_cv, write_sweep_csv,
    Algorithm, CvReport, Experiment,
};
use mir_core::moments::{AttachMode, MomentConfig};
use mir_core::Error;

#[derive(Parser)]
#[command(
    name = "mir",
    version,
    about = "Multiple-instance regression experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated K-fold cross-validation of one algorithm.
    Cv(CvArgs),
    /// Test RMSE against the number of raw moments, one CSV per algorithm.
    SweepMoments(SweepMomentsArgs),
    /// Attention-model test RMSE against the number of processing steps.
    SweepSteps(SweepStepsArgs),
    /// Generate a synthetic bag dataset.
    Synth(SynthArgs),
    /// Finite-difference check of the attention model's gradients.
    GradCheck(GradCheckArgs),
    /// Fit one model on a whole dataset and save a checkpoint.
    Train(TrainArgs),
    /// Predict bags with a saved checkpoint.
    Predict(PredictArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Flat dataset manifest; `--dataset` then names an entry.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Manifest entry name, or a CSV path when no manifest is given.
    #[arg(long)]
    dataset: String,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Attention model hidden size.
    #[arg(long)]
    hidden: Option<usize>,
    /// Baseline regressor width.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// replace-bag or append-per-instance; defaults by algorithm.
    #[arg(long)]
    attach_mode: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ProtocolArgs {
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    /// RMSE multiplier; defaults to the manifest scale or 1.
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    algo: String,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    moments: usize,
    /// Hyperparameter grid; the point with the lowest validation RMSE is reported.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Args)]
struct SweepMomentsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated algorithms.
    #[arg(
        long,
        default_value = "attention,aggregated,instance-mean,instance-median"
    )]
    algo: String,
    #[arg(long)]
    steps: Option<usize>,
    /// Moment orders, e.g. `0-4` or `0,2,4`.
    #[arg(long, default_value = "0-4")]
    moments: String,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Args)]
struct SweepStepsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Processing steps, e.g. `1-4`.
    #[arg(long, default_value = "1-4")]
    steps: String,
    #[arg(long, default_value_t = 0)]
    moments: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    bags: usize,
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 4)]
    features: usize,
    /// latent-mean or latent-stddev.
    #[arg(long, default_value = "latent-stddev")]
    rule: String,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    steps: usize,
    #[arg(long, default_value_t = 5)]
    features: usize,
    #[arg(long, default_value_t = 3)]
    instances: usize,
    #[arg(long, default_value_t = 1)]
    bags: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    algo: String,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    moments: usize,
    /// Fraction of bags held out for early stopping.
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 1,
            e if e.is_data() => 2,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Cv(a) => cmd_cv(a),
        Command::SweepMoments(a) => cmd_sweep_moments(a),
        Command::SweepSteps(a) => cmd_sweep_steps(a),
        Command::Synth(a) => cmd_synth(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
    }
}

fn parse_algorithm(s: &str) -> CliResult<Algorithm> {
    s.trim().parse::<Algorithm>().map_err(|e| {
        usage(format!(
            "{e}\nusage: mir <command> --algo <attention|aggregated|instance-mean|instance-median> ..."
        ))
    })
}

/// `a-b` (inclusive) or comma-separated values, or a mix.
fn parse_list(s: &str, what: &str) -> CliResult<Vec<usize>> {
    let bad = || usage(format!("cannot parse {what} list `{s}`"));
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                out.extend(a..=b);
            }
            None => out.push(tok.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(usage(format!("empty {what} range `{s}`")));
    }
    Ok(out)
}

fn load_dataset(data: &DataArgs) -> CliResult<(Dataset, f64)> {
    match &data.manifest {
        Some(m) => {
            let manifest = Manifest::load(m)?;
            let entry = manifest.get(&data.dataset)?;
            Ok((entry.load()?, entry.scale))
        }
        None => Ok((load_csv(&data.dataset)?, 1.0)),
    }
}

fn create_out(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", dir.display()),
    })
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> CliResult {
    let io_fail = |e: std::io::Error| Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_fail)?);
    f(&mut w).map_err(io_fail)?;
    w.flush().map_err(io_fail)
}

fn experiment(
    algorithm: Algorithm,
    model: &ModelArgs,
    steps: Option<usize>,
    moments: usize,
    protocol: Option<(&ProtocolArgs, f64)>,
) -> CliResult<Experiment> {
    let mut e = Experiment::new(algorithm);
    if let Some(v) = model.hidden {
        e.hidden_size = v;
    }
    if let Some(v) = steps {
        e.processing_steps = v;
    }
    if let Some(v) = model.width {
        e.width = v;
    }
    if let Some(v) = model.lr {
        e.train.learning_rate = v;
    }
    if let Some(v) = model.weight_decay {
        e.train.weight_decay = v;
    }
    if let Some(v) = model.batch_size {
        e.train.batch_size = v;
    }
    if let Some(v) = model.max_epochs {
        e.train.max_epochs = v;
    }
    if let Some(v) = model.patience {
        e.train.patience = v;
    }
    let attach = match &model.attach_mode {
        Some(s) => s.parse::<AttachMode>()?,
        None => algorithm.default_attach_mode(),
    };
    e.moments = MomentConfig::new(moments, attach)?;
    e.seed = model.seed;
    if let Some((p, manifest_scale)) = protocol {
        e.folds = p.folds;
        e.repetitions = p.repetitions;
        e.scale = p.scale.unwrap_or(manifest_scale);
    }
    e.train.validate()?;
    Ok(e)
}

fn print_report(r: &CvReport) {
    println!(
        "{} on {}: test RMSE {:.6} +/- {:.6} over {} runs (validation {:.6}) [{}]",
        r.algorithm,
        r.dataset,
        r.mean_test_rmse,
        r.std_test_rmse,
        r.cells.len(),
        r.mean_val_rmse,
        r.hyperparameters
    );
}

fn write_report(out: &Path, stem: &str, report: &CvReport, exp: &Experiment) -> CliResult {
    write_file(&out.join(format!("{stem}.csv")), |w| report.write_csv(w))?;
    let summary = serde_json::json!({
        "algorithm": report.algorithm.to_string(),
        "dataset": report.dataset,
        "runs": report.cells.len(),
        "mean_test_rmse": report.mean_test_rmse,
        "std_test_rmse": report.std_test_rmse,
        "mean_val_rmse": report.mean_val_rmse,
        "experiment": exp,
    });
    write_file(&out.join(format!("{stem}.summary.json")), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })
}

fn cmd_cv(a: CvArgs) -> CliResult {
    let algorithm = parse_algorithm(&a.algo)?;
    let (ds, scale) = load_dataset(&a.data)?;
    let base = experiment(
        algorithm,
        &a.model,
        a.steps,
        a.moments,
        Some((&a.protocol, scale)),
    )?;
    create_out(&a.model.out)?;
    let stem = format!("cv_{}_{}", ds.name(), algorithm);
    match &a.grid {
        None => {
            let report = run_cv(&ds, &base)?;
            print_report(&report);
            write_report(&a.model.out, &stem, &report, &base)
        }
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure {
                code: 2,
                message: format!("{}: {e}", path.display()),
            })?;
            let grid = parse_grid(&text)?;
            let result = grid_search(&ds, &base, &grid)?;
            write_file(
                &a.model
                    .out
                    .join(format!("grid_{}_{}.csv", ds.name(), algorithm)),
                |w| {
                    writeln!(w, "point,mean_val_rmse,mean_test_rmse,std_test_rmse,params")?;
                    for (i, r) in result.reports.iter().enumerate() {
                        writeln!(
                            w,
                            "{},{:?},{:?},{:?},\"{}\"",
                            i + 1,
                            r.mean_val_rmse,
                            r.mean_test_rmse,
                            r.std_test_rmse,
                            r.hyperparameters
                        )?;
                    }
                    Ok(())
                },
            )?;
            let best = &result.reports[result.best];
            println!("selected grid point {} of {}", result.best + 1, grid.len());
            print_report(best);
            write_report(&a.model.out, &stem, best, &grid[result.best].apply(&base))
        }
    }
}

fn cmd_sweep_moments(a: SweepMomentsArgs) -> CliResult {
    let algorithms = a
        .algo
        .split(',')
        .map(parse_algorithm)
        .collect::<CliResult<Vec<_>>>()?;
    let orders = parse_list(&a.moments, "moment")?;
    let (ds, scale) = load_dataset(&a.data)?;
    create_out(&a.model.out)?;
    for algorithm in algorithms {
        let base = experiment(algorithm, &a.model, a.steps, 0, Some((&a.protocol, scale)))?;
        let points = moment_sweep(&ds, &orders, &base)?;
        for (p, _) in &points {
            println!(
                "{algorithm} m={}: {:.6} +/- {:.6}",
                p.x, p.mean_rmse, p.std_rmse
            );
        }
        let pts: Vec<_> = points.iter().map(|(p, _)| *p).collect();
        write_file(
            &a.model
                .out
                .join(format!("moments_{}_{}.csv", ds.name(), algorithm)),
            |w| write_sweep_csv(&pts, w),
        )?;
    }
    Ok(())
}

fn cmd_sweep_steps(a: SweepStepsArgs) -> CliResult {
    let steps = parse_list(&a.steps, "processing-step")?;
    let (ds, scale) = load_dataset(&a.data)?;
    let base = experiment(
        Algorithm::Attention,
        &a.model,
        None,
        a.moments,
        Some((&a.protocol, scale)),
    )?;
    create_out(&a.model.out)?;
    let points = processing_step_sweep(&ds, &steps, &base)?;
    for (p, _) in &points {
        println!("T={}: {:.6} +/- {:.6}", p.x, p.mean_rmse, p.std_rmse);
    }
    let pts: Vec<_> = points.iter().map(|(p, _)| *p).collect();
    write_file(&a.model.out.join(format!("steps_{}.csv", ds.name())), |w| {
        write_sweep_csv(&pts, w)
    })
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let spec = SynthSpec {
        bags: a.bags,
        instances: a.instances,
        features: a.features,
        rule: a.rule.parse::<LabelRule>()?,
        noise: a.noise,
    };
    let ds = synth_generate(&spec, a.seed)?;
    create_out(&a.out)?;
    let csv = a.out.join("synthetic.csv");
    save_csv(&ds, &csv)?;
    let meta = serde_json::json!({ "spec": spec, "seed": a.seed, "csv": "synthetic.csv" });
    write_file(&a.out.join("synthetic.meta.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        writeln!(w)
    })?;
    println!(
        "wrote {} bags x {} instances to {}",
        spec.bags,
        spec.instances,
        csv.display()
    );
    Ok(())
}

fn cmd_grad_check(a: GradCheckArgs) -> CliResult {
    let cfg = AttentionConfig::new(a.hidden, a.steps, a.features)?;
    let report = random_grad_check(&cfg, a.instances, a.bags, a.eps, a.seed)?;
    println!(
        "checked {} entries at eps={:e}: max relative error {:e}",
        report.entries_checked, a.eps, report.max_rel_error
    );
    if let Some(w) = &report.worst {
        println!(
            "worst entry: {}[{}] analytic={:e} numeric={:e}",
            w.param, w.index, w.analytic, w.numeric
        );
    }
    if report.max_rel_error < a.tolerance {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure {
            code: 3,
            message: format!(
                "max relative error {:e} exceeds tolerance {:e}",
                report.max_rel_error, a.tolerance
            ),
        })
    }
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let algorithm = parse_algorithm(&a.algo)?;
    let (ds, _) = load_dataset(&a.data)?;
    let exp = experiment(algorithm, &a.model, a.steps, a.moments, None)?;
    create_out(&a.model.out)?;
    let (ckpt, history) = fit_checkpoint(&ds, &exp, a.validation_fraction)?;
    ckpt.save(&a.model.out.join("model.json"))?;
    write_file(&a.model.out.join("history.csv"), |w| history.write_csv(w))?;
    let best = history.best();
    println!(
        "trained {algorithm} for {} epochs; best validation RMSE {:.6} at epoch {}",
        history.epochs.len(),
        best.val_rmse,
        history.best_epoch
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> CliResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (ds, _) = load_dataset(&a.data)?;
    let preds = ckpt.predict(&ds)?;
    create_out(&a.out)?;
    write_file(&a.out.join("predictions.csv"), |w| {
        write_predictions_csv(&preds, w)
    })?;
    if preds.iter().any(|p| p.trace.is_some()) {
        write_file(&a.out.join("trace.csv"), |w| write_trace_csv(&preds, w))?;
    }
    println!("predicted {} bags", preds.len());
    Ok(())
}
