//! Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exits nonzero if
//! any criterion fails.

use std::time::{Duration, Instant};

use mir_core::attention::{forward, random_grad_check, AttentionConfig, AttentionModelParams};
use mir_core::baselines::{AggregatedFamily, Aggregator, InstanceFamily};
use mir_core::data::{load_csv, synth_generate, Bag, Dataset, LabelRule, SynthSpec};
use mir_core::eval::{plan_for_count, run_cv, Algorithm, Experiment};
use mir_core::moments::{raw_moments, AttachMode, MomentConfig};
use mir_core::params::Parameters;
use mir_core::trainer::{train_with_observer, TrainConfig};
use mir_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let o = f();
    (o, start.elapsed())
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn random_params(cfg: &AttentionConfig, rng: &mut ChaCha8Rng, spread: f64) -> AttentionModelParams {
    let mut p = AttentionModelParams::init(cfg, rng);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-spread..spread);
        }
    }
    p
}

fn random_bag(rng: &mut ChaCha8Rng, l: usize, d: usize, range: f64) -> Bag {
    let data = (0..l * d)
        .map(|_| rng.random_range(-range..range))
        .collect();
    Bag::new(
        "b",
        rng.random_range(0.0..1.0),
        Tensor::matrix(l, d, data).unwrap(),
    )
    .unwrap()
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let cfg = AttentionConfig::new(
            rng.random_range(1..=16),
            rng.random_range(1..=4),
            rng.random_range(1..=6),
        )
        .unwrap();
        let l = rng.random_range(1..=20);
        let params = random_params(&cfg, &mut rng, 0.5);
        let bag = random_bag(&mut rng, l, cfg.input_dim, 3.0);
        let mut order: Vec<usize> = (0..l).collect();
        order.shuffle(&mut rng);
        let (a, _) = forward(&params, &cfg, &bag).unwrap();
        let (b, _) = forward(&params, &cfg, &bag.permuted(&order).unwrap()).unwrap();
        worst = worst.max((a - b).abs());
    }
    verdict(
        worst < 1e-10,
        format!("max |dy| = {worst:e} over 200 triples"),
    )
}

fn gradient_check() -> Outcome {
    let cfg = AttentionConfig::new(4, 2, 5).unwrap();
    match random_grad_check(&cfg, 3, 1, 1e-5, 0) {
        Ok(r) => {
            let worst = r
                .worst
                .map(|w| format!("{}[{}]", w.param, w.index))
                .unwrap_or_default();
            verdict(
                r.max_rel_error < 1e-4,
                format!(
                    "max relative error {:e} over {} entries (worst {worst})",
                    r.max_rel_error, r.entries_checked
                ),
            )
        }
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn attention_simplex() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_sum = 0.0f64;
    let mut min_coef = f64::INFINITY;
    let mut passes = 0;
    for i in 0..300 {
        // Later passes use large weights so the softmax saturates.
        let spread = if i < 150 { 0.5 } else { 20.0 };
        let cfg =
            AttentionConfig::new(rng.random_range(1..=12), rng.random_range(1..=5), 3).unwrap();
        let params = random_params(&cfg, &mut rng, spread);
        let l = rng.random_range(1..=40);
        let bag = random_bag(&mut rng, l, 3, 5.0);
        match forward(&params, &cfg, &bag) {
            Ok((_, trace)) => {
                for step in &trace.steps {
                    let s: f64 = step.coefficients.iter().sum();
                    worst_sum = worst_sum.max((s - 1.0).abs());
                    min_coef = step.coefficients.iter().copied().fold(min_coef, f64::min);
                    passes += 1;
                }
            }
            Err(e) => return Outcome::Fail(format!("forward pass rejected: {e}")),
        }
    }
    verdict(
        worst_sum <= 1e-12 && min_coef >= 0.0,
        format!("{passes} steps: max |sum - 1| = {worst_sum:e}, min coefficient = {min_coef:e}"),
    )
}

fn flatten<P: Parameters>(p: &P) -> Vec<u64> {
    p.tensors()
        .into_iter()
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

fn baseline_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let make = |rng: &mut ChaCha8Rng, n: usize| {
        let bags = (0..n)
            .map(|i| {
                let row: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                Bag::from_rows(format!("b{i}"), rng.random_range(0.0..1.0), &[row]).unwrap()
            })
            .collect();
        Dataset::new("single", 3, bags).unwrap()
    };
    let train = make(&mut rng, 60);
    let val = make(&mut rng, 20);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        weight_decay: 1e-4,
        batch_size: 8,
        max_epochs: 15,
        patience: 100,
        seed: 42,
    };
    let mut a = Vec::new();
    let mut b = Vec::new();
    let ra = train_with_observer(
        &AggregatedFamily { width: 16 },
        &train,
        &val,
        &cfg,
        |_, p| a.push(flatten(p)),
    );
    let rb = train_with_observer(
        &InstanceFamily {
            width: 16,
            aggregator: Aggregator::Mean,
        },
        &train,
        &val,
        &cfg,
        |_, p| b.push(flatten(p)),
    );
    if let Err(e) = ra.and(rb) {
        return Outcome::Fail(e.to_string());
    }
    let first_diff = a.iter().zip(&b).position(|(x, y)| x != y);
    verdict(
        a.len() == b.len() && !a.is_empty() && first_diff.is_none(),
        format!(
            "{} vs {} steps, first differing step {:?}",
            a.len(),
            b.len(),
            first_diff.map(|i| i + 1)
        ),
    )
}

fn moment_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let l = rng.random_range(1..=30);
        let d = rng.random_range(1..=5);
        let m = rng.random_range(1..=10);
        let bag = random_bag(&mut rng, l, d, 2.0);
        let got = raw_moments(&bag, m).unwrap();
        for j in 0..d {
            for k in 1..=m {
                let mut sum = 0.0;
                let mut abs_sum = 0.0;
                for row in bag.instances().row_iter() {
                    let mut p = 1.0;
                    for _ in 0..k {
                        p *= row[j];
                    }
                    sum += p;
                    abs_sum += p.abs();
                }
                let expected = sum / l as f64;
                // Relative to the moment's own magnitude scale, so odd
                // moments that cancel to ~0 are not ill-posed.
                let denom = (abs_sum / l as f64).max(f64::MIN_POSITIVE);
                worst = worst.max((got[j * m + k - 1] - expected).abs() / denom);
            }
        }
    }
    verdict(
        worst <= 1e-12,
        format!("max relative error {worst:e} over 1000 bags"),
    )
}

fn latent_stddev_data() -> Dataset {
    synth_generate(
        &SynthSpec {
            bags: 400,
            instances: 50,
            features: 4,
            rule: LabelRule::LatentStddev,
            noise: 0.0,
        },
        2024,
    )
    .unwrap()
}

fn cv_experiment(algorithm: Algorithm, moments: usize, steps: usize) -> Experiment {
    let mut e = Experiment::new(algorithm);
    e.hidden_size = 32;
    e.processing_steps = steps;
    e.moments = MomentConfig::new(moments, algorithm.default_attach_mode()).unwrap();
    e.folds = 5;
    e.repetitions = 2;
    e.seed = 17;
    e
}

fn mean_test_rmse(ds: &Dataset, e: &Experiment) -> Result<f64, String> {
    run_cv(ds, e)
        .map(|r| r.mean_test_rmse)
        .map_err(|e| e.to_string())
}

fn separation(ds: &Dataset, attention_t2: &mut Option<f64>) -> Outcome {
    let run = || -> Result<(f64, f64, f64), String> {
        let agg1 = mean_test_rmse(ds, &cv_experiment(Algorithm::Aggregated, 1, 2))?;
        let agg2 = mean_test_rmse(ds, &cv_experiment(Algorithm::Aggregated, 2, 2))?;
        let att = mean_test_rmse(ds, &cv_experiment(Algorithm::Attention, 0, 2))?;
        Ok((agg1, agg2, att))
    };
    let start = Instant::now();
    match run() {
        Ok((agg1, agg2, att)) => {
            *attention_t2 = Some(att);
            let secs = start.elapsed().as_secs_f64();
            verdict(
                att < 0.5 * agg1 && agg2 < 0.3 * agg1 && secs < 900.0,
                format!(
                    "attention {att:.4} vs 0.5 x {agg1:.4}; aggregated m=2 {agg2:.4} vs 0.3 x {agg1:.4}"
                ),
            )
        }
        Err(e) => Outcome::Fail(e),
    }
}

fn processing_steps(ds: &Dataset, t2: Option<f64>) -> Outcome {
    let t2 = match t2 {
        Some(v) => Ok(v),
        None => mean_test_rmse(ds, &cv_experiment(Algorithm::Attention, 0, 2)),
    };
    let t1 = mean_test_rmse(ds, &cv_experiment(Algorithm::Attention, 0, 1));
    match (t1, t2) {
        (Ok(t1), Ok(t2)) => verdict(t2 <= t1, format!("T=2 {t2:.4} vs T=1 {t1:.4}")),
        (Err(e), _) | (_, Err(e)) => Outcome::Fail(e),
    }
}

fn modis_proximity() -> Outcome {
    let Ok(path) = std::env::var("MIR_MODIS_CSV") else {
        return Outcome::Skip("set MIR_MODIS_CSV to a MODIS bag CSV to run (hours)".into());
    };
    let ds = match load_csv(&path) {
        Ok(ds) => ds,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let full = |algorithm: Algorithm, steps: usize| {
        let mut e = Experiment::new(algorithm);
        e.hidden_size = 256;
        e.processing_steps = steps;
        e.scale = 100.0;
        e.seed = 1;
        mean_test_rmse(&ds, &e)
    };
    let results = (
        full(Algorithm::Attention, 2),
        full(Algorithm::Attention, 3),
        full(Algorithm::Aggregated, 2),
    );
    match results {
        (Ok(t2), Ok(t3), Ok(agg)) => {
            let inside = |v: f64, lo: f64, hi: f64| (lo..=hi).contains(&v);
            verdict(
                inside(t2, 8.0, 11.0) && inside(t3, 8.0, 11.0) && inside(agg, 11.0, 14.0),
                format!("attention T=2 {t2:.3}, T=3 {t3:.3} in [8, 11]; aggregated {agg:.3} in [11, 14]"),
            )
        }
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => Outcome::Fail(e),
    }
}

fn protocol_audit() -> Outcome {
    let (b, k, r) = (21, 5, 10);
    let plan = match plan_for_count(b, k, r, 3) {
        Ok(p) => p,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    if plan.cells.len() != k * r {
        return Outcome::Fail(format!("{} cells, expected {}", plan.cells.len(), k * r));
    }
    let mut problems = Vec::new();
    for rep in 0..r {
        let mut held_out = vec![0usize; b];
        for c in plan.cells.iter().filter(|c| c.repetition == rep) {
            let mut count = vec![0usize; b];
            for &i in c.train.iter().chain(&c.validation).chain(&c.test) {
                count[i] += 1;
            }
            if count.iter().any(|&n| n != 1) {
                problems.push(format!("r{} k{}: not a partition", rep + 1, c.fold + 1));
            }
            if c.test
                .iter()
                .any(|i| c.train.contains(i) || c.validation.contains(i))
            {
                problems.push(format!("r{} k{}: test bag leaks", rep + 1, c.fold + 1));
            }
            if c.test.is_empty() || c.validation.is_empty() {
                problems.push(format!("r{} k{}: empty held-out half", rep + 1, c.fold + 1));
            }
            for &i in c.validation.iter().chain(&c.test) {
                held_out[i] += 1;
            }
        }
        if held_out.iter().any(|&n| n != 1) {
            problems.push(format!("r{}: bags not held out exactly once", rep + 1));
        }
    }
    let cv = {
        let ds = Dataset::new(
            "audit",
            1,
            (0..b)
                .map(|i| Bag::from_rows(format!("b{i}"), i as f64, &[vec![i as f64]]).unwrap())
                .collect(),
        )
        .unwrap();
        let mut e = Experiment::new(Algorithm::TrainMean);
        e.seed = 3;
        e.moments = MomentConfig::new(0, AttachMode::AppendPerInstance).unwrap();
        run_cv(&ds, &e).map(|rep| rep.cells.len())
    };
    match cv {
        Ok(n) if n == k * r => {}
        Ok(n) => problems.push(format!("run_cv produced {n} cells")),
        Err(e) => problems.push(e.to_string()),
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} cells of {b} bags checked", plan.cells.len())
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    let limits = [
        (1, "permutation invariance", Some(10.0)),
        (2, "gradient check", Some(30.0)),
        (3, "attention simplex", None),
        (4, "baseline trajectory equivalence", None),
        (5, "moment oracle", None),
        (6, "latent-stddev separation", Some(900.0)),
        (7, "processing-step pattern", None),
        (8, "MODIS proximity", None),
        (9, "protocol audit", None),
    ];
    let ds = latent_stddev_data();
    let mut t2 = None;
    let mut failed = 0;
    for (id, name, limit) in limits {
        let (outcome, elapsed) = timed(|| match id {
            1 => permutation_invariance(),
            2 => gradient_check(),
            3 => attention_simplex(),
            4 => baseline_equivalence(),
            5 => moment_oracle(),
            6 => separation(&ds, &mut t2),
            7 => processing_steps(&ds, t2),
            8 => modis_proximity(),
            _ => protocol_audit(),
        });
        let secs = elapsed.as_secs_f64();
        let outcome = match (outcome, limit) {
            (Outcome::Pass(d), Some(l)) if secs >= l => {
                Outcome::Fail(format!("{d}; took {secs:.1}s, limit {l}s"))
            }
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} [{id}] {name}: {detail} ({secs:.2}s)");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
