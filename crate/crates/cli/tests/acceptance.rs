//! End-to-end acceptance checks. Runs every criterion in order, prints one
//! PASS/FAIL line each and exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use tive::harness::{compare_selectors, run_lambda_ablation, PipelineConfig, DEFAULT_LAMBDAS};
use tive::model::GradientRecord;
use tive::rng::stream_rng;
use tive::selection::{largest_remainder, sampling_scores, weighted_sample_without_replacement};
use tive::valuation::{
    gradient_norm, instance_value, task_mean_gradient, task_value, InstanceValue, Provenance, TaskValue, ValueReport,
};
use tive::{task_proportions, Instance, ReferenceModel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("gradient correctness", gradient_correctness),
        ("formula oracles", formula_oracles),
        ("proportion fixture and scale invariance", proportion_fixture),
        ("budget allocation", budget_allocation),
        ("sampling statistics", sampling_statistics),
        ("determinism", determinism),
        ("redundancy analog", redundancy_analog),
        ("selection-quality analog", selection_quality),
        ("lambda ablation", lambda_ablation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("criterion {}: {verdict} {name} ({:.2}s) {}", i + 1, t.elapsed().as_secs_f64(), o.detail);
    }
    println!("acceptance: {} of {} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn random_instance(rng: &mut impl Rng, d_v: usize, vocab: usize, id: usize) -> Instance {
    Instance {
        instance_id: format!("i{id}"),
        task_id: "t".into(),
        features: (0..d_v).map(|_| rng.random_range(-2.0..2.0)).collect(),
        instruction_tokens: (0..rng.random_range(0..5)).map(|_| rng.random_range(0..vocab as u32)).collect(),
        target_tokens: (0..rng.random_range(1..5)).map(|_| rng.random_range(0..vocab as u32)).collect(),
    }
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let (d_v, d_h, vocab, h) = (4, 4, 5, 1e-5);
    let mut rng = stream_rng(2024, 0);
    let mut worst: f64 = 0.0;
    let cases = 25;
    for c in 0..cases {
        let model = ReferenceModel::init(d_v, d_h, vocab, c as u64).unwrap();
        let inst = random_instance(&mut rng, d_v, vocab, c);
        let g = model.per_sample_gradient(&inst).unwrap();
        let mut check = |analytic: &[f64], perturb: &dyn Fn(&mut ReferenceModel, usize, f64)| {
            for (k, &a) in analytic.iter().enumerate() {
                let mut plus = model.clone();
                perturb(&mut plus, k, h);
                let mut minus = model.clone();
                perturb(&mut minus, k, -h);
                let numeric = (plus.loss(&inst).unwrap() - minus.loss(&inst).unwrap()) / (2.0 * h);
                let scale = a.abs().max(numeric.abs());
                let err = if scale < 1e-8 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
                worst = worst.max(err);
            }
        };
        check(g.grad_projection(), &|m, k, d| m.projection_mut().as_mut_slice()[k] += d);
        check(g.grad_output(), &|m, k, d| m.output_mut().as_mut_slice()[k] += d);
    }
    let elapsed = t.elapsed();
    outcome(
        worst <= 1e-4 && elapsed < Duration::from_secs(5),
        format!("{cases} instances, worst relative error {worst:.2e}"),
    )
}

fn random_records(rng: &mut impl Rng, n: usize, p: usize, o: usize) -> Vec<GradientRecord> {
    (0..n)
        .map(|i| {
            GradientRecord::new(
                format!("s{i}"),
                "t",
                (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..o).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        })
        .collect()
}

fn naive_norm(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x * x;
    }
    s.sqrt()
}

fn formula_oracles() -> Outcome {
    let tol = 1e-12;
    let mut rng = stream_rng(77, 0);
    let mut worst = [0.0f64; 4];
    let cases = 200;
    for _ in 0..cases {
        let n = rng.random_range(1..8);
        let (p, o) = (rng.random_range(1..6), rng.random_range(1..6));
        let recs = random_records(&mut rng, n, p, o);

        // Norm of the concatenation equals the root of the per-part squares.
        for r in &recs {
            let split = (naive_norm(r.grad_projection()).powi(2) + naive_norm(r.grad_output()).powi(2)).sqrt();
            worst[0] = worst[0].max((gradient_norm(r).unwrap() - split).abs());
        }

        let mut mean_norm = 0.0;
        for r in &recs {
            mean_norm += naive_norm(r.g());
        }
        mean_norm /= n as f64;
        worst[1] = worst[1].max((task_value(&recs).unwrap().value - mean_norm).abs());

        let dim = p + o;
        let mut mean = vec![0.0; dim];
        for r in &recs {
            for (m, x) in mean.iter_mut().zip(r.g()) {
                *m += x / n as f64;
            }
        }
        let lib_mean = task_mean_gradient(&recs).unwrap();
        for (a, b) in lib_mean.iter().zip(&mean) {
            worst[2] = worst[2].max((a - b).abs());
        }
        for r in &recs {
            let mut dot = 0.0;
            for (a, b) in r.g().iter().zip(&mean) {
                dot += a * b;
            }
            let cos = dot / (naive_norm(r.g()) * naive_norm(&mean));
            worst[2] = worst[2].max((instance_value(r, &lib_mean).unwrap() - cos).abs());
        }

        let lambda = rng.random_range(0.01..3.0);
        let tv = rng.random_range(0.0..10.0);
        let iv = rng.random_range(-1.0..1.0);
        let report = ValueReport {
            tasks: vec![TaskValue {
                task_id: "t".into(),
                value: tv,
                instance_count: 1,
            }],
            task_mean_gradients: vec![],
            instances: vec![InstanceValue {
                instance_id: "s".into(),
                task_id: "t".into(),
                grad_norm: 1.0,
                value: iv,
                degenerate: false,
            }],
            provenance: Provenance::default(),
        };
        let score = sampling_scores(&report, lambda, false)[0].score;
        worst[3] = worst[3].max((score - 1.0 / (1.0 + (-lambda * tv * iv).exp())).abs());
    }
    outcome(
        worst.iter().all(|&w| w <= tol),
        format!(
            "{cases} cases each; max abs error norm {:.1e}, task value {:.1e}, cosine {:.1e}, score {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn named(values: &[f64]) -> Vec<(String, f64)> {
    values.iter().enumerate().map(|(i, &v)| (format!("t{i}"), v)).collect()
}

fn proportions_of(values: &[f64]) -> Vec<f64> {
    task_proportions(&named(values)).unwrap().into_iter().map(|(_, p)| p).collect()
}

fn proportion_fixture() -> Outcome {
    let fixture = [57.9, 25.8, 7.9, 8.4];
    let expected = [0.579, 0.258, 0.079, 0.084];
    let base = proportions_of(&fixture);
    let exact_fixture = base == expected;

    // Exact rescalings: powers of two, and integer multiples of integer-valued values.
    let mut rng = stream_rng(5, 0);
    let mut exact_ok = true;
    for _ in 0..200 {
        let values: Vec<f64> = (0..rng.random_range(2..8)).map(|_| rng.random_range(0.001..100.0)).collect();
        let p = proportions_of(&values);
        let e: i32 = rng.random_range(-60..60);
        let scaled: Vec<f64> = values.iter().map(|v| v * 2f64.powi(e)).collect();
        exact_ok &= proportions_of(&scaled) == p;

        let ints: Vec<f64> = (0..rng.random_range(2..8)).map(|_| rng.random_range(1..10_000) as f64).collect();
        let c = rng.random_range(1..10_000) as f64;
        let scaled: Vec<f64> = ints.iter().map(|v| v * c).collect();
        exact_ok &= proportions_of(&scaled) == proportions_of(&ints);
    }

    // Arbitrary factors round the inputs themselves; proportions stay within a few ulps.
    let mut worst_ulps: u64 = 0;
    for _ in 0..1000 {
        let c = rng.random_range(1e-6..1e6);
        let scaled: Vec<f64> = fixture.iter().map(|v| v * c).collect();
        for (a, b) in proportions_of(&scaled).iter().zip(&base) {
            worst_ulps = worst_ulps.max(a.to_bits().abs_diff(b.to_bits()));
        }
    }
    outcome(
        exact_fixture && exact_ok && worst_ulps <= 4,
        format!(
            "fixture {base:?}; exact rescalings bit-identical: {exact_ok}; arbitrary factors within {worst_ulps} ulp"
        ),
    )
}

fn budget_allocation() -> Outcome {
    let mut rng = stream_rng(9, 0);
    let cases = 1000;
    let mut exact = 0;
    for _ in 0..cases {
        let weights: Vec<f64> = (0..rng.random_range(1..12)).map(|_| rng.random_range(0.0..1.0)).collect();
        let total = rng.random_range(0..5_000);
        let b = largest_remainder(&weights, total).unwrap();
        exact += usize::from(b.iter().sum::<usize>() == total);
    }
    let hand = largest_remainder(&[0.579, 0.258, 0.079, 0.084], 50).unwrap();
    outcome(
        exact == cases && hand == [29, 13, 4, 4],
        format!("{exact}/{cases} sums exact; budget 50 -> {hand:?}"),
    )
}

fn sampling_statistics() -> Outcome {
    let mut rng = stream_rng(31, 0);
    let draws = 100_000;
    let mut hits = 0;
    for _ in 0..draws {
        hits += usize::from(weighted_sample_without_replacement(&[0.9, 0.1], 1, &mut rng).unwrap() == [0]);
    }
    let freq = hits as f64 / draws as f64;

    // Distinct weights so that sampling noise cannot reorder neighbours.
    let mut monotone = true;
    for case in 0..5 {
        let n = 8;
        let mut weights: Vec<f64> = (1..=n).map(|i| 0.1 * i as f64 + 0.02 * case as f64).collect();
        for i in (1..n).rev() {
            weights.swap(i, rng.random_range(0..=i));
        }
        let k = 1 + case % 4;
        let mut counts = vec![0usize; n];
        for _ in 0..10_000 {
            for i in weighted_sample_without_replacement(&weights, k, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]));
        monotone &= order.windows(2).all(|w| counts[w[0]] <= counts[w[1]]);
    }
    outcome(
        (freq - 0.9).abs() <= 0.01 && monotone,
        format!("inclusion frequency {freq:.4}; monotone in weight: {monotone}"),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tive")
}

fn run_cli(args: &[&str], out: &Path) -> bool {
    Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(out)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if !(run_cli(&["experiment"], &a) && run_cli(&["experiment"], &b)) {
        return outcome(false, "experiment command failed");
    }
    let files = ["experiment.json", "experiment.csv", "subset.json"];
    let same: Vec<bool> = files
        .iter()
        .map(|f| std::fs::read(a.join(f)).ok().is_some_and(|x| Some(x) == std::fs::read(b.join(f)).ok()))
        .collect();
    outcome(same.iter().all(|&s| s), format!("byte-identical {files:?}: {same:?}"))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn redundancy_analog() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = repo_root().join("configs/redundancy_sweep.json");
    let ok = run_cli(
        &[
            "--config",
            config.to_str().unwrap(),
            "sweep",
            "--tasks",
            "dup,div",
            "--fractions",
            "1,0.5,0.125",
        ],
        dir.path(),
    );
    if !ok {
        return outcome(false, "sweep command failed");
    }
    let mut reader = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let mut acc: std::collections::HashMap<(String, String), Vec<f64>> = Default::default();
    for row in reader.records() {
        let row = row.unwrap();
        let fraction: f64 = row[1].parse().unwrap();
        acc.entry((row[0].to_string(), format!("{fraction}")))
            .or_default()
            .push(row[4].parse().unwrap());
    }
    let mean = |task: &str, f: &str| {
        let v = &acc[&(task.to_string(), f.to_string())];
        v.iter().sum::<f64>() / v.len() as f64
    };
    let dup_change = (mean("dup", "0.5") - mean("dup", "1")).abs();
    let div_drop = mean("div", "1") - mean("div", "0.125");
    let elapsed = t.elapsed();
    outcome(
        dup_change < 0.01 && div_drop > dup_change && elapsed < Duration::from_secs(180),
        format!("duplicate task at 50%: change {dup_change:.4}; diverse task at 12.5%: drop {div_drop:.4}"),
    )
}

fn selection_quality() -> Outcome {
    let t = Instant::now();
    let report = compare_selectors(&PipelineConfig::default()).unwrap();
    let tive = report.row("tive").unwrap().mean_accuracy;
    let random = report.row("random").unwrap().mean_accuracy;
    let full = report.full.mean_accuracy;
    let baselines_ok = ["random", "length", "perplexity", "grand", "el2n"]
        .iter()
        .all(|m| report.row(m).is_some_and(|r| r.per_seed_accuracy.len() == 5));
    let others: Vec<String> = report.rows.iter().map(|r| format!("{} {:.4}", r.method, r.mean_accuracy)).collect();
    let elapsed = t.elapsed();
    outcome(
        tive >= random && tive >= 0.95 * full && baselines_ok && elapsed < Duration::from_secs(300),
        format!("{}; full {full:.4}; tive/full {:.4}", others.join(", "), tive / full),
    )
}

fn lambda_ablation() -> Outcome {
    let report = run_lambda_ablation(&PipelineConfig::default(), &DEFAULT_LAMBDAS).unwrap();
    let spreads: Vec<f64> = report.points.iter().map(|p| p.score_spread).collect();
    let increasing = spreads.windows(2).all(|w| w[0] < w[1]);
    outcome(
        increasing && !report.to_json().is_empty(),
        format!("score spread at {DEFAULT_LAMBDAS:?}: {spreads:.4?}"),
    )
}
