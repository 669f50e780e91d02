//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::path::Path;
use std::time::Instant;

use indexmap::IndexMap;
use rand::Rng;
use resdens::data::{rebalance_minority, DatasetManifest, Record, Rotations, Split, SplitPolicy, SplitSizes};
use resdens::harness::metrics::read_metrics;
use resdens::harness::{
    cmd_evaluate, cmd_gradcheck, cmd_prepare, cmd_synth, cmd_train, ClassMode, EvalConfig, EvalReport,
    GradcheckConfig, PrepareConfig, SynthConfig, TrainRunConfig, Trainer,
};
use resdens::network::{build_network, NetworkConfig, ParamKind, ParamSet};
use resdens::optim::{adam_step, AdamConfig, AdamState};
use resdens::tensor::{affine_forward, avg_pool2d_forward, conv2d_forward, ConvSpec, PoolSpec, Tensor};

use common::{affine_oracle, conv_oracle, max_abs_diff, pool_oracle, random_tensor, rng, synthetic_split, tiny_run};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_gate(_: &Path) -> Outcome {
    let start = Instant::now();
    let report = cmd_gradcheck(&GradcheckConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = report.groups.iter().map(|g| g.worst).fold(0.0, f64::max);
    let by_type: Vec<String> = ["conv", "batchnorm", "affine", "residual_block", "softmax_ce"]
        .iter()
        .map(|g| format!("{g} {:.1e}", report.group(g).map_or(f64::NAN, |r| r.worst)))
        .collect();
    outcome(
        report.passed() && secs < 60.0,
        format!(
            "worst {worst:.2e} <= {:.0e} over {} groups ({}); {secs:.1} s < 60 s",
            report.threshold,
            report.groups.len(),
            by_type.join(", ")
        ),
    )
}

fn oracle_equivalence(_: &Path) -> Outcome {
    let mut r = rng(2024);
    let (mut conv, mut pool, mut affine) = (0.0f64, 0.0f64, 0.0f64);
    let shapes = 120;
    for _ in 0..shapes {
        let (kh, kw): (usize, usize) = (r.random_range(1..=4), r.random_range(1..=4));
        let padding = r.random_range(0..=2);
        let spec = ConvSpec {
            kernel: (kh, kw),
            stride: r.random_range(1..=3),
            padding,
        };
        let h = r.random_range(kh.saturating_sub(2 * padding).max(1)..=10);
        let w = r.random_range(kw.saturating_sub(2 * padding).max(1)..=10);
        let (n, cin, cout) = (r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=5));
        let x = random_tensor(&mut r, &[n, cin, h, w]);
        let wt = random_tensor(&mut r, &[cout, cin, kh, kw]);
        let b = random_tensor(&mut r, &[cout]);
        conv = conv.max(max_abs_diff(&conv2d_forward(&x, &wt, &b, &spec).unwrap(), &conv_oracle(&x, &wt, &b, &spec)));

        let ps = PoolSpec {
            window: (r.random_range(1..=3), r.random_range(1..=3)),
            stride: (r.random_range(1..=3), r.random_range(1..=3)),
        };
        let shape = [r.random_range(1..=3), r.random_range(1..=4), r.random_range(3..=9), r.random_range(3..=9)];
        let x = random_tensor(&mut r, &shape);
        pool = pool.max(max_abs_diff(&avg_pool2d_forward(&x, &ps).unwrap(), &pool_oracle(&x, &ps)));

        let (n, d, m) = (r.random_range(1..=6), r.random_range(1..=16), r.random_range(1..=8));
        let a = random_tensor(&mut r, &[n, d]);
        let w = random_tensor(&mut r, &[d, m]);
        let b = random_tensor(&mut r, &[m]);
        affine = affine.max(max_abs_diff(&affine_forward(&a, &w, &b).unwrap(), &affine_oracle(&a, &w, &b)));
    }
    let worst = conv.max(pool).max(affine);
    outcome(
        worst <= 1e-12,
        format!("{shapes} shapes each; max |diff| conv {conv:.1e}, avg_pool {pool:.1e}, affine {affine:.1e} <= 1e-12"),
    )
}

fn overfit(dir: &Path) -> Outcome {
    let manifest = synthetic_split(&dir.join("data"), 4, 32, [16, 0, 0], 3);
    let cfg = TrainRunConfig {
        preset: "tiny".into(),
        batch_size: 16,
        max_iterations: 500,
        learning_rate: 1e-4,
        seed: 1,
        manifest,
        out: dir.join("run"),
        log_interval: 10,
        epoch_checkpoints: false,
        ..Default::default()
    };
    let start = Instant::now();
    let summary = cmd_train(cfg, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        summary.final_train_acc == 1.0 && summary.final_train_loss < 0.01 && secs < 120.0,
        format!(
            "16 samples, {} iterations: train accuracy {:.2}%, train loss {:.4} < 0.01; {secs:.0} s < 120 s",
            summary.iterations,
            100.0 * summary.final_train_acc,
            summary.final_train_loss
        ),
    )
}

/// Trains the tiny preset on the 200/40/40 synthetic task and returns the
/// test reports in both class modes.
fn synthetic_task(dir: &Path) -> (EvalReport, EvalReport, f64) {
    let start = Instant::now();
    let seed = 21;
    cmd_synth(&SynthConfig {
        n_per_class: 70,
        size: 32,
        seed,
        out: dir.join("raw"),
    })
    .unwrap();
    let prepared = dir.join("prepared");
    cmd_prepare(&PrepareConfig {
        input: dir.join("raw"),
        out: prepared.clone(),
        seed,
        sizes: SplitSizes::Counts([200, 40, 40]),
        rebalance: false,
        expand: true,
        rotations: Rotations::Quarter,
        image_size: [32, 32],
        ..Default::default()
    })
    .unwrap();
    let manifest = prepared.join("manifest.csv");
    let cfg = TrainRunConfig {
        preset: "tiny".into(),
        max_iterations: 3000,
        learning_rate: 1e-4,
        batch_size: 16,
        seed,
        manifest: manifest.clone(),
        out: dir.join("run"),
        log_interval: 500,
        val_cap: Some(160),
        epoch_checkpoints: false,
        ..Default::default()
    };
    let summary = cmd_train(cfg, None).unwrap();
    let eval = |class_mode| {
        cmd_evaluate(&EvalConfig {
            checkpoint: summary.final_checkpoint.clone(),
            manifest: manifest.clone(),
            split: Split::Test,
            class_mode,
            ..Default::default()
        })
        .unwrap()
    };
    let four = eval(ClassMode::Four);
    let two = eval(ClassMode::Two);
    (four, two, start.elapsed().as_secs_f64())
}

fn architecture_accounting(_: &Path) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (name, total, convs, fcs) in [("36L", 36, 33, 3), ("48L", 48, 45, 3), ("70L", 70, 67, 3)] {
        let (_, params) = build_network(NetworkConfig::preset(name).unwrap(), 0).unwrap();
        let got = (params.weight_layer_count(), params.conv_layer_count(), params.fc_layer_count());
        pass &= got == (total, convs, fcs);
        details.push(format!("{name} {}={}+{}", got.0, got.1, got.2));
    }
    outcome(pass, details.join(", "))
}

fn augmentation_arithmetic(dir: &Path) -> Outcome {
    cmd_synth(&SynthConfig {
        n_per_class: 120,
        size: 8,
        seed: 5,
        out: dir.join("raw"),
    })
    .unwrap();
    let m = cmd_prepare(&PrepareConfig {
        input: dir.join("raw"),
        out: dir.join("prepared"),
        seed: 5,
        sizes: SplitSizes::Counts([349, 77, 54]),
        rebalance: false,
        expand: true,
        image_size: [8, 8],
        ..Default::default()
    })
    .unwrap();
    let on_disk = DatasetManifest::load(&dir.join("prepared/manifest.csv")).unwrap();
    let (train, val) = (on_disk.count(Split::Train), on_disk.count(Split::Val));

    let records: Vec<Record> = (0..28).map(|i| Record::base(format!("iv-{i}.pgm"), 3)).collect();
    let rebalanced = rebalance_minority(&DatasetManifest {
        records,
        policy: SplitPolicy::default(),
    });
    let minority = rebalanced.count_label(None, 3);
    outcome(
        train == 11168 && val == 2464 && on_disk.records == m.records && minority == 112,
        format!("349 train -> {train} (11168), 77 val -> {val} (2464); 28 class-IV -> {minority} (112)"),
    )
}

fn determinism_and_resume(dir: &Path) -> Outcome {
    let manifest = synthetic_split(&dir.join("data"), 6, 32, [16, 4, 4], 8);
    let a = tiny_run(&manifest, &dir.join("a"), 12);
    let b = tiny_run(&manifest, &dir.join("b"), 12);
    cmd_train(a.clone(), None).unwrap();
    cmd_train(b.clone(), None).unwrap();
    let read = |p: &Path| std::fs::read(p).unwrap();
    let repeat = read(&a.metrics_path()) == read(&b.metrics_path());

    let cut = tiny_run(&manifest, &dir.join("cut"), 12);
    let mut t = Trainer::new(cut.clone()).unwrap();
    while t.iteration() < 5 {
        t.step().unwrap();
    }
    drop(t);
    cmd_train(cut.clone(), Some(&cut.epoch_checkpoint_path(2))).unwrap();
    let resumed = read(&a.metrics_path()) == read(&cut.metrics_path())
        && read(&a.final_checkpoint_path()) == read(&cut.final_checkpoint_path());
    let rows = read_metrics(&a.metrics_path()).unwrap().len();
    outcome(
        repeat && resumed,
        format!(
            "repeat run metrics identical: {repeat}; resume from epoch 2 metrics and final checkpoint identical: {resumed} ({rows} rows)"
        ),
    )
}

fn scalar_adam(theta: f64, grads: &[f64], lr: f64) -> Vec<f64> {
    let mut p = ParamSet::new(0, 0);
    p.insert("theta", ParamKind::Bias, Tensor::full(&[1], theta)).unwrap();
    let mut s = AdamState::new(&p, AdamConfig::with_lr(lr));
    grads
        .iter()
        .map(|&g| {
            p.set_grads(IndexMap::from([("theta".to_string(), Tensor::full(&[1], g))])).unwrap();
            adam_step(&mut p, &mut s).unwrap();
            p.get("theta").unwrap().data()[0]
        })
        .collect()
}

fn adam_suite(_: &Path) -> Outcome {
    // single- and two-step values evaluated by hand in exact decimal arithmetic
    let cases: [(f64, &[f64], f64, &[f64]); 3] = [
        (1.0, &[0.5], 1e-3, &[0.99900000002]),
        (1.0, &[0.5, -0.25], 1e-3, &[0.99900000002, 0.9987336629870784]),
        (-2.0, &[3.0, 3.0], 1e-2, &[-2.0099999999666665, -2.0199999999333333]),
    ];
    let mut worst = 0.0f64;
    for (theta, grads, lr, expect) in cases {
        for (g, e) in scalar_adam(theta, grads, lr).iter().zip(expect) {
            worst = worst.max((g - e).abs());
        }
    }
    let still = scalar_adam(0.7, &[0.0; 5], 1e-4);
    let noop = still.iter().all(|&v| v == 0.7);
    outcome(
        worst <= 1e-15 && noop,
        format!("max |diff| {worst:.1e} <= 1e-15 on 3 cases; zero-gradient no-op over 5 steps: {noop}"),
    )
}

fn report_shape(four: &EvalReport, two: &EvalReport) -> Outcome {
    let first_column = |r: &EvalReport| -> Vec<String> {
        r.table()
            .lines()
            .map(|l| l.split("  ").next().unwrap().trim().to_string())
            .collect()
    };
    let expect = |r: &EvalReport| -> Vec<String> {
        std::iter::once("Models".to_string())
            .chain(r.class_names.iter().cloned())
            .chain(std::iter::once("ALL(accuracy)".to_string()))
            .collect()
    };
    let ok_four = first_column(four) == expect(four) && four.classes() == 4;
    let ok_two = first_column(two) == expect(two) && two.classes() == 2;
    outcome(
        ok_four && ok_two,
        format!(
            "four-class rows {:?}; two-class rows {:?}",
            first_column(four),
            first_column(two)
        ),
    )
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let run = |name: &'static str, f: &dyn Fn(&Path) -> Outcome, results: &mut Vec<(&str, Outcome)>| {
        let dir = root.path().join(name.replace(' ', "_"));
        std::fs::create_dir_all(&dir).unwrap();
        let o = f(&dir);
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    run("gradient gate", &gradient_gate, &mut results);
    run("oracle equivalence", &oracle_equivalence, &mut results);
    run("overfit", &overfit, &mut results);

    let dir = root.path().join("synthetic");
    std::fs::create_dir_all(&dir).unwrap();
    let (four, two, secs) = synthetic_task(&dir);
    let (acc4, acc2) = (four.overall_accuracy().unwrap(), two.overall_accuracy().unwrap());
    let task = outcome(
        acc4 >= 0.9 && acc2 >= acc4 && secs < 600.0,
        format!(
            "test accuracy four-class {:.2}% >= 90%, two-class {:.2}% >= four-class; {secs:.0} s < 600 s",
            100.0 * acc4,
            100.0 * acc2
        ),
    );
    println!("[{}] synthetic four-class task: {}", if task.pass { "PASS" } else { "FAIL" }, task.detail);
    results.push(("synthetic four-class task", task));

    run("architecture accounting", &architecture_accounting, &mut results);
    run("augmentation arithmetic", &augmentation_arithmetic, &mut results);
    run("determinism and resume", &determinism_and_resume, &mut results);
    run("adam unit suite", &adam_suite, &mut results);
    let shape = report_shape(&four, &two);
    println!("[{}] report shape: {}", if shape.pass { "PASS" } else { "FAIL" }, shape.detail);
    results.push(("report shape", shape));

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
