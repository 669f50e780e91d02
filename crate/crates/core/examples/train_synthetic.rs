//! Trains the tiny preset on a synthetic four-class density task and
//! prints the test report in both class modes.
//!
//! Usage: `cargo run --release --example train_synthetic [iterations]`

use resdens::data::{Rotations, Split, SplitSizes};
use resdens::harness::{
    cmd_evaluate, cmd_prepare, cmd_synth, cmd_train, ClassMode, EvalConfig, EvalReport, PrepareConfig, SynthConfig,
    TrainRunConfig,
};

fn main() -> resdens::Result<()> {
    let iterations = std::env::args().nth(1).map_or(Ok(3000), |s| s.parse()).expect("iteration count");
    let dir = tempfile::tempdir().expect("temporary directory");
    cmd_synth(&SynthConfig {
        n_per_class: 70,
        size: 32,
        seed: 21,
        out: dir.path().join("raw"),
    })?;
    let prepared = dir.path().join("prepared");
    cmd_prepare(&PrepareConfig {
        input: dir.path().join("raw"),
        out: prepared.clone(),
        seed: 21,
        sizes: SplitSizes::Counts([200, 40, 40]),
        rebalance: false,
        rotations: Rotations::Quarter,
        image_size: [32, 32],
        ..Default::default()
    })?;
    let manifest = prepared.join("manifest.csv");
    let cfg = TrainRunConfig {
        max_iterations: iterations,
        seed: 21,
        manifest: manifest.clone(),
        out: dir.path().join("run"),
        log_interval: 250,
        val_cap: Some(160),
        epoch_checkpoints: false,
        ..Default::default()
    };
    let summary = cmd_train(cfg.clone(), None)?;
    print!("{}", std::fs::read_to_string(cfg.metrics_path()).expect("metrics log"));

    let eval = |class_mode| {
        cmd_evaluate(&EvalConfig {
            checkpoint: summary.final_checkpoint.clone(),
            manifest: manifest.clone(),
            split: Split::Test,
            class_mode,
            ..Default::default()
        })
    };
    let four = eval(ClassMode::Four)?;
    let two = eval(ClassMode::Two)?;
    println!();
    print!("{}", four.table());
    println!();
    print!("{}", EvalReport::render_table(&[&two]));
    println!();
    print!("{}", four.confusion_text());
    Ok(())
}
