//! Interrupts a run after its second epoch, resumes from the epoch
//! checkpoint, and compares the metrics log with an uninterrupted run.

use resdens::data::SplitSizes;
use resdens::harness::{cmd_prepare, cmd_synth, cmd_train, PrepareConfig, SynthConfig, TrainRunConfig, Trainer};

fn main() -> resdens::Result<()> {
    let dir = tempfile::tempdir().expect("temporary directory");
    cmd_synth(&SynthConfig {
        n_per_class: 6,
        size: 32,
        seed: 2,
        out: dir.path().join("raw"),
    })?;
    cmd_prepare(&PrepareConfig {
        input: dir.path().join("raw"),
        out: dir.path().join("prepared"),
        seed: 2,
        sizes: SplitSizes::Counts([16, 4, 4]),
        rebalance: false,
        expand: false,
        image_size: [32, 32],
        ..Default::default()
    })?;
    let run = |name: &str| TrainRunConfig {
        batch_size: 8,
        max_iterations: 12,
        learning_rate: 1e-3,
        manifest: dir.path().join("prepared/manifest.csv"),
        out: dir.path().join(name),
        log_interval: 3,
        record_wall_time: false,
        ..Default::default()
    };

    let whole = run("whole");
    cmd_train(whole.clone(), None)?;

    let cut = run("cut");
    let mut trainer = Trainer::new(cut.clone())?;
    while trainer.iteration() < 5 {
        trainer.step()?;
    }
    println!("stopped at iteration {} (epoch {})", trainer.iteration(), trainer.epoch_at(trainer.iteration()));
    drop(trainer);
    let checkpoint = cut.epoch_checkpoint_path(2);
    println!("resuming from {}", checkpoint.display());
    cmd_train(cut.clone(), Some(&checkpoint))?;

    let a = std::fs::read_to_string(whole.metrics_path()).expect("metrics");
    let b = std::fs::read_to_string(cut.metrics_path()).expect("metrics");
    print!("{b}");
    println!("identical to the uninterrupted run: {}", a == b);
    Ok(())
}
