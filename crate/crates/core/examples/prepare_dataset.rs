//! Generates a synthetic dataset and prepares it with the default
//! leak-free split, minority rebalancing and 32-fold expansion.

use resdens::harness::{cmd_prepare, cmd_synth, PrepareConfig, SynthConfig};

fn main() -> resdens::Result<()> {
    let dir = tempfile::tempdir().expect("temporary directory");
    let raw = dir.path().join("raw");
    let synth = cmd_synth(&SynthConfig {
        n_per_class: 12,
        size: 32,
        seed: 1,
        out: raw.clone(),
    })?;
    println!("synthesized {} images", synth.records.len());

    let prepared = cmd_prepare(&PrepareConfig {
        input: raw,
        out: dir.path().join("prepared"),
        seed: 1,
        image_size: [32, 32],
        ..Default::default()
    })?;
    print!("{}", prepared.count_table());
    println!("leaked sources: {}", prepared.leaked_sources().len());
    for r in prepared.records.iter().take(3) {
        println!("  {} <- {} {:?}", r.path, r.source_id, r.augmentation);
    }
    Ok(())
}
