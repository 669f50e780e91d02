//! The 32-fold expansion of one synthetic image: every variant keeps the
//! image size, and quarter turns and flips keep the bright fraction.

use resdens::data::{
    augment, expand_training_set, expand_with, generate_synthetic, DatasetManifest, Record, Rotations, Split,
    SplitPolicy,
};

fn main() -> resdens::Result<()> {
    let image = generate_synthetic(1, 32, 7)?.swap_remove(2);
    println!(
        "class {} source, bright fraction {:.4}",
        image.label,
        image.image.fraction_above(0.5)
    );
    let manifest = DatasetManifest {
        records: vec![Record {
            split: Some(Split::Train),
            ..Record::base("example.pgm", image.label)
        }],
        policy: SplitPolicy::default(),
    };
    for (mode, expanded) in [
        ("random", expand_training_set(&manifest, 3)?),
        ("quarter", expand_with(&manifest, 3, Rotations::Quarter)?),
    ] {
        println!("\n{mode} rotations: {} records", expanded.records.len());
        for r in expanded.records.iter().step_by(4) {
            let a = r.augmentation.expect("expanded records are augmented");
            let out = augment(&image.image, &a);
            println!(
                "  angle {:>7.2}  size {}x{}  bright fraction {:.4}",
                a.angle,
                out.width(),
                out.height(),
                out.fraction_above(0.5)
            );
        }
    }
    Ok(())
}
