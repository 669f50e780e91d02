//! Image ingestion, preprocessing, augmentation and dataset bookkeeping.

mod image;
mod manifest;
mod pgm;
mod pipeline;
mod synth;

pub use image::{augment, hflip, images_to_batch, resize, rotate, vflip, Augmentation, GrayImage};
pub use manifest::{policy_path, DatasetManifest, Ordering, Record, Split, SplitPolicy, MANIFEST_HEADER};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use pipeline::{
    expand_training_set, expand_with, partition, rebalance_minority, split_dataset, to_two_class, SplitSizes, ANGLES_PER_IMAGE,
    EXPANSION_FACTOR, MINORITY_LABEL, Rotations,
};
pub use synth::{generate_synthetic, render_density, LabeledImage, DENSITY_BANDS};

use std::path::Path;

use crate::error::Result;

/// Loads a PGM image as a labeled base image.
pub fn load_image(path: &Path, label: u8) -> Result<LabeledImage> {
    Ok(LabeledImage {
        image: read_pgm(path)?,
        label,
        source_id: path.display().to_string(),
        augmentation: None,
    })
}
