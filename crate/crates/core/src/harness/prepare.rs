//! Materializing datasets on disk: the split/rebalance/expand/resize
//! pipeline and the synthetic density generator.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    augment, expand_with, generate_synthetic, partition, read_pgm, resize, split_dataset, write_pgm,
    DatasetManifest, GrayImage, Ordering, Record, Rotations, SplitPolicy, SplitSizes,
};
use crate::error::{Error, Result};

/// File name of the manifest inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    /// Manifest CSV, a directory holding `manifest.csv`, or a directory
    /// with one subdirectory of PGM files per class (`I`..`IV` or `1`..`4`).
    pub input: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub ordering: Ordering,
    pub sizes: SplitSizes,
    /// Add rotated copies of class-IV images.
    pub rebalance: bool,
    /// Replace every train/val image by its augmented variants.
    pub expand: bool,
    pub rotations: Rotations,
    /// Output `[height, width]`.
    pub image_size: [usize; 2],
    pub maxval: u16,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            input: PathBuf::new(),
            out: PathBuf::from("prepared"),
            seed: 0,
            ordering: Ordering::LeakFree,
            sizes: SplitSizes::Ratios([0.7, 0.15, 0.15]),
            rebalance: true,
            expand: true,
            rotations: Rotations::Random,
            image_size: [224, 224],
            maxval: 65535,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub size: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 10,
            size: 32,
            seed: 0,
            out: PathBuf::from("synthetic"),
        }
    }
}

const CLASS_DIRS: [[&str; 2]; 4] = [["I", "1"], ["II", "2"], ["III", "3"], ["IV", "4"]];

/// Base records of the input plus the directory their paths resolve
/// against.
fn collect_inputs(input: &Path) -> Result<(Vec<Record>, PathBuf)> {
    if input.is_file() {
        let m = DatasetManifest::load(input)?;
        return Ok((m.records, input.parent().unwrap_or(Path::new("")).to_path_buf()));
    }
    if !input.is_dir() {
        return Err(Error::config(format!("input {} does not exist", input.display())));
    }
    let manifest = input.join(MANIFEST_FILE);
    if manifest.is_file() {
        return Ok((DatasetManifest::load(&manifest)?.records, input.to_path_buf()));
    }
    let mut records = Vec::new();
    for (label, names) in CLASS_DIRS.iter().enumerate() {
        for name in names {
            let dir = input.join(name);
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<String> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|f| f.ends_with(".pgm"))
                .collect();
            files.sort();
            records.extend(files.into_iter().map(|f| Record::base(format!("{name}/{f}"), label as u8)));
        }
    }
    Ok((records, input.to_path_buf()))
}

/// Replaces `out` with the finished contents of `tmp`. An existing `out`
/// is only removed if it is empty or looks like an earlier dataset.
fn commit_dir(tmp: &Path, out: &Path) -> Result<()> {
    if out.exists() {
        let empty = std::fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_none();
        if !empty && !out.join(MANIFEST_FILE).is_file() {
            return Err(Error::config(format!(
                "refusing to replace {}: not empty and not a dataset directory",
                out.display()
            )));
        }
        std::fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    std::fs::rename(tmp, out).map_err(|e| Error::io(out, e))
}

/// Writes into a sibling temporary directory and moves it into place only
/// when `fill` succeeds, so a failure leaves no partial output.
fn write_atomically(out: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let name = out
        .file_name()
        .ok_or_else(|| Error::config(format!("bad output directory {}", out.display())))?;
    let tmp = out.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let result = fill(&tmp).and_then(|()| commit_dir(&tmp, out));
    if result.is_err() {
        let _ = std::fs::remove_dir_all(&tmp);
    }
    result
}

/// The manifest prepare would produce, before any image is written.
pub fn plan_dataset(records: &[Record], cfg: &PrepareConfig) -> Result<DatasetManifest> {
    let mut m = if cfg.rebalance {
        split_dataset(records, cfg.sizes, cfg.seed, cfg.ordering)?
    } else {
        let mut m = partition(records, cfg.sizes, cfg.seed)?;
        m.policy.ordering = cfg.ordering;
        m
    };
    if cfg.expand {
        m = expand_with(&m, cfg.seed, cfg.rotations)?;
    }
    Ok(m)
}

/// Splits, rebalances, expands and resizes the input images, writing one
/// PGM per record under `<out>/<split>/` and the manifest as
/// `<out>/manifest.csv`. Augmentation is applied at the source resolution
/// and the result resized to `image_size`.
///
/// Output manifest paths point at the written files; the `source_id` and
/// augmentation columns record where each one came from.
pub fn cmd_prepare(cfg: &PrepareConfig) -> Result<DatasetManifest> {
    let (records, base) = collect_inputs(&cfg.input)?;
    if records.is_empty() {
        return Err(Error::config(format!("no input images found in {}", cfg.input.display())));
    }
    let plan = plan_dataset(&records, cfg)?;
    let [h, w] = cfg.image_size;
    let mut out_records = Vec::with_capacity(plan.records.len());
    write_atomically(&cfg.out, |tmp| {
        // augmented copies of one image are adjacent, so one cached source suffices
        let mut source: Option<(String, GrayImage)> = None;
        for (i, r) in plan.records.iter().enumerate() {
            let split = r.split.expect("planned records are split");
            if source.as_ref().map_or(true, |(p, _)| *p != r.path) {
                source = Some((r.path.clone(), read_pgm(&base.join(&r.path))?));
            }
            let src = &source.as_ref().expect("just loaded").1;
            let img = match &r.augmentation {
                Some(a) => resize(&augment(src, a), h, w)?,
                None => resize(src, h, w)?,
            };
            let rel = format!("{split}/{i:06}.pgm");
            let dir = tmp.join(split.as_str());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_pgm(&tmp.join(&rel), &img, cfg.maxval)?;
            out_records.push(Record { path: rel, ..r.clone() });
        }
        DatasetManifest {
            records: out_records.clone(),
            policy: plan.policy.clone(),
        }
        .save(&tmp.join(MANIFEST_FILE))
    })?;
    Ok(DatasetManifest {
        records: out_records,
        policy: plan.policy,
    })
}

/// Writes `4 * n_per_class` synthetic images and an unsplit manifest.
pub fn cmd_synth(cfg: &SynthConfig) -> Result<DatasetManifest> {
    if cfg.n_per_class == 0 {
        return Err(Error::config("n_per_class must be at least 1"));
    }
    let images = generate_synthetic(cfg.n_per_class, cfg.size, cfg.seed)?;
    let records: Vec<Record> = images
        .iter()
        .map(|li| Record {
            source_id: li.source_id.clone(),
            ..Record::base(format!("{}.pgm", li.source_id), li.label)
        })
        .collect();
    let manifest = DatasetManifest {
        records,
        policy: SplitPolicy {
            seed: cfg.seed,
            ..Default::default()
        },
    };
    write_atomically(&cfg.out, |tmp| {
        for (li, r) in images.iter().zip(&manifest.records) {
            write_pgm(&tmp.join(&r.path), &li.image, 65535)?;
        }
        manifest.save(&tmp.join(MANIFEST_FILE))
    })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_to_clobber_foreign_directories() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        std::fs::create_dir(&out).unwrap();
        std::fs::write(out.join("precious.txt"), "x").unwrap();
        let cfg = SynthConfig {
            n_per_class: 1,
            size: 8,
            seed: 1,
            out: out.clone(),
        };
        assert!(matches!(cmd_synth(&cfg), Err(Error::Config(_))));
        assert!(out.join("precious.txt").exists());
    }

    #[test]
    fn empty_input_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        std::fs::create_dir(&input).unwrap();
        let cfg = PrepareConfig {
            input,
            out: dir.path().join("out"),
            ..Default::default()
        };
        assert!(cmd_prepare(&cfg).is_err());
        assert!(!cfg.out.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
