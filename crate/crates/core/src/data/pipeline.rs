//! Dataset-level steps: minority rebalancing, the 32-fold train/val
//! expansion, splitting, and the two-class label collapse.

use indexmap::IndexMap;
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Augmentation;
use super::manifest::{DatasetManifest, Ordering, Record, Split, SplitPolicy};
use crate::error::{Error, Result};
use crate::hash::fnv1a_parts;

/// BI-RADS IV, the under-represented class.
pub const MINORITY_LABEL: u8 = 3;
/// Random rotation angles drawn per base image during expansion.
pub const ANGLES_PER_IMAGE: usize = 8;
/// Records produced per base image: angles x hflip x vflip.
pub const EXPANSION_FACTOR: usize = ANGLES_PER_IMAGE * 2 * 2;

/// Maps BI-RADS I/II to 0 ("scattered density") and III/IV to 1
/// ("heterogeneously dense").
pub fn to_two_class(label: usize) -> Result<usize> {
    match label {
        0 | 1 => Ok(0),
        2 | 3 => Ok(1),
        other => Err(Error::Label(format!("BI-RADS label {other} outside 0..=3"))),
    }
}

/// Gives each un-augmented BI-RADS IV record outside the test split three
/// extra copies rotated by 90, 180 and 270 degrees, placed right after it.
pub fn rebalance_minority(manifest: &DatasetManifest) -> DatasetManifest {
    let mut records = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        records.push(r.clone());
        if r.label == MINORITY_LABEL && r.augmentation.is_none() && r.split != Some(Split::Test) {
            for angle in [90.0, 180.0, 270.0] {
                records.push(Record {
                    augmentation: Some(Augmentation::rotation(angle)),
                    ..r.clone()
                });
            }
        }
    }
    DatasetManifest {
        records,
        policy: SplitPolicy {
            rebalanced: true,
            ..manifest.policy.clone()
        },
    }
}

fn record_rng(seed: u64, r: &Record) -> ChaCha8Rng {
    let base_angle = r.augmentation.map_or(0.0, |a| a.angle);
    let key = fnv1a_parts([
        &seed.to_le_bytes()[..],
        r.source_id.as_bytes(),
        r.path.as_bytes(),
        &base_angle.to_le_bytes(),
    ]);
    ChaCha8Rng::seed_from_u64(key)
}

/// How expansion picks rotation angles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotations {
    /// Eight angles drawn from `[0, 360)` per image.
    #[default]
    Random,
    /// 0, 90, 180 and 270 degrees: exact pixel permutations with no fill.
    Quarter,
}

impl Rotations {
    pub fn angles_per_image(self) -> usize {
        match self {
            Rotations::Random => ANGLES_PER_IMAGE,
            Rotations::Quarter => 4,
        }
    }

    /// Records produced per base image.
    pub fn factor(self) -> usize {
        self.angles_per_image() * 4
    }
}

impl std::str::FromStr for Rotations {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Rotations::Random),
            "quarter" => Ok(Rotations::Quarter),
            other => Err(Error::Usage(format!("unknown rotation mode {other:?} (random | quarter)"))),
        }
    }
}

/// Replaces every train and val record by 32 augmented variants: eight
/// angles drawn from `[0, 360)` times both flip settings on both axes.
/// Angles compose with an existing rotation tag. Each record's angles depend
/// only on `(seed, source_id, path, existing angle)`.
pub fn expand_training_set(manifest: &DatasetManifest, seed: u64) -> Result<DatasetManifest> {
    expand_with(manifest, seed, Rotations::Random)
}

/// [`expand_training_set`] with a choice of rotation angles.
pub fn expand_with(manifest: &DatasetManifest, seed: u64, rotations: Rotations) -> Result<DatasetManifest> {
    if manifest.policy.expanded {
        return Err(Error::Usage("manifest is already expanded".into()));
    }
    let angle_dist = Uniform::new(0.0, 360.0).expect("valid range");
    let mut records = Vec::new();
    for r in &manifest.records {
        if !matches!(r.split, Some(Split::Train | Split::Val)) {
            records.push(r.clone());
            continue;
        }
        let base = r.augmentation.unwrap_or(Augmentation::rotation(0.0));
        if base.hflip || base.vflip {
            return Err(Error::Usage(format!(
                "record {} is already flipped; expand base images only",
                r.path
            )));
        }
        let mut rng = record_rng(seed, r);
        for k in 0..rotations.angles_per_image() {
            let offset = match rotations {
                Rotations::Random => angle_dist.sample(&mut rng),
                Rotations::Quarter => 90.0 * k as f64,
            };
            let angle = (base.angle + offset).rem_euclid(360.0);
            for hflip in [false, true] {
                for vflip in [false, true] {
                    records.push(Record {
                        augmentation: Some(Augmentation { angle, hflip, vflip }),
                        ..r.clone()
                    });
                }
            }
        }
    }
    Ok(DatasetManifest {
        records,
        policy: SplitPolicy {
            expanded: true,
            ..manifest.policy.clone()
        },
    })
}

/// Requested split sizes, as absolute counts or as fractions of the
/// records being split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSizes {
    Counts([usize; 3]),
    Ratios([f64; 3]),
}

impl SplitSizes {
    pub fn resolve(&self, total: usize) -> Result<[usize; 3]> {
        match *self {
            SplitSizes::Counts(c) => {
                if c.iter().sum::<usize>() != total {
                    return Err(Error::config(format!(
                        "split counts {c:?} sum to {}, but there are {total} records",
                        c.iter().sum::<usize>()
                    )));
                }
                Ok(c)
            }
            SplitSizes::Ratios(r) => {
                if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!("split ratios {r:?} must be in [0,1] and sum to 1")));
                }
                let train = (r[0] * total as f64).round() as usize;
                let val = ((r[1] * total as f64).round() as usize).min(total - train);
                Ok([train, val, total - train - val])
            }
        }
    }
}

/// Randomly assigns whole source groups to train/val/test so the split
/// sizes (in records) match exactly. No rebalancing.
pub fn partition(records: &[Record], sizes: SplitSizes, seed: u64) -> Result<DatasetManifest> {
    let counts = sizes.resolve(records.len())?;
    let mut groups: IndexMap<&str, Vec<usize>> = IndexMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.source_id.as_str()).or_default().push(i);
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut assigned: Vec<Option<Split>> = vec![None; records.len()];
    let mut filled = [0usize; 3];
    let mut target = 0;
    for g in order {
        let members = &groups[g];
        while target < 2 && filled[target] >= counts[target] {
            target += 1;
        }
        if filled[target] + members.len() > counts[target] && target < 2 {
            return Err(Error::config(format!(
                "cannot fill {} split with exactly {} records without splitting a source group",
                Split::ALL[target],
                counts[target]
            )));
        }
        for &i in members {
            assigned[i] = Some(Split::ALL[target]);
        }
        filled[target] += members.len();
    }
    if filled != counts {
        return Err(Error::config(format!("split produced {filled:?}, requested {counts:?}")));
    }

    let records = records
        .iter()
        .zip(assigned)
        .map(|(r, split)| Record { split, ..r.clone() })
        .collect();
    Ok(DatasetManifest {
        records,
        policy: SplitPolicy {
            seed,
            ordering: Ordering::LeakFree,
            sizes: counts,
            rebalanced: false,
            expanded: false,
            leak_free: true,
        },
    })
}

/// Splits base records into train/val/test and rebalances the minority
/// class.
///
/// * `Ordering::Paper` rebalances first and then shuffles individual
///   records, so sizes count the rebalanced set and rotated copies of one
///   image can land in different splits.
/// * `Ordering::LeakFree` splits whole source groups first (sizes count base
///   records) and then rebalances train and val only.
pub fn split_dataset(records: &[Record], sizes: SplitSizes, seed: u64, ordering: Ordering) -> Result<DatasetManifest> {
    match ordering {
        Ordering::Paper => {
            let base = DatasetManifest {
                records: records.to_vec(),
                policy: SplitPolicy::default(),
            };
            let pool = rebalance_minority(&base).records;
            let counts = sizes.resolve(pool.len())?;
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut assigned = vec![Split::Test; pool.len()];
            for (rank, &i) in order.iter().enumerate() {
                assigned[i] = if rank < counts[0] {
                    Split::Train
                } else if rank < counts[0] + counts[1] {
                    Split::Val
                } else {
                    Split::Test
                };
            }
            let records = pool
                .into_iter()
                .zip(assigned)
                .map(|(r, s)| Record { split: Some(s), ..r })
                .collect();
            let mut m = DatasetManifest {
                records,
                policy: SplitPolicy {
                    seed,
                    ordering,
                    sizes: counts,
                    rebalanced: true,
                    expanded: false,
                    leak_free: false,
                },
            };
            m.policy.leak_free = m.leaked_sources().is_empty();
            Ok(m)
        }
        Ordering::LeakFree => {
            let split = partition(records, sizes, seed)?;
            let m = rebalance_minority(&split);
            let leaked = m.leaked_sources();
            if !leaked.is_empty() {
                return Err(Error::Usage(format!("leak-free split shares sources {leaked:?}")));
            }
            Ok(m)
        }
    }
}
