//! Dataset manifests: one CSV row per (possibly augmented) image, plus a
//! small key-value sidecar describing how the split was produced.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::Augmentation;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 7] = ["path", "label", "split", "source_id", "angle", "hflip", "vflip"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }
}

/// Whether class-IV rebalancing happens before the split (reproducing the
/// original sequence, which lets near-duplicates cross splits) or after it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    Paper,
    #[default]
    #[serde(alias = "leakfree")]
    LeakFree,
}

impl FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Ordering::Paper),
            "leakfree" | "leak-free" => Ok(Ordering::LeakFree),
            other => Err(Error::config(format!("unknown ordering {other:?} (paper|leakfree)"))),
        }
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ordering::Paper => "paper",
            Ordering::LeakFree => "leakfree",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    /// Image location; relative paths resolve against the manifest's directory.
    pub path: String,
    /// BI-RADS class encoded 0..=3.
    pub label: u8,
    pub split: Option<Split>,
    /// Shared by an image and every augmented copy derived from it.
    pub source_id: String,
    pub augmentation: Option<Augmentation>,
}

impl Record {
    pub fn base(path: impl Into<String>, label: u8) -> Self {
        let path = path.into();
        Record {
            source_id: path.clone(),
            path,
            label,
            split: None,
            augmentation: None,
        }
    }
}

/// How the split was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub seed: u64,
    pub ordering: Ordering,
    /// Requested `[train, val, test]` sizes.
    pub sizes: [usize; 3],
    pub rebalanced: bool,
    pub expanded: bool,
    /// Under `paper` ordering augmented copies of one source may sit in
    /// different splits; this records that the no-leak invariant is waived.
    pub leak_free: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
    pub policy: SplitPolicy,
}

fn flag(v: bool) -> &'static str {
    if v {
        "1"
    } else {
        "0"
    }
}

fn parse_flag(s: &str, line: usize) -> Result<bool> {
    match s {
        "1" | "true" => Ok(true),
        "0" | "false" | "" => Ok(false),
        other => Err(Error::config(format!("manifest line {line}: bad flag {other:?}"))),
    }
}

/// Sidecar policy file stored next to a manifest CSV.
pub fn policy_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("policy.cfg")
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == Some(split)).count()
    }

    pub fn count_label(&self, split: Option<Split>, label: u8) -> usize {
        self.records
            .iter()
            .filter(|r| r.label == label && (split.is_none() || r.split == split))
            .count()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::config(format!("manifest csv: {e}"));
        w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        for r in &self.records {
            let (angle, h, v) = match &r.augmentation {
                Some(a) => (a.angle.to_string(), flag(a.hflip), flag(a.vflip)),
                None => (String::new(), "", ""),
            };
            let label = r.label.to_string();
            let split = r.split.map(|s| s.as_str()).unwrap_or("");
            w.write_record([r.path.as_str(), &label, split, &r.source_id, &angle, h, v])
                .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::config(format!("manifest csv: {e}")))
    }

    /// Parses a manifest CSV. Only `path` and `label` are required; a
    /// missing `source_id` defaults to the path.
    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(bytes);
        let headers = rdr
            .headers()
            .map_err(|e| Error::config(format!("manifest header: {e}")))?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (path_col, label_col) = match (col("path"), col("label")) {
            (Some(p), Some(l)) => (p, l),
            _ => return Err(Error::config("manifest needs `path` and `label` columns")),
        };
        let (split_col, source_col, angle_col, h_col, v_col) =
            (col("split"), col("source_id"), col("angle"), col("hflip"), col("vflip"));

        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::config(format!("manifest line {line}: {e}")))?;
            let field = |c: Option<usize>| c.and_then(|c| row.get(c)).map(str::trim).unwrap_or("");
            let path = field(Some(path_col)).to_string();
            let label: u8 = field(Some(label_col))
                .parse()
                .map_err(|_| Error::Label(format!("manifest line {line}: label {:?}", field(Some(label_col)))))?;
            if label > 3 {
                return Err(Error::Label(format!("manifest line {line}: label {label} outside 0..=3")));
            }
            let split = match field(split_col) {
                "" => None,
                s => Some(s.parse()?),
            };
            let source_id = match field(source_col) {
                "" => path.clone(),
                s => s.to_string(),
            };
            let augmentation = match field(angle_col) {
                "" => None,
                a => Some(Augmentation {
                    angle: a
                        .parse()
                        .map_err(|_| Error::config(format!("manifest line {line}: angle {a:?}")))?,
                    hflip: parse_flag(field(h_col), line)?,
                    vflip: parse_flag(field(v_col), line)?,
                }),
            };
            records.push(Record {
                path,
                label,
                split,
                source_id,
                augmentation,
            });
        }
        Ok(DatasetManifest {
            records,
            policy: SplitPolicy::default(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))?;
        let policy = toml::to_string(&self.policy).expect("policy serializes");
        let pp = policy_path(path);
        std::fs::write(&pp, policy).map_err(|e| Error::io(pp, e))
    }

    /// Reads a manifest and, when present, its policy sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_csv(&bytes)?;
        let pp = policy_path(path);
        if pp.exists() {
            let text = std::fs::read_to_string(&pp).map_err(|e| Error::io(&pp, e))?;
            m.policy = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", pp.display())))?;
        }
        Ok(m)
    }

    /// Source ids shared by two or more splits.
    pub fn leaked_sources(&self) -> Vec<String> {
        let mut owner: indexmap::IndexMap<&str, Option<Split>> = indexmap::IndexMap::new();
        let mut leaked = indexmap::IndexSet::new();
        for r in &self.records {
            let entry = owner.entry(&r.source_id).or_insert(r.split);
            if *entry != r.split {
                leaked.insert(r.source_id.clone());
            }
        }
        leaked.into_iter().collect()
    }

    /// Plain-text table of class counts per split.
    pub fn count_table(&self) -> String {
        let mut out = format!("{:<10}{:>8}{:>8}{:>8}{:>8}{:>8}\n", "split", "I", "II", "III", "IV", "total");
        for split in Split::ALL {
            let counts: Vec<usize> = (0..4).map(|l| self.count_label(Some(split), l)).collect();
            out += &format!(
                "{:<10}{:>8}{:>8}{:>8}{:>8}{:>8}\n",
                split.as_str(),
                counts[0],
                counts[1],
                counts[2],
                counts[3],
                counts.iter().sum::<usize>()
            );
        }
        out
    }
}
