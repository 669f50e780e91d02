use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::EvalConfig;
use super::gradcheck::GradcheckConfig;
use super::prepare::{PrepareConfig, SynthConfig};
use super::train::TrainRunConfig;
use crate::error::{Error, Result};

/// Whether labels are the four BI-RADS classes or the collapsed
/// scattered/dense pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassMode {
    #[default]
    Four,
    Two,
}

impl ClassMode {
    pub fn classes(self) -> usize {
        match self {
            ClassMode::Four => 4,
            ClassMode::Two => 2,
        }
    }

    /// Maps a BI-RADS label (0..=3) into this mode's label space.
    pub fn map_label(self, label: usize) -> Result<usize> {
        match self {
            ClassMode::Four if label < 4 => Ok(label),
            ClassMode::Four => Err(Error::Label(format!("BI-RADS label {label} outside 0..=3"))),
            ClassMode::Two => crate::data::to_two_class(label),
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            ClassMode::Four => ["I", "II", "III", "IV"].iter().map(|c| format!("BI-RADS {c}")).collect(),
            ClassMode::Two => vec!["Scattered density".into(), "Heterogeneously dense".into()],
        }
    }
}

impl std::str::FromStr for ClassMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "four" | "4" => Ok(ClassMode::Four),
            "two" | "2" => Ok(ClassMode::Two),
            other => Err(Error::config(format!("class mode must be four or two, got {other:?}"))),
        }
    }
}

/// A run file: one optional section per subcommand, in the same grammar as
/// the network presets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandFile {
    pub prepare: PrepareConfig,
    pub synth: SynthConfig,
    pub train: TrainRunConfig,
    pub evaluate: EvalConfig,
    pub gradcheck: GradcheckConfig,
}

impl CommandFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
