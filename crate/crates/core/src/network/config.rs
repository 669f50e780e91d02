use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a;
use crate::layers::BatchNormConfig;

/// Declarative architecture description. Parsed from the preset files'
/// `key = value` grammar with bracketed sections (a TOML subset).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub name: String,
    pub classes: usize,
    /// `[height, width]` of the single-channel input.
    pub input_size: [usize; 2],
    /// Widths of the fully connected head; the last one equals `classes`.
    pub fc_widths: Vec<usize>,
    pub stem: StemConfig,
    #[serde(default)]
    pub batchnorm: BatchNormSection,
    #[serde(rename = "stage")]
    pub stages: Vec<StageConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemConfig {
    pub channels: usize,
    pub kernel: usize,
    /// 2x2 average pooling after the stem.
    #[serde(default)]
    pub pool: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    pub convs_per_block: usize,
    /// Use a 1x1 projection shortcut on the stage's first block even when
    /// the width does not change. Width changes always project.
    #[serde(default)]
    pub projection: bool,
    /// 2x2 average pooling after the stage.
    #[serde(default = "yes")]
    pub pool: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNormSection {
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for BatchNormSection {
    fn default() -> Self {
        let d = BatchNormConfig::default();
        BatchNormSection {
            epsilon: d.epsilon,
            momentum: d.momentum,
        }
    }
}

impl From<BatchNormSection> for BatchNormConfig {
    fn from(s: BatchNormSection) -> Self {
        BatchNormConfig {
            epsilon: s.epsilon,
            momentum: s.momentum,
        }
    }
}

const PRESETS: [(&str, &str); 4] = [
    ("36L", include_str!("../../presets/36L.cfg")),
    ("48L", include_str!("../../presets/48L.cfg")),
    ("70L", include_str!("../../presets/70L.cfg")),
    ("tiny", include_str!("../../presets/tiny.cfg")),
];

impl NetworkConfig {
    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    /// One of the shipped presets: `36L`, `48L`, `70L` or `tiny`.
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::config(format!("unknown preset {name:?}")))?;
        Self::parse(text)
    }

    /// A preset name, or else a path to a preset file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if PRESETS.iter().any(|(n, _)| *n == name_or_path) {
            return Self::preset(name_or_path);
        }
        Self::load(Path::new(name_or_path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: NetworkConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("network config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("network config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.classes, 2 | 4) {
            return Err(Error::config(format!("classes must be 2 or 4, got {}", self.classes)));
        }
        if self.fc_widths.last() != Some(&self.classes) {
            return Err(Error::config(format!(
                "last fc width {:?} must equal classes {}",
                self.fc_widths.last(),
                self.classes
            )));
        }
        if self.fc_widths.contains(&0) || self.stem.channels == 0 || self.stem.kernel % 2 == 0 {
            return Err(Error::config("fc widths and stem channels must be positive, stem kernel odd"));
        }
        if self.stages.is_empty() {
            return Err(Error::config("at least one stage is required"));
        }
        let mut width = self.stem.channels;
        let [mut h, mut w] = self.input_size;
        if h == 0 || w == 0 {
            return Err(Error::config("input size must be positive"));
        }
        let pool = |h: &mut usize, w: &mut usize, at: &str| -> Result<()> {
            if *h < 2 || *w < 2 {
                return Err(Error::config(format!("feature map {h}x{w} too small to pool after {at}")));
            }
            *h /= 2;
            *w /= 2;
            Ok(())
        };
        if self.stem.pool {
            pool(&mut h, &mut w, "stem")?;
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.channels == 0 {
                return Err(Error::config(format!("stage {} needs blocks and channels", i + 1)));
            }
            if !(2..=3).contains(&s.convs_per_block) {
                return Err(Error::config(format!(
                    "stage {}: convs_per_block must be 2 or 3, got {}",
                    i + 1,
                    s.convs_per_block
                )));
            }
            if s.channels != width && !s.projection {
                return Err(Error::config(format!(
                    "stage {} changes width {width} -> {} and needs projection = true",
                    i + 1,
                    s.channels
                )));
            }
            width = s.channels;
            if s.pool {
                pool(&mut h, &mut w, &format!("stage {}", i + 1))?;
            }
        }
        Ok(())
    }

    /// Convolution layers with learnable weights: stem, block convs and
    /// projection shortcuts.
    pub fn conv_layers(&self) -> usize {
        1 + self
            .stages
            .iter()
            .map(|s| s.blocks * s.convs_per_block + usize::from(s.projection))
            .sum::<usize>()
    }

    pub fn fc_layers(&self) -> usize {
        self.fc_widths.len()
    }

    /// Conv plus FC layers; pooling and batch normalization are not counted.
    pub fn weight_layers(&self) -> usize {
        self.conv_layers() + self.fc_layers()
    }

    /// Spatial size of the final feature map, which is flattened into the head.
    pub fn feature_map_size(&self) -> (usize, usize) {
        let [mut h, mut w] = self.input_size;
        let pools = usize::from(self.stem.pool) + self.stages.iter().filter(|s| s.pool).count();
        for _ in 0..pools {
            h /= 2;
            w /= 2;
        }
        (h, w)
    }

    pub fn flattened_features(&self) -> usize {
        let (h, w) = self.feature_map_size();
        h * w * self.stages.last().map_or(self.stem.channels, |s| s.channels)
    }

    /// Stable fingerprint of the architecture.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Result<Self> {
        self.input_size = [h, w];
        self.validate()?;
        Ok(self)
    }

    /// Same architecture with a different number of output classes.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if let Some(last) = self.fc_widths.last_mut() {
            *last = classes;
        }
        self.classes = classes;
        self.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_accounting() {
        for (name, total, convs) in [("36L", 36, 33), ("48L", 48, 45), ("70L", 70, 67), ("tiny", 12, 9)] {
            let cfg = NetworkConfig::preset(name).unwrap();
            assert_eq!(cfg.weight_layers(), total, "{name}");
            assert_eq!(cfg.conv_layers(), convs, "{name}");
            assert_eq!(cfg.fc_layers(), 3, "{name}");
        }
        let big = NetworkConfig::preset("70L").unwrap();
        let widths: Vec<_> = big.stages.iter().map(|s| s.channels).collect();
        assert_eq!(widths, [64, 128, 256]);
        assert_eq!(big.fc_widths, [1024, 512, 4]);
    }

    #[test]
    fn inconsistent_head_is_rejected() {
        let text = NetworkConfig::preset("tiny").unwrap().to_text().replace("fc_widths = [64, 32, 4]", "fc_widths = [64, 32, 3]");
        assert!(matches!(NetworkConfig::parse(&text), Err(Error::Config(_))));
    }

    #[test]
    fn width_change_without_projection_is_rejected() {
        let mut cfg = NetworkConfig::preset("tiny").unwrap();
        cfg.stages[1].projection = false;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn text_round_trip() {
        let cfg = NetworkConfig::preset("48L").unwrap();
        assert_eq!(NetworkConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.hash(), NetworkConfig::preset("48L").unwrap().hash());
        assert_ne!(cfg.hash(), NetworkConfig::preset("36L").unwrap().hash());
    }

    #[test]
    fn feature_map_shrinks_with_every_pool() {
        let cfg = NetworkConfig::preset("tiny").unwrap();
        assert_eq!(cfg.feature_map_size(), (2, 2));
        assert_eq!(cfg.flattened_features(), 128);
        assert_eq!(NetworkConfig::preset("70L").unwrap().feature_map_size(), (14, 14));
    }
}
