//! Model and training configuration.
//!
//! A configuration file is a flat TOML key-value table layered over a
//! preset. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sca::AttentionMode;
use crate::spatial_transformer::HeadInit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub resolution: usize,
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stages: usize,
    pub widths: Vec<usize>,
    /// 1-based stage numbers feeding both branches.
    pub tapped: Vec<usize>,
    #[serde(rename = "T")]
    pub regions: usize,
    pub r: usize,
    pub scale: f64,
    pub inception_width: usize,
    pub global_dim: usize,
    pub local_dim: usize,
    pub classes: usize,
    pub attention: AttentionMode,
    pub st_init: HeadInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub epochs: usize,
    pub seed: u64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub flip: bool,
    pub split: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                in_channels: 3,
                resolution: 32,
                stem_width: 8,
                stem_kernel: 3,
                stages: 4,
                widths: vec![8, 16, 32, 32],
                tapped: vec![2, 3, 4],
                regions: 4,
                r: 4,
                scale: 0.5,
                inception_width: 8,
                global_dim: 64,
                local_dim: 64,
                classes: 4,
                attention: AttentionMode::Gate,
                st_init: HeadInit::Zero,
            },
            Preset::Paper => Self {
                in_channels: 3,
                resolution: 224,
                stem_width: 32,
                stem_kernel: 7,
                stages: 4,
                widths: vec![64, 128, 256, 512],
                tapped: vec![2, 3, 4],
                regions: 4,
                r: 16,
                scale: 0.5,
                inception_width: 64,
                global_dim: 512,
                local_dim: 512,
                classes: 500,
                attention: AttentionMode::Gate,
                st_init: HeadInit::Zero,
            },
        }
    }

    /// Small model used by the gradient suites: 8x8 input, two stages, three classes.
    pub fn micro() -> Self {
        Self {
            in_channels: 2,
            resolution: 8,
            stem_width: 3,
            stem_kernel: 3,
            stages: 2,
            widths: vec![4, 4],
            tapped: vec![1, 2],
            regions: 2,
            r: 2,
            scale: 0.5,
            inception_width: 2,
            global_dim: 5,
            local_dim: 4,
            classes: 3,
            attention: AttentionMode::Gate,
            st_init: HeadInit::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.stages < 2 {
            return fail(format!("stages = {} but at least 2 are required", self.stages));
        }
        if self.widths.len() != self.stages {
            return fail(format!("widths lists {} entries for {} stages", self.widths.len(), self.stages));
        }
        let positive = [
            ("in_channels", self.in_channels),
            ("resolution", self.resolution),
            ("stem_width", self.stem_width),
            ("stem_kernel", self.stem_kernel),
            ("T", self.regions),
            ("r", self.r),
            ("inception_width", self.inception_width),
            ("global_dim", self.global_dim),
            ("local_dim", self.local_dim),
            ("classes", self.classes),
        ];
        for (key, v) in positive {
            if v == 0 {
                return fail(format!("{key} must be positive"));
            }
        }
        if self.widths.contains(&0) {
            return fail("widths must be positive".into());
        }
        if self.stem_kernel % 2 == 0 {
            return fail(format!("stem_kernel = {} must be odd", self.stem_kernel));
        }
        if self.tapped.is_empty() {
            return fail("tapped must name at least one stage".into());
        }
        let mut seen = BTreeSet::new();
        for &s in &self.tapped {
            if s == 0 || s > self.stages || !seen.insert(s) {
                return fail(format!("tapped stage {s} is not a distinct stage in 1..={}", self.stages));
            }
        }
        for &s in &self.tapped {
            let c = self.widths[s - 1];
            if c % self.r != 0 {
                return fail(format!("reduction rate r = {} does not divide width {c} of stage {s}", self.r));
            }
        }
        let factor = 1usize << self.stages;
        if self.resolution % factor != 0 {
            return fail(format!("resolution {} is not divisible by 2^{}", self.resolution, self.stages));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return fail(format!("scale {} must lie in (0, 1]", self.scale));
        }
        Ok(())
    }

    /// Stage widths of the tapped stages, in tap order.
    pub fn tapped_widths(&self) -> Vec<usize> {
        self.tapped.iter().map(|&s| self.widths[s - 1]).collect()
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let (batch, decay_epoch, epochs) = match preset {
            Preset::Desk => (16, 10, 30),
            Preset::Paper => (80, 30, 60),
        };
        Self {
            batch,
            lr: 1e-2,
            momentum: 0.9,
            decay_epoch,
            decay_factor: 0.1,
            epochs,
            seed: 0,
            gamma1: 0.5,
            gamma2: 0.5,
            mean: [0.5; 3],
            std: [0.25; 3],
            flip: false,
            split: [0.6, 0.1, 0.3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch == 0 || self.decay_epoch == 0 {
            return fail("batch and decay_epoch must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr = {} must be finite and nonnegative", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum = {} must lie in [0, 1)", self.momentum));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return fail(format!("decay_factor = {} must lie in (0, 1]", self.decay_factor));
        }
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0) {
            return fail("gamma1 and gamma2 must be nonnegative".into());
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return fail("std entries must be positive".into());
        }
        if self.split.iter().any(|&f| !(0.0..=1.0).contains(&f)) || self.split.iter().sum::<f64>() > 1.0 + 1e-9 {
            return fail(format!("split fractions {:?} must be in [0, 1] and sum to at most 1", self.split));
        }
        Ok(())
    }
}

impl Config {
    pub fn preset(preset: Preset) -> Self {
        Self { model: ModelConfig::preset(preset), train: TrainConfig::preset(preset) }
    }

    /// Layers the keys of `text` over `preset`.
    pub fn parse(text: &str, preset: Preset) -> Result<Self> {
        let overrides: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let base = Self::preset(preset);
        let mut model = toml::Table::try_from(&base.model).map_err(|e| Error::Config(e.to_string()))?;
        let mut train = toml::Table::try_from(&base.train).map_err(|e| Error::Config(e.to_string()))?;
        for (key, value) in overrides {
            if model.contains_key(&key) {
                model.insert(key, value);
            } else if train.contains_key(&key) {
                train.insert(key, value);
            } else {
                return Err(Error::Config(format!("unknown configuration key {key:?}")));
            }
        }
        let config = Self {
            model: model.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            train: train.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, preset)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Flat TOML rendering that [`Config::parse`] reads back.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(&self.model).expect("model config serializes");
        table.extend(toml::Table::try_from(&self.train).expect("train config serializes"));
        toml::to_string(&table).expect("table serializes")
    }
}
