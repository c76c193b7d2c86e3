//! Run configuration read from a TOML file.
//!
//! Every command takes the same file so that one checked-in config pins a
//! whole experiment. Missing keys fall back to the desk-scale defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::NmsParams;
use crate::error::{io_err, Error, Result};
use crate::pipeline::DecodeOptions;
use crate::train::{PseudoUpdate, TrainOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub pretrain: StageConfig,
    pub train: TrainStageConfig,
    pub decode: DecodeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Seeds the corpus and every stored split. The top-level `seed` only
    /// drives initialization, synthetic streams and batch order.
    pub seed: u64,
    pub classes: usize,
    /// Vocabulary and line count of the toy text corpus behind the language
    /// model and the "real" transcripts.
    pub corpus_words: usize,
    pub corpus_lines: usize,
    pub real_train: usize,
    pub real_val: usize,
    pub synth_val: usize,
    pub real_len: (usize, usize),
    pub synth_len: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub head: usize,
    pub conr_hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStageConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub real_ratio: f64,
    pub conr: bool,
    pub update: UpdateRule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    Weak,
    TextLength,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub loc_weight: f64,
    pub score_threshold: f64,
    pub iou_threshold: f64,
    pub beam_width: usize,
    pub lm_weight: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            pretrain: StageConfig::default(),
            train: TrainStageConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            classes: 20,
            corpus_words: 40,
            corpus_lines: 300,
            real_train: 600,
            real_val: 100,
            synth_val: 100,
            real_len: (4, 8),
            synth_len: (3, 8),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        let m = crate::model::RecognizerConfig::offline(1);
        Self {
            c1: m.c1,
            c2: m.c2,
            c3: m.c3,
            head: m.head,
            conr_hidden: m.conr_hidden,
        }
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 8,
            lr: 0.01,
        }
    }
}

impl Default for TrainStageConfig {
    fn default() -> Self {
        Self {
            iterations: 40_000,
            batch_size: 8,
            lr: 0.01,
            real_ratio: 0.5,
            conr: true,
            update: UpdateRule::Weak,
        }
    }
}

impl Default for DecodeConfig {
    fn default() -> Self {
        let nms = NmsParams::default();
        let d = DecodeOptions::default();
        Self {
            loc_weight: nms.loc_weight,
            score_threshold: nms.score_thresh,
            iou_threshold: nms.iou_thresh,
            beam_width: d.beam_width,
            lm_weight: d.lm_weight,
        }
    }
}

/// Named starting points for the real-to-synthetic batch mix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Half real, half synthetic.
    Balanced,
    /// 70% real, 30% synthetic.
    RealHeavy,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "balanced" => Ok(Preset::Balanced),
            "real-heavy" => Ok(Preset::RealHeavy),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected \"balanced\" or \"real-heavy\")"
            ))),
        }
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let mut c = Self::default();
        c.train.real_ratio = match p {
            Preset::Balanced => 0.5,
            Preset::RealHeavy => 0.7,
        };
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let d = &self.data;
        if d.classes == 0 {
            return bad("data.classes must be positive");
        }
        for (name, (lo, hi)) in [("data.real_len", d.real_len), ("data.synth_len", d.synth_len)] {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{name} must be a non-empty range of positive lengths")));
            }
        }
        for (name, s) in [
            ("pretrain", (self.pretrain.batch_size, self.pretrain.lr)),
            ("train", (self.train.batch_size, self.train.lr)),
        ] {
            if s.0 == 0 || !(s.1 > 0.0 && s.1.is_finite()) {
                return Err(Error::Config(format!("{name} needs a positive batch size and learning rate")));
            }
        }
        if !(0.0..=1.0).contains(&self.train.real_ratio) {
            return bad("train.real_ratio must lie in [0, 1]");
        }
        if self.train.real_ratio > 0.0 && d.real_train == 0 {
            return bad("a positive train.real_ratio needs data.real_train > 0");
        }
        if self.decode.beam_width == 0 {
            return bad("decode.beam_width must be positive");
        }
        Ok(())
    }

    pub fn recognizer(&self) -> crate::model::RecognizerConfig {
        let m = &self.model;
        crate::model::RecognizerConfig {
            c1: m.c1,
            c2: m.c2,
            c3: m.c3,
            head: m.head,
            conr_hidden: m.conr_hidden,
            ..crate::model::RecognizerConfig::offline(self.data.classes)
        }
    }

    pub fn nms(&self) -> NmsParams {
        NmsParams {
            loc_weight: self.decode.loc_weight,
            score_thresh: self.decode.score_threshold,
            iou_thresh: self.decode.iou_threshold,
        }
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            nms: self.nms(),
            beam_width: self.decode.beam_width,
            lm_weight: self.decode.lm_weight,
        }
    }

    /// Pretraining: synthetic lines only, no recurrent branch.
    pub fn pretrain_options(&self) -> TrainOptions {
        TrainOptions {
            iterations: self.pretrain.iterations,
            batch_size: self.pretrain.batch_size,
            lr: self.pretrain.lr,
            real_ratio: 0.0,
            conr: false,
            nms: self.nms(),
            seed: self.seed,
            ..TrainOptions::default()
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            iterations: self.train.iterations,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            real_ratio: self.train.real_ratio,
            conr: self.train.conr,
            update: match self.train.update {
                UpdateRule::Weak => PseudoUpdate::Weak,
                UpdateRule::TextLength => PseudoUpdate::TextLength,
            },
            nms: self.nms(),
            seed: self.seed,
            ..TrainOptions::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::preset(Preset::RealHeavy);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::from_toml("seed = 9\n[train]\nconr = false\n").unwrap();
        assert_eq!(c.seed, 9);
        assert!(!c.train.conr);
        assert_eq!(c.train.iterations, 40_000);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ratio() {
        assert!(RunConfig::from_toml("sed = 1").is_err());
        assert!(RunConfig::from_toml("[train]\nreal_ratio = 1.5").is_err());
    }
}
