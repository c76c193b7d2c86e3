//! The toy world used by the commands and the ablation runs: a glyph bank, a
//! text corpus with its trigram model, and seeded generators for every split.

use rand::Rng;

use crate::config::RunConfig;
use crate::error::Result;
use crate::lm::{NGramModel, DEFAULT_ADD_K};
use crate::sample::TextLineSample;
use crate::synth::{
    sample_rng, sample_text, synth_real_line, toy_corpus, GlyphBank, OfflineConfig, RealConfig, TextSource,
};
use crate::train::SynthStream;

/// Stored splits. Each has its own generator stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    /// Distorted lines whose boxes are never used for training.
    RealTrain,
    RealVal,
    /// Clean synthetic lines, for checking the pretraining domain.
    SynthVal,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::RealTrain, Split::RealVal, Split::SynthVal];

    pub fn name(self) -> &'static str {
        match self {
            Split::RealTrain => "real_train",
            Split::RealVal => "real_val",
            Split::SynthVal => "synth_val",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::RealTrain => 0x7261_6c74,
            Split::RealVal => 0x7261_6c76,
            Split::SynthVal => 0x7379_6e76,
        }
    }
}

/// Which training stage a synthetic stream feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Train,
}

pub struct ToyWorld {
    pub bank: GlyphBank,
    pub corpus: Vec<Vec<usize>>,
    pub lm: NGramModel,
    pub real: RealConfig,
    pub render: OfflineConfig,
    cfg: RunConfig,
}

impl ToyWorld {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let d = &cfg.data;
        let bank = GlyphBank::builtin_subset(d.classes)?;
        let corpus = toy_corpus(d.classes, d.corpus_words, d.corpus_lines, d.seed);
        let lm = NGramModel::train(&corpus, d.classes, DEFAULT_ADD_K)?;
        Ok(Self {
            bank,
            corpus,
            lm,
            real: RealConfig::default(),
            render: OfflineConfig::default(),
            cfg: cfg.clone(),
        })
    }

    pub fn split_len(&self, split: Split) -> usize {
        match split {
            Split::RealTrain => self.cfg.data.real_train,
            Split::RealVal => self.cfg.data.real_val,
            Split::SynthVal => self.cfg.data.synth_val,
        }
    }

    /// Line `index` of a split. Real transcripts follow the corpus model.
    pub fn line(&self, split: Split, index: usize) -> Result<TextLineSample> {
        let d = &self.cfg.data;
        let mut rng = sample_rng(d.seed ^ split.stream(), index as u64);
        let mut s = match split {
            Split::RealTrain | Split::RealVal => {
                let text = sample_text(TextSource::Lm(&self.lm), d.real_len, &mut rng)?;
                synth_real_line(&self.bank, &text, rng.gen(), &self.real)?
            }
            Split::SynthVal => {
                let text = sample_text(TextSource::Uniform(self.bank.len()), d.synth_len, &mut rng)?;
                crate::synth::synth_offline_line(&self.bank, &text, rng.gen(), &self.render)?
            }
        };
        s.id = format!("{}-{:05}", split.name(), index);
        Ok(s)
    }

    pub fn split(&self, split: Split) -> Result<Vec<TextLineSample>> {
        (0..self.split_len(split)).map(|i| self.line(split, i)).collect()
    }

    /// On-the-fly annotated lines for one stage of a run.
    pub fn synth_stream(&self, stage: Stage) -> SynthStream {
        let salt = match stage {
            Stage::Pretrain => 0x7072_6574,
            Stage::Train => 0x7472_6e00,
        };
        SynthStream {
            bank: self.bank.clone(),
            render: self.render,
            len_range: self.cfg.data.synth_len,
            seed: self.cfg.seed ^ salt,
        }
    }
}
