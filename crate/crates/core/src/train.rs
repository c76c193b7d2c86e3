//! Mini-batch SGD over mixed batches of annotated synthetic lines and
//! transcript-only "real" lines.

use diffnet::{clip_grad_norm, sgd_step, Graph};
use rand::Rng;
use serde::Serialize;

use crate::decode::{nms_transcribe, NmsParams};
use crate::error::{Error, Result};
use crate::model::{Mode, Recognizer, REGION_WIDTH};
use crate::sample::TextLineSample;
use crate::synth::{sample_rng, sample_text, synth_offline_line, GlyphBank, OfflineConfig, TextSource};
use crate::weaksup::{
    assign_regions, graph_loss, match_sequences, supervise_full, text_length_update, update_pseudo_boxes,
    LossPlan, PseudoBoxStore,
};

/// How pseudo boxes of real lines are refreshed from predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PseudoUpdate {
    /// Edit-distance matching with score-weighted blending.
    Weak,
    /// Whole-line replacement when predicted and annotated lengths agree.
    TextLength,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fractions of `iterations` after which the rate is multiplied by `decay`.
    pub decay_at: Vec<f64>,
    pub decay: f64,
    pub clip_norm: f64,
    /// Share of each batch drawn from the real pool.
    pub real_ratio: f64,
    pub conr: bool,
    pub update: PseudoUpdate,
    pub nms: NmsParams,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 8,
            lr: 0.01,
            decay_at: vec![0.25, 0.5, 0.75],
            decay: 0.1,
            clip_norm: 10.0,
            real_ratio: 0.0,
            conr: false,
            update: PseudoUpdate::Weak,
            nms: NmsParams::default(),
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let frac = iteration as f64 / self.iterations.max(1) as f64;
        let steps = self.decay_at.iter().filter(|&&p| frac >= p).count();
        self.lr * self.decay.powi(steps as i32)
    }

    pub fn real_per_batch(&self) -> usize {
        ((self.real_ratio * self.batch_size as f64).round() as usize).min(self.batch_size)
    }
}

/// On-the-fly clean synthetic lines with uniformly random text.
#[derive(Clone, Debug)]
pub struct SynthStream {
    pub bank: GlyphBank,
    pub render: OfflineConfig,
    pub len_range: (usize, usize),
    pub seed: u64,
}

impl SynthStream {
    pub fn sample(&self, index: u64) -> Result<TextLineSample> {
        let mut rng = sample_rng(self.seed, index);
        let text = sample_text(TextSource::Uniform(self.bank.len()), self.len_range, &mut rng)?;
        let mut s = synth_offline_line(&self.bank, &text, rng.gen(), &self.render)?;
        s.id = format!("synth-{}", index);
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    pub synth_loss: f64,
    pub real_loss: f64,
    pub grad_norm: f64,
}

pub struct Trainer {
    pub opts: TrainOptions,
    pub store: PseudoBoxStore,
    real: Vec<TextLineSample>,
    synth: SynthStream,
    synth_cursor: u64,
    iteration: usize,
}

impl Trainer {
    /// Character boxes of the real pool are dropped here: those lines only
    /// ever contribute their transcripts.
    pub fn new(opts: TrainOptions, synth: SynthStream, real: &[TextLineSample]) -> Result<Self> {
        if opts.real_per_batch() > 0 && real.is_empty() {
            return Err(Error::Config("a positive real ratio needs real training lines".into()));
        }
        let real = real
            .iter()
            .map(|s| TextLineSample {
                boxes: None,
                ..s.clone()
            })
            .collect();
        Ok(Self {
            opts,
            store: PseudoBoxStore::new(),
            real,
            synth,
            synth_cursor: 0,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Runs the remaining iterations, calling `after` with each log entry.
    pub fn run(&mut self, model: &mut Recognizer, after: impl FnMut(&IterationLog)) -> Result<()> {
        self.run_until(model, self.opts.iterations, after)
    }

    /// Runs up to iteration `stop` (capped at the configured total), leaving
    /// the learning-rate schedule untouched.
    pub fn run_until(
        &mut self,
        model: &mut Recognizer,
        stop: usize,
        mut after: impl FnMut(&IterationLog),
    ) -> Result<()> {
        while self.iteration < stop.min(self.opts.iterations) {
            let log = self.step(model)?;
            after(&log);
        }
        Ok(())
    }

    pub fn step(&mut self, model: &mut Recognizer) -> Result<IterationLog> {
        let it = self.iteration;
        let lr = self.opts.lr_at(it);
        let n_real = self.opts.real_per_batch();
        let scale = 1.0 / self.opts.batch_size as f64;
        let mut pick = sample_rng(self.opts.seed ^ 0x5e_ed0f_ba7c, it as u64);
        let mut log = IterationLog {
            iteration: it,
            lr,
            ..Default::default()
        };
        model.params_mut().zero_grads();
        for k in 0..self.opts.batch_size {
            let loss = if k < n_real {
                let idx = pick.gen_range(0..self.real.len());
                let sample = self.real[idx].clone();
                let l = self.real_sample(model, &sample, scale)?;
                log.real_loss += l / n_real as f64;
                l
            } else {
                let sample = self.synth.sample(self.synth_cursor)?;
                self.synth_cursor += 1;
                let l = self.synth_sample(model, &sample, scale)?;
                log.synth_loss += l / (self.opts.batch_size - n_real) as f64;
                l
            };
            log.loss += loss * scale;
        }
        log.grad_norm = clip_grad_norm(model.params_mut(), self.opts.clip_norm);
        sgd_step(model.params_mut(), lr).map_err(|e| Error::Numeric(e.to_string()))?;
        self.iteration += 1;
        Ok(log)
    }

    fn synth_sample(&mut self, model: &mut Recognizer, s: &TextLineSample, scale: f64) -> Result<f64> {
        let boxes = s
            .boxes
            .as_ref()
            .ok_or_else(|| Error::Data(format!("synthetic line {} lacks boxes", s.id)))?;
        let (x, _) = model.input_tensor(&s.input)?;
        let grads;
        let value;
        {
            let mut g = Graph::new(model.params());
            let nodes = model.forward(&mut g, &x, Mode::Infer)?;
            let (a, slots) = supervise_full(boxes, s.transcript.len(), nodes.w_enc, REGION_WIDTH)?;
            let plan = LossPlan::new(&a, &slots, &s.transcript, REGION_WIDTH, model.config().height)?;
            let Some(loss) = graph_loss(&mut g, &nodes, &plan, false)? else {
                return Ok(0.0);
            };
            value = g.value(loss)[0];
            check_finite(value, &s.id)?;
            let scaled = g.affine(loss, scale, 0.0);
            grads = g.backward(scaled)?;
        }
        model.params_mut().accumulate(&grads);
        Ok(value)
    }

    fn real_sample(&mut self, model: &mut Recognizer, s: &TextLineSample, scale: f64) -> Result<f64> {
        let (x, w) = model.input_tensor(&s.input)?;
        let mode = if self.opts.conr { Mode::Train } else { Mode::Infer };
        let grads;
        let value;
        {
            let mut g = Graph::new(model.params());
            let nodes = model.forward(&mut g, &x, mode)?;
            let grid = model.grid_from(&g, &nodes, w);
            let found = nms_transcribe(&grid, &self.opts.nms);
            let gt = &s.transcript;
            match self.opts.update {
                PseudoUpdate::Weak => {
                    let m = match_sequences(&found.rec, gt);
                    update_pseudo_boxes(&mut self.store, &s.id, gt.len(), &m, &found.seg)?;
                }
                PseudoUpdate::TextLength => {
                    text_length_update(&mut self.store, &s.id, &found.seg, &found.rec, gt)?;
                }
            }
            let slots = self.store.entry(&s.id, gt.len())?.clone();
            let a = assign_regions(&slots, nodes.w_enc, REGION_WIDTH);
            let plan = LossPlan::new(&a, &slots, gt, REGION_WIDTH, model.config().height)?;
            let Some(loss) = graph_loss(&mut g, &nodes, &plan, self.opts.conr)? else {
                return Ok(0.0);
            };
            value = g.value(loss)[0];
            check_finite(value, &s.id)?;
            let scaled = g.affine(loss, scale, 0.0);
            grads = g.backward(scaled)?;
        }
        model.params_mut().accumulate(&grads);
        Ok(value)
    }
}

fn check_finite(v: f64, id: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite loss on line {}", id)))
    }
}
