//! The pipeline stages behind the command-line subcommands. Every stage reads
//! the run config and writes plain files, so repeated runs with the same
//! config produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use diffnet::checkpoint::Container;
use log::{info, warn};

use crate::config::RunConfig;
use crate::dataset::{load_samples, read_decoded, write_decoded, write_split, DecodedLine};
use crate::decode::{beam_search_lm, to_ctc_frames};
use crate::error::{io_err, Error, Result};
use crate::eval::Report;
use crate::lm::{format_corpus, NGramModel};
use crate::model::Recognizer;
use crate::pipeline::{recognize, score};
use crate::toy::{Split, Stage, ToyWorld};
use crate::train::{IterationLog, Trainer};
use crate::viz::{line_image, overlay};
use crate::weaksup::PseudoBoxStore;

const ITER_TAG: [u8; 4] = *b"ITER";

/// Files written by [`synth`].
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub manifests: Vec<PathBuf>,
    pub corpus: PathBuf,
    pub lm: PathBuf,
}

/// Writes every stored split, the text corpus and its trigram model.
pub fn synth(cfg: &RunConfig, out_dir: &Path) -> Result<SynthOutput> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let world = ToyWorld::new(cfg)?;
    let alphabet = world.bank.alphabet();
    let mut manifests = Vec::new();
    for split in Split::ALL {
        let lines = world.split(split)?;
        manifests.push(write_split(out_dir, split.name(), &lines, alphabet)?);
        info!("{}: {} lines", split.name(), lines.len());
    }
    let corpus = out_dir.join("corpus.txt");
    fs::write(&corpus, format_corpus(&world.corpus, alphabet)).map_err(io_err(&corpus))?;
    let lm = out_dir.join("lm.bin");
    world.lm.save(&lm)?;
    Ok(SynthOutput { manifests, corpus, lm })
}

/// Outcome of a training stage.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub iterations: usize,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

pub fn save_checkpoint(path: &Path, model: &Recognizer, store: Option<&PseudoBoxStore>, iterations: usize) -> Result<()> {
    let mut c = model.to_container();
    if let Some(s) = store {
        s.put_into(&mut c);
    }
    c.put(ITER_TAG, (iterations as u64).to_le_bytes().to_vec());
    Ok(c.save(path)?)
}

/// Loads a model checkpoint and, when present, its pseudo-box store.
pub fn load_checkpoint(path: &Path) -> Result<(Recognizer, Option<PseudoBoxStore>)> {
    if !path.exists() {
        return Err(Error::Data(format!("{}: checkpoint not found", path.display())));
    }
    let c = Container::load(path)?;
    let model = Recognizer::from_container(&c)?;
    let store = match c.get(*b"PBOX") {
        Some(_) => Some(PseudoBoxStore::from_container(&c)?),
        None => None,
    };
    Ok((model, store))
}

fn write_log(path: &Path, logs: &[IterationLog]) -> Result<()> {
    let mut out = String::new();
    for l in logs {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Runs a trainer to completion. The checkpoint and log are written even when
/// a step fails; a failing step never reaches the optimizer, so the saved
/// parameters are those of the last completed iteration.
fn run_trainer(
    model: &mut Recognizer,
    trainer: &mut Trainer,
    keep_store: bool,
    out: &Path,
    log_path: &Path,
) -> Result<TrainOutput> {
    let mut logs = Vec::new();
    let result = trainer.run(model, |l| {
        if (l.iteration + 1) % 500 == 0 {
            info!("iteration {} loss {:.4} lr {}", l.iteration + 1, l.loss, l.lr);
        }
        logs.push(*l);
    });
    if let Err(e) = &result {
        warn!("training stopped after {} iterations: {e}", trainer.iteration());
    }
    write_log(log_path, &logs)?;
    save_checkpoint(out, model, keep_store.then_some(&trainer.store), trainer.iteration())?;
    result?;
    Ok(TrainOutput {
        iterations: trainer.iteration(),
        first_loss: logs.first().map(|l| l.loss),
        last_loss: logs.last().map(|l| l.loss),
    })
}

/// Supervised training on clean synthetic lines from a fresh initialization.
pub fn pretrain(cfg: &RunConfig, out: &Path, log_path: &Path) -> Result<TrainOutput> {
    let world = ToyWorld::new(cfg)?;
    let mut model = Recognizer::new(cfg.recognizer(), cfg.seed)?;
    let mut trainer = Trainer::new(cfg.pretrain_options(), world.synth_stream(Stage::Pretrain), &[])?;
    run_trainer(&mut model, &mut trainer, false, out, log_path)
}

/// Mixed-batch training from a pretrained checkpoint. Lines of `real` are
/// used through their transcripts only.
pub fn train(cfg: &RunConfig, init: &Path, real: &Path, out: &Path, log_path: &Path) -> Result<TrainOutput> {
    let world = ToyWorld::new(cfg)?;
    let (mut model, _) = load_checkpoint(init)?;
    if model.config() != &cfg.recognizer() {
        return Err(Error::Config(format!(
            "{} was built for a different architecture than the config describes",
            init.display()
        )));
    }
    let opts = cfg.train_options();
    if opts.conr && !model.has_conr() {
        return Err(Error::Config(format!("{} lacks the recurrent branch needed for train.conr", init.display())));
    }
    let real_lines = if opts.real_per_batch() > 0 {
        load_samples(real, world.bank.alphabet(), model.config().height)?
    } else {
        Vec::new()
    };
    let mut trainer = Trainer::new(opts, world.synth_stream(Stage::Train), &real_lines)?;
    run_trainer(&mut model, &mut trainer, true, out, log_path)
}

/// Summary of a decode run.
#[derive(Clone, Debug, Default)]
pub struct DecodeOutput {
    pub lines: usize,
    /// Lines whose transcript changed when the language model was added to
    /// beam search.
    pub lm_changed: Vec<String>,
}

/// Decodes every line of a manifest into JSON lines. With a language model
/// the transcript comes from LM beam search and each line where the model
/// changed the beam's choice is logged.
pub fn decode(cfg: &RunConfig, ckpt: &Path, manifest: &Path, lm: Option<&Path>, out: &Path) -> Result<DecodeOutput> {
    let world = ToyWorld::new(cfg)?;
    let (model, _) = load_checkpoint(ckpt)?;
    let alphabet = world.bank.alphabet();
    let samples = load_samples(manifest, alphabet, model.config().height)?;
    let lm = lm.map(NGramModel::load).transpose()?;
    let opts = cfg.decode_options();
    let mut lines = Vec::with_capacity(samples.len());
    let mut summary = DecodeOutput::default();
    for s in &samples {
        let t = recognize(&model, s, &opts, lm.as_ref())?;
        if lm.is_some() {
            let grid = model.predict(&s.input)?;
            let plain = beam_search_lm(&to_ctc_frames(&grid), None, opts.beam_width, 0.0);
            if plain != t.rec {
                info!(
                    "{}: language model changed {:?} to {:?}",
                    s.id,
                    alphabet.decode(&plain),
                    alphabet.decode(&t.rec)
                );
                summary.lm_changed.push(s.id.clone());
            }
        }
        lines.push(DecodedLine::new(&s.id, &t, alphabet));
    }
    write_decoded(out, &lines)?;
    summary.lines = lines.len();
    Ok(summary)
}

/// Where an evaluation takes its predictions from.
pub enum EvalSource<'a> {
    Checkpoint { path: &'a Path, lm: Option<&'a Path> },
    Decoded(&'a Path),
}

/// Scores a manifest and writes the JSON report.
pub fn eval(cfg: &RunConfig, source: EvalSource<'_>, manifest: &Path, report_out: Option<&Path>) -> Result<Report> {
    let world = ToyWorld::new(cfg)?;
    let alphabet = world.bank.alphabet();
    let height = cfg.recognizer().height;
    let samples = load_samples(manifest, alphabet, height)?;
    let found = match source {
        EvalSource::Checkpoint { path, lm } => {
            let (model, _) = load_checkpoint(path)?;
            let lm = lm.map(NGramModel::load).transpose()?;
            let opts = cfg.decode_options();
            samples
                .iter()
                .map(|s| recognize(&model, s, &opts, lm.as_ref()))
                .collect::<Result<Vec<_>>>()?
        }
        EvalSource::Decoded(path) => {
            let decoded = read_decoded(path)?;
            if decoded.len() != samples.len() {
                return Err(Error::Data(format!(
                    "{} holds {} lines but the manifest has {}",
                    path.display(),
                    decoded.len(),
                    samples.len()
                )));
            }
            decoded
                .iter()
                .zip(&samples)
                .map(|(d, s)| {
                    if d.id != s.id {
                        return Err(Error::Data(format!("decoded line {} does not match manifest line {}", d.id, s.id)));
                    }
                    d.transcription(alphabet)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let report = score(&samples, &found, alphabet)?;
    if let Some(p) = report_out {
        fs::write(p, report.to_json()).map_err(io_err(p))?;
    }
    Ok(report)
}

/// Writes one overlay PNG per manifest line into `out_dir`.
pub fn viz(cfg: &RunConfig, manifest: &Path, decoded: &Path, out_dir: &Path) -> Result<usize> {
    let world = ToyWorld::new(cfg)?;
    let alphabet = world.bank.alphabet();
    let samples = load_samples(manifest, alphabet, cfg.recognizer().height)?;
    let decoded = read_decoded(decoded)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = 0;
    for s in &samples {
        let Some(base) = line_image(&s.input) else { continue };
        let boxes = match decoded.iter().find(|d| d.id == s.id) {
            Some(d) => d.transcription(alphabet)?.seg,
            None => Vec::new(),
        };
        let path = out_dir.join(format!("{}.png", s.id));
        overlay(&base, &boxes, alphabet).save(&path)?;
        written += 1;
    }
    Ok(written)
}
