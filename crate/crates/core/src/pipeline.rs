//! In-memory recognition and evaluation shared by the commands and tests.

use crate::decode::{beam_search_lm, nms_transcribe, to_ctc_frames, NmsParams, Transcription};
use crate::error::Result;
use crate::eval::{ar_cr, edit_counts, mean_ned, ned, seg_quality, Report, ReportRow, SegQuality};
use crate::alphabet::Alphabet;
use crate::lm::NGramModel;
use crate::model::Recognizer;
use crate::sample::TextLineSample;

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOptions {
    pub nms: NmsParams,
    pub beam_width: usize,
    pub lm_weight: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            nms: NmsParams::default(),
            beam_width: 16,
            lm_weight: 0.3,
        }
    }
}

/// Segmentation from NMS; the transcript comes from NMS too unless a language
/// model is supplied, in which case beam search over CTC-style frames decides it.
pub fn recognize(
    model: &Recognizer,
    sample: &TextLineSample,
    opts: &DecodeOptions,
    lm: Option<&NGramModel>,
) -> Result<Transcription> {
    let grid = model.predict(&sample.input)?;
    let mut t = nms_transcribe(&grid, &opts.nms);
    if let Some(lm) = lm {
        t.rec = beam_search_lm(&to_ctc_frames(&grid), Some(lm), opts.beam_width, opts.lm_weight);
    }
    Ok(t)
}

/// Scores transcriptions against the samples they came from. Segmentation
/// metrics are filled in only when every sample carries boxes.
pub fn score(samples: &[TextLineSample], found: &[Transcription], alphabet: &Alphabet) -> Result<Report> {
    let pairs: Vec<(&[usize], &[usize])> = found
        .iter()
        .zip(samples)
        .map(|(t, s)| (t.rec.as_slice(), s.transcript.as_slice()))
        .collect();
    let (ar, cr) = ar_cr(pairs.iter().copied())?;
    let mut seg = SegQuality::default();
    let mut all_boxes = true;
    let mut rows = Vec::with_capacity(samples.len());
    for (t, s) in found.iter().zip(samples) {
        match &s.boxes {
            Some(b) => seg.merge(&seg_quality(&t.seg, b)),
            None => all_boxes = false,
        }
        rows.push(ReportRow {
            id: s.id.clone(),
            gt: alphabet.decode(&s.transcript),
            pred: alphabet.decode(&t.rec),
            errors: edit_counts(&t.rec, &s.transcript),
            ned: ned(&t.rec, &s.transcript),
        });
    }
    Ok(Report {
        ar,
        cr,
        ned: mean_ned(pairs.iter().copied()),
        seg_f1: all_boxes.then(|| seg.f1()),
        mean_iou: all_boxes.then(|| seg.mean_iou()),
        rows,
    })
}

pub fn evaluate(
    model: &Recognizer,
    samples: &[TextLineSample],
    alphabet: &Alphabet,
    opts: &DecodeOptions,
    lm: Option<&NGramModel>,
) -> Result<Report> {
    let found = samples
        .iter()
        .map(|s| recognize(model, s, opts, lm))
        .collect::<Result<Vec<_>>>()?;
    score(samples, &found, alphabet)
}
