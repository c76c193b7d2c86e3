//! From a prediction grid to characters: NMS transcription, CTC-style
//! frames with greedy and LM beam-search decoding, and assignment of pen
//! trajectory points to detected characters.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::geometry::{CharBox, Rect};
use crate::lm::NGramModel;
use crate::model::{argmax, PredictionGrid};
use crate::preprocess::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmsParams {
    /// Weight of `p_loc` in the candidate score; the best class probability
    /// gets the rest.
    pub loc_weight: f64,
    pub iou_thresh: f64,
    pub score_thresh: f64,
}

impl Default for NmsParams {
    fn default() -> Self {
        Self {
            loc_weight: 0.8,
            iou_thresh: 0.5,
            score_thresh: 0.5,
        }
    }
}

/// Characters found in a line, left to right.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcription {
    pub seg: Vec<CharBox>,
    pub rec: Vec<usize>,
    /// Region each character came from.
    pub regions: Vec<usize>,
}

pub fn candidate_score(grid: &PredictionGrid, n: usize, loc_weight: f64) -> f64 {
    let best = grid.p_cls[n].iter().copied().fold(0.0, f64::max);
    loc_weight * grid.p_loc[n] + (1.0 - loc_weight) * best
}

/// Greedy NMS over per-region candidates on horizontal-interval IoU.
/// Candidates are visited by decreasing score, ties by lower region index;
/// a candidate survives when its IoU with every survivor is below the threshold.
pub fn nms_transcribe(grid: &PredictionGrid, p: &NmsParams) -> Transcription {
    let mut cands: Vec<(usize, f64, Rect)> = (0..grid.w_enc())
        .map(|n| (n, candidate_score(grid, n, p.loc_weight), grid.decode_box(n)))
        .filter(|c| c.1 >= p.score_thresh)
        .collect();
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(usize, f64, Rect)> = Vec::new();
    for c in cands {
        if kept.iter().all(|k| k.2.interval_iou(&c.2) < p.iou_thresh) {
            kept.push(c);
        }
    }
    kept.sort_by(|a, b| a.2.center().0.total_cmp(&b.2.center().0).then(a.0.cmp(&b.0)));
    let mut out = Transcription::default();
    for (n, score, rect) in kept {
        let (cls, _) = grid.argmax_cls(n);
        out.seg.push(CharBox::new(rect, cls, score.clamp(0.0, 1.0)));
        out.rec.push(cls);
        out.regions.push(n);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtcFrame {
    pub blank: f64,
    pub classes: Vec<f64>,
}

/// Blank mass `1 - p_loc`; the remaining mass is split by `p_cls`.
pub fn to_ctc_frames(grid: &PredictionGrid) -> Vec<CtcFrame> {
    (0..grid.w_enc())
        .map(|n| {
            let l = grid.p_loc[n];
            CtcFrame {
                blank: 1.0 - l,
                classes: grid.p_cls[n].iter().map(|p| l * p).collect(),
            }
        })
        .collect()
}

/// Best symbol per frame (blank wins ties), then repeats merged and blanks removed.
pub fn greedy_decode(frames: &[CtcFrame]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for f in frames {
        let (c, p) = argmax(&f.classes);
        let sym = if p > f.blank { Some(c) } else { None };
        if let Some(c) = sym {
            if prev != Some(c) {
                out.push(c);
            }
        }
        prev = sym;
    }
    out
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Clone, Copy, Debug)]
struct Beam {
    blank: f64,
    non_blank: f64,
    lm: f64,
}

impl Beam {
    const EMPTY: Beam = Beam {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
        lm: 0.0,
    };

    fn acoustic(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }

    fn score(&self) -> f64 {
        self.acoustic() + self.lm
    }
}

fn ranked(beams: BTreeMap<Vec<usize>, Beam>) -> Vec<(Vec<usize>, Beam)> {
    let mut v: Vec<(Vec<usize>, Beam)> = beams
        .into_iter()
        .filter(|(_, b)| b.acoustic() > f64::NEG_INFINITY)
        .collect();
    // Stable sort on score keeps the map's lexicographic order among ties.
    v.sort_by(|a, b| b.1.score().partial_cmp(&a.1.score()).unwrap_or(Ordering::Equal));
    v
}

/// CTC prefix beam search in the log domain. Each label extension adds
/// `lm_weight * log P(label | previous two labels)` when a model is given.
/// Beams are ranked by acoustic plus LM score; ties go to the
/// lexicographically smaller prefix.
pub fn beam_search_lm(
    frames: &[CtcFrame],
    lm: Option<&NGramModel>,
    beam_width: usize,
    lm_weight: f64,
) -> Vec<usize> {
    let beam_width = beam_width.max(1);
    let mut beams = vec![(
        Vec::new(),
        Beam {
            blank: 0.0,
            ..Beam::EMPTY
        },
    )];
    for f in frames {
        let lb = f.blank.ln();
        let mut next: BTreeMap<Vec<usize>, Beam> = BTreeMap::new();
        for (prefix, b) in &beams {
            let total = b.acoustic();
            let e = next.entry(prefix.clone()).or_insert(Beam { lm: b.lm, ..Beam::EMPTY });
            e.blank = log_add(e.blank, total + lb);
            for (c, &p) in f.classes.iter().enumerate() {
                let lp = p.ln();
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                if prefix.last() == Some(&c) {
                    let e = next.get_mut(prefix).expect("inserted above");
                    e.non_blank = log_add(e.non_blank, b.non_blank + lp);
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let lm_score = b.lm + lm.map_or(0.0, |m| lm_weight * m.logp(c, prefix));
                    let e = next.entry(ext).or_insert(Beam { lm: lm_score, ..Beam::EMPTY });
                    e.non_blank = log_add(e.non_blank, b.blank + lp);
                } else {
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let lm_score = b.lm + lm.map_or(0.0, |m| lm_weight * m.logp(c, prefix));
                    let e = next.entry(ext).or_insert(Beam { lm: lm_score, ..Beam::EMPTY });
                    e.non_blank = log_add(e.non_blank, total + lp);
                }
            }
        }
        beams = ranked(next);
        beams.truncate(beam_width);
    }
    beams.into_iter().next().map(|(p, _)| p).unwrap_or_default()
}

/// Character index for every point, stroke by stroke: the box at the smallest
/// boundary distance (zero inside), ties to the leftmost box. `None` when
/// there are no boxes.
pub fn assign_points(t: &Trajectory, boxes: &[CharBox]) -> Vec<Vec<Option<usize>>> {
    t.strokes
        .iter()
        .map(|s| {
            s.iter()
                .map(|p| {
                    boxes
                        .iter()
                        .enumerate()
                        .map(|(k, b)| (k, b.rect.distance_to(p[0], p[1])))
                        .fold(None, |best: Option<(usize, f64)>, (k, d)| match best {
                            Some((_, bd)) if bd <= d => best,
                            _ => Some((k, d)),
                        })
                        .map(|(k, _)| k)
                })
                .collect()
        })
        .collect()
}
