//! Transcript and segmentation metrics.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::geometry::CharBox;
use crate::weaksup::{align, EditOp};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EditCounts {
    pub deletions: usize,
    pub substitutions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.deletions + self.substitutions + self.insertions
    }
}

/// Error counts of the alignment shared with pseudo-box matching.
pub fn edit_counts(pred: &[usize], gt: &[usize]) -> EditCounts {
    let (_, ops) = align(pred, gt);
    let mut c = EditCounts::default();
    for op in ops {
        match op {
            EditOp::Match(..) => {}
            EditOp::Substitute(..) => c.substitutions += 1,
            EditOp::Delete(_) => c.deletions += 1,
            EditOp::Insert(_) => c.insertions += 1,
        }
    }
    c
}

/// Accurate rate and correct rate over `(prediction, ground truth)` pairs:
/// `AR = (N - D - S - I) / N`, `CR = (N - D - S) / N`.
pub fn ar_cr<'a>(pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>) -> Result<(f64, f64)> {
    let mut n = 0usize;
    let mut total = EditCounts::default();
    for (pred, gt) in pairs {
        n += gt.len();
        let c = edit_counts(pred, gt);
        total.deletions += c.deletions;
        total.substitutions += c.substitutions;
        total.insertions += c.insertions;
    }
    if n == 0 {
        return invalid("no ground-truth characters to score against");
    }
    let nf = n as f64;
    let ds = (total.deletions + total.substitutions) as f64;
    Ok(((nf - ds - total.insertions as f64) / nf, (nf - ds) / nf))
}

/// `1 - distance / max(|pred|, |gt|)` for one line.
pub fn ned(pred: &[usize], gt: &[usize]) -> f64 {
    let longest = pred.len().max(gt.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - align(pred, gt).0 as f64 / longest as f64
}

pub fn mean_ned<'a>(pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>) -> f64 {
    let (mut s, mut k) = (0.0, 0usize);
    for (p, g) in pairs {
        s += ned(p, g);
        k += 1;
    }
    if k == 0 {
        0.0
    } else {
        s / k as f64
    }
}

/// IoU at or above which a matched box counts as a detection.
pub const DETECTION_IOU: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SegQuality {
    pub matches: usize,
    pub true_positives: usize,
    pub predicted: usize,
    pub annotated: usize,
    /// Summed IoU over matches, kept so sets can be pooled.
    pub iou_sum: f64,
}

impl SegQuality {
    pub fn mean_iou(&self) -> f64 {
        if self.matches == 0 {
            0.0
        } else {
            self.iou_sum / self.matches as f64
        }
    }

    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            0.0
        } else {
            self.true_positives as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.annotated == 0 {
            0.0
        } else {
            self.true_positives as f64 / self.annotated as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn merge(&mut self, o: &SegQuality) {
        self.matches += o.matches;
        self.true_positives += o.true_positives;
        self.predicted += o.predicted;
        self.annotated += o.annotated;
        self.iou_sum += o.iou_sum;
    }
}

/// Walks the annotated boxes left to right; each takes the still unmatched
/// prediction with the highest positive 2-D IoU (leftmost on ties).
pub fn seg_quality(pred: &[CharBox], gt: &[CharBox]) -> SegQuality {
    let mut used = vec![false; pred.len()];
    let mut q = SegQuality {
        predicted: pred.len(),
        annotated: gt.len(),
        ..SegQuality::default()
    };
    for g in gt {
        let mut best: Option<(usize, f64)> = None;
        for (k, p) in pred.iter().enumerate() {
            if used[k] {
                continue;
            }
            let iou = p.rect.iou(&g.rect);
            if iou > 0.0 && best.is_none_or(|(_, b)| iou > b) {
                best = Some((k, iou));
            }
        }
        if let Some((k, iou)) = best {
            used[k] = true;
            q.matches += 1;
            q.iou_sum += iou;
            if iou >= DETECTION_IOU {
                q.true_positives += 1;
            }
        }
    }
    q
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub id: String,
    pub gt: String,
    pub pred: String,
    pub errors: EditCounts,
    pub ned: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    #[serde(rename = "AR")]
    pub ar: f64,
    #[serde(rename = "CR")]
    pub cr: f64,
    #[serde(rename = "NED")]
    pub ned: f64,
    pub seg_f1: Option<f64>,
    pub mean_iou: Option<f64>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.4}", x));
        let mut s = String::new();
        s.push_str(&format!("{:<10}{:>10}\n", "metric", "value"));
        s.push_str(&format!("{:<10}{:>10.4}\n", "AR", self.ar));
        s.push_str(&format!("{:<10}{:>10.4}\n", "CR", self.cr));
        s.push_str(&format!("{:<10}{:>10.4}\n", "NED", self.ned));
        s.push_str(&format!("{:<10}{:>10}\n", "seg_f1", opt(self.seg_f1)));
        s.push_str(&format!("{:<10}{:>10}\n", "mean_iou", opt(self.mean_iou)));
        s.push_str(&format!("{:<10}{:>10}\n", "lines", self.rows.len()));
        s
    }
}
