//! Learning from transcripts: edit-distance matching, persistent pseudo
//! boxes, region assignment and the partially supervised losses.

use std::collections::BTreeMap;

use diffnet::checkpoint::{Container, Reader};
use diffnet::{Graph, NodeId};

use crate::error::{invalid, Error, Result};
use crate::geometry::{CharBox, Rect};
use crate::model::{encode_box, ForwardNodes, PredictionGrid};

/// Probability floor inside every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

const STORE_TAG: [u8; 4] = *b"PBOX";

/// One step of an optimal alignment. Indices are into the prediction (`i`)
/// and the ground truth (`j`). A deletion is a ground-truth character with no
/// counterpart in the prediction; an insertion is a surplus predicted one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditOp {
    Match(usize, usize),
    Substitute(usize, usize),
    Delete(usize),
    Insert(usize),
}

/// Levenshtein DP with unit costs. The backtrace walks from the end and, among
/// optimal moves, prefers match, then substitution, deletion and insertion.
/// Returns the distance and the operations in left-to-right order.
pub fn align(pred: &[usize], gt: &[usize]) -> (usize, Vec<EditOp>) {
    let (m, n) = (pred.len(), gt.len());
    let mut dp = vec![vec![0usize; n + 1]; m + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=n {
        dp[0][j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let diag = dp[i - 1][j - 1] + usize::from(pred[i - 1] != gt[j - 1]);
            dp[i][j] = diag.min(dp[i][j - 1] + 1).min(dp[i - 1][j] + 1);
        }
    }
    let mut ops = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let d = dp[i][j];
        if i > 0 && j > 0 && pred[i - 1] == gt[j - 1] && d == dp[i - 1][j - 1] {
            ops.push(EditOp::Match(i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d == dp[i - 1][j - 1] + 1 {
            ops.push(EditOp::Substitute(i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if j > 0 && d == dp[i][j - 1] + 1 {
            ops.push(EditOp::Delete(j - 1));
            j -= 1;
        } else {
            ops.push(EditOp::Insert(i - 1));
            i -= 1;
        }
    }
    ops.reverse();
    (dp[m][n], ops)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    /// `(prediction index, ground-truth index)` pairs aligned as equal.
    pub pairs: Vec<(usize, usize)>,
    pub edit_distance: usize,
}

pub fn match_sequences(rec: &[usize], gt: &[usize]) -> MatchResult {
    let (edit_distance, ops) = align(rec, gt);
    let pairs = ops
        .into_iter()
        .filter_map(|op| match op {
            EditOp::Match(i, j) => Some((i, j)),
            _ => None,
        })
        .collect();
    MatchResult {
        pairs,
        edit_distance,
    }
}

/// Weight of the stored box when blending in a new prediction:
/// `e^{10b} / (e^{10b} + e^{10r})`, evaluated stably.
pub fn lambda(stored_score: f64, new_score: f64) -> f64 {
    1.0 / (1.0 + (10.0 * (new_score - stored_score)).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoBox {
    pub rect: Rect,
    pub score: f64,
}

/// Per-sample pseudo boxes, one slot per transcript character.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoBoxStore {
    entries: BTreeMap<String, Vec<Option<PseudoBox>>>,
}

fn check_score(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return invalid(format!("box score {} outside [0, 1]", s));
    }
    Ok(())
}

impl PseudoBoxStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[Option<PseudoBox>]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    /// Slots for `id`, created empty on first use.
    pub fn entry(&mut self, id: &str, len: usize) -> Result<&mut Vec<Option<PseudoBox>>> {
        let e = self.entries.entry(id.to_string()).or_insert_with(|| vec![None; len]);
        if e.len() != len {
            return invalid(format!(
                "sample {} has {} pseudo-box slots but a transcript of {}",
                id,
                e.len(),
                len
            ));
        }
        Ok(e)
    }

    /// Number of filled slots across all samples.
    pub fn filled(&self) -> usize {
        self.entries.values().flatten().filter(|e| e.is_some()).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, slots) in &self.entries {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&(slots.len() as u32).to_le_bytes());
            for s in slots {
                match s {
                    None => out.push(0),
                    Some(b) => {
                        out.push(1);
                        for v in [b.rect.x_min, b.rect.y_min, b.rect.x_max, b.rect.y_max, b.score] {
                            out.extend_from_slice(&v.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let mut entries = BTreeMap::new();
        for _ in 0..r.u32()? {
            let n = r.u32()? as usize;
            let id = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Data("pseudo-box sample id is not UTF-8".into()))?;
            let slots = r.u32()? as usize;
            let mut v = Vec::with_capacity(slots);
            for _ in 0..slots {
                match r.take(1)?[0] {
                    0 => v.push(None),
                    1 => {
                        let rect = Rect::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                        let score = r.f64()?;
                        check_score(score)?;
                        v.push(Some(PseudoBox { rect, score }));
                    }
                    t => return Err(Error::Data(format!("bad pseudo-box slot tag {}", t))),
                }
            }
            entries.insert(id, v);
        }
        if !r.is_done() {
            return Err(Error::Data("trailing bytes after pseudo-box store".into()));
        }
        Ok(Self { entries })
    }

    pub fn put_into(&self, c: &mut Container) {
        c.put(STORE_TAG, self.to_bytes());
    }

    /// Reads the store section; a container without one yields an empty store.
    pub fn from_container(c: &Container) -> Result<Self> {
        match c.get(STORE_TAG) {
            Some(b) => Self::from_bytes(b),
            None => Ok(Self::new()),
        }
    }
}

/// Blends every matched prediction into its ground-truth slot.
pub fn update_pseudo_boxes(
    store: &mut PseudoBoxStore,
    id: &str,
    gt_len: usize,
    matched: &MatchResult,
    seg: &[CharBox],
) -> Result<()> {
    for &(i, j) in &matched.pairs {
        let Some(pred) = seg.get(i) else {
            return invalid(format!("match refers to prediction {} of {}", i, seg.len()));
        };
        if j >= gt_len {
            return invalid(format!("match refers to character {} of {}", j, gt_len));
        }
        check_score(pred.score)?;
    }
    let slots = store.entry(id, gt_len)?;
    for &(i, j) in &matched.pairs {
        let r = &seg[i];
        slots[j] = Some(match slots[j] {
            None => PseudoBox {
                rect: r.rect,
                score: r.score,
            },
            Some(b) => {
                let l = lambda(b.score, r.score);
                PseudoBox {
                    rect: b.rect.lerp(&r.rect, l),
                    score: l * b.score + (1.0 - l) * r.score,
                }
            }
        });
    }
    Ok(())
}

/// Baseline update: replace the whole entry with the predictions, but only
/// when the recognized and annotated lengths agree.
pub fn text_length_update(
    store: &mut PseudoBoxStore,
    id: &str,
    seg: &[CharBox],
    rec: &[usize],
    gt: &[usize],
) -> Result<bool> {
    if rec.len() != gt.len() {
        return Ok(false);
    }
    if seg.len() != rec.len() {
        return invalid("segmentation and recognition lengths differ");
    }
    for b in seg {
        check_score(b.score)?;
    }
    let slots = store.entry(id, gt.len())?;
    for (slot, b) in slots.iter_mut().zip(seg) {
        *slot = Some(PseudoBox {
            rect: b.rect,
            score: b.score,
        });
    }
    Ok(true)
}

/// Partition of the regions of one line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegionAssignment {
    /// `(ground-truth index, region)`, increasing in the ground-truth index.
    pub m_ptr: Vec<(usize, usize)>,
    pub t_loc: Vec<usize>,
    pub n_loc: Vec<usize>,
    pub ignored: Vec<usize>,
}

fn region_of(x: f64, w_enc: usize, region_width: usize) -> usize {
    ((x / region_width as f64).floor().max(0.0) as usize).min(w_enc - 1)
}

/// Maps pseudo-box centres to regions. A region claimed twice keeps the
/// leftmost character. Regions strictly between two consecutive filled slots
/// are negatives; everything else that is not positive is ignored.
pub fn assign_regions(slots: &[Option<PseudoBox>], w_enc: usize, region_width: usize) -> RegionAssignment {
    let mut owner: Vec<Option<usize>> = vec![None; w_enc];
    let mut m_ptr = Vec::new();
    let regions: Vec<Option<usize>> = slots
        .iter()
        .map(|s| s.map(|b| region_of(b.rect.center().0, w_enc, region_width)))
        .collect();
    for (j, r) in regions.iter().enumerate() {
        if let Some(n) = *r {
            match owner[n] {
                None => {
                    owner[n] = Some(j);
                    m_ptr.push((j, n));
                }
                Some(first) => {
                    log::debug!("characters {} and {} share region {}; keeping {}", first, j, n, first);
                }
            }
        }
    }
    let mut negative = vec![false; w_enc];
    for j in 0..regions.len().saturating_sub(1) {
        if let (Some(a), Some(b)) = (regions[j], regions[j + 1]) {
            let (lo, hi) = (a.min(b), a.max(b));
            for n in lo + 1..hi {
                negative[n] = owner[n].is_none();
            }
        }
    }
    let t_loc: Vec<usize> = (0..w_enc).filter(|&n| owner[n].is_some()).collect();
    let n_loc = (0..w_enc).filter(|&n| negative[n]).collect();
    let ignored = (0..w_enc).filter(|&n| owner[n].is_none() && !negative[n]).collect();
    RegionAssignment {
        m_ptr,
        t_loc,
        n_loc,
        ignored,
    }
}

/// Full supervision from annotated boxes: every box is a score-1 slot and all
/// regions without a character centre are negatives.
pub fn supervise_full(
    boxes: &[CharBox],
    transcript_len: usize,
    w_enc: usize,
    region_width: usize,
) -> Result<(RegionAssignment, Vec<Option<PseudoBox>>)> {
    if boxes.len() != transcript_len {
        return invalid(format!(
            "{} boxes for a transcript of {} characters",
            boxes.len(),
            transcript_len
        ));
    }
    let slots: Vec<Option<PseudoBox>> = boxes
        .iter()
        .map(|b| {
            Some(PseudoBox {
                rect: b.rect,
                score: 1.0,
            })
        })
        .collect();
    let mut a = assign_regions(&slots, w_enc, region_width);
    a.n_loc = (0..w_enc).filter(|n| !a.t_loc.contains(n)).collect();
    a.ignored.clear();
    Ok((a, slots))
}

/// Targets of one sample's loss, independent of how predictions are stored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossPlan {
    /// `(region, class, encoded target box)` per matched character.
    pub pairs: Vec<(usize, usize, [f64; 4])>,
    pub t_loc: Vec<usize>,
    pub n_loc: Vec<usize>,
}

impl LossPlan {
    pub fn new(
        a: &RegionAssignment,
        slots: &[Option<PseudoBox>],
        gt: &[usize],
        region_width: usize,
        height: usize,
    ) -> Result<Self> {
        if slots.len() != gt.len() {
            return invalid("pseudo-box slots and transcript differ in length");
        }
        let mut pairs = Vec::with_capacity(a.m_ptr.len());
        for &(j, n) in &a.m_ptr {
            let b = slots[j].ok_or_else(|| Error::InvalidInput(format!("slot {} is empty", j)))?;
            pairs.push((n, gt[j], encode_box(n, &b.rect, region_width, height)));
        }
        Ok(Self {
            pairs,
            t_loc: a.t_loc.clone(),
            n_loc: a.n_loc.clone(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty() && self.n_loc.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Losses {
    pub bbox: f64,
    pub cls: f64,
    pub loc: f64,
    pub conr: Option<f64>,
    pub total: f64,
}

fn nll(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

/// Loss values from an already computed grid.
pub fn compute_losses(grid: &PredictionGrid, conr: Option<&[Vec<f64>]>, plan: &LossPlan) -> Losses {
    let m = plan.pairs.len() as f64;
    let mut l = Losses::default();
    if !plan.pairs.is_empty() {
        l.bbox = plan
            .pairs
            .iter()
            .map(|(n, _, t)| (0..4).map(|k| (grid.p_bbox[*n][k] - t[k]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / m;
        l.cls = plan.pairs.iter().map(|&(n, c, _)| nll(grid.p_cls[n][c])).sum::<f64>() / m;
        l.conr = conr.map(|rows| plan.pairs.iter().map(|&(n, c, _)| nll(rows[n][c])).sum::<f64>() / m);
    } else if conr.is_some() {
        l.conr = Some(0.0);
    }
    if !plan.t_loc.is_empty() {
        l.loc += 0.5 * plan.t_loc.iter().map(|&n| nll(grid.p_loc[n])).sum::<f64>() / plan.t_loc.len() as f64;
    }
    if !plan.n_loc.is_empty() {
        l.loc += 0.5 * plan.n_loc.iter().map(|&n| nll(1.0 - grid.p_loc[n])).sum::<f64>() / plan.n_loc.len() as f64;
    }
    l.total = l.bbox + l.cls + l.loc + l.conr.unwrap_or(0.0);
    l
}

fn mean_nll(g: &mut Graph<'_>, x: NodeId, idx: &[usize], complement: bool, weight: f64) -> Result<NodeId> {
    let p = g.gather(x, idx)?;
    let p = if complement { g.affine(p, -1.0, 1.0) } else { p };
    let lp = g.ln_floor(p, PROB_FLOOR);
    let s = g.sum(lp);
    Ok(g.affine(s, -weight / idx.len() as f64, 0.0))
}

/// Builds the scalar training loss on the graph. `use_conr` adds the recurrent
/// branch term when the forward pass produced it. Returns `None` when the plan
/// supervises nothing.
pub fn graph_loss(g: &mut Graph<'_>, nodes: &ForwardNodes, plan: &LossPlan, use_conr: bool) -> Result<Option<NodeId>> {
    let t = nodes.w_enc;
    let mut terms = Vec::new();
    if !plan.pairs.is_empty() {
        let m = plan.pairs.len() as f64;
        let idx: Vec<usize> = plan.pairs.iter().flat_map(|(n, _, _)| (0..4).map(move |k| k * t + n)).collect();
        let target: Vec<f64> = plan.pairs.iter().flat_map(|(_, _, b)| b.iter().copied()).collect();
        let b = g.gather(nodes.bbox, &idx)?;
        let d = g.sub_const(b, &target)?;
        let sq = g.square(d);
        let s = g.sum(sq);
        terms.push(g.affine(s, 1.0 / m, 0.0));
        let cls_idx: Vec<usize> = plan.pairs.iter().map(|&(n, c, _)| c * t + n).collect();
        terms.push(mean_nll(g, nodes.cls, &cls_idx, false, 1.0)?);
        if use_conr {
            if let Some(conr) = nodes.conr {
                terms.push(mean_nll(g, conr, &cls_idx, false, 1.0)?);
            }
        }
    }
    if !plan.t_loc.is_empty() {
        terms.push(mean_nll(g, nodes.loc, &plan.t_loc, false, 0.5)?);
    }
    if !plan.n_loc.is_empty() {
        terms.push(mean_nll(g, nodes.loc, &plan.n_loc, true, 0.5)?);
    }
    let mut it = terms.into_iter();
    let Some(mut total) = it.next() else {
        return Ok(None);
    };
    for term in it {
        total = g.add(total, term)?;
    }
    Ok(Some(total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitten_sitting() {
        let ids = |s: &str| s.bytes().map(usize::from).collect::<Vec<_>>();
        let m = match_sequences(&ids("kitten"), &ids("sitting"));
        assert_eq!(m.edit_distance, 3);
        assert_eq!(m.pairs, vec![(1, 1), (2, 2), (3, 3), (5, 5)]);
    }

    #[test]
    fn high_stored_score_dominates() {
        let l = lambda(0.9, 0.1);
        let exact = 9f64.exp() / (9f64.exp() + 1f64.exp());
        assert!((l - exact).abs() < 1e-15);
        assert!((l - 0.999_664_649_869_533_9).abs() < 1e-12);
    }

    #[test]
    fn adjacent_boxes_leave_gap_negative() {
        let b = |x: f64| {
            Some(PseudoBox {
                rect: Rect::new(x - 2.0, 0.0, x + 2.0, 32.0),
                score: 0.5,
            })
        };
        let a = assign_regions(&[b(20.0), b(44.0)], 8, 8);
        assert_eq!(a.m_ptr, vec![(0, 2), (1, 5)]);
        assert_eq!(a.n_loc, vec![3, 4]);
        assert_eq!(a.ignored, vec![0, 1, 6, 7]);
    }

    #[test]
    fn collision_keeps_leftmost() {
        let b = |x: f64| {
            Some(PseudoBox {
                rect: Rect::new(x - 1.0, 0.0, x + 1.0, 32.0),
                score: 0.5,
            })
        };
        let a = assign_regions(&[b(17.0), b(22.0)], 4, 8);
        assert_eq!(a.m_ptr, vec![(0, 2)]);
        assert_eq!(a.t_loc, vec![2]);
    }
}
