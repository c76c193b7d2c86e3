use proptest::prelude::*;

use textseg::decode::{
    assign_points, beam_search_lm, candidate_score, greedy_decode, nms_transcribe, to_ctc_frames, CtcFrame,
    NmsParams,
};
use textseg::geometry::{CharBox, Rect};
use textseg::lm::NGramModel;
use textseg::model::{encode_box, PredictionGrid, REGION_WIDTH};
use textseg::preprocess::Trajectory;

const H: usize = 32;

fn frame(blank: f64, classes: &[f64]) -> CtcFrame {
    CtcFrame {
        blank,
        classes: classes.to_vec(),
    }
}

fn grid_strategy(n_cls: usize) -> impl Strategy<Value = PredictionGrid> {
    (1usize..12).prop_flat_map(move |w| {
        (
            prop::collection::vec(0.0..=1.0f64, w),
            prop::collection::vec(prop::array::uniform4(-1.5..1.5f64), w),
            prop::collection::vec(prop::collection::vec(0.01..1.0f64, n_cls), w),
        )
            .prop_map(move |(p_loc, p_bbox, raw)| PredictionGrid {
                p_loc,
                p_bbox,
                p_cls: raw
                    .into_iter()
                    .map(|r| {
                        let s: f64 = r.iter().sum();
                        r.iter().map(|v| v / s).collect()
                    })
                    .collect(),
                region_width: REGION_WIDTH,
                height: H,
                frame_width: w * REGION_WIDTH,
            })
    })
}

/// Narrow boxes centred in their regions with one-hot classes.
fn crisp_grid(classes: &[usize], n_cls: usize) -> PredictionGrid {
    let w = classes.len();
    PredictionGrid {
        p_loc: vec![1.0; w],
        p_bbox: (0..w)
            .map(|n| {
                let c = (n as f64 + 0.5) * REGION_WIDTH as f64;
                encode_box(n, &Rect::new(c - 2.0, 4.0, c + 2.0, 28.0), REGION_WIDTH, H)
            })
            .collect(),
        p_cls: classes
            .iter()
            .map(|&c| (0..n_cls).map(|k| if k == c { 1.0 } else { 0.0 }).collect())
            .collect(),
        region_width: REGION_WIDTH,
        height: H,
        frame_width: w * REGION_WIDTH,
    }
}

/// Euclidean distance from a point to a rectangle, zero inside.
fn rect_distance(r: &Rect, x: f64, y: f64) -> f64 {
    let dx = (r.x_min - x).max(0.0).max(x - r.x_max);
    let dy = (r.y_min - y).max(0.0).max(y - r.y_max);
    dx.hypot(dy)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn suppression_leaves_a_consistent_set(grid in grid_strategy(4), iou in 0.1..0.9f64, thresh in 0.0..0.8f64) {
        let p = NmsParams { iou_thresh: iou, score_thresh: thresh, ..NmsParams::default() };
        let t = nms_transcribe(&grid, &p);
        prop_assert_eq!(t.seg.len(), t.rec.len());
        prop_assert_eq!(t.seg.len(), t.regions.len());
        for (i, a) in t.seg.iter().enumerate() {
            prop_assert!(a.score >= thresh && (0.0..=1.0).contains(&a.score));
            prop_assert_eq!(a.class_id, grid.argmax_cls(t.regions[i]).0);
            for b in &t.seg[i + 1..] {
                prop_assert!(a.rect.interval_iou(&b.rect) < iou);
            }
        }
        for w in t.seg.windows(2) {
            prop_assert!(w[0].rect.center().0 <= w[1].rect.center().0);
        }
        // Every dropped candidate above the threshold is covered by a survivor
        // that scores at least as high.
        for n in 0..grid.w_enc() {
            let s = candidate_score(&grid, n, p.loc_weight);
            if s < thresh || t.regions.contains(&n) {
                continue;
            }
            let r = grid.decode_box(n);
            let covered = t.seg.iter().any(|k| k.score >= s && k.rect.interval_iou(&r) >= iou);
            prop_assert!(covered, "region {} dropped without cause", n);
        }
    }

    #[test]
    fn frames_are_distributions(grid in grid_strategy(5)) {
        for f in to_ctc_frames(&grid) {
            prop_assert!(f.blank >= 0.0 && f.classes.iter().all(|&p| p >= 0.0));
            prop_assert!((f.blank + f.classes.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_grids_agree_across_decoders(classes in prop::collection::vec(0usize..3, 1..10)) {
        let mut distinct = classes.clone();
        distinct.dedup();
        let grid = crisp_grid(&classes, 3);
        let t = nms_transcribe(&grid, &NmsParams::default());
        prop_assert_eq!(&t.rec, &classes);
        let frames = to_ctc_frames(&grid);
        prop_assert_eq!(&greedy_decode(&frames), &distinct);
        let lm = NGramModel::train(&[vec![0, 1, 2, 2, 1]], 3, 0.01).unwrap();
        prop_assert_eq!(&beam_search_lm(&frames, Some(&lm), 4, 0.0), &distinct);
        prop_assert_eq!(&beam_search_lm(&frames, None, 1, 0.0), &distinct);
    }

    #[test]
    fn points_go_to_the_nearest_box(
        points in prop::collection::vec((0.0..60.0f64, -5.0..35.0f64), 1..30),
        boxes in prop::collection::vec((0.0..50.0f64, 1.0..10.0f64, 0.0..20.0f64, 1.0..12.0f64), 0..6),
    ) {
        // Coarse coordinates make ties common.
        let points: Vec<[f64; 2]> = points.iter().map(|p| [p.0.round(), p.1.round()]).collect();
        let boxes: Vec<CharBox> = boxes
            .iter()
            .enumerate()
            .map(|(k, b)| CharBox::new(Rect::new(b.0.round(), b.2.round(), (b.0 + b.1).round(), (b.2 + b.3).round()), k, 1.0))
            .collect();
        let t = Trajectory::new(vec![points.clone()]).unwrap();
        let got = assign_points(&t, &boxes);
        for (p, g) in points.iter().zip(&got[0]) {
            let mut best: Option<(usize, f64)> = None;
            for (k, b) in boxes.iter().enumerate() {
                let d = rect_distance(&b.rect, p[0], p[1]);
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
            prop_assert_eq!(*g, best.map(|b| b.0));
        }
    }
}

#[test]
fn language_model_breaks_an_acoustic_tie() {
    let frames = [frame(0.0, &[1.0, 0.0]), frame(1.0, &[0.0, 0.0]), frame(0.0, &[0.5, 0.5])];
    assert_eq!(beam_search_lm(&frames, None, 4, 0.0), vec![0, 0]);
    let corpus = vec![vec![0, 1]; 10];
    let lm = NGramModel::train(&corpus, 2, 0.01).unwrap();
    assert_eq!(beam_search_lm(&frames, Some(&lm), 4, 1.0), vec![0, 1]);
    assert_eq!(beam_search_lm(&frames, Some(&lm), 4, 0.0), vec![0, 0]);
}

#[test]
fn unit_beam_sums_paths_that_greedy_keeps_apart() {
    // Greedy takes the single best symbol ("b", 0.4); the prefix search
    // pools "a blank" and "a a" (0.6) under the prefix "a".
    let frames = [frame(0.0, &[1.0, 0.0]), frame(0.3, &[0.3, 0.4])];
    assert_eq!(greedy_decode(&frames), vec![0, 1]);
    assert_eq!(beam_search_lm(&frames, None, 1, 0.0), vec![0]);
}

#[test]
fn blank_wins_greedy_ties() {
    let frames = [frame(0.5, &[0.5, 0.0]), frame(0.2, &[0.0, 0.8])];
    assert_eq!(greedy_decode(&frames), vec![1]);
}

#[test]
fn empty_grid_decodes_to_nothing() {
    let grid = PredictionGrid {
        p_loc: vec![0.0; 3],
        p_bbox: vec![[0.0; 4]; 3],
        p_cls: vec![vec![0.5, 0.5]; 3],
        region_width: REGION_WIDTH,
        height: H,
        frame_width: 24,
    };
    assert!(nms_transcribe(&grid, &NmsParams::default()).rec.is_empty());
    assert!(greedy_decode(&to_ctc_frames(&grid)).is_empty());
}
