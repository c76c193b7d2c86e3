use proptest::prelude::*;

use textseg::geometry::Affine2;
use textseg::preprocess::{
    deskew, normalize_height, resample_equidistant, tilt_estimate, trim_vertical, Raster, Trajectory, INK_THRESHOLD,
};
use textseg::synth::{synth_offline_line, GlyphBank, OfflineConfig};

fn offline_line(seed: u64, len: usize) -> Raster {
    let bank = GlyphBank::builtin();
    let text: Vec<usize> = (0..len).map(|k| (seed as usize * 7 + k * 3) % bank.len()).collect();
    let s = synth_offline_line(&bank, &text, seed, &OfflineConfig::default()).unwrap();
    match s.input {
        textseg::sample::LineInput::Raster(r) => r,
        _ => unreachable!(),
    }
}

/// Same raster with blank rows added above and below.
fn pad_vertically(r: &Raster, top: usize, bottom: usize) -> Raster {
    let mut out = Raster::blank(r.height() + top + bottom, r.width());
    for row in 0..r.height() {
        for col in 0..r.width() {
            out.set(row + top, col, r.get(row, col));
        }
    }
    out
}

fn centroid(t: &Trajectory) -> (f64, f64) {
    let n = t.point_count() as f64;
    let (sx, sy) = t.points().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    (sx / n, sy / n)
}

fn rotate(t: &Trajectory, a: f64) -> Trajectory {
    t.transformed(&Affine2::rotation(a, centroid(t)))
}

fn stroke_strategy() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-50.0..50.0f64, -20.0..20.0f64), 2..15).prop_map(|v| v.into_iter().map(|(x, y)| [x, y]).collect())
}

fn trajectory_strategy() -> impl Strategy<Value = Trajectory> {
    prop::collection::vec(stroke_strategy(), 1..4).prop_map(|s| Trajectory::new(s).unwrap())
}

/// Points at arc positions 0, step, 2*step, ... located by cumulative-length
/// search, followed by the stroke's last point.
fn arc_walk_oracle(stroke: &[[f64; 2]], step: f64) -> Vec<[f64; 2]> {
    let mut cum = vec![0.0];
    for w in stroke.windows(2) {
        cum.push(cum.last().unwrap() + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
    }
    let total = *cum.last().unwrap();
    if total == 0.0 {
        return stroke.to_vec();
    }
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let s = k as f64 * step;
        if k > 0 && s >= total - 1e-9 * step {
            break;
        }
        let seg = cum.partition_point(|&c| c < s).max(1) - 1;
        let len = cum[seg + 1] - cum[seg];
        let t = if len == 0.0 { 0.0 } else { (s - cum[seg]) / len };
        let (a, b) = (stroke[seg], stroke[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        k += 1;
    }
    out.push(*stroke.last().unwrap());
    out
}

#[test]
fn tilted_line_recovers_its_angle() {
    let pts: Vec<[f64; 2]> = (0..200).map(|k| [k as f64 * 0.5, 3.0]).collect();
    let t = Trajectory::new(vec![pts]).unwrap();
    let est = tilt_estimate(&rotate(&t, 0.1));
    assert!((est.angle - 0.1).abs() < 0.01, "{}", est.angle);

    let mut r = Raster::blank(80, 240);
    for c in 10..230 {
        r.set(40, c, 0.0);
    }
    let est = tilt_estimate(&deskew(&r, -0.1));
    assert!((est.angle - 0.1).abs() < 0.01, "{}", est.angle);
}

#[test]
fn deskewed_synthetic_lines_are_level() {
    for seed in 0..4 {
        let r = pad_vertically(&offline_line(seed, 24), 60, 60);
        for a in [-0.2, -0.07, 0.12, 0.25] {
            let tilted = deskew(&r, -a);
            let est = tilt_estimate(&tilted);
            let after = tilt_estimate(&deskew(&tilted, est.angle)).angle;
            assert!(after.abs() < 5e-3, "seed {seed} angle {a}: residual {after}");
        }
    }
}

#[test]
fn trimming_a_padded_line_leaves_the_ink_height() {
    for seed in 0..10 {
        let r = pad_vertically(&offline_line(seed, 6), 3 + seed as usize, 11);
        let trimmed = trim_vertical(&r, INK_THRESHOLD).unwrap();
        let ink_rows: Vec<usize> = (0..r.height())
            .filter(|&row| (0..r.width()).any(|c| r.get(row, c) < INK_THRESHOLD))
            .collect();
        let expected = ink_rows.last().unwrap() - ink_rows.first().unwrap() + 1;
        assert_eq!(trimmed.height(), expected);
        assert_eq!(trimmed.width(), r.width());
        assert_eq!(trimmed.get(0, 0), r.get(*ink_rows.first().unwrap(), 0));
    }
    assert!(trim_vertical(&Raster::blank(5, 5), INK_THRESHOLD).is_err());
}

proptest! {
    #[test]
    fn deskew_inverts_rotation_on_trajectories(t in trajectory_strategy(), a in -0.78..0.78f64) {
        let back = deskew(&rotate(&t, a), a);
        for (p, q) in t.points().zip(back.points()) {
            prop_assert!((p.0 - q.0).abs() < 1e-9 && (p.1 - q.1).abs() < 1e-9, "{p:?} vs {q:?}");
        }
    }

    #[test]
    fn raster_height_normalization_keeps_aspect(h in 1usize..120, w in 1usize..300, target in 1usize..80) {
        let r = Raster::blank(h, w);
        let out = normalize_height(&r, target);
        prop_assert_eq!(out.height(), target);
        prop_assert!(out.width() >= 1);
        let skew = (out.width() * h) as i64 - (w * target) as i64;
        prop_assert!(skew.unsigned_abs() as usize <= h, "{}x{} -> {}x{}", h, w, target, out.width());
    }

    #[test]
    fn trajectory_height_normalization_scales_both_axes(t in trajectory_strategy(), target in 8usize..64) {
        let out = normalize_height(&t, target);
        let span = |t: &Trajectory, axis: usize| {
            let v: Vec<f64> = t.points().map(|p| if axis == 0 { p.0 } else { p.1 }).collect();
            v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
        };
        let (h0, h1) = (span(&t, 1), span(&out, 1));
        prop_assume!(h0 > 1e-6);
        prop_assert!((h1 - target as f64).abs() < 1e-6 * target as f64);
        let ratio0 = span(&t, 0) / h0;
        let ratio1 = span(&out, 0) / h1;
        prop_assert!((ratio0 - ratio1).abs() <= 1e-9 * ratio0.max(1.0));
    }

    #[test]
    fn resampling_matches_an_arc_length_walk(t in trajectory_strategy(), step in 0.3..4.0f64) {
        let out = resample_equidistant(&t, step).unwrap();
        for (s, o) in t.strokes.iter().zip(&out.strokes) {
            let want = arc_walk_oracle(s, step);
            prop_assert_eq!(o.len(), want.len());
            for (p, q) in o.iter().zip(&want) {
                prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
            prop_assert_eq!(o.first(), s.first());
            prop_assert_eq!(o.last(), s.last());
            let before = Trajectory::arc_length(s);
            let after = Trajectory::arc_length(o);
            // Each interior vertex can cut at most one step of arc.
            let corners = s.len().saturating_sub(2) as f64;
            prop_assert!(after <= before + 1e-9 && before - after <= step * (corners + 1.0), "arc {} -> {}", before, after);
        }
    }

    #[test]
    fn straight_strokes_resample_at_exact_spacing(
        x0 in -10.0..10.0f64,
        dir in 0.0..std::f64::consts::TAU,
        len in 0.5..60.0f64,
        step in 0.5..3.0f64,
    ) {
        let end = [x0 + len * dir.cos(), len * dir.sin()];
        let mid = [x0 + 0.37 * len * dir.cos(), 0.37 * len * dir.sin()];
        let t = Trajectory::new(vec![vec![[x0, 0.0], mid, end]]).unwrap();
        let o = &resample_equidistant(&t, step).unwrap().strokes[0];
        let gaps: Vec<f64> = o.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).collect();
        for g in &gaps[..gaps.len() - 1] {
            prop_assert!(*g >= step * (1.0 - 1e-6) && *g <= step * (1.0 + 1e-12), "gap {} step {}", g, step);
        }
        prop_assert!(gaps[gaps.len() - 1] <= step * (1.0 + 1e-12));
    }
}

proptest! {
    #[test]
    fn smooth_strokes_keep_their_arc_length(
        radius in 5.0..40.0f64,
        sweep in 0.5..5.0f64,
        wobble in 0.0..0.3f64,
        step in 0.5..2.0f64,
    ) {
        let stroke: Vec<[f64; 2]> = (0..=400)
            .map(|k| {
                let a = sweep * k as f64 / 400.0;
                let r = radius * (1.0 + wobble * (3.0 * a).sin());
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        let t = Trajectory::new(vec![stroke.clone()]).unwrap();
        let o = resample_equidistant(&t, step).unwrap();
        let loss = Trajectory::arc_length(&stroke) - Trajectory::arc_length(&o.strokes[0]);
        prop_assert!(loss >= -1e-9 && loss <= step, "lost {} with step {}", loss, step);
    }
}

#[test]
fn single_point_stroke_is_unchanged() {
    let t = Trajectory::new(vec![vec![[1.5, 2.5]]]).unwrap();
    assert_eq!(resample_equidistant(&t, 1.0).unwrap(), t);
}
