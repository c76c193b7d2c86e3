use std::collections::BTreeMap;

use proptest::prelude::*;

use textseg::pathsig::{
    point_pixel, render_signature_map, signature_segment, trajectory_to_map, Signature, SignatureMap, DEFAULT_WINDOW,
    SIG_CHANNELS,
};
use textseg::preprocess::Trajectory;

/// Iterated integrals accumulated segment by segment with the midpoint rule,
/// exact for straight pieces.
fn quadrature(points: &[[f64; 2]]) -> [f64; 7] {
    let o = points[0];
    let mut s = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    for w in points.windows(2) {
        let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
        let m = [(w[0][0] + w[1][0]) / 2.0 - o[0], (w[0][1] + w[1][1]) / 2.0 - o[1]];
        for i in 0..2 {
            for j in 0..2 {
                s[3 + 2 * i + j] += m[i] * d[j];
            }
        }
    }
    let last = points[points.len() - 1];
    s[1] = last[0] - o[0];
    s[2] = last[1] - o[1];
    s
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn polyline() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..25).prop_map(|steps| {
        let mut p = [0.0, 0.0];
        let mut out = vec![p];
        for (dx, dy) in steps {
            p = [p[0] + dx, p[1] + dy];
            out.push(p);
        }
        out
    })
}

/// A resampled pen path inside a band of the given height.
fn pen_path(height: usize) -> impl Strategy<Value = Trajectory> {
    let h = height as f64;
    prop::collection::vec(
        (0.0..40.0f64, 0.5..h - 0.5, prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..40)),
        1..4,
    )
    .prop_map(move |strokes| {
        let strokes = strokes
            .into_iter()
            .map(|(x, y, steps)| {
                let mut p = [x, y];
                let mut s = vec![p];
                for (dx, dy) in steps {
                    p = [(p[0] + dx).max(0.0), (p[1] + dy).clamp(0.0, h - 1e-6)];
                    s.push(p);
                }
                s
            })
            .collect();
        Trajectory::new(strokes).unwrap()
    })
}

proptest! {
    #[test]
    fn signature_matches_quadrature(path in polyline()) {
        let s = signature_segment(&path).unwrap();
        prop_assert!(close(&s.0, &quadrature(&path), 1e-9), "{:?} vs {:?}", s.0, quadrature(&path));
    }

    #[test]
    fn chen_identity_on_random_splits(path in polyline(), cut in 0.0..1.0f64) {
        prop_assume!(path.len() >= 3);
        let k = 1 + ((path.len() - 2) as f64 * cut) as usize;
        let a = signature_segment(&path[..=k]).unwrap();
        let b = signature_segment(&path[k..]).unwrap();
        let whole = signature_segment(&path).unwrap();
        let (a1, b1) = (a.level1(), b.level1());
        for i in 0..2 {
            prop_assert!((whole.level1()[i] - a1[i] - b1[i]).abs() < 1e-9);
            for j in 0..2 {
                let want = a.level2(i, j) + b.level2(i, j) + a1[i] * b1[j];
                prop_assert!((whole.level2(i, j) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn straight_segment_is_density_invariant(dx in -5.0..5.0f64, dy in -5.0..5.0f64, n in 1usize..60) {
        let pts: Vec<[f64; 2]> = (0..=n).map(|k| {
            let t = (k as f64 / n as f64).powi(2);
            [1.0 + t * dx, -2.0 + t * dy]
        }).collect();
        let s = signature_segment(&pts).unwrap();
        prop_assert!(close(&s.0, &Signature::linear(dx, dy).0, 1e-9));
        let sym = (s.level2(0, 1) + s.level2(1, 0)) - dx * dy;
        prop_assert!(sym.abs() < 1e-9);
    }

    #[test]
    fn rendered_map_matches_windowed_recomputation(t in pen_path(16)) {
        let map = render_signature_map(&t, DEFAULT_WINDOW, 16).unwrap();
        prop_assert_eq!(map.channels(), SIG_CHANNELS);
        // Last writer per pixel, scanning strokes and points in order.
        let mut expect: BTreeMap<(usize, usize), [f64; 7]> = BTreeMap::new();
        for s in &t.strokes {
            for k in 0..s.len() {
                let lo = k.saturating_sub(DEFAULT_WINDOW / 2);
                let hi = (k + DEFAULT_WINDOW / 2 + 1).min(s.len());
                expect.insert(point_pixel(s[k], map.height(), map.width()), quadrature(&s[lo..hi]));
            }
        }
        for r in 0..map.height() {
            for c in 0..map.width() {
                let got: Vec<f64> = (0..SIG_CHANNELS).map(|ch| map.get(ch, r, c)).collect();
                prop_assert!(got.iter().all(|v| v.is_finite()));
                match expect.get(&(r, c)) {
                    Some(want) => prop_assert!(close(&got, want, 1e-9), "pixel ({}, {})", r, c),
                    None => prop_assert!(got.iter().all(|&v| v == 0.0), "off-path pixel ({}, {})", r, c),
                }
                prop_assert_eq!(map.get(0, r, c) == 1.0, expect.contains_key(&(r, c)));
            }
        }
    }

    #[test]
    fn map_bytes_round_trip(t in pen_path(8)) {
        let map = render_signature_map(&t, 5, 8).unwrap();
        prop_assert_eq!(SignatureMap::from_bytes(&map.to_bytes()).unwrap(), map);
    }
}

#[test]
fn linear_closed_form() {
    let s = signature_segment(&[[0.0, 0.0], [3.0, -2.0]]).unwrap();
    assert_eq!(s.0, [1.0, 3.0, -2.0, 4.5, -3.0, -3.0, 2.0]);
}

#[test]
fn strokes_do_not_share_windows() {
    let a: Vec<[f64; 2]> = (0..6).map(|k| [k as f64 + 0.5, 2.5]).collect();
    let b: Vec<[f64; 2]> = (0..6).map(|k| [k as f64 + 10.5, 6.5]).collect();
    let joint = render_signature_map(&Trajectory::new(vec![a.clone(), b.clone()]).unwrap(), 9, 10).unwrap();
    let alone = render_signature_map(&Trajectory::new(vec![a]).unwrap(), 9, 10).unwrap();
    for c in 0..6 {
        for ch in 0..SIG_CHANNELS {
            assert_eq!(joint.get(ch, 2, c), alone.get(ch, 2, c));
        }
    }
    // The second stroke starts fresh: its first window only looks forward.
    assert_eq!(joint.get(1, 6, 10), 4.0);
}

#[test]
fn online_preprocessing_produces_model_height_maps() {
    let t = Trajectory::new(vec![
        vec![[0.0, 0.0], [30.0, 60.0], [60.0, 0.0]],
        vec![[70.0, 10.0], [90.0, 50.0]],
    ])
    .unwrap();
    let map = trajectory_to_map(&t, 32).unwrap();
    assert_eq!(map.height(), 32);
    assert!(map.width() >= 45);
    assert!(render_signature_map(&Trajectory { strokes: vec![] }, 9, 32).is_err());
}
