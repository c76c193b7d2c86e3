use serde::{Deserialize, Serialize};

/// Axis-aligned box in continuous pixel coordinates; pixel `(row, col)`
/// covers `[col, col+1) x [row, row+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Bounding box of a non-empty point set.
    pub fn bounding(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Self> {
        let mut it = points.into_iter();
        let (x, y) = it.next()?;
        let mut r = Rect::new(x, y, x, y);
        for (x, y) in it {
            r.x_min = r.x_min.min(x);
            r.x_max = r.x_max.max(x);
            r.y_min = r.y_min.min(y);
            r.y_max = r.y_max.max(y);
        }
        Some(r)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn expand(&self, margin: f64) -> Self {
        Rect::new(
            self.x_min - margin,
            self.y_min - margin,
            self.x_max + margin,
            self.y_max + margin,
        )
    }

    pub fn clamp_to(&self, width: f64, height: f64) -> Self {
        Rect::new(
            self.x_min.clamp(0.0, width),
            self.y_min.clamp(0.0, height),
            self.x_max.clamp(0.0, width),
            self.y_max.clamp(0.0, height),
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Euclidean distance from a point to the box; zero inside.
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x_min - x).max(0.0).max(x - self.x_max);
        let dy = (self.y_min - y).max(0.0).max(y - self.y_max);
        dx.hypot(dy)
    }

    /// Intersection-over-union of the horizontal extents only.
    pub fn interval_iou(&self, other: &Rect) -> f64 {
        interval_iou(self.x_min, self.x_max, other.x_min, other.x_max)
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let ix = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let iy = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = ix * iy;
        let union = self.width() * self.height() + other.width() * other.height() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn lerp(&self, other: &Rect, keep: f64) -> Rect {
        let mix = |a: f64, b: f64| keep * a + (1.0 - keep) * b;
        Rect::new(
            mix(self.x_min, other.x_min),
            mix(self.y_min, other.y_min),
            mix(self.x_max, other.x_max),
            mix(self.y_max, other.y_max),
        )
    }
}

pub fn interval_iou(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
    let union = (a1 - a0) + (b1 - b0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One detected or annotated character.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharBox {
    pub rect: Rect,
    pub class_id: usize,
    pub score: f64,
}

impl CharBox {
    pub fn new(rect: Rect, class_id: usize, score: f64) -> Self {
        Self {
            rect,
            class_id,
            score,
        }
    }
}

/// 2-D affine map `p -> A p + t`, used to carry boxes and points through
/// geometric preprocessing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2 {
    pub a: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Affine2 {
    pub fn identity() -> Self {
        Self {
            a: [[1.0, 0.0], [0.0, 1.0]],
            t: [0.0, 0.0],
        }
    }

    /// Rotation by `angle` (radians) about `center`.
    pub fn rotation(angle: f64, center: (f64, f64)) -> Self {
        let (s, c) = angle.sin_cos();
        let a = [[c, -s], [s, c]];
        let t = [
            center.0 - (c * center.0 - s * center.1),
            center.1 - (s * center.0 + c * center.1),
        ];
        Self { a, t }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            a: [[1.0, 0.0], [0.0, 1.0]],
            t: [dx, dy],
        }
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Self {
            a: [[sx, 0.0], [0.0, sy]],
            t: [0.0, 0.0],
        }
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.a[0][0] * p.0 + self.a[0][1] * p.1 + self.t[0],
            self.a[1][0] * p.0 + self.a[1][1] * p.1 + self.t[1],
        )
    }

    /// `other ∘ self`: apply `self` first.
    pub fn then(&self, other: &Affine2) -> Affine2 {
        let m = |r: usize, c: usize| other.a[r][0] * self.a[0][c] + other.a[r][1] * self.a[1][c];
        let a = [[m(0, 0), m(0, 1)], [m(1, 0), m(1, 1)]];
        let tp = other.apply((self.t[0], self.t[1]));
        Affine2 { a, t: [tp.0, tp.1] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_shift_interval_iou_is_one_third() {
        let a = Rect::new(0.0, 0.0, 10.0, 5.0);
        let b = Rect::new(5.0, 0.0, 15.0, 5.0);
        assert!((a.interval_iou(&b) - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn distance_is_zero_inside() {
        let r = Rect::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(r.distance_to(1.0, 1.0), 0.0);
        assert!((r.distance_to(5.0, 6.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn affine_composition_order() {
        let r = Affine2::rotation(0.3, (2.0, 1.0));
        let s = Affine2::scaling(2.0, 3.0).then(&Affine2::translation(1.0, -1.0));
        let p = (0.7, -0.4);
        let direct = s.apply(r.apply(p));
        let composed = r.then(&s).apply(p);
        assert!((direct.0 - composed.0).abs() < 1e-12 && (direct.1 - composed.1).abs() < 1e-12);
        assert_eq!(r.apply((2.0, 1.0)), (2.0, 1.0));
    }
}
