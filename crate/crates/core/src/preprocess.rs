//! Line normalization for offline rasters and online pen trajectories:
//! tilt regression, deskew, vertical trimming, height normalization and
//! equal-distance resampling.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Result};
use crate::geometry::Affine2;

/// Intensity below which a pixel counts as ink.
pub const INK_THRESHOLD: f64 = 0.5;

/// Grayscale image, row-major, `1.0` = white paper, `0.0` = black ink.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid(format!("raster must be non-empty, got {}x{}", height, width));
        }
        if pixels.len() != height * width {
            return invalid(format!(
                "raster {}x{} needs {} pixels, got {}",
                height,
                width,
                height * width,
                pixels.len()
            ));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return invalid("raster intensities must lie in [0, 1]");
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn blank(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0);
        Self {
            height,
            width,
            pixels: vec![1.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.pixels[row * self.width + col] = v.clamp(0.0, 1.0);
    }

    /// Darkens a pixel towards ink: keeps the minimum intensity.
    pub fn darken(&mut self, row: usize, col: usize, v: f64) {
        let p = &mut self.pixels[row * self.width + col];
        *p = p.min(v.clamp(0.0, 1.0));
    }

    /// Bilinear sample at a continuous position (pixel centers at `+0.5`);
    /// outside the frame reads as white.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let at = |r: f64, c: f64| -> f64 {
            if r < 0.0 || c < 0.0 || r >= self.height as f64 || c >= self.width as f64 {
                1.0
            } else {
                self.get(r as usize, c as usize)
            }
        };
        let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1.0) * tx;
        let bottom = at(y0 + 1.0, x0) * (1.0 - tx) + at(y0 + 1.0, x0 + 1.0) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Ink pixel centers.
    pub fn ink_points(&self, threshold: f64) -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) < threshold {
                    pts.push((c as f64 + 0.5, r as f64 + 0.5));
                }
            }
        }
        pts
    }

    /// First and last row containing ink.
    pub fn ink_row_span(&self, threshold: f64) -> Option<(usize, usize)> {
        let has_ink = |r: usize| (0..self.width).any(|c| self.get(r, c) < threshold);
        let first = (0..self.height).find(|&r| has_ink(r))?;
        let last = (0..self.height).rev().find(|&r| has_ink(r))?;
        Some((first, last))
    }

    pub fn crop_rows(&self, first: usize, last: usize) -> Raster {
        assert!(first <= last && last < self.height);
        Raster {
            height: last - first + 1,
            width: self.width,
            pixels: self.pixels[first * self.width..(last + 1) * self.width].to_vec(),
        }
    }

    /// Pads on the right with white up to `width`.
    pub fn pad_right(&self, width: usize) -> Raster {
        if width <= self.width {
            return self.clone();
        }
        let mut out = Raster::blank(self.height, width);
        for r in 0..self.height {
            for c in 0..self.width {
                out.pixels[r * width + c] = self.get(r, c);
            }
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Raster> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        let pixels = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        Raster::new(h as usize, w as usize, pixels)
    }

    pub fn to_gray_image(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([(self.get(y as usize, x as usize) * 255.0).round() as u8])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray_image().save(path)?;
        Ok(())
    }
}

/// Pen trajectory: strokes of `(x, y)` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub strokes: Vec<Vec<[f64; 2]>>,
}

impl Trajectory {
    pub fn new(strokes: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        if strokes.iter().any(Vec::is_empty) {
            return invalid("every stroke needs at least one point");
        }
        if strokes.iter().flatten().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return invalid("trajectory coordinates must be finite");
        }
        Ok(Self { strokes })
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.strokes.iter().flatten().map(|p| (p[0], p[1]))
    }

    pub fn point_count(&self) -> usize {
        self.strokes.iter().map(Vec::len).sum()
    }

    pub fn transformed(&self, m: &Affine2) -> Trajectory {
        Trajectory {
            strokes: self
                .strokes
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|p| {
                            let q = m.apply((p[0], p[1]));
                            [q.0, q.1]
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn arc_length(stroke: &[[f64; 2]]) -> f64 {
        stroke
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Trajectory = serde_json::from_str(s)?;
        Trajectory::new(t.strokes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(io_err(path))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TiltEstimate {
    pub angle: f64,
    /// Set when the regression was impossible (no ink, or all ink in one column).
    pub degenerate: bool,
}

/// Inputs that carry ink coordinates and can be rotated and rescaled.
pub trait LineInk: Sized {
    fn ink_coords(&self) -> Vec<(f64, f64)>;

    /// Rotates by `-angle` about the ink centroid. Returns the point map used.
    fn deskew_with_transform(&self, angle: f64) -> (Self, Affine2);

    /// Rescales to `target_h`, preserving aspect ratio. Returns the point map used.
    fn normalize_height_with_transform(&self, target_h: usize) -> (Self, Affine2);
}

fn centroid(pts: &[(f64, f64)]) -> (f64, f64) {
    if pts.is_empty() {
        return (0.0, 0.0);
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    (sx / n, sy / n)
}

/// Arctangent of the least-squares slope of `y` on `x` over the ink.
pub fn tilt_estimate<T: LineInk>(input: &T) -> TiltEstimate {
    let pts = input.ink_coords();
    let (mx, my) = centroid(&pts);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let scale = pts.iter().map(|p| p.0.abs()).fold(1.0, f64::max);
    if pts.len() < 2 || sxx <= 1e-12 * scale * scale * pts.len() as f64 {
        log::warn!("tilt regression is degenerate ({} ink points); using 0", pts.len());
        return TiltEstimate {
            angle: 0.0,
            degenerate: true,
        };
    }
    TiltEstimate {
        angle: (sxy / sxx).atan(),
        degenerate: false,
    }
}

pub fn deskew<T: LineInk>(input: &T, angle: f64) -> T {
    input.deskew_with_transform(angle).0
}

pub fn normalize_height<T: LineInk>(input: &T, target_h: usize) -> T {
    input.normalize_height_with_transform(target_h).0
}

impl LineInk for Raster {
    fn ink_coords(&self) -> Vec<(f64, f64)> {
        self.ink_points(INK_THRESHOLD)
    }

    fn deskew_with_transform(&self, angle: f64) -> (Self, Affine2) {
        let center = centroid(&self.ink_coords());
        let forward = Affine2::rotation(-angle, center);
        let back = Affine2::rotation(angle, center);
        let mut out = Raster::blank(self.height, self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                let (sx, sy) = back.apply((c as f64 + 0.5, r as f64 + 0.5));
                out.pixels[r * self.width + c] = self.sample(sx, sy).clamp(0.0, 1.0);
            }
        }
        (out, forward)
    }

    fn normalize_height_with_transform(&self, target_h: usize) -> (Self, Affine2) {
        assert!(target_h > 0);
        let scale = target_h as f64 / self.height as f64;
        let new_w = ((self.width as f64 * scale).round() as usize).max(1);
        let sx = new_w as f64 / self.width as f64;
        let rows: Vec<Vec<f64>> = (0..self.height)
            .map(|r| resample_1d(&self.pixels[r * self.width..(r + 1) * self.width], new_w))
            .collect();
        let mut out = Raster::blank(target_h, new_w);
        let mut col = vec![0.0; self.height];
        for c in 0..new_w {
            for (r, row) in rows.iter().enumerate() {
                col[r] = row[c];
            }
            for (r, v) in resample_1d(&col, target_h).into_iter().enumerate() {
                out.pixels[r * new_w + c] = v.clamp(0.0, 1.0);
            }
        }
        (out, Affine2::scaling(sx, scale))
    }
}

/// Resamples a piecewise-constant signal: box averaging when shrinking,
/// linear interpolation between sample centers when growing.
fn resample_1d(src: &[f64], n: usize) -> Vec<f64> {
    let m = src.len();
    if n == m {
        return src.to_vec();
    }
    let ratio = m as f64 / n as f64;
    if n < m {
        (0..n)
            .map(|i| {
                let a = i as f64 * ratio;
                let b = a + ratio;
                let mut acc = 0.0;
                let mut k = a.floor() as usize;
                while (k as f64) < b && k < m {
                    let lo = a.max(k as f64);
                    let hi = b.min(k as f64 + 1.0);
                    acc += src[k] * (hi - lo).max(0.0);
                    k += 1;
                }
                acc / ratio
            })
            .collect()
    } else {
        (0..n)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (m - 1) as f64);
                let k = pos.floor() as usize;
                let t = pos - k as f64;
                if k + 1 < m {
                    src[k] * (1.0 - t) + src[k + 1] * t
                } else {
                    src[k]
                }
            })
            .collect()
    }
}

impl LineInk for Trajectory {
    fn ink_coords(&self) -> Vec<(f64, f64)> {
        self.points().collect()
    }

    fn deskew_with_transform(&self, angle: f64) -> (Self, Affine2) {
        let center = centroid(&self.ink_coords());
        let m = Affine2::rotation(-angle, center);
        (self.transformed(&m), m)
    }

    /// Translates the bounding box to the origin and scales both axes so the
    /// vertical extent becomes `target_h`. Flat trajectories are only translated.
    fn normalize_height_with_transform(&self, target_h: usize) -> (Self, Affine2) {
        let (x0, y0, y1) = self.points().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c), (x, y)| (a.min(x), b.min(y), c.max(y)),
        );
        let h = y1 - y0;
        let s = if h > 0.0 { target_h as f64 / h } else { 1.0 };
        let m = Affine2::translation(-x0, -y0).then(&Affine2::scaling(s, s));
        (self.transformed(&m), m)
    }
}

/// Removes blank rows above the first and below the last ink row.
pub fn trim_vertical(input: &Raster, ink_threshold: f64) -> Result<Raster> {
    trim_vertical_with_offset(input, ink_threshold).map(|(r, _)| r)
}

/// As [`trim_vertical`], also returning the number of rows removed on top.
pub fn trim_vertical_with_offset(input: &Raster, ink_threshold: f64) -> Result<(Raster, usize)> {
    match input.ink_row_span(ink_threshold) {
        Some((first, last)) => Ok((input.crop_rows(first, last), first)),
        None => invalid("raster has no ink below the threshold"),
    }
}

/// Resamples each stroke along its arc length at spacing `step`, keeping both
/// endpoints. The final segment of a stroke may be shorter than `step`.
pub fn resample_equidistant(t: &Trajectory, step: f64) -> Result<Trajectory> {
    if !(step > 0.0) {
        return invalid(format!("resampling step must be positive, got {}", step));
    }
    let strokes = t
        .strokes
        .iter()
        .map(|s| resample_stroke(s, step))
        .collect();
    Ok(Trajectory { strokes })
}

fn resample_stroke(stroke: &[[f64; 2]], step: f64) -> Vec<[f64; 2]> {
    let total = Trajectory::arc_length(stroke);
    if stroke.len() < 2 || total == 0.0 {
        return stroke.to_vec();
    }
    let mut out = vec![stroke[0]];
    let mut next = step;
    let mut walked = 0.0;
    for w in stroke.windows(2) {
        let seg = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        if seg == 0.0 {
            continue;
        }
        while next <= walked + seg && next < total - 1e-9 * step {
            let t = (next - walked) / seg;
            out.push([
                w[0][0] + t * (w[1][0] - w[0][0]),
                w[0][1] + t * (w[1][1] - w[0][1]),
            ]);
            next += step;
        }
        walked += seg;
    }
    out.push(*stroke.last().unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_raster(h: usize, w: usize, row: usize) -> Raster {
        let mut r = Raster::blank(h, w);
        for c in 2..w - 2 {
            r.set(row, c, 0.0);
        }
        r
    }

    #[test]
    fn horizontal_line_has_zero_tilt() {
        let est = tilt_estimate(&line_raster(20, 60, 10));
        assert!(!est.degenerate);
        assert!(est.angle.abs() < 1e-9);
    }

    #[test]
    fn diagonal_points_have_quarter_pi_tilt() {
        let t = Trajectory::new(vec![(0..10).map(|i| [i as f64, i as f64]).collect()]).unwrap();
        assert!((tilt_estimate(&t).angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_flagged() {
        let blank = Raster::blank(5, 5);
        assert!(tilt_estimate(&blank).degenerate);
        let vertical = Trajectory::new(vec![(0..5).map(|i| [3.0, i as f64]).collect()]).unwrap();
        let est = tilt_estimate(&vertical);
        assert!(est.degenerate && est.angle == 0.0);
    }

    #[test]
    fn deskew_by_zero_is_identity() {
        let mut r = line_raster(12, 30, 4);
        r.set(7, 9, 0.3);
        let out = deskew(&r, 0.0);
        for (a, b) in out.pixels().iter().zip(r.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn trim_removes_exactly_blank_rows() {
        let mut r = Raster::blank(25, 8);
        for row in 10..15 {
            r.set(row, 3, 0.0);
        }
        let (out, off) = trim_vertical_with_offset(&r, INK_THRESHOLD).unwrap();
        assert_eq!(off, 10);
        assert_eq!(out.height(), 5);
        let full = line_raster(1, 8, 0);
        assert_eq!(trim_vertical(&full, INK_THRESHOLD).unwrap(), full);
        assert!(trim_vertical(&Raster::blank(4, 4), INK_THRESHOLD).is_err());
    }

    #[test]
    fn normalize_height_exact_halving() {
        let r = Raster::blank(64, 200);
        let out = normalize_height(&r, 32);
        assert_eq!((out.height(), out.width()), (32, 100));
        let same = normalize_height(&out, 32);
        assert_eq!(same, out);
    }

    #[test]
    fn straight_stroke_resamples_to_eleven_points() {
        let t = Trajectory::new(vec![vec![[0.0, 0.0], [10.0, 0.0]]]).unwrap();
        let out = resample_equidistant(&t, 1.0).unwrap();
        assert_eq!(out.strokes[0].len(), 11);
        for (i, p) in out.strokes[0].iter().enumerate() {
            assert!((p[0] - i as f64).abs() < 1e-12);
        }
        let single = Trajectory::new(vec![vec![[1.0, 2.0]]]).unwrap();
        assert_eq!(resample_equidistant(&single, 1.0).unwrap(), single);
        assert!(resample_equidistant(&t, 0.0).is_err());
    }

    #[test]
    fn trajectory_json_schema() {
        let t = Trajectory::from_json(r#"{"strokes": [[[0, 1], [2, 3]], [[4, 5]]]}"#).unwrap();
        assert_eq!(t.strokes.len(), 2);
        assert_eq!(t.strokes[1][0], [4.0, 5.0]);
        assert!(Trajectory::from_json(r#"{"strokes": [[]]}"#).is_err());
    }
}
