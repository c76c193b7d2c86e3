//! Truncated (order 2) path signatures and sliding-window signature maps for
//! pen trajectories.
//!
//! Channel layout is fixed: `[S0, S1x, S1y, S2xx, S2xy, S2yx, S2yy]`.

use std::path::Path;

use diffnet::checkpoint::Reader;

use crate::error::{invalid, io_err, Error, Result};
use crate::preprocess::Trajectory;

pub const SIG_CHANNELS: usize = 7;
pub const DEFAULT_WINDOW: usize = 9;

const MAGIC: &[u8; 8] = b"SIGMAP\0\0";
const VERSION: u32 = 1;

/// Order-2 signature of a path, stored as `[1, x, y, xx, xy, yx, yy]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Signature(pub [f64; SIG_CHANNELS]);

impl Signature {
    pub fn identity() -> Self {
        Signature([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    }

    /// Signature of the straight segment with displacement `(dx, dy)`.
    pub fn linear(dx: f64, dy: f64) -> Self {
        Signature([
            1.0,
            dx,
            dy,
            dx * dx / 2.0,
            dx * dy / 2.0,
            dy * dx / 2.0,
            dy * dy / 2.0,
        ])
    }

    pub fn level1(&self) -> [f64; 2] {
        [self.0[1], self.0[2]]
    }

    /// Second-level term `S^{ij}` for `i, j ∈ {0, 1}`.
    pub fn level2(&self, i: usize, j: usize) -> f64 {
        self.0[3 + 2 * i + j]
    }

    /// Signature of `self` followed by `next` (Chen's identity, truncated).
    pub fn concat(&self, next: &Signature) -> Signature {
        let a = self.level1();
        let b = next.level1();
        let mut out = [0.0; SIG_CHANNELS];
        out[0] = 1.0;
        out[1] = a[0] + b[0];
        out[2] = a[1] + b[1];
        for i in 0..2 {
            for j in 0..2 {
                out[3 + 2 * i + j] = self.level2(i, j) + next.level2(i, j) + a[i] * b[j];
            }
        }
        Signature(out)
    }
}

/// Signature of the piecewise-linear path through `points`.
pub fn signature_segment(points: &[[f64; 2]]) -> Result<Signature> {
    if points.is_empty() {
        return invalid("signature of an empty path");
    }
    Ok(points
        .windows(2)
        .fold(Signature::identity(), |acc, w| {
            acc.concat(&Signature::linear(w[1][0] - w[0][0], w[1][1] - w[0][1]))
        }))
}

/// Image-like stack of signature planes, `[channel][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignatureMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SignatureMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; SIG_CHANNELS * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        SIG_CHANNELS
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.values[(ch * self.height + row) * self.width + col]
    }

    fn put(&mut self, row: usize, col: usize, sig: &Signature) {
        for (ch, v) in sig.0.iter().enumerate() {
            self.values[(ch * self.height + row) * self.width + col] = *v;
        }
    }

    /// The signature stored at a pixel, or `None` off the pen path.
    pub fn at(&self, row: usize, col: usize) -> Option<Signature> {
        if self.get(0, row, col) == 0.0 {
            return None;
        }
        let mut s = [0.0; SIG_CHANNELS];
        for (ch, v) in s.iter_mut().enumerate() {
            *v = self.get(ch, row, col);
        }
        Some(Signature(s))
    }

    /// Pads with zero columns on the right.
    pub fn pad_right(&self, width: usize) -> SignatureMap {
        if width <= self.width {
            return self.clone();
        }
        let mut out = SignatureMap::zeros(self.height, width);
        for ch in 0..SIG_CHANNELS {
            for r in 0..self.height {
                for c in 0..self.width {
                    out.values[(ch * self.height + r) * width + c] = self.get(ch, r, c);
                }
            }
        }
        out
    }

    /// Header: magic, version, then channels, height, width as `u32`, then
    /// the planes as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [SIG_CHANNELS, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::Data("not a signature map file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Data(format!(
                "signature map version {} unsupported (expected {})",
                version, VERSION
            )));
        }
        let ch = r.u32()? as usize;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        if ch != SIG_CHANNELS {
            return Err(Error::Data(format!("signature map has {} channels, expected 7", ch)));
        }
        let n = ch * height * width;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.f64()?);
        }
        if !r.is_done() {
            return Err(Error::Data("trailing bytes after signature map".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("signature map holds non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }
}

/// Pixel holding a trajectory point: floor of the coordinate, clamped into the frame.
pub fn point_pixel(p: [f64; 2], height: usize, width: usize) -> (usize, usize) {
    let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
    (clamp(p[1], height), clamp(p[0], width))
}

/// Renders the windowed signature map of an already normalized and resampled
/// trajectory. Each point writes the signature of the `window` points centred on
/// it (clipped to its stroke) into its pixel; later points overwrite earlier ones.
/// Width is `floor(max x) + 1`.
pub fn render_signature_map(t: &Trajectory, window: usize, height: usize) -> Result<SignatureMap> {
    if t.strokes.is_empty() {
        return invalid("cannot render an empty trajectory");
    }
    if window == 0 || height == 0 {
        return invalid("window and height must be positive");
    }
    let max_x = t.points().map(|p| p.0).fold(0.0f64, f64::max);
    let width = max_x.floor() as usize + 1;
    let mut map = SignatureMap::zeros(height, width);
    let half = window / 2;
    for stroke in &t.strokes {
        for k in 0..stroke.len() {
            let lo = k.saturating_sub(half);
            let hi = (k + window - half).min(stroke.len());
            let sig = signature_segment(&stroke[lo..hi])?;
            let (r, c) = point_pixel(stroke[k], height, width);
            map.put(r, c, &sig);
        }
    }
    Ok(map)
}

/// Full online preprocessing: height normalization, unit-step resampling and
/// a map with the default window.
pub fn trajectory_to_map(t: &Trajectory, height: usize) -> Result<SignatureMap> {
    let t = crate::preprocess::normalize_height(t, height);
    let t = crate::preprocess::resample_equidistant(&t, 1.0)?;
    render_signature_map(&t, DEFAULT_WINDOW, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_is_identity() {
        assert_eq!(signature_segment(&[[3.0, 4.0]]).unwrap(), Signature::identity());
    }

    #[test]
    fn horizontal_stroke_map() {
        let pts: Vec<[f64; 2]> = (0..20).map(|i| [i as f64 + 0.5, 5.5]).collect();
        let t = Trajectory::new(vec![pts]).unwrap();
        let map = render_signature_map(&t, 9, 12).unwrap();
        for c in 0..20 {
            assert_eq!(map.get(0, 5, c), 1.0);
            assert!(map.get(1, 5, c) > 0.0);
            assert_eq!(map.get(2, 5, c), 0.0);
        }
        assert_eq!(map.get(0, 4, 3), 0.0);
    }

    #[test]
    fn bytes_round_trip_and_reject_garbage() {
        let t = Trajectory::new(vec![vec![[0.0, 0.0], [3.0, 2.0], [5.0, 1.0]]]).unwrap();
        let map = render_signature_map(&t, 9, 4).unwrap();
        let bytes = map.to_bytes();
        assert_eq!(SignatureMap::from_bytes(&bytes).unwrap(), map);
        assert!(SignatureMap::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(SignatureMap::from_bytes(b"NOTAMAP!").is_err());
    }
}
