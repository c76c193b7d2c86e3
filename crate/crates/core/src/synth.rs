//! Synthetic text lines from a programmatic glyph alphabet.
//!
//! Glyphs are polylines in a unit box (x right, y down). Each drawn instance
//! is perturbed, placed left to right and either rasterized with anti-aliased
//! strokes (offline) or kept as a pen trajectory (online). The "real"
//! generator adds line-level distortions and runs the offline preprocessing
//! chain, so its output resembles scanned handwriting more than the clean
//! synthetic lines do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::alphabet::Alphabet;
use crate::error::{invalid, Result};
use crate::geometry::{Affine2, CharBox, Rect};
use crate::lm::NGramModel;
use crate::preprocess::{
    tilt_estimate, trim_vertical_with_offset, LineInk, Raster, Trajectory, INK_THRESHOLD,
};
use crate::sample::{LineInput, TextLineSample};

type Stroke = Vec<[f64; 2]>;

/// Deterministic generator for sample `index` of a stream seeded by `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn poly(points: &[(f64, f64)]) -> Stroke {
    points.iter().map(|&(x, y)| [x, y]).collect()
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, n: usize) -> Stroke {
    (0..=n)
        .map(|k| {
            let a = from + (to - from) * k as f64 / n as f64;
            [cx + rx * a.cos(), cy + ry * a.sin()]
        })
        .collect()
}

/// Stroke templates for the built-in alphabet, with their width/height ratio.
fn builtin_templates() -> Vec<(Vec<Stroke>, f64)> {
    use std::f64::consts::PI;
    vec![
        (vec![poly(&[(0., 0.), (1., 0.), (1., 1.), (0., 1.), (0., 0.)])], 0.8),
        (vec![poly(&[(0.5, 0.), (1., 1.), (0., 1.), (0.5, 0.)])], 0.9),
        (vec![poly(&[(0., 0.), (1., 1.)]), poly(&[(1., 0.), (0., 1.)])], 0.8),
        (vec![poly(&[(0.5, 0.), (0.5, 1.)]), poly(&[(0., 0.5), (1., 0.5)])], 0.8),
        (vec![poly(&[(1., 0.), (0., 0.), (0., 1.), (1., 1.)])], 0.6),
        (vec![poly(&[(0., 0.), (1., 0.), (0., 1.), (1., 1.)])], 0.7),
        (vec![poly(&[(0., 1.), (0., 0.), (1., 1.), (1., 0.)])], 0.75),
        (vec![poly(&[(0., 0.), (0.5, 1.), (1., 0.)])], 0.8),
        (vec![poly(&[(0., 0.), (0., 1.), (1., 1.)])], 0.55),
        (vec![poly(&[(0., 0.), (1., 0.)]), poly(&[(0.5, 0.), (0.5, 1.)])], 0.8),
        (
            vec![
                poly(&[(0., 0.), (0., 1.)]),
                poly(&[(1., 0.), (1., 1.)]),
                poly(&[(0., 0.5), (1., 0.5)]),
            ],
            0.75,
        ),
        (vec![poly(&[(0., 0.3), (1., 0.3)]), poly(&[(0., 0.7), (1., 0.7)])], 0.8),
        (vec![poly(&[(0., 1.), (0., 0.), (0.5, 0.6), (1., 0.), (1., 1.)])], 0.9),
        (vec![poly(&[(0., 0.), (0.25, 1.), (0.5, 0.4), (0.75, 1.), (1., 0.)])], 1.0),
        (vec![arc(0.5, 0.5, 0.5, 0.5, 0.0, 2.0 * PI, 16)], 0.85),
        (vec![poly(&[(0., 1.), (0., 0.), (1., 0.)])], 0.55),
        (vec![poly(&[(0.5, 0.), (1., 0.5), (0.5, 1.), (0., 0.5), (0.5, 0.)])], 0.8),
        (vec![poly(&[(0., 1.), (1., 1.)]), poly(&[(0.5, 0.), (0.5, 1.)])], 0.8),
        (
            vec![{
                let mut s = arc(0.5, 0.25, 0.5, 0.25, -0.1 * PI, -1.5 * PI, 8);
                s.extend(arc(0.5, 0.75, 0.5, 0.25, -0.5 * PI, 0.9 * PI, 8));
                s
            }],
            0.65,
        ),
        (vec![poly(&[(0., 0.), (0., 1.), (1., 1.), (1., 0.)])], 0.75),
    ]
}

/// Per-instance shape perturbation ranges, in glyph-box units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub vertex_jitter: f64,
    /// Horizontal shear per unit height, drawn from this range.
    pub slant: (f64, f64),
    pub scale: (f64, f64),
    pub aspect: (f64, f64),
}

impl Perturbation {
    pub const CLEAN: Perturbation = Perturbation {
        vertex_jitter: 0.04,
        slant: (-0.15, 0.15),
        scale: (0.85, 1.1),
        aspect: (0.9, 1.1),
    };
}

/// A drawn glyph: strokes in a box of height `1` and width `width`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphInstance {
    pub class_id: usize,
    pub strokes: Vec<Stroke>,
    pub width: f64,
    pub scale: f64,
}

impl GlyphInstance {
    pub fn point_count(&self) -> usize {
        self.strokes.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug)]
pub struct GlyphBank {
    alphabet: Alphabet,
    templates: Vec<(Vec<Stroke>, f64)>,
}

impl GlyphBank {
    /// The built-in 20-class alphabet labelled `a` to `t`.
    pub fn builtin() -> Self {
        let templates = builtin_templates();
        let alphabet = Alphabet::latin(templates.len()).expect("builtin alphabet fits");
        Self { alphabet, templates }
    }

    /// The first `n` built-in classes.
    pub fn builtin_subset(n: usize) -> Result<Self> {
        let mut bank = Self::builtin();
        if n == 0 || n > bank.templates.len() {
            return invalid(format!("glyph bank has 1..={} classes, asked for {}", bank.len(), n));
        }
        bank.templates.truncate(n);
        bank.alphabet = Alphabet::latin(n)?;
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn template(&self, class_id: usize) -> &[Stroke] {
        &self.templates[class_id].0
    }

    pub fn instance<R: Rng + ?Sized>(&self, class_id: usize, p: &Perturbation, rng: &mut R) -> GlyphInstance {
        let (strokes, aspect) = &self.templates[class_id];
        let scale = rng.gen_range(p.scale.0..=p.scale.1);
        let width = aspect * rng.gen_range(p.aspect.0..=p.aspect.1);
        let slant = rng.gen_range(p.slant.0..=p.slant.1);
        let strokes = strokes
            .iter()
            .map(|s| {
                s.iter()
                    .map(|q| {
                        let y = (q[1] + rng.gen_range(-p.vertex_jitter..=p.vertex_jitter)).clamp(0.0, 1.0);
                        let x = q[0] + rng.gen_range(-p.vertex_jitter..=p.vertex_jitter);
                        [(x * width + slant * (0.5 - y)).clamp(-0.2, width + 0.2), y]
                    })
                    .collect()
            })
            .collect();
        GlyphInstance {
            class_id,
            strokes,
            width,
            scale,
        }
    }
}

/// Where the text of a synthetic line comes from.
#[derive(Clone, Copy, Debug)]
pub enum TextSource<'a> {
    Uniform(usize),
    Lm(&'a NGramModel),
}

/// Draws a transcript with length uniform in `len_range` (inclusive).
pub fn sample_text<R: Rng + ?Sized>(
    source: TextSource<'_>,
    len_range: (usize, usize),
    rng: &mut R,
) -> Result<Vec<usize>> {
    let (lo, hi) = len_range;
    if lo == 0 || lo > hi {
        return invalid(format!("invalid length range [{}, {}]", lo, hi));
    }
    let n = rng.gen_range(lo..=hi);
    match source {
        TextSource::Uniform(v) => {
            if v == 0 {
                return invalid("vocabulary is empty");
            }
            Ok((0..n).map(|_| rng.gen_range(0..v)).collect())
        }
        TextSource::Lm(lm) => {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let next = lm.sample_next(&out, rng);
                out.push(next);
            }
            Ok(out)
        }
    }
}

/// A fixed toy corpus: words over the alphabet joined without separators, so
/// neighbouring characters are strongly predictive of each other.
pub fn toy_corpus(n_cls: usize, n_words: usize, n_lines: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<Vec<usize>> = (0..n_words)
        .map(|_| {
            let len = rng.gen_range(2..=4);
            (0..len).map(|_| rng.gen_range(0..n_cls)).collect()
        })
        .collect();
    // Zipf-like word frequencies.
    let weights: Vec<f64> = (0..n_words).map(|r| 1.0 / (r as f64 + 1.0)).collect();
    let total: f64 = weights.iter().sum();
    (0..n_lines)
        .map(|_| {
            let target = rng.gen_range(20..=40);
            let mut line = Vec::new();
            while line.len() < target {
                let mut u = rng.gen_range(0.0..total);
                let mut k = 0;
                while u >= weights[k] && k + 1 < n_words {
                    u -= weights[k];
                    k += 1;
                }
                line.extend_from_slice(&words[k]);
            }
            line
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OfflineConfig {
    pub canvas_height: usize,
    pub glyph_height: f64,
    pub thickness: (f64, f64),
    /// Gap between consecutive glyphs as a fraction of the left glyph's width.
    pub spacing: (f64, f64),
    pub vertical_jitter: f64,
    pub margin: (f64, f64),
    pub target_height: usize,
    pub perturbation: Perturbation,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            canvas_height: 40,
            glyph_height: 28.0,
            thickness: (1.6, 2.6),
            spacing: (-0.1, 0.4),
            vertical_jitter: 1.5,
            margin: (2.0, 6.0),
            target_height: 32,
            perturbation: Perturbation::CLEAN,
        }
    }
}

/// A glyph placed in line coordinates.
#[derive(Clone, Debug)]
struct Placed {
    class_id: usize,
    strokes: Vec<Stroke>,
    thickness: f64,
}

impl Placed {
    fn rect(&self, m: &Affine2, scale: f64) -> Rect {
        let r = Rect::bounding(self.strokes.iter().flatten().map(|p| m.apply((p[0], p[1]))))
            .expect("glyph has points");
        r.expand(0.5 * self.thickness * scale)
    }
}

/// Places instances left to right; returns the placed glyphs and line width.
fn layout<R: Rng + ?Sized>(
    instances: &[GlyphInstance],
    cfg: &OfflineConfig,
    thickness: (f64, f64),
    rng: &mut R,
) -> (Vec<Placed>, f64) {
    let mut x = rng.gen_range(cfg.margin.0..=cfg.margin.1);
    let mut placed = Vec::with_capacity(instances.len());
    let mut right = 0.0f64;
    for inst in instances {
        let h = cfg.glyph_height * inst.scale;
        let w = inst.width * h;
        let top = 0.5 * (cfg.canvas_height as f64 - h)
            + rng.gen_range(-cfg.vertical_jitter..=cfg.vertical_jitter);
        let t = rng.gen_range(thickness.0..=thickness.1);
        let strokes = inst
            .strokes
            .iter()
            .map(|s| s.iter().map(|p| [x + p[0] * h, top + p[1] * h]).collect())
            .collect();
        placed.push(Placed {
            class_id: inst.class_id,
            strokes,
            thickness: t,
        });
        right = right.max(x + w + t);
        x += w + rng.gen_range(cfg.spacing.0..=cfg.spacing.1) * w;
    }
    let width = right.max(x) + rng.gen_range(cfg.margin.0..=cfg.margin.1);
    (placed, width)
}

fn segment_distance(p: (f64, f64), a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a[0]) * dx + (p.1 - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a[0] - t * dx).hypot(p.1 - a[1] - t * dy)
}

/// Ink coverage in `[0, 1]` per pixel (1 = fully inked).
fn render_coverage(height: usize, width: usize, glyphs: &[Placed]) -> Vec<f64> {
    let mut cov = vec![0.0f64; height * width];
    for g in glyphs {
        let r = 0.5 * g.thickness;
        for s in &g.strokes {
            let segs: Vec<([f64; 2], [f64; 2])> = if s.len() == 1 {
                vec![(s[0], s[0])]
            } else {
                s.windows(2).map(|w| (w[0], w[1])).collect()
            };
            for (a, b) in segs {
                let x0 = (a[0].min(b[0]) - r - 1.0).floor().max(0.0) as usize;
                let x1 = ((a[0].max(b[0]) + r + 1.0).ceil().max(0.0) as usize).min(width);
                let y0 = (a[1].min(b[1]) - r - 1.0).floor().max(0.0) as usize;
                let y1 = ((a[1].max(b[1]) + r + 1.0).ceil().max(0.0) as usize).min(height);
                for row in y0..y1 {
                    for col in x0..x1 {
                        let d = segment_distance((col as f64 + 0.5, row as f64 + 0.5), a, b);
                        let c = (r + 0.5 - d).clamp(0.0, 1.0);
                        let cell = &mut cov[row * width + col];
                        *cell = cell.max(c);
                    }
                }
            }
        }
    }
    cov
}

/// Trims blank rows and rescales to the target height, carrying the glyph
/// boxes through the same transform.
fn finish_offline(
    raster: Raster,
    glyphs: &[Placed],
    pre: Affine2,
    target_height: usize,
) -> Result<(Raster, Vec<CharBox>)> {
    let (trimmed, top) = trim_vertical_with_offset(&raster, INK_THRESHOLD)?;
    let (out, scale_map) = trimmed.normalize_height_with_transform(target_height);
    let m = pre
        .then(&Affine2::translation(0.0, -(top as f64)))
        .then(&scale_map);
    let scale = scale_map.a[1][1];
    let (w, h) = (out.width() as f64, out.height() as f64);
    let boxes = glyphs
        .iter()
        .map(|g| CharBox::new(g.rect(&m, scale).clamp_to(w, h), g.class_id, 1.0))
        .collect();
    Ok((out, boxes))
}

fn check_text(bank: &GlyphBank, text: &[usize]) -> Result<()> {
    if text.is_empty() {
        return invalid("cannot synthesize an empty line");
    }
    if let Some(&bad) = text.iter().find(|&&c| c >= bank.len()) {
        return invalid(format!("class {} is not in the glyph bank ({} classes)", bad, bank.len()));
    }
    Ok(())
}

/// Clean synthetic line with exact character boxes.
pub fn synth_offline_line(
    bank: &GlyphBank,
    text: &[usize],
    seed: u64,
    cfg: &OfflineConfig,
) -> Result<TextLineSample> {
    check_text(bank, text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances: Vec<GlyphInstance> = text
        .iter()
        .map(|&c| bank.instance(c, &cfg.perturbation, &mut rng))
        .collect();
    let (glyphs, width) = layout(&instances, cfg, cfg.thickness, &mut rng);
    let width = width.ceil() as usize;
    let cov = render_coverage(cfg.canvas_height, width, &glyphs);
    let pixels = cov.iter().map(|c| 1.0 - c).collect();
    let raster = Raster::new(cfg.canvas_height, width, pixels)?;
    let (out, boxes) = finish_offline(raster, &glyphs, Affine2::identity(), cfg.target_height)?;
    TextLineSample::new(
        format!("synth-{:016x}", seed),
        LineInput::Raster(out),
        text.to_vec(),
        Some(boxes),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnlineConfig {
    pub glyph_height: f64,
    /// Non-negative gap between glyph extents, as a fraction of glyph width.
    pub spacing: (f64, f64),
    pub vertical_jitter: f64,
    pub perturbation: Perturbation,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            glyph_height: 28.0,
            spacing: (0.05, 0.4),
            vertical_jitter: 1.5,
            perturbation: Perturbation::CLEAN,
        }
    }
}

/// Concatenated pen trajectories with boxes from each character's extent.
///
/// The generator draws all glyph instances first, in text order, and only then
/// the placement offsets.
pub fn synth_online_line(
    bank: &GlyphBank,
    text: &[usize],
    seed: u64,
    cfg: &OnlineConfig,
) -> Result<TextLineSample> {
    check_text(bank, text)?;
    if cfg.spacing.0 < 0.0 {
        return invalid("online spacing must be non-negative so boxes stay disjoint");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances: Vec<GlyphInstance> = text
        .iter()
        .map(|&c| bank.instance(c, &cfg.perturbation, &mut rng))
        .collect();
    let mut strokes = Vec::new();
    let mut boxes = Vec::new();
    let mut x = 0.0;
    for inst in &instances {
        let h = cfg.glyph_height * inst.scale;
        let dy = rng.gen_range(-cfg.vertical_jitter..=cfg.vertical_jitter);
        let placed: Vec<Stroke> = inst
            .strokes
            .iter()
            .map(|s| s.iter().map(|p| [p[0] * h, p[1] * h + dy]).collect())
            .collect();
        let r = Rect::bounding(placed.iter().flatten().map(|p| (p[0], p[1]))).expect("glyph has points");
        let shift = x - r.x_min;
        let placed: Vec<Stroke> = placed
            .into_iter()
            .map(|s| s.into_iter().map(|p| [p[0] + shift, p[1]]).collect())
            .collect();
        let rect = Rect::new(r.x_min + shift, r.y_min, r.x_max + shift, r.y_max);
        x = rect.x_max + rng.gen_range(cfg.spacing.0..=cfg.spacing.1) * rect.width().max(1.0);
        boxes.push(CharBox::new(rect, inst.class_id, 1.0));
        strokes.extend(placed);
    }
    TextLineSample::new(
        format!("online-{:016x}", seed),
        LineInput::Trajectory(Trajectory::new(strokes)?),
        text.to_vec(),
        Some(boxes),
    )
}

/// Distortions of the held-out "real" generator. Amplitudes are in render
/// pixels and are scaled per line by a severity drawn from `severity`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RealConfig {
    pub render: OfflineConfig,
    pub severity: (f64, f64),
    pub elastic_amplitude: f64,
    pub elastic_wavelength: (f64, f64),
    pub wave_amplitude: f64,
    pub wave_period: (f64, f64),
    pub max_tilt: f64,
    pub shading: f64,
    pub ink_level: (f64, f64),
    pub noise_sigma: f64,
}

impl Default for RealConfig {
    fn default() -> Self {
        Self {
            render: OfflineConfig {
                canvas_height: 60,
                glyph_height: 40.0,
                thickness: (6.0, 11.0),
                spacing: (0.0, 0.4),
                vertical_jitter: 3.0,
                margin: (3.0, 9.0),
                target_height: 32,
                perturbation: Perturbation {
                    vertex_jitter: 0.08,
                    slant: (-0.15, 0.15),
                    scale: (0.8, 1.15),
                    aspect: (0.9, 1.1),
                },
            },
            severity: (0.3, 1.0),
            elastic_amplitude: 2.0,
            elastic_wavelength: (14.0, 36.0),
            wave_amplitude: 4.0,
            wave_period: (60.0, 160.0),
            max_tilt: 0.12,
            shading: 0.25,
            ink_level: (0.0, 0.3),
            noise_sigma: 0.05,
        }
    }
}

struct Warp {
    amp: f64,
    terms: [(f64, f64, f64, f64); 2],
}

impl Warp {
    fn draw<R: Rng + ?Sized>(amp: f64, wl: (f64, f64), rng: &mut R) -> Self {
        let mut term = || {
            (
                2.0 * std::f64::consts::PI / rng.gen_range(wl.0..=wl.1),
                2.0 * std::f64::consts::PI / rng.gen_range(wl.0..=wl.1),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        };
        Self {
            amp,
            terms: [term(), term()],
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(fx, fy, px, py)| (fx * x + px).sin() * (fy * y + py).cos())
            .sum::<f64>()
            * self.amp
            / 2.0
    }
}

/// Distorted line meant to stand in for scanned handwriting. Boxes are known
/// (for evaluation) but weakly supervised training must not read them.
pub fn synth_real_line(
    bank: &GlyphBank,
    text: &[usize],
    seed: u64,
    cfg: &RealConfig,
) -> Result<TextLineSample> {
    check_text(bank, text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sev = rng.gen_range(cfg.severity.0..=cfg.severity.1);
    let r = &cfg.render;
    let instances: Vec<GlyphInstance> = text
        .iter()
        .map(|&c| bank.instance(c, &r.perturbation, &mut rng))
        .collect();
    let (mut glyphs, width) = layout(&instances, r, r.thickness, &mut rng);

    let wx = Warp::draw(cfg.elastic_amplitude * sev, cfg.elastic_wavelength, &mut rng);
    let wy = Warp::draw(cfg.elastic_amplitude * sev, cfg.elastic_wavelength, &mut rng);
    let wave_amp = cfg.wave_amplitude * sev * rng.gen_range(0.0..=1.0);
    let wave_freq = std::f64::consts::TAU / rng.gen_range(cfg.wave_period.0..=cfg.wave_period.1);
    let wave_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let tilt = cfg.max_tilt * sev * rng.gen_range(-1.0..=1.0);

    // Room for the tilt and wave so nothing leaves the canvas.
    let pad = (width * tilt.abs().sin() * 0.5 + wave_amp + cfg.elastic_amplitude).ceil();
    let height = r.canvas_height + 2 * pad as usize;
    let rot = Affine2::rotation(tilt, (0.5 * width, 0.5 * height as f64));
    for g in &mut glyphs {
        for s in &mut g.strokes {
            for p in s.iter_mut() {
                let (x, y) = (p[0], p[1] + pad);
                let x2 = x + wx.at(x, y);
                let y2 = y + wy.at(x, y) + wave_amp * (wave_freq * x + wave_phase).sin();
                let q = rot.apply((x2, y2));
                *p = [q.0, q.1];
            }
        }
    }
    let w = width.ceil() as usize;
    let cov = render_coverage(height, w, &glyphs);
    let ink = rng.gen_range(cfg.ink_level.0..=cfg.ink_level.1);
    let shade = cfg.shading * sev * rng.gen_range(0.0..=1.0);
    let (gx, gy) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0f64));
    let noise = Normal::new(0.0, cfg.noise_sigma * sev).expect("finite sigma");
    let mut pixels = Vec::with_capacity(height * w);
    for row in 0..height {
        for col in 0..w {
            let u = col as f64 / w as f64 - 0.5;
            let v = row as f64 / height as f64 - 0.5;
            let bg = 1.0 - shade * (0.5 + 0.5 * (gx * u + gy * v).clamp(-1.0, 1.0));
            let c = cov[row * w + col];
            let n = noise.sample(&mut rng).clamp(-0.15, 0.15);
            pixels.push((bg * (1.0 - c) + ink * c + n).clamp(0.0, 1.0));
        }
    }
    let raster = Raster::new(height, w, pixels)?;
    let angle = tilt_estimate(&raster).angle;
    let (deskewed, deskew_map) = raster.deskew_with_transform(angle);
    let (out, boxes) = finish_offline(deskewed, &glyphs, deskew_map, r.target_height)?;
    let mut boxes = boxes;
    boxes.sort_by(|a, b| a.rect.center().0.total_cmp(&b.rect.center().0));
    let transcript = boxes.iter().map(|b| b.class_id).collect();
    TextLineSample::new(
        format!("real-{:016x}", seed),
        LineInput::Raster(out),
        transcript,
        Some(boxes),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_bank_has_twenty_classes() {
        let bank = GlyphBank::builtin();
        assert_eq!(bank.len(), 20);
        assert_eq!(bank.alphabet().label(19), 't');
    }

    #[test]
    fn empty_or_unknown_text_rejected() {
        let bank = GlyphBank::builtin();
        let cfg = OfflineConfig::default();
        assert!(synth_offline_line(&bank, &[], 1, &cfg).is_err());
        assert!(synth_offline_line(&bank, &[20], 1, &cfg).is_err());
    }

    #[test]
    fn real_line_has_target_height() {
        let bank = GlyphBank::builtin();
        let s = synth_real_line(&bank, &[0, 5, 9, 14], 7, &RealConfig::default()).unwrap();
        assert_eq!(s.input.height(), Some(32));
        assert_eq!(s.boxes.as_ref().unwrap().len(), 4);
    }
}
