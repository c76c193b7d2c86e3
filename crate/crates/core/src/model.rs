//! Fully convolutional recognizer.
//!
//! Input `[C, H, W]` (W padded with blank to a multiple of 8) passes through
//!
//! 1. 3x3 conv, relu, 2x2 max-pool
//! 2. 3x3 conv, relu, 2x2 max-pool
//! 3. residual block of two 3x3 convs with a 1x1 projection skip, relu, 2x2 max-pool
//! 4. an `H/8 x 3` conv collapsing the height to 1
//!
//! giving one feature column per 8-pixel region. Three heads (1x3 conv, relu,
//! 1x1 conv) predict presence (sigmoid), a 4-value box encoding and a class
//! distribution (softmax). During training a two-layer bidirectional LSTM on
//! the class-head features adds a second class distribution; its parameters all
//! live under the `conr.` prefix and inference never touches them.

use std::path::Path;

use diffnet::checkpoint::{Container, Reader};
use diffnet::init::RELU_GAIN;
use diffnet::layers::{BiLstm, Conv2d, Linear, LstmCell};
use diffnet::{Conv2dSpec, Graph, NodeId, ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::geometry::Rect;
use crate::sample::LineInput;

/// Horizontal input pixels per output region (total encoder stride).
pub const REGION_WIDTH: usize = 8;

pub const CONR_PREFIX: &str = "conr";
const CONR_INPUT_GAIN: f64 = 0.1;

const CONFIG_TAG: [u8; 4] = *b"MCFG";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecognizerConfig {
    pub in_channels: usize,
    pub height: usize,
    pub n_cls: usize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub head: usize,
    pub conr_hidden: usize,
}

impl RecognizerConfig {
    pub fn offline(n_cls: usize) -> Self {
        Self {
            in_channels: 1,
            height: 32,
            n_cls,
            c1: 8,
            c2: 16,
            c3: 32,
            head: 32,
            conr_hidden: 24,
        }
    }

    /// Seven signature channels instead of one intensity channel.
    pub fn online(n_cls: usize) -> Self {
        Self {
            in_channels: crate::pathsig::SIG_CHANNELS,
            ..Self::offline(n_cls)
        }
    }

    /// Very small widths, for finite-difference checks.
    pub fn tiny(n_cls: usize) -> Self {
        Self {
            in_channels: 1,
            height: 16,
            n_cls,
            c1: 2,
            c2: 2,
            c3: 3,
            head: 3,
            conr_hidden: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.in_channels,
            self.n_cls,
            self.c1,
            self.c2,
            self.c3,
            self.head,
            self.conr_hidden,
        ];
        if dims.contains(&0) {
            return invalid(format!("model dimensions must be positive: {:?}", self));
        }
        if self.height == 0 || !self.height.is_multiple_of(8) {
            return invalid(format!("input height must be a positive multiple of 8, got {}", self.height));
        }
        Ok(())
    }

    /// FNV-1a over a canonical description of the architecture.
    pub fn arch_hash(&self) -> u64 {
        let desc = format!(
            "fcn-v1;in={};h={};cls={};c={},{},{};head={};conr={}",
            self.in_channels, self.height, self.n_cls, self.c1, self.c2, self.c3, self.head, self.conr_hidden
        );
        desc.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    fn to_bytes(self) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [
            self.in_channels,
            self.height,
            self.n_cls,
            REGION_WIDTH,
            self.c1,
            self.c2,
            self.c3,
            self.head,
            self.conr_hidden,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.arch_hash().to_le_bytes());
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let mut f = [0usize; 9];
        for v in f.iter_mut() {
            *v = r.u32()? as usize;
        }
        let hash = r.u64()?;
        let cfg = Self {
            in_channels: f[0],
            height: f[1],
            n_cls: f[2],
            c1: f[4],
            c2: f[5],
            c3: f[6],
            head: f[7],
            conr_hidden: f[8],
        };
        if f[3] != REGION_WIDTH {
            return Err(Error::Data(format!(
                "checkpoint region width {} differs from this build's {}",
                f[3], REGION_WIDTH
            )));
        }
        if hash != cfg.arch_hash() {
            return Err(Error::Data("checkpoint architecture hash does not match its config".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-region outputs for one line.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionGrid {
    pub p_loc: Vec<f64>,
    pub p_bbox: Vec<[f64; 4]>,
    pub p_cls: Vec<Vec<f64>>,
    pub region_width: usize,
    pub height: usize,
    /// Unpadded input width; decoded boxes are clamped to it.
    pub frame_width: usize,
}

impl PredictionGrid {
    pub fn w_enc(&self) -> usize {
        self.p_loc.len()
    }

    pub fn n_cls(&self) -> usize {
        self.p_cls.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.w_enc();
        if self.p_bbox.len() != w || self.p_cls.len() != w {
            return invalid("prediction grid columns disagree in length");
        }
        if self.p_loc.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return invalid("p_loc outside [0, 1]");
        }
        for row in &self.p_cls {
            let s: f64 = row.iter().sum();
            if row.len() != self.n_cls() || (s - 1.0).abs() > 1e-6 || row.iter().any(|p| *p < 0.0) {
                return invalid("p_cls row is not a distribution");
            }
        }
        Ok(())
    }

    pub fn decode_box(&self, region: usize) -> Rect {
        decode_box(region, self.p_bbox[region], self.region_width, self.height, self.frame_width)
    }

    pub fn argmax_cls(&self, region: usize) -> (usize, f64) {
        argmax(&self.p_cls[region])
    }
}

/// Index and value of the first maximum.
pub fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
}

pub fn region_center(region: usize, region_width: usize) -> f64 {
    (region as f64 + 0.5) * region_width as f64
}

/// Raw head output to a box in input pixels, clamped to the frame.
pub fn decode_box(region: usize, raw: [f64; 4], region_width: usize, height: usize, frame_width: usize) -> Rect {
    let rw = region_width as f64;
    let h = height as f64;
    let cx = region_center(region, region_width) + raw[0] * rw;
    let cy = 0.5 * h + raw[1] * h;
    let w = raw[2].exp() * rw;
    let bh = raw[3].exp() * h;
    Rect::new(cx - 0.5 * w, cy - 0.5 * bh, cx + 0.5 * w, cy + 0.5 * bh).clamp_to(frame_width as f64, h)
}

/// Inverse of [`decode_box`] for boxes inside the frame.
pub fn encode_box(region: usize, rect: &Rect, region_width: usize, height: usize) -> [f64; 4] {
    let rw = region_width as f64;
    let h = height as f64;
    let (cx, cy) = rect.center();
    [
        (cx - region_center(region, region_width)) / rw,
        (cy - 0.5 * h) / h,
        (rect.width().max(1e-6) / rw).ln(),
        (rect.height().max(1e-6) / h).ln(),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    /// `[1, T]`
    pub loc: NodeId,
    /// `[4, T]`
    pub bbox: NodeId,
    /// `[n_cls, T]`
    pub cls: NodeId,
    /// `[n_cls, T]`, training only.
    pub conr: Option<NodeId>,
    pub w_enc: usize,
}

#[derive(Clone, Debug)]
struct Head {
    hidden: Conv2d,
    out: Conv2d,
}

#[derive(Clone, Debug)]
struct ConR {
    rnn1: BiLstm,
    rnn2: BiLstm,
    out: Linear,
}

#[derive(Clone, Debug)]
pub struct Recognizer {
    config: RecognizerConfig,
    params: ParamSet,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3a: Conv2d,
    conv3b: Conv2d,
    skip3: Conv2d,
    conv4: Conv2d,
    loc: Head,
    bbox: Head,
    cls: Head,
    conr: Option<ConR>,
}

const PAD1: Conv2dSpec = Conv2dSpec {
    stride: (1, 1),
    pad: (1, 1),
};
const PAD_W: Conv2dSpec = Conv2dSpec {
    stride: (1, 1),
    pad: (0, 1),
};
const NO_PAD: Conv2dSpec = Conv2dSpec {
    stride: (1, 1),
    pad: (0, 0),
};

fn conv_named(params: &ParamSet, name: &str, spec: Conv2dSpec) -> Result<Conv2d> {
    Ok(Conv2d {
        weight: params.id(&format!("{name}.weight"))?,
        bias: params.id(&format!("{name}.bias"))?,
        spec,
    })
}

fn lstm_named(params: &ParamSet, name: &str, hidden: usize) -> Result<LstmCell> {
    Ok(LstmCell {
        w_input: params.id(&format!("{name}.w_input"))?,
        w_hidden: params.id(&format!("{name}.w_hidden"))?,
        bias: params.id(&format!("{name}.bias"))?,
        hidden,
    })
}

fn bilstm_named(params: &ParamSet, name: &str, hidden: usize) -> Result<BiLstm> {
    Ok(BiLstm {
        forward: lstm_named(params, &format!("{name}.fw"), hidden)?,
        backward: lstm_named(params, &format!("{name}.bw"), hidden)?,
    })
}

impl Recognizer {
    /// Freshly initialized model; all randomness comes from `seed`.
    pub fn new(config: RecognizerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let c = &config;
        let k3 = (3, 3);
        Conv2d::register(&mut p, "conv1", c.in_channels, c.c1, k3, PAD1, RELU_GAIN, &mut rng)?;
        Conv2d::register(&mut p, "conv2", c.c1, c.c2, k3, PAD1, RELU_GAIN, &mut rng)?;
        Conv2d::register(&mut p, "conv3a", c.c2, c.c3, k3, PAD1, RELU_GAIN, &mut rng)?;
        Conv2d::register(&mut p, "conv3b", c.c3, c.c3, k3, PAD1, 1.0, &mut rng)?;
        Conv2d::register(&mut p, "skip3", c.c2, c.c3, (1, 1), NO_PAD, 1.0, &mut rng)?;
        Conv2d::register(&mut p, "conv4", c.c3, c.c3, (c.height / 8, 3), PAD_W, RELU_GAIN, &mut rng)?;
        for (name, out) in [("loc", 1), ("bbox", 4), ("cls", c.n_cls)] {
            Conv2d::register(&mut p, &format!("{name}.hidden"), c.c3, c.head, (1, 3), PAD_W, RELU_GAIN, &mut rng)?;
            Conv2d::register(&mut p, &format!("{name}.out"), c.head, out, (1, 1), NO_PAD, 1.0, &mut rng)?;
        }
        let h = c.conr_hidden;
        // The head features are unbounded ReLU outputs several units large, so
        // the first recurrent layer starts with a small input projection to
        // keep its gates out of saturation.
        BiLstm::register(&mut p, "conr.rnn1", c.head, h, CONR_INPUT_GAIN, &mut rng)?;
        BiLstm::register(&mut p, "conr.rnn2", 2 * h, h, 1.0, &mut rng)?;
        Linear::register(&mut p, "conr.out", 2 * h, c.n_cls, 1.0, &mut rng)?;
        Self::from_params(config, p)
    }

    /// Wraps an existing parameter table. The recurrent branch is optional:
    /// without it the model can only run inference.
    pub fn from_params(config: RecognizerConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let head = |name: &str| -> Result<Head> {
            Ok(Head {
                hidden: conv_named(&params, &format!("{name}.hidden"), PAD_W)?,
                out: conv_named(&params, &format!("{name}.out"), NO_PAD)?,
            })
        };
        let has_conr = params.iter().any(|(n, _)| n.starts_with(CONR_PREFIX));
        let conr = if has_conr {
            Some(ConR {
                rnn1: bilstm_named(&params, "conr.rnn1", config.conr_hidden)?,
                rnn2: bilstm_named(&params, "conr.rnn2", config.conr_hidden)?,
                out: Linear {
                    weight: params.id("conr.out.weight")?,
                    bias: params.id("conr.out.bias")?,
                },
            })
        } else {
            None
        };
        let model = Self {
            conv1: conv_named(&params, "conv1", PAD1)?,
            conv2: conv_named(&params, "conv2", PAD1)?,
            conv3a: conv_named(&params, "conv3a", PAD1)?,
            conv3b: conv_named(&params, "conv3b", PAD1)?,
            skip3: conv_named(&params, "skip3", NO_PAD)?,
            conv4: conv_named(&params, "conv4", PAD_W)?,
            loc: head("loc")?,
            bbox: head("bbox")?,
            cls: head("cls")?,
            conr,
            config,
            params,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let expect = |id: diffnet::ParamId, shape: &[usize]| -> Result<()> {
            let got = self.params.get(id).shape();
            if got != shape {
                return Err(Error::Data(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.params.name(id),
                    got,
                    shape
                )));
            }
            Ok(())
        };
        expect(self.conv1.weight, &[c.c1, c.in_channels, 3, 3])?;
        expect(self.conv4.weight, &[c.c3, c.c3, c.height / 8, 3])?;
        expect(self.cls.out.weight, &[c.n_cls, c.head, 1, 1])?;
        Ok(())
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn has_conr(&self) -> bool {
        self.conr.is_some()
    }

    /// Copy of the model with the recurrent branch removed.
    pub fn without_conr(&self) -> Result<Self> {
        Self::from_params(self.config, self.params.without_prefix(CONR_PREFIX))
    }

    /// Input tensor `[C, H, W8]`: intensities inverted so blank is 0, width
    /// padded with blank to a multiple of the region width.
    pub fn input_tensor(&self, input: &LineInput) -> Result<(Tensor, usize)> {
        let c = &self.config;
        let (ch, h, w, values): (usize, usize, usize, Vec<f64>) = match input {
            LineInput::Raster(r) => (1, r.height(), r.width(), r.pixels().iter().map(|p| 1.0 - p).collect()),
            LineInput::Signature(s) => (s.channels(), s.height(), s.width(), s.values().to_vec()),
            LineInput::Trajectory(_) => {
                return invalid("trajectories must be rendered to a signature map before recognition")
            }
        };
        if ch != c.in_channels {
            return invalid(format!("model expects {} input channels, got {}", c.in_channels, ch));
        }
        if h != c.height {
            return invalid(format!("model expects input height {}, got {}", c.height, h));
        }
        if w < REGION_WIDTH {
            return invalid(format!("input width {} is below the region width {}", w, REGION_WIDTH));
        }
        let wp = w.div_ceil(REGION_WIDTH) * REGION_WIDTH;
        let mut out = vec![0.0; ch * h * wp];
        for k in 0..ch {
            for r in 0..h {
                let src = &values[(k * h + r) * w..(k * h + r + 1) * w];
                out[(k * h + r) * wp..(k * h + r) * wp + w].copy_from_slice(src);
            }
        }
        Ok((Tensor::new(&[ch, h, wp], out)?, w))
    }

    fn head(&self, g: &mut Graph<'_>, feat: NodeId, head: &Head, t: usize) -> Result<(NodeId, NodeId)> {
        let hidden = head.hidden.apply(g, feat)?;
        let hidden = g.relu(hidden);
        let out = head.out.apply(g, hidden)?;
        let rows = g.shape(out)[0];
        let out = g.reshape(out, &[rows, t])?;
        Ok((hidden, out))
    }

    /// Builds the forward pass for one input tensor.
    pub fn forward(&self, g: &mut Graph<'_>, input: &Tensor, mode: Mode) -> Result<ForwardNodes> {
        let x = g.input(input);
        let a = self.conv1.apply(g, x)?;
        let a = g.relu(a);
        let a = g.maxpool2d(a, 2, 2)?;
        let a = self.conv2.apply(g, a)?;
        let a = g.relu(a);
        let a = g.maxpool2d(a, 2, 2)?;
        let b = self.conv3a.apply(g, a)?;
        let b = g.relu(b);
        let b = self.conv3b.apply(g, b)?;
        let s = self.skip3.apply(g, a)?;
        let b = g.add(b, s)?;
        let b = g.relu(b);
        let b = g.maxpool2d(b, 2, 2)?;
        let f = self.conv4.apply(g, b)?;
        let f = g.relu(f);
        let t = g.shape(f)[2];

        let (_, loc) = self.head(g, f, &self.loc, t)?;
        let loc = g.sigmoid(loc);
        let (_, bbox) = self.head(g, f, &self.bbox, t)?;
        let (f_cls, cls) = self.head(g, f, &self.cls, t)?;
        let cls = g.softmax_cols(cls)?;

        let conr = match mode {
            Mode::Infer => None,
            Mode::Train => {
                let branch = self.conr.as_ref().ok_or_else(|| {
                    Error::InvalidInput("training mode needs the recurrent branch parameters".into())
                })?;
                Some(g.scoped(CONR_PREFIX, |g| -> Result<NodeId> {
                    let seq = g.reshape(f_cls, &[self.config.head, t])?;
                    let h = branch.rnn1.apply(g, seq)?;
                    let h = branch.rnn2.apply(g, h)?;
                    let z = branch.out.apply(g, h)?;
                    Ok(g.softmax_cols(z)?)
                })?)
            }
        };
        Ok(ForwardNodes {
            loc,
            bbox,
            cls,
            conr,
            w_enc: t,
        })
    }

    /// Reads node values into a grid.
    pub fn grid_from(&self, g: &Graph<'_>, nodes: &ForwardNodes, frame_width: usize) -> PredictionGrid {
        let t = nodes.w_enc;
        let n = self.config.n_cls;
        let loc = g.value(nodes.loc);
        let bbox = g.value(nodes.bbox);
        let cls = g.value(nodes.cls);
        PredictionGrid {
            p_loc: loc.to_vec(),
            p_bbox: (0..t)
                .map(|j| [bbox[j], bbox[t + j], bbox[2 * t + j], bbox[3 * t + j]])
                .collect(),
            p_cls: (0..t).map(|j| (0..n).map(|k| cls[k * t + j]).collect()).collect(),
            region_width: REGION_WIDTH,
            height: self.config.height,
            frame_width,
        }
    }

    /// Class distributions of the recurrent branch, `[T][n_cls]`.
    pub fn conr_rows(&self, g: &Graph<'_>, nodes: &ForwardNodes) -> Option<Vec<Vec<f64>>> {
        let id = nodes.conr?;
        let t = nodes.w_enc;
        let v = g.value(id);
        Some(
            (0..t)
                .map(|j| (0..self.config.n_cls).map(|k| v[k * t + j]).collect())
                .collect(),
        )
    }

    /// Inference-mode prediction.
    pub fn predict(&self, input: &LineInput) -> Result<PredictionGrid> {
        let (x, w) = self.input_tensor(input)?;
        let mut g = Graph::new(&self.params);
        let nodes = self.forward(&mut g, &x, Mode::Infer)?;
        Ok(self.grid_from(&g, &nodes, w))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.put(CONFIG_TAG, self.config.to_bytes());
        c.put_params(&self.params);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config = RecognizerConfig::from_bytes(c.require(CONFIG_TAG)?)?;
        Self::from_params(config, c.params()?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_container().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_raw_is_region_sized_box() {
        let r = decode_box(3, [0.0; 4], 8, 32, 100);
        assert_eq!(r, Rect::new(24.0, 0.0, 32.0, 32.0));
    }

    #[test]
    fn encode_inverts_decode() {
        let raw = [0.3, -0.1, 0.2, -0.4];
        let r = decode_box(5, raw, 8, 32, 200);
        let back = encode_box(5, &r, 8, 32);
        for k in 0..4 {
            assert!((back[k] - raw[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn config_hash_distinguishes_architectures() {
        let a = RecognizerConfig::offline(20);
        let b = RecognizerConfig { c1: 9, ..a };
        assert_ne!(a.arch_hash(), b.arch_hash());
        assert_eq!(RecognizerConfig::from_bytes(&a.to_bytes()).unwrap(), a);
    }
}
