//! Parameter-owning building blocks assembled from [`Graph`] primitives.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Conv2dSpec, Graph, NodeId};
use crate::init::uniform_fan_in;
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel.0 * kernel.1;
        let w = uniform_fan_in(&[out_ch, in_ch, kernel.0, kernel.1], fan_in, gain, rng);
        Ok(Self {
            weight: params.insert(format!("{name}.weight"), w)?,
            bias: params.insert(format!("{name}.bias"), Tensor::zeros(&[out_ch]))?,
            spec,
        })
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, b, self.spec)
    }
}

/// Per-column affine map over a `[in, T]` sequence.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w = uniform_fan_in(&[output, input], input, gain, rng);
        Ok(Self {
            weight: params.insert(format!("{name}.weight"), w)?,
            bias: params.insert(format!("{name}.bias"), Tensor::zeros(&[output]))?,
        })
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(w, x)?;
        g.add_col_bias(y, b)
    }
}

/// One direction of an LSTM over a `[in, T]` sequence.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        input_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let wx = uniform_fan_in(&[4 * hidden, input], input, input_gain, rng);
        let wh = uniform_fan_in(&[4 * hidden, hidden], hidden, 1.0, rng);
        // Gate order is input, forget, cell, output; forget bias starts at 1.
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        Ok(Self {
            w_input: params.insert(format!("{name}.w_input"), wx)?,
            w_hidden: params.insert(format!("{name}.w_hidden"), wh)?,
            bias: params.insert(format!("{name}.bias"), Tensor::new(&[4 * hidden], b)?)?,
            hidden,
        })
    }

    /// Runs the cell over the columns of `x`, left to right or right to left.
    /// Output columns stay aligned with input columns.
    pub fn run(&self, g: &mut Graph<'_>, x: NodeId, reverse: bool) -> Result<NodeId> {
        let h = self.hidden;
        let steps = g.shape(x)[1];
        let wx = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let proj = g.matmul(wx, x)?;
        let proj = g.add_col_bias(proj, b)?;
        let mut outs = vec![None; steps];
        let mut state: Option<(NodeId, NodeId)> = None;
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let mut gates = g.column(proj, t)?;
            if let Some((h_prev, _)) = state {
                let rec = g.matmul(wh, h_prev)?;
                gates = g.add(gates, rec)?;
            }
            let i = g.slice_rows(gates, 0, h)?;
            let i = g.sigmoid(i);
            let f = g.slice_rows(gates, h, h)?;
            let f = g.sigmoid(f);
            let c_in = g.slice_rows(gates, 2 * h, h)?;
            let c_in = g.tanh(c_in);
            let o = g.slice_rows(gates, 3 * h, h)?;
            let o = g.sigmoid(o);
            let mut c = g.mul(i, c_in)?;
            if let Some((_, c_prev)) = state {
                let keep = g.mul(f, c_prev)?;
                c = g.add(c, keep)?;
            }
            let tc = g.tanh(c);
            let h_t = g.mul(o, tc)?;
            outs[t] = Some(h_t);
            state = Some((h_t, c));
        }
        let cols: Vec<NodeId> = outs.into_iter().map(|o| o.expect("every step ran")).collect();
        g.stack_columns(&cols)
    }
}

/// Bidirectional recurrence: `[in, T] -> [2·hidden, T]`, forward half first.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        input_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            forward: LstmCell::register(params, &format!("{name}.fw"), input, hidden, input_gain, rng)?,
            backward: LstmCell::register(params, &format!("{name}.bw"), input, hidden, input_gain, rng)?,
        })
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let fw = self.forward.run(g, x, false)?;
        let bw = self.backward.run(g, x, true)?;
        g.concat_rows(&[fw, bw])
    }
}
