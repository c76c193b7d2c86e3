use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::error::{shape_err, Result};
use crate::params::{Gradients, ParamId, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            pad: (0, 0),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn n(&self) -> usize {
        self.ho * self.wo
    }
}

enum Op {
    Leaf,
    Param,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine {
        x: NodeId,
        scale: f64,
    },
    SubConst(NodeId),
    MatMul(NodeId, NodeId),
    AddColBias(NodeId, NodeId),
    SoftmaxCols(NodeId),
    Reshape(NodeId),
    SliceRows {
        x: NodeId,
        start: usize,
    },
    Column {
        x: NodeId,
        col: usize,
    },
    StackColumns(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Gather {
        x: NodeId,
        idx: Vec<usize>,
    },
    LnFloor {
        x: NodeId,
        floor: f64,
    },
    Square(NodeId),
    Sum(NodeId),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::SubConst(_) => "sub_const",
            Op::MatMul(..) => "matmul",
            Op::AddColBias(..) => "add_col_bias",
            Op::SoftmaxCols(_) => "softmax_cols",
            Op::Reshape(_) => "reshape",
            Op::SliceRows { .. } => "slice_rows",
            Op::Column { .. } => "column",
            Op::StackColumns(_) => "stack_columns",
            Op::ConcatRows(_) => "concat_rows",
            Op::Gather { .. } => "gather",
            Op::LnFloor { .. } => "ln_floor",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
        }
    }
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
}

/// Operation tape for one forward pass.
///
/// Values are computed eagerly as nodes are appended, so node order is always
/// a valid topological order. Parameters are borrowed from a [`ParamSet`] and
/// each parameter is materialized at most once per graph.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node<'p>>,
    param_nodes: BTreeMap<ParamId, NodeId>,
    scope: &'static str,
    scope_counts: BTreeMap<&'static str, usize>,
    op_counts: BTreeMap<&'static str, usize>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: BTreeMap::new(),
            scope: "root",
            scope_counts: BTreeMap::new(),
            op_counts: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Runs `f` with every node it creates attributed to `scope`.
    pub fn scoped<T>(&mut self, scope: &'static str, f: impl FnOnce(&mut Self) -> T) -> T {
        let prev = std::mem::replace(&mut self.scope, scope);
        let out = f(self);
        self.scope = prev;
        out
    }

    /// Number of nodes created under each scope.
    pub fn scope_counts(&self) -> &BTreeMap<&'static str, usize> {
        &self.scope_counts
    }

    /// Number of nodes created per operation kind.
    pub fn op_counts(&self) -> &BTreeMap<&'static str, usize> {
        &self.op_counts
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(&self.nodes[id.0].shape, self.nodes[id.0].value.to_vec())
            .expect("node shape consistent")
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [f64]>, op: Op) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        *self.scope_counts.entry(self.scope).or_default() += 1;
        *self.op_counts.entry(op.kind()).or_default() += 1;
        self.nodes.push(Node { shape, value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn owned(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> NodeId {
        self.push(shape, Cow::Owned(value), op)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: &Tensor) -> NodeId {
        self.owned(t.shape().to_vec(), t.values().to_vec(), Op::Leaf)
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<NodeId> {
        if shape.iter().product::<usize>() != values.len() {
            return shape_err("constant", format!("{:?} vs {} values", shape, values.len()));
        }
        Ok(self.owned(shape.to_vec(), values, Op::Leaf))
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let t = self.params.get(id);
        let n = self.push(t.shape().to_vec(), Cow::Borrowed(t.values()), Op::Param);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<NodeId> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    /// 2-D cross-correlation of `x: [C, H, W]` with `w: [O, C, kh, kw]` plus `b: [O]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, spec: Conv2dSpec) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 {
            return shape_err("conv2d", format!("input must be [C,H,W], got {:?}", xs));
        }
        if ws.len() != 4 {
            return shape_err("conv2d", format!("kernel must be [O,C,kh,kw], got {:?}", ws));
        }
        let (c, h, wd) = (xs[0], xs[1], xs[2]);
        let (o, kc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if kc != c {
            return shape_err(
                "conv2d",
                format!("channel dimension: input has {}, kernel expects {}", c, kc),
            );
        }
        if self.shape(b) != [o] {
            return shape_err(
                "conv2d",
                format!("bias dimension: expected [{}], got {:?}", o, self.shape(b)),
            );
        }
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.pad;
        if sh == 0 || sw == 0 {
            return shape_err("conv2d", "stride must be positive");
        }
        if kh > h + 2 * ph {
            return shape_err(
                "conv2d",
                format!("height: kernel {} exceeds padded input {}", kh, h + 2 * ph),
            );
        }
        if kw > wd + 2 * pw {
            return shape_err(
                "conv2d",
                format!("width: kernel {} exceeds padded input {}", kw, wd + 2 * pw),
            );
        }
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            ho: (h + 2 * ph - kh) / sh + 1,
            wo: (wd + 2 * pw - kw) / sw + 1,
        };
        let cols = im2col(self.value(x), &geom);
        let n = geom.n();
        let mut out = vec![0.0; o * n];
        let bias = self.value(b);
        for (oc, row) in out.chunks_mut(n).enumerate() {
            row.fill(bias[oc]);
        }
        gemm(
            o,
            geom.k(),
            n,
            self.value(w),
            (geom.k(), 1),
            &cols,
            (n, 1),
            &mut out,
            1.0,
        );
        Ok(self.owned(
            vec![o, geom.ho, geom.wo],
            out,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
        ))
    }

    /// Non-overlapping max pooling over `[C, H, W]` with window = stride.
    pub fn maxpool2d(&mut self, x: NodeId, kh: usize, kw: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return shape_err("maxpool2d", format!("input must be [C,H,W], got {:?}", xs));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if kh == 0 || kw == 0 || kh > h || kw > w {
            return shape_err(
                "maxpool2d",
                format!("window {}x{} does not fit input {}x{}", kh, kw, h, w),
            );
        }
        let (ho, wo) = (h / kh, w / kw);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let i = (ch * h + oy * kh + dy) * w + ox * kw + dx;
                            if xv[i] > best {
                                best = xv[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
        Ok(self.owned(vec![c, ho, wo], out, Op::MaxPool2d { x, argmax }))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        self.owned(self.shape(x).to_vec(), out, op)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    pub fn ln_floor(&mut self, x: NodeId, floor: f64) -> NodeId {
        self.unary(x, |v| v.max(floor).ln(), Op::LnFloor { x, floor })
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(
                op,
                format!("operands {:?} and {:?}", self.shape(a), self.shape(b)),
            );
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.owned(self.shape(a).to_vec(), out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.owned(self.shape(a).to_vec(), out, Op::Mul(a, b)))
    }

    /// `x - c` for a constant `c` of the same length.
    pub fn sub_const(&mut self, x: NodeId, c: &[f64]) -> Result<NodeId> {
        if c.len() != self.value(x).len() {
            return shape_err(
                "sub_const",
                format!("constant has {} values, operand {:?}", c.len(), self.shape(x)),
            );
        }
        let out = self.value(x).iter().zip(c).map(|(a, b)| a - b).collect();
        Ok(self.owned(self.shape(x).to_vec(), out, Op::SubConst(x)))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return shape_err("matmul", format!("inner dimension: {} vs {}", k, k2));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), (k, 1), self.value(b), (n, 1), &mut out, 0.0);
        Ok(self.owned(vec![m, n], out, Op::MatMul(a, b)))
    }

    /// Adds bias `b: [m]` to every column of `x: [m, n]`.
    pub fn add_col_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2("add_col_bias", x)?;
        if self.shape(b) != [m] {
            return shape_err(
                "add_col_bias",
                format!("row dimension: bias {:?} for {} rows", self.shape(b), m),
            );
        }
        let bv = self.value(b);
        let mut out = self.value(x).to_vec();
        for (r, row) in out.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v += bv[r]);
        }
        Ok(self.owned(vec![m, n], out, Op::AddColBias(x, b)))
    }

    /// Softmax down each column of `x: [m, n]`.
    pub fn softmax_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2("softmax_cols", x)?;
        let xv = self.value(x);
        let mut out = vec![0.0; m * n];
        for j in 0..n {
            let mx = (0..m).map(|i| xv[i * n + j]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..m {
                let e = (xv[i * n + j] - mx).exp();
                out[i * n + j] = e;
                z += e;
            }
            for i in 0..m {
                out[i * n + j] /= z;
            }
        }
        Ok(self.owned(vec![m, n], out, Op::SoftmaxCols(x)))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return shape_err(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(x), shape),
            );
        }
        let v = self.value(x).to_vec();
        Ok(self.owned(shape.to_vec(), v, Op::Reshape(x)))
    }

    /// Rows `start..start+len` of `x: [m, n]`.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims2("slice_rows", x)?;
        if start + len > m {
            return shape_err(
                "slice_rows",
                format!("rows {}..{} out of {}", start, start + len, m),
            );
        }
        let v = self.value(x)[start * n..(start + len) * n].to_vec();
        Ok(self.owned(vec![len, n], v, Op::SliceRows { x, start }))
    }

    /// Column `col` of `x: [m, n]` as `[m, 1]`.
    pub fn column(&mut self, x: NodeId, col: usize) -> Result<NodeId> {
        let (m, n) = self.dims2("column", x)?;
        if col >= n {
            return shape_err("column", format!("column {} out of {}", col, n));
        }
        let xv = self.value(x);
        let v = (0..m).map(|i| xv[i * n + col]).collect();
        Ok(self.owned(vec![m, 1], v, Op::Column { x, col }))
    }

    /// Stacks `[m, 1]` columns side by side into `[m, T]`.
    pub fn stack_columns(&mut self, cols: &[NodeId]) -> Result<NodeId> {
        if cols.is_empty() {
            return shape_err("stack_columns", "no columns");
        }
        let m = self.value(cols[0]).len();
        for &c in cols {
            if self.shape(c) != [m, 1] {
                return shape_err(
                    "stack_columns",
                    format!("expected [{}, 1], got {:?}", m, self.shape(c)),
                );
            }
        }
        let t = cols.len();
        let mut out = vec![0.0; m * t];
        for (j, &c) in cols.iter().enumerate() {
            for (i, &v) in self.value(c).iter().enumerate() {
                out[i * t + j] = v;
            }
        }
        Ok(self.owned(vec![m, t], out, Op::StackColumns(cols.to_vec())))
    }

    /// Concatenates `[m_i, n]` blocks along rows.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return shape_err("concat_rows", "no operands");
        }
        let (_, n) = self.dims2("concat_rows", parts[0])?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (m, pn) = self.dims2("concat_rows", p)?;
            if pn != n {
                return shape_err("concat_rows", format!("column dimension: {} vs {}", pn, n));
            }
            rows += m;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.owned(vec![rows, n], out, Op::ConcatRows(parts.to_vec())))
    }

    /// Flat-index gather, producing a 1-D node.
    pub fn gather(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.len()) {
            return shape_err("gather", format!("index {} out of {}", bad, xv.len()));
        }
        let v = idx.iter().map(|&i| xv[i]).collect();
        Ok(self.owned(vec![idx.len()], v, Op::Gather { x, idx: idx.to_vec() }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().sum();
        self.owned(vec![1], vec![s], Op::Sum(x))
    }

    /// Mean of all elements; zero for an empty operand.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        let s = self.sum(x);
        if n == 0 {
            s
        } else {
            self.affine(s, 1.0 / n as f64, 0.0)
        }
    }

    fn dims2(&self, op: &'static str, x: NodeId) -> Result<(usize, usize)> {
        match *self.shape(x) {
            [m, n] => Ok((m, n)),
            ref s => shape_err(op, format!("expected a 2-D operand, got {:?}", s)),
        }
    }

    /// Reverse-mode sweep from scalar `loss`; returns parameter gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return shape_err(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            );
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param => grads[i] = Some(gy),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => {
                    let n = geom.n();
                    let k = geom.k();
                    acc(&mut grads, *b, &self.nodes, |gb| {
                        for (oc, row) in gy.chunks(n).enumerate() {
                            gb[oc] += row.iter().sum::<f64>();
                        }
                    });
                    acc(&mut grads, *w, &self.nodes, |gw| {
                        gemm(geom.o, n, k, &gy, (n, 1), cols, (1, n), gw, 1.0);
                    });
                    if wants_grad(&self.nodes, *x) {
                        let mut dcols = vec![0.0; k * n];
                        gemm(k, geom.o, n, self.value(*w), (1, k), &gy, (n, 1), &mut dcols, 0.0);
                        acc(&mut grads, *x, &self.nodes, |gx| col2im(&dcols, geom, gx));
                    }
                }
                Op::MaxPool2d { x, argmax } => acc(&mut grads, *x, &self.nodes, |gx| {
                    for (g, &j) in gy.iter().zip(argmax) {
                        gx[j] += g;
                    }
                }),
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    acc(&mut grads, *x, &self.nodes, |gx| {
                        for ((g, &d), &v) in gx.iter_mut().zip(&gy).zip(xv) {
                            if v > 0.0 {
                                *g += d;
                            }
                        }
                    })
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    acc(&mut grads, *x, &self.nodes, |gx| {
                        for ((g, &d), &s) in gx.iter_mut().zip(&gy).zip(y.iter()) {
                            *g += d * s * (1.0 - s);
                        }
                    })
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    acc(&mut grads, *x, &self.nodes, |gx| {
                        for ((g, &d), &t) in gx.iter_mut().zip(&gy).zip(y.iter()) {
                            *g += d * (1.0 - t * t);
                        }
                    })
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &self.nodes, |ga| add_into(ga, &gy));
                    acc(&mut grads, *b, &self.nodes, |gb| add_into(gb, &gy));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, &self.nodes, |ga| {
                        for ((g, &d), &v) in ga.iter_mut().zip(&gy).zip(bv) {
                            *g += d * v;
                        }
                    });
                    acc(&mut grads, *b, &self.nodes, |gb| {
                        for ((g, &d), &v) in gb.iter_mut().zip(&gy).zip(av) {
                            *g += d * v;
                        }
                    });
                }
                Op::Affine { x, scale } => acc(&mut grads, *x, &self.nodes, |gx| {
                    gx.iter_mut().zip(&gy).for_each(|(g, d)| *g += scale * d)
                }),
                Op::SubConst(x) | Op::Reshape(x) => {
                    acc(&mut grads, *x, &self.nodes, |gx| add_into(gx, &gy))
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[1];
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, &self.nodes, |ga| {
                        gemm(m, n, k, &gy, (n, 1), bv, (1, n), ga, 1.0)
                    });
                    acc(&mut grads, *b, &self.nodes, |gb| {
                        gemm(k, m, n, av, (1, k), &gy, (n, 1), gb, 1.0)
                    });
                }
                Op::AddColBias(x, b) => {
                    let n = node.shape[1];
                    acc(&mut grads, *x, &self.nodes, |gx| add_into(gx, &gy));
                    acc(&mut grads, *b, &self.nodes, |gb| {
                        for (r, row) in gy.chunks(n).enumerate() {
                            gb[r] += row.iter().sum::<f64>();
                        }
                    });
                }
                Op::SoftmaxCols(x) => {
                    let (m, n) = (node.shape[0], node.shape[1]);
                    let y = &node.value;
                    acc(&mut grads, *x, &self.nodes, |gx| {
                        for j in 0..n {
                            let dot: f64 = (0..m).map(|i| y[i * n + j] * gy[i * n + j]).sum();
                            for i in 0..m {
                                gx[i * n + j] += y[i * n + j] * (gy[i * n + j] - dot);
                            }
                        }
                    })
                }
                Op::SliceRows { x, start } => {
                    let n = node.shape[1];
                    acc(&mut grads, *x, &self.nodes, |gx| {
                        add_into(&mut gx[start * n..start * n + gy.len()], &gy)
                    })
                }
                Op::Column { x, col } => {
                    let n = self.shape(*x)[1];
                    acc(&mut grads, *x, &self.nodes, |gx| {
                        for (i, &d) in gy.iter().enumerate() {
                            gx[i * n + col] += d;
                        }
                    })
                }
                Op::StackColumns(cols) => {
                    let t = cols.len();
                    for (j, &c) in cols.iter().enumerate() {
                        acc(&mut grads, c, &self.nodes, |gc| {
                            for (i, g) in gc.iter_mut().enumerate() {
                                *g += gy[i * t + j];
                            }
                        });
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        acc(&mut grads, p, &self.nodes, |gp| add_into(gp, &gy[off..off + len]));
                        off += len;
                    }
                }
                Op::Gather { x, idx } => acc(&mut grads, *x, &self.nodes, |gx| {
                    for (&j, &d) in idx.iter().zip(&gy) {
                        gx[j] += d;
                    }
                }),
                Op::LnFloor { x, floor } => {
                    let xv = self.value(*x);
                    acc(&mut grads, *x, &self.nodes, |gx| {
                        for ((g, &d), &v) in gx.iter_mut().zip(&gy).zip(xv) {
                            if v > *floor {
                                *g += d / v;
                            }
                        }
                    })
                }
                Op::Square(x) => {
                    let xv = self.value(*x);
                    acc(&mut grads, *x, &self.nodes, |gx| {
                        for ((g, &d), &v) in gx.iter_mut().zip(&gy).zip(xv) {
                            *g += 2.0 * v * d;
                        }
                    })
                }
                Op::Sum(x) => {
                    let d = gy[0];
                    acc(&mut grads, *x, &self.nodes, |gx| gx.iter_mut().for_each(|g| *g += d))
                }
            }
        }
        let entries = self
            .param_nodes
            .iter()
            .filter_map(|(&pid, &nid)| grads[nid.0].take().map(|g| (pid, g)))
            .collect();
        Ok(Gradients { entries })
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn wants_grad(nodes: &[Node<'_>], id: NodeId) -> bool {
    !matches!(nodes[id.0].op, Op::Leaf)
}

fn acc(
    grads: &mut [Option<Vec<f64>>],
    id: NodeId,
    nodes: &[Node<'_>],
    f: impl FnOnce(&mut [f64]),
) {
    if !wants_grad(nodes, id) {
        return;
    }
    let g = grads[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].value.len()]);
    f(g);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

/// `c = a * b + beta * c`, with explicit (row, col) strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let a_need = (m - 1) * a_strides.0 + (k - 1) * a_strides.1 + 1;
    let b_need = (k - 1) * b_strides.0 + (n - 1) * b_strides.1 + 1;
    assert!(a.len() >= a_need && b.len() >= b_need);
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.n();
    let mut cols = vec![0.0; g.k() * n];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[oy * g.wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let n = g.n();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &dcols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dx[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}
