//! Reverse-mode autodiff on a flat tape of f64 tensors.
//!
//! Backward rules are expressed with tape ops, so a gradient computed with
//! `create_graph` is itself differentiable (needed by the gradient penalty).
//! The two custom ops (landmark consistency, softmax cross-entropy) have
//! first-order backward only.

use std::rc::Rc;
use std::sync::Arc;

use crate::error::Result;
use crate::kernels::{self, ConvGeom};
use crate::landmark::{self, LandmarkLayout, LcSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MulConst(Var, Rc<Vec<f64>>),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    RowExpand(Var),
    ColSum(Var),
    ChannelExpand(Var),
    ChannelSum(Var),
    Reshape(Var),
    Tanh(Var),
    Recip(Var),
    Sqrt(Var),
    Softplus(Var),
    Sigmoid(Var),
    Conv { x: Var, w: Var, geom: ConvGeom },
    ConvT { g: Var, w: Var, geom: ConvGeom },
    WGrad { x: Var, g: Var, geom: ConvGeom },
    GridAverage(Var, Arc<Vec<Vec<usize>>>),
    ZeroMean(Var),
    SumAll(Var),
    Broadcast(Var),
    SampleSum(Var),
    SampleExpand(Var),
    SliceCols { x: Var, start: usize },
    PadCols { x: Var, start: usize },
    Landmark { x: Var, layout: Arc<LandmarkLayout>, cache: Rc<Vec<LcSample>> },
    SoftmaxCe { logits: Var, grad: Rc<Vec<f64>> },
    /// Result of a first-order-only backward rule.
    Opaque(Var, &'static str),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            Conv { x, w, .. } => vec![*x, *w],
            ConvT { g, w, .. } => vec![*g, *w],
            WGrad { x, g, .. } => vec![*x, *g],
            Scale(a, _) | Offset(a) | MulConst(a, _) | RowExpand(a) | ColSum(a) | ChannelExpand(a)
            | ChannelSum(a) | Reshape(a) | Tanh(a) | Recip(a) | Sqrt(a) | Softplus(a) | Sigmoid(a)
            | GridAverage(a, _) | ZeroMean(a) | SumAll(a) | Broadcast(a) | SampleSum(a) | SampleExpand(a)
            | Opaque(a, _) => vec![*a],
            SliceCols { x, .. } | PadCols { x, .. } | Landmark { x, .. } => vec![*x],
            SoftmaxCe { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), recording: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        assert_eq!(self.nodes[v.0].value.len(), 1, "not a scalar");
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = match op {
            Op::Leaf => false,
            _ => self.recording && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node { op, shape, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf; gradients can be requested with respect to it when `requires_grad`.
    pub fn leaf(&mut self, value: Vec<f64>, shape: &[usize], requires_grad: bool) -> Var {
        assert_eq!(numel(shape), value.len(), "leaf shape {shape:?} vs {} values", value.len());
        self.nodes.push(Node { op: Op::Leaf, shape: shape.to_vec(), value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>, shape: &[usize]) -> Var {
        self.leaf(value, shape, false)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, value)
    }

    fn same_shape(&self, a: Var, b: Var) {
        assert_eq!(self.shape(a), self.shape(b), "operand shapes differ");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Add(a, b), shape, value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Sub(a, b), shape, value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Mul(a, b), shape, value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn mul_const(&mut self, a: Var, c: Rc<Vec<f64>>) -> Var {
        assert_eq!(c.len(), self.value(a).len());
        let value = self.value(a).iter().zip(c.iter()).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::MulConst(a, c), shape, value)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mask: Vec<f64> = self.value(a).iter().map(|&x| if x > 0.0 { 1.0 } else { slope }).collect();
        self.mul_const(a, Rc::new(mask))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// `op(a) * op(b)` for 2-D operands, `op` transposing when its flag is set.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul needs 2-D operands");
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut value = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(a), ta, self.value(b), tb, &mut value, 0.0);
        self.push(Op::MatMul { a, b, ta, tb }, vec![m, n], value)
    }

    /// `[n] -> [m, n]`, every row a copy.
    pub fn row_expand(&mut self, b: Var, m: usize) -> Var {
        let n = self.value(b).len();
        let value = self.value(b).repeat(m);
        self.push(Op::RowExpand(b), vec![m, n], value)
    }

    /// `[m, n] -> [n]`.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let n = *self.shape(a).last().unwrap();
        let mut value = vec![0.0; n];
        for row in self.value(a).chunks(n) {
            value.iter_mut().zip(row).for_each(|(s, x)| *s += x);
        }
        self.push(Op::ColSum(a), vec![n], value)
    }

    /// `[c] -> shape` with `shape[1] == c`, constant over every other axis.
    pub fn channel_expand(&mut self, b: Var, shape: &[usize]) -> Var {
        let c = self.value(b).len();
        assert_eq!(shape[1], c);
        let inner = numel(&shape[2..]);
        let mut value = Vec::with_capacity(numel(shape));
        for _ in 0..shape[0] {
            for &x in self.value(b) {
                value.extend(std::iter::repeat_n(x, inner));
            }
        }
        self.push(Op::ChannelExpand(b), shape.to_vec(), value)
    }

    pub fn channel_sum(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let (c, inner) = (shape[1], numel(&shape[2..]));
        let mut value = vec![0.0; c];
        for (i, chunk) in self.value(a).chunks(inner).enumerate() {
            value[i % c] += chunk.iter().sum::<f64>();
        }
        self.push(Op::ChannelSum(a), vec![c], value)
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let e = self.channel_expand(b, &shape);
        self.add(x, e)
    }

    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let m = self.shape(x)[0];
        let e = self.row_expand(b, m);
        self.add(x, e)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        assert_eq!(numel(shape), self.value(a).len(), "reshape changes the element count");
        let value = self.value(a).to_vec();
        self.push(Op::Reshape(a), shape.to_vec(), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    /// `ln(1 + e^x)`, stable for large `|x|`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    fn conv_geom(&self, x: Var, w: Var, stride: usize) -> ConvGeom {
        let (sx, sw) = (self.shape(x), self.shape(w));
        assert!(sx.len() == 4 && sw.len() == 4 && sw[2] == sw[3], "conv needs NCHW input and OIkk kernel");
        ConvGeom { batch: sx[0], ci: sx[1], co: sw[0], h: sx[2], w: sx[3], k: sw[2], stride }
    }

    /// Cyclic convolution of `[b, ci, h, w]` by `[co, ci, k, k]`.
    pub fn conv(&mut self, x: Var, w: Var, stride: usize) -> Var {
        let geom = self.conv_geom(x, w, stride);
        assert_eq!(geom.ci, self.shape(w)[1], "conv channel mismatch");
        assert!(geom.k % 2 == 1 && geom.h % stride == 0 && geom.w % stride == 0, "bad conv geometry");
        self.conv_with(x, w, geom)
    }

    fn conv_with(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let value = kernels::conv_forward(&geom, self.value(x), self.value(w));
        self.push(Op::Conv { x, w, geom }, vec![geom.batch, geom.co, geom.ho(), geom.wo()], value)
    }

    /// Cyclic transposed convolution: `[b, co, h, w]` by `[co, ci, k, k]`
    /// gives `[b, ci, h * stride, w * stride]`.
    pub fn conv_transpose(&mut self, g: Var, w: Var, stride: usize) -> Var {
        let (sg, sw) = (self.shape(g).to_vec(), self.shape(w).to_vec());
        assert!(sg.len() == 4 && sw.len() == 4 && sg[1] == sw[0] && sw[2] % 2 == 1, "bad transposed conv");
        let geom = ConvGeom { batch: sg[0], ci: sw[1], co: sw[0], h: sg[2] * stride, w: sg[3] * stride, k: sw[2], stride };
        self.conv_t_with(g, w, geom)
    }

    fn conv_t_with(&mut self, g: Var, w: Var, geom: ConvGeom) -> Var {
        let value = kernels::conv_transpose(&geom, self.value(g), self.value(w));
        self.push(Op::ConvT { g, w, geom }, vec![geom.batch, geom.ci, geom.h, geom.w], value)
    }

    fn wgrad_with(&mut self, x: Var, g: Var, geom: ConvGeom) -> Var {
        let value = kernels::conv_weight_grad(&geom, self.value(x), self.value(g));
        self.push(Op::WGrad { x, g, geom }, vec![geom.co, geom.ci, geom.k, geom.k], value)
    }

    /// Average every `n x n` plane over a group of grid permutations. The
    /// group must be closed under inverses, which makes the map self-adjoint.
    pub fn grid_average(&mut self, a: Var, group: Arc<Vec<Vec<usize>>>) -> Var {
        let plane = group[0].len();
        let inv = 1.0 / group.len() as f64;
        let mut value = vec![0.0; self.value(a).len()];
        for (src, dst) in self.value(a).chunks(plane).zip(value.chunks_mut(plane)) {
            for perm in group.iter() {
                dst.iter_mut().zip(perm).for_each(|(d, &p)| *d += src[p]);
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let shape = self.shape(a).to_vec();
        self.push(Op::GridAverage(a, group), shape, value)
    }

    /// Subtract the mean of every trailing `h x w` plane.
    pub fn zero_mean(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let value = zero_mean_planes(self.value(a), plane_len(&shape));
        self.push(Op::ZeroMean(a), shape, value)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Op::SumAll(a), vec![1], vec![s])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `[1] -> shape`.
    pub fn broadcast(&mut self, s: Var, shape: &[usize]) -> Var {
        let x = self.scalar(s);
        self.push(Op::Broadcast(s), shape.to_vec(), vec![x; numel(shape)])
    }

    /// `[b, ...] -> [b]`.
    pub fn sample_sum(&mut self, a: Var) -> Var {
        let b = self.shape(a)[0];
        let inner = self.value(a).len() / b;
        let value = self.value(a).chunks(inner).map(|c| c.iter().sum()).collect();
        self.push(Op::SampleSum(a), vec![b], value)
    }

    /// `[b] -> shape` with `shape[0] == b`.
    pub fn sample_expand(&mut self, a: Var, shape: &[usize]) -> Var {
        let inner = numel(&shape[1..]);
        let value = self.value(a).iter().flat_map(|&x| std::iter::repeat_n(x, inner)).collect();
        self.push(Op::SampleExpand(a), shape.to_vec(), value)
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let shape = self.shape(x).to_vec();
        assert!(shape.len() == 2 && start + len <= shape[1]);
        let value = self.value(x).chunks(shape[1]).flat_map(|r| r[start..start + len].iter().copied()).collect();
        self.push(Op::SliceCols { x, start }, vec![shape[0], len], value)
    }

    /// Place a 2-D tensor at columns `start..` of a zero `[m, total]` tensor.
    pub fn pad_cols(&mut self, x: Var, start: usize, total: usize) -> Var {
        let [m, len] = [self.shape(x)[0], self.shape(x)[1]];
        let mut value = vec![0.0; m * total];
        for (r, row) in self.value(x).chunks(len).enumerate() {
            value[r * total + start..r * total + start + len].copy_from_slice(row);
        }
        self.push(Op::PadCols { x, start }, vec![m, total], value)
    }

    /// Landmark consistency over a `[b, 3F, n, n]` tensor.
    pub fn landmark(&mut self, x: Var, layout: Arc<LandmarkLayout>) -> Result<Var> {
        let (value, cache) = landmark::lc_forward(&layout, self.value(x))?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Landmark { x, layout, cache: Rc::new(cache) }, shape, value))
    }

    /// Mean pixel cross-entropy of `[b, k, h, w]` logits against class labels
    /// laid out `[b, h, w]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let shape = self.shape(logits).to_vec();
        let (b, k, plane) = (shape[0], shape[1], plane_len(&shape));
        assert_eq!(labels.len(), b * plane);
        let x = self.value(logits);
        let mut grad = vec![0.0; x.len()];
        let mut loss = 0.0;
        let count = (b * plane) as f64;
        for s in 0..b {
            for p in 0..plane {
                let at = |c: usize| (s * k + c) * plane + p;
                let max = (0..k).map(|c| x[at(c)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..k).map(|c| (x[at(c)] - max).exp()).sum();
                let label = labels[s * plane + p];
                loss += z.ln() + max - x[at(label)];
                for c in 0..k {
                    grad[at(c)] = ((x[at(c)] - max).exp() / z - f64::from(u8::from(c == label))) / count;
                }
            }
        }
        self.push(Op::SoftmaxCe { logits, grad: Rc::new(grad) }, vec![1], vec![loss / count])
    }

    fn opaque(&mut self, input: Var, name: &'static str, shape: Vec<usize>, value: Vec<f64>) -> Var {
        self.push(Op::Opaque(input, name), shape, value)
    }

    /// Gradients of scalar `out` with respect to `wrt`. With `create_graph`
    /// the returned gradients are differentiable tape nodes.
    pub fn grad(&mut self, out: Var, wrt: &[Var], create_graph: bool) -> Vec<Var> {
        assert_eq!(self.value(out).len(), 1, "gradients need a scalar output");
        let end = out.0 + 1;
        let mut reach = vec![false; end];
        for w in wrt {
            if w.0 < end {
                reach[w.0] = true;
            }
        }
        for i in 0..end {
            if !reach[i] && self.nodes[i].requires_grad {
                reach[i] = self.nodes[i].op.inputs().iter().any(|v| reach[v.0]);
            }
        }
        let previous = self.recording;
        self.recording = create_graph;
        let mut grads: Vec<Option<Var>> = vec![None; end];
        grads[out.0] = Some(self.constant(vec![1.0], &[1]));
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if !reach[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (input, contribution) in self.backward(Var(i), &op, g, &reach) {
                grads[input.0] = Some(match grads[input.0] {
                    None => contribution,
                    Some(prev) => self.add(prev, contribution),
                });
            }
        }
        self.recording = previous;
        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape(*w).to_vec();
                    self.constant(vec![0.0; numel(&shape)], &shape)
                }
            })
            .collect()
    }

    fn backward(&mut self, y: Var, op: &Op, g: Var, reach: &[bool]) -> Vec<(Var, Var)> {
        let need = |v: &Var| reach[v.0];
        let mut out = Vec::new();
        match op.clone() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if need(&a) {
                    out.push((a, g));
                }
                if need(&b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(&a) {
                    out.push((a, g));
                }
                if need(&b) {
                    out.push((b, self.neg(g)));
                }
            }
            Op::Mul(a, b) => {
                if need(&a) {
                    out.push((a, self.mul(g, b)));
                }
                if need(&b) {
                    out.push((b, self.mul(g, a)));
                }
            }
            Op::Scale(a, c) => out.push((a, self.scale(g, c))),
            Op::Offset(a) => out.push((a, g)),
            Op::MulConst(a, c) => out.push((a, self.mul_const(g, c))),
            Op::MatMul { a, b, ta, tb } => {
                if need(&a) {
                    let ga = if ta { self.matmul(b, g, tb, true) } else { self.matmul(g, b, false, !tb) };
                    out.push((a, ga));
                }
                if need(&b) {
                    let gb = if tb { self.matmul(g, a, true, ta) } else { self.matmul(a, g, !ta, false) };
                    out.push((b, gb));
                }
            }
            Op::RowExpand(a) => out.push((a, self.col_sum(g))),
            Op::ColSum(a) => {
                let m = self.shape(a)[0];
                out.push((a, self.row_expand(g, m)));
            }
            Op::ChannelExpand(a) => out.push((a, self.channel_sum(g))),
            Op::ChannelSum(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.channel_expand(g, &shape)));
            }
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.reshape(g, &shape)));
            }
            Op::Tanh(a) => {
                let sq = self.square(y);
                let d = self.scale(sq, -1.0);
                let d = self.offset(d, 1.0);
                out.push((a, self.mul(g, d)));
            }
            Op::Recip(a) => {
                let sq = self.square(y);
                let d = self.scale(sq, -1.0);
                out.push((a, self.mul(g, d)));
            }
            Op::Sqrt(a) => {
                let r = self.recip(y);
                let d = self.scale(r, 0.5);
                out.push((a, self.mul(g, d)));
            }
            Op::Softplus(a) => {
                let s = self.sigmoid(a);
                out.push((a, self.mul(g, s)));
            }
            Op::Sigmoid(a) => {
                let one_minus = self.scale(y, -1.0);
                let one_minus = self.offset(one_minus, 1.0);
                let d = self.mul(y, one_minus);
                out.push((a, self.mul(g, d)));
            }
            Op::Conv { x, w, geom } => {
                if need(&x) {
                    out.push((x, self.conv_t_with(g, w, geom)));
                }
                if need(&w) {
                    out.push((w, self.wgrad_with(x, g, geom)));
                }
            }
            Op::ConvT { g: h, w, geom } => {
                if need(&h) {
                    out.push((h, self.conv_with(g, w, geom)));
                }
                if need(&w) {
                    out.push((w, self.wgrad_with(g, h, geom)));
                }
            }
            Op::WGrad { x, g: h, geom } => {
                if need(&x) {
                    out.push((x, self.conv_t_with(h, g, geom)));
                }
                if need(&h) {
                    out.push((h, self.conv_with(x, g, geom)));
                }
            }
            Op::GridAverage(a, group) => out.push((a, self.grid_average(g, group))),
            Op::ZeroMean(a) => out.push((a, self.zero_mean(g))),
            Op::SumAll(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.broadcast(g, &shape)));
            }
            Op::Broadcast(a) => out.push((a, self.sum(g))),
            Op::SampleSum(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.sample_expand(g, &shape)));
            }
            Op::SampleExpand(a) => out.push((a, self.sample_sum(g))),
            Op::SliceCols { x, start } => {
                let total = self.shape(x)[1];
                out.push((x, self.pad_cols(g, start, total)));
            }
            Op::PadCols { x, start } => {
                let len = self.shape(x)[1];
                out.push((x, self.slice_cols(g, start, len)));
            }
            Op::Landmark { x, layout, cache } => {
                let value = landmark::lc_backward(&layout, &cache, self.value(g));
                let shape = self.shape(x).to_vec();
                out.push((x, self.opaque(g, "landmark consistency", shape, value)));
            }
            Op::SoftmaxCe { logits, grad } => {
                let s = self.scalar(g);
                let value = grad.iter().map(|v| v * s).collect();
                let shape = self.shape(logits).to_vec();
                out.push((logits, self.opaque(g, "softmax cross-entropy", shape, value)));
            }
            Op::Opaque(_, name) => panic!("second derivative of {name} is not implemented"),
        }
        out
    }
}

fn plane_len(shape: &[usize]) -> usize {
    if shape.len() >= 2 {
        shape[shape.len() - 2] * shape[shape.len() - 1]
    } else {
        numel(shape)
    }
}

fn zero_mean_planes(x: &[f64], plane: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for p in out.chunks_mut(plane) {
        let m = p.iter().sum::<f64>() / plane as f64;
        p.iter_mut().for_each(|v| *v -= m);
    }
    out
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Central differences of `f` at `x0` against the tape gradient.
    fn check(shape: &[usize], seed: u64, f: impl Fn(&mut Tape, Var) -> Var) {
        let x0 = random(numel(shape), seed);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone(), shape, true);
        let y = f(&mut tape, x);
        let g = tape.grad(y, &[x], false)[0];
        let analytic = tape.value(g).to_vec();
        let h = 1e-6;
        for i in 0..x0.len() {
            let eval = |d: f64| {
                let mut t = Tape::new();
                let mut xs = x0.clone();
                xs[i] += d;
                let x = t.leaf(xs, shape, true);
                let y = f(&mut t, x);
                t.scalar(y)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()), "entry {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn elementwise_rules() {
        check(&[2, 3], 1, |t, x| {
            let a = t.tanh(x);
            let b = t.sigmoid(a);
            let c = t.softplus(x);
            let d = t.mul(b, c);
            let e = t.offset(d, 3.0);
            let f = t.sqrt(e);
            let g = t.recip(f);
            let l = t.leaky_relu(x, 0.2);
            let s = t.sub(g, l);
            t.sum(s)
        });
    }

    #[test]
    fn matmul_rules_cover_transposes() {
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            check(&[3, 3], 2, |t, x| {
                let w = t.constant(random(9, 5), &[3, 3]);
                let y = t.matmul(x, w, ta, tb);
                let z = t.matmul(w, y, tb, ta);
                let q = t.square(z);
                t.sum(q)
            });
        }
    }

    #[test]
    fn conv_rules() {
        let w0 = random(4 * 2 * 9, 3);
        check(&[2, 2, 4, 4], 4, |t, x| {
            let w = t.constant(w0.clone(), &[4, 2, 3, 3]);
            let y = t.conv(x, w, 2);
            let z = t.conv_transpose(y, w, 2);
            let q = t.square(z);
            t.sum(q)
        });
        let x0 = random(2 * 2 * 4 * 4, 6);
        check(&[4, 2, 3, 3], 7, |t, w| {
            let x = t.constant(x0.clone(), &[2, 2, 4, 4]);
            let y = t.conv(x, w, 1);
            let b = t.constant(vec![0.5, -0.2, 0.1, 0.3], &[4]);
            let y = t.add_channel_bias(y, b);
            let q = t.square(y);
            t.sum(q)
        });
    }

    #[test]
    fn reductions_and_slices() {
        check(&[2, 5], 8, |t, x| {
            let a = t.slice_cols(x, 1, 3);
            let s = t.sample_sum(a);
            let q = t.square(s);
            let b = t.col_sum(x);
            let r = t.row_expand(b, 4);
            let r = t.square(r);
            let m = t.mean(r);
            let z = t.zero_mean(x);
            let zq = t.square(z);
            let zs = t.sum(zq);
            let qs = t.sum(q);
            let u = t.add(qs, m);
            t.add(u, zs)
        });
    }

    #[test]
    fn second_order_through_conv_matches_differences() {
        // d/dw of |d/dx sum(leaky(conv(x, w)))|^2 against finite differences in w.
        let x0 = random(2 * 3 * 4 * 4, 9);
        check(&[2, 3, 3, 3], 10, |t, w| {
            let x = t.leaf(x0.clone(), &[2, 3, 4, 4], true);
            let y = t.conv(x, w, 1);
            let y = t.tanh(y);
            let s = t.sum(y);
            let gx = t.grad(s, &[x], true)[0];
            let n = t.square(gx);
            let n = t.sample_sum(n);
            let n = t.offset(n, 1e-3);
            let n = t.sqrt(n);
            t.sum(n)
        });
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let labels = vec![0, 1, 2, 1, 0, 2, 2, 1];
        check(&[2, 3, 2, 2], 11, move |t, x| t.softmax_cross_entropy(x, &labels));
    }

    #[test]
    fn stable_log_sigmoid() {
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0 && softplus(800.0).is_finite());
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
