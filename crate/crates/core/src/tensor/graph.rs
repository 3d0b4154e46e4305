use super::kernels::{self, ConvGeom};
use super::{Element, Tensor};
use crate::error::{contract_err, dim_err, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    #[inline]
    fn apply<T: Element>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Gelu => {
                let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
                T::of(0.5) * x * (T::one() + u.tanh())
            }
        }
    }

    /// Derivative given input `x` and output `y`.
    #[inline]
    fn derivative<T: Element>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
            Activation::Gelu => {
                let c = T::of(GELU_C);
                let a = T::of(GELU_A);
                let u = c * (x + a * x * x * x);
                let t = u.tanh();
                let half = T::of(0.5);
                half * (T::one() + t)
                    + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

type CustomBackward<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Vec<T>>>;

enum Op<T: Element> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Abs(Var),
    AddBias { x: Var, b: Var, axis: usize },
    MulBroadcast { x: Var, w: Var, axis: usize },
    Act(Var, Activation),
    Softmax { x: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    GlobalAvgPool(Var),
    AvgPool2d { x: Var, k: usize },
    Reshape(Var),
    Transpose { x: Var, rows: usize, cols: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    Depthwise { x: Var, w: Var, geom: ConvGeom },
    Upsample { x: Var, factor: usize },
    Conv1d { x: Var, w: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    BceLogits { x: Var, target: Vec<T> },
    CrossEntropy { x: Var, target: Vec<usize> },
    SmoothL1 { pred: Var, target: Vec<T>, mask: Vec<bool>, count: usize },
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

impl<T: Element> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Abs(x)
            | Op::Act(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::GlobalAvgPool(x)
            | Op::Reshape(x) => vec![*x],
            Op::AddBias { x, b, .. } => vec![*x, *b],
            Op::MulBroadcast { x, w, .. } => vec![*x, *w],
            Op::Softmax { x, .. }
            | Op::AvgPool2d { x, .. }
            | Op::Transpose { x, .. }
            | Op::Narrow { x, .. }
            | Op::Upsample { x, .. }
            | Op::BceLogits { x, .. }
            | Op::CrossEntropy { x, .. } => vec![*x],
            Op::SmoothL1 { pred, .. } => vec![*pred],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Conv2d { x, w, .. } | Op::Depthwise { x, w, .. } | Op::Conv1d { x, w } => {
                vec![*x, *w]
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Split of an axis into `outer × mid × inner` blocks.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Tape of primitive operations. Values are held by the tape; gradients are
/// written into each node's [`Tensor::grad`] by [`Graph::backward`].
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].value.requires_grad);
        let value = Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
        };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Places `t` on the tape as a leaf. Its `requires_grad` flag is kept.
    pub fn leaf(&mut self, mut t: Tensor<T>) -> Var {
        t.grad = None;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let mut t = t;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_grad())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn check_axis(&self, x: Var, axis: usize, what: &str) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(dim_err!(
                "{what}: axis {axis} invalid for shape {:?}",
                self.shape(x)
            ));
        }
        Ok(())
    }

    fn chw(&self, x: Var, what: &str) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(dim_err!("{what}: expected C×H×W input, got {:?}", s)),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, k2, n) = match (self.shape(a), self.shape(b)) {
            (&[m, k], &[k2, n]) => (m, k, k2, n),
            (sa, sb) => {
                return Err(dim_err!("matmul needs 2-D operands, got {:?} and {:?}", sa, sb))
            }
        };
        if k != k2 {
            return Err(dim_err!(
                "matmul inner extents differ: {:?} × {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let out = kernels::gemm(self.data(a), self.data(b), m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, "elementwise op")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), data, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let data = self.data(x).iter().map(|&v| v * c).collect();
        self.push(self.shape(x).to_vec(), data, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let data = self.data(x).iter().map(|&v| v + c).collect();
        self.push(self.shape(x).to_vec(), data, Op::AddScalar(x))
    }

    /// `1 - x`, used by gated recurrences.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -T::one());
        self.add_scalar(neg, T::one())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|v| v.abs()).collect();
        self.push(self.shape(x).to_vec(), data, Op::Abs(x))
    }

    /// Adds vector `b` (length `shape[axis]`) along `axis`.
    pub fn add_bias(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "add_bias")?;
        let (outer, mid, inner) = axis_split(self.shape(x), axis);
        if self.value(b).len() != mid {
            return Err(dim_err!(
                "add_bias: bias of shape {:?} does not match axis {axis} of {:?}",
                self.shape(b),
                self.shape(x)
            ));
        }
        let xs = self.data(x);
        let bs = self.data(b);
        let mut data = Vec::with_capacity(xs.len());
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                data.extend(xs[base..base + inner].iter().map(|&v| v + bs[m]));
            }
        }
        Ok(self.push(self.shape(x).to_vec(), data, Op::AddBias { x, b, axis }))
    }

    /// Multiplies by vector `w` (length `shape[axis]`) along `axis`.
    pub fn mul_broadcast(&mut self, x: Var, w: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "mul_broadcast")?;
        let (outer, mid, inner) = axis_split(self.shape(x), axis);
        if self.value(w).len() != mid {
            return Err(dim_err!(
                "mul_broadcast: weights of shape {:?} do not match axis {axis} of {:?}",
                self.shape(w),
                self.shape(x)
            ));
        }
        let xs = self.data(x);
        let ws = self.data(w);
        let mut data = Vec::with_capacity(xs.len());
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                data.extend(xs[base..base + inner].iter().map(|&v| v * ws[m]));
            }
        }
        Ok(self.push(self.shape(x).to_vec(), data, Op::MulBroadcast { x, w, axis }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let data = self.data(x).iter().map(|&v| kind.apply(v)).collect();
        self.push(self.shape(x).to_vec(), data, Op::Act(x, kind))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "softmax")?;
        let (outer, mid, inner) = axis_split(self.shape(x), axis);
        let xs = self.data(x);
        let mut out = vec![T::zero(); xs.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |m: usize| (o * mid + m) * inner + i;
                let mut mx = T::neg_infinity();
                for m in 0..mid {
                    mx = mx.max(xs[at(m)]);
                }
                let mut z = T::zero();
                for m in 0..mid {
                    let e = (xs[at(m)] - mx).exp();
                    out[at(m)] = e;
                    z = z + e;
                }
                for m in 0..mid {
                    out[at(m)] = out[at(m)] / z;
                }
            }
        }
        Ok(self.push(self.shape(x).to_vec(), out, Op::Softmax { x, axis }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().fold(T::zero(), |a, &b| a + b);
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::of(self.value(x).len() as f64);
        let s = self.data(x).iter().fold(T::zero(), |a, &b| a + b);
        self.push(vec![1], vec![s / n], Op::Mean(x))
    }

    /// `C×H×W → C×1×1`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "global_avg_pool")?;
        let n = T::of((h * w) as f64);
        let xs = self.data(x);
        let data = (0..c)
            .map(|ch| xs[ch * h * w..(ch + 1) * h * w].iter().fold(T::zero(), |a, &b| a + b) / n)
            .collect();
        Ok(self.push(vec![c, 1, 1], data, Op::GlobalAvgPool(x)))
    }

    /// Non-overlapping `k×k` average pooling; extents must divide exactly.
    pub fn avg_pool_2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x, "avg_pool_2d")?;
        if k == 0 || k > h || k > w || h % k != 0 || w % k != 0 {
            return Err(dim_err!(
                "avg_pool_2d: window {k} must divide spatial extents {h}×{w}"
            ));
        }
        let (ho, wo) = (h / k, w / k);
        let inv = T::one() / T::of((k * k) as f64);
        let xs = self.data(x);
        let mut out = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let o = (ch * ho + y / k) * wo + xx / k;
                    out[o] = out[o] + xs[(ch * h + y) * w + xx];
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        Ok(self.push(vec![c, ho, wo], out, Op::AvgPool2d { x, k }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || n != self.value(x).len() {
            return Err(dim_err!("cannot reshape {:?} into {:?}", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = match *self.shape(x) {
            [r, c] => (r, c),
            ref s => return Err(dim_err!("transpose needs a 2-D tensor, got {:?}", s)),
        };
        let data = kernels::transpose(self.data(x), rows, cols);
        Ok(self.push(vec![cols, rows], data, Op::Transpose { x, rows, cols }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| contract_err!("concat of zero tensors"))?;
        self.check_axis(first, axis, "concat")?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err!(
                    "concat along axis {axis}: {:?} incompatible with {:?}",
                    s,
                    base
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let m = self.shape(p)[axis];
                let src = self.data(p);
                data.extend_from_slice(&src[o * m * inner..(o + 1) * m * inner]);
            }
        }
        Ok(self.push(shape, data, Op::Concat { parts: parts.to_vec(), axis }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis(x, axis, "narrow")?;
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(dim_err!(
                "narrow [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                shape
            ));
        }
        let (outer, mid, inner) = axis_split(&shape, axis);
        let src = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = (o * mid + start) * inner;
            data.extend_from_slice(&src[b..b + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(out_shape, data, Op::Narrow { x, axis, start }))
    }

    /// Cross-correlation of `input[C×H×W]` with `kernel[O×C×k×k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, h, wd) = self.chw(x, "conv2d")?;
        let (c_out, kc, k) = match *self.shape(w) {
            [o, c, k1, k2] if k1 == k2 => (o, c, k1),
            ref s => return Err(dim_err!("conv2d: kernel must be O×C×k×k, got {:?}", s)),
        };
        if kc != c_in {
            return Err(dim_err!(
                "conv2d: kernel {:?} expects {kc} input channels, input is {:?}",
                self.shape(w),
                self.shape(x)
            ));
        }
        let geom = conv_geom(c_in, h, wd, k, stride, pad)?;
        let cols = kernels::im2col(self.data(x), &geom);
        let out = kernels::gemm(self.data(w), &cols, c_out, geom.patch_len(), geom.out_len());
        Ok(self.push(
            vec![c_out, geom.h_out, geom.w_out],
            out,
            Op::Conv2d { x, w, geom },
        ))
    }

    /// Per-channel convolution with `kernel[C×k×k]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c, h, wd) = self.chw(x, "depthwise_conv2d")?;
        let k = match *self.shape(w) {
            [kc, k1, k2] if kc == c && k1 == k2 => k1,
            ref s => {
                return Err(dim_err!(
                    "depthwise_conv2d: kernel {:?} does not fit input {:?}",
                    s,
                    self.shape(x)
                ))
            }
        };
        let geom = conv_geom(1, h, wd, k, stride, pad)?;
        let xs = self.data(x);
        let ws = self.data(w);
        let (ho, wo) = (geom.h_out, geom.w_out);
        let mut out = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            let plane = &xs[ch * h * wd..(ch + 1) * h * wd];
            let kern = &ws[ch * k * k..(ch + 1) * k * k];
            let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
            depthwise_plane(plane, kern, dst, &geom);
        }
        Ok(self.push(vec![c, ho, wo], out, Op::Depthwise { x, w, geom: ConvGeom { c_in: c, ..geom } }))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x, "upsample_nearest")?;
        if factor == 0 {
            return Err(dim_err!("upsample factor must be >= 1"));
        }
        let (ho, wo) = (h * factor, w * factor);
        let xs = self.data(x);
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for y in 0..ho {
                let row = &xs[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
                for xx in 0..wo {
                    out.push(row[xx / factor]);
                }
            }
        }
        Ok(self.push(vec![c, ho, wo], out, Op::Upsample { x, factor }))
    }

    /// Zero-padded "same" 1-D convolution over the flattened input with an
    /// odd-length kernel.
    pub fn conv1d_same(&mut self, x: Var, w: Var) -> Result<Var> {
        let k = self.value(w).len();
        if k % 2 == 0 {
            return Err(dim_err!("conv1d_same: kernel length {k} must be odd"));
        }
        let r = (k / 2) as isize;
        let xs = self.data(x);
        let ws = self.data(w);
        let n = xs.len() as isize;
        let out = (0..n)
            .map(|c| {
                let mut s = T::zero();
                for (j, &wj) in ws.iter().enumerate() {
                    let idx = c + j as isize - r;
                    if idx >= 0 && idx < n {
                        s = s + wj * xs[idx as usize];
                    }
                }
                s
            })
            .collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::Conv1d { x, w }))
    }

    /// Layer normalization over the last axis of an `N×D` tensor.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, d) = match *self.shape(x) {
            [n, d] => (n, d),
            ref s => return Err(dim_err!("layer_norm needs N×D input, got {:?}", s)),
        };
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(dim_err!(
                "layer_norm: gamma {:?} / beta {:?} must have length {d}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let xs = self.data(x);
        let gs = self.data(gamma);
        let bs = self.data(beta);
        let inv_d = T::one() / T::of(d as f64);
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for i in 0..n {
            let row = &xs[i * d..(i + 1) * d];
            let mu = row.iter().fold(T::zero(), |a, &b| a + b) * inv_d;
            let var = row.iter().fold(T::zero(), |a, &b| a + (b - mu) * (b - mu)) * inv_d;
            let r = T::one() / (var + T::of(eps)).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let xh = (row[j] - mu) * r;
                xhat[i * d + j] = xh;
                out[i * d + j] = xh * gs[j] + bs[j];
            }
        }
        Ok(self.push(
            vec![n, d],
            out,
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(x)` against `target ∈ [0,1]`.
    pub fn bce_with_logits(&mut self, x: Var, target: &[T]) -> Result<Var> {
        if target.len() != self.value(x).len() {
            return Err(dim_err!(
                "bce_with_logits: {} targets for {:?}",
                target.len(),
                self.shape(x)
            ));
        }
        let n = T::of(target.len() as f64);
        let total = self
            .data(x)
            .iter()
            .zip(target)
            .fold(T::zero(), |acc, (&z, &y)| {
                acc + z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln()
            });
        Ok(self.push(
            vec![1],
            vec![total / n],
            Op::BceLogits { x, target: target.to_vec() },
        ))
    }

    /// Mean cross-entropy of logits `x[K×N]` (classes on axis 0) against
    /// class ids `target[N]`.
    pub fn cross_entropy(&mut self, x: Var, target: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let k = shape[0];
        let n: usize = shape[1..].iter().product();
        if target.len() != n {
            return Err(dim_err!(
                "cross_entropy: {} targets for logits {:?}",
                target.len(),
                shape
            ));
        }
        if let Some(bad) = target.iter().find(|&&t| t >= k) {
            return Err(contract_err!("cross_entropy: class id {bad} outside 0..{k}"));
        }
        let xs = self.data(x);
        let mut total = T::zero();
        for (i, &t) in target.iter().enumerate() {
            let mut mx = T::neg_infinity();
            for c in 0..k {
                mx = mx.max(xs[c * n + i]);
            }
            let mut z = T::zero();
            for c in 0..k {
                z = z + (xs[c * n + i] - mx).exp();
            }
            total = total + mx + z.ln() - xs[t * n + i];
        }
        let loss = total / T::of(n as f64);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy { x, target: target.to_vec() },
        ))
    }

    /// Mean smooth-L1 (transition at 1) over entries where `mask` is set;
    /// exactly zero when the mask is empty.
    pub fn smooth_l1_masked(&mut self, pred: Var, target: &[T], mask: &[bool]) -> Result<Var> {
        let len = self.value(pred).len();
        if target.len() != len || mask.len() != len {
            return Err(dim_err!(
                "smooth_l1_masked: pred {:?}, {} targets, {} mask entries",
                self.shape(pred),
                target.len(),
                mask.len()
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let mut total = T::zero();
        if count > 0 {
            for ((&p, &t), &m) in self.data(pred).iter().zip(target).zip(mask) {
                if m {
                    total = total + smooth_l1(p - t);
                }
            }
            total = total / T::of(count as f64);
        }
        Ok(self.push(
            vec![1],
            vec![total],
            Op::SmoothL1 {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
                count,
            },
        ))
    }

    /// Records an operation with a caller-supplied backward rule. The rule
    /// receives the input values, the output value and the output gradient,
    /// and returns one gradient buffer per input.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor<T>,
        backward: impl Fn(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Vec<T>> + 'static,
    ) -> Var {
        let Tensor { shape, data, .. } = output;
        self.push(
            shape,
            data,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward: Box::new(backward),
            },
        )
    }

    /// Reverse sweep from scalar `loss`. Gradients accumulate additively
    /// across fan-out; previous gradients on the tape are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            let contributions = self.local_backward(idx, &gy);
            for (v, g) in contributions {
                if !self.nodes[v.0].value.requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
            self.nodes[idx].value.grad = Some(gy);
        }
        Ok(())
    }

    fn local_backward(&self, idx: usize, gy: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let want = |v: Var| self.nodes[v.0].value.requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            &Op::MatMul { a, b, m, k, n } => {
                let mut out = Vec::new();
                if want(a) {
                    // dA = dC · Bᵀ
                    let bt = kernels::transpose(self.data(b), k, n);
                    out.push((a, kernels::gemm(gy, &bt, m, n, k)));
                }
                if want(b) {
                    // dB = Aᵀ · dC
                    let at = kernels::transpose(self.data(a), m, k);
                    out.push((b, kernels::gemm(&at, gy, k, m, n)));
                }
                out
            }
            &Op::Add(a, b) => vec![(a, gy.to_vec()), (b, gy.to_vec())],
            &Op::Sub(a, b) => vec![(a, gy.to_vec()), (b, gy.iter().map(|&g| -g).collect())],
            &Op::Mul(a, b) => {
                let (av, bv) = (self.data(a), self.data(b));
                vec![
                    (a, gy.iter().zip(bv).map(|(&g, &v)| g * v).collect()),
                    (b, gy.iter().zip(av).map(|(&g, &v)| g * v).collect()),
                ]
            }
            &Op::Scale(x, c) => vec![(x, gy.iter().map(|&g| g * c).collect())],
            &Op::AddScalar(x) => vec![(x, gy.to_vec())],
            &Op::Abs(x) => {
                let xs = self.data(x);
                vec![(
                    x,
                    gy.iter()
                        .zip(xs)
                        .map(|(&g, &v)| {
                            if v > T::zero() {
                                g
                            } else if v < T::zero() {
                                -g
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                )]
            }
            &Op::AddBias { x, b, axis } => {
                let (outer, mid, inner) = axis_split(self.shape(x), axis);
                let mut gb = vec![T::zero(); mid];
                for o in 0..outer {
                    for (m, acc) in gb.iter_mut().enumerate() {
                        let base = (o * mid + m) * inner;
                        *acc = gy[base..base + inner].iter().fold(*acc, |s, &g| s + g);
                    }
                }
                vec![(x, gy.to_vec()), (b, gb)]
            }
            &Op::MulBroadcast { x, w, axis } => {
                let (outer, mid, inner) = axis_split(self.shape(x), axis);
                let xs = self.data(x);
                let ws = self.data(w);
                let mut gx = vec![T::zero(); xs.len()];
                let mut gw = vec![T::zero(); mid];
                for o in 0..outer {
                    for m in 0..mid {
                        let base = (o * mid + m) * inner;
                        for i in base..base + inner {
                            gx[i] = gy[i] * ws[m];
                            gw[m] = gw[m] + gy[i] * xs[i];
                        }
                    }
                }
                vec![(x, gx), (w, gw)]
            }
            &Op::Act(x, kind) => {
                let xs = self.data(x);
                vec![(
                    x,
                    gy.iter()
                        .zip(xs.iter().zip(y))
                        .map(|(&g, (&xv, &yv))| g * kind.derivative(xv, yv))
                        .collect(),
                )]
            }
            &Op::Softmax { x, axis } => {
                let (outer, mid, inner) = axis_split(self.shape(x), axis);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |m: usize| (o * mid + m) * inner + i;
                        let dot = (0..mid).fold(T::zero(), |s, m| s + gy[at(m)] * y[at(m)]);
                        for m in 0..mid {
                            gx[at(m)] = y[at(m)] * (gy[at(m)] - dot);
                        }
                    }
                }
                vec![(x, gx)]
            }
            &Op::Sum(x) => vec![(x, vec![gy[0]; self.value(x).len()])],
            &Op::Mean(x) => {
                let n = self.value(x).len();
                vec![(x, vec![gy[0] / T::of(n as f64); n])]
            }
            &Op::GlobalAvgPool(x) => {
                let s = self.shape(x);
                let hw = s[1] * s[2];
                let inv = T::one() / T::of(hw as f64);
                let mut gx = Vec::with_capacity(s[0] * hw);
                for &g in gy {
                    gx.extend(std::iter::repeat(g * inv).take(hw));
                }
                vec![(x, gx)]
            }
            &Op::AvgPool2d { x, k } => {
                let s = self.shape(x);
                let (c, h, w) = (s[0], s[1], s[2]);
                let (ho, wo) = (h / k, w / k);
                let inv = T::one() / T::of((k * k) as f64);
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for yy in 0..h {
                        for xx in 0..w {
                            gx[(ch * h + yy) * w + xx] = gy[(ch * ho + yy / k) * wo + xx / k] * inv;
                        }
                    }
                }
                vec![(x, gx)]
            }
            &Op::Reshape(x) => vec![(x, gy.to_vec())],
            &Op::Transpose { x, rows, cols } => vec![(x, kernels::transpose(gy, cols, rows))],
            Op::Concat { parts, axis } => {
                let axis = *axis;
                let out_shape = node.value.shape();
                let (outer, total, inner) = axis_split(out_shape, axis);
                let mut grads: Vec<Vec<T>> = parts
                    .iter()
                    .map(|p| Vec::with_capacity(self.value(*p).len()))
                    .collect();
                for o in 0..outer {
                    let mut off = 0;
                    for (pi, &p) in parts.iter().enumerate() {
                        let m = self.shape(p)[axis];
                        let b = (o * total + off) * inner;
                        grads[pi].extend_from_slice(&gy[b..b + m * inner]);
                        off += m;
                    }
                }
                parts.iter().copied().zip(grads).collect()
            }
            &Op::Narrow { x, axis, start } => {
                let in_shape = self.shape(x);
                let (outer, mid, inner) = axis_split(in_shape, axis);
                let len = node.value.shape()[axis];
                let mut gx = vec![T::zero(); self.value(x).len()];
                for o in 0..outer {
                    let b = (o * mid + start) * inner;
                    gx[b..b + len * inner].copy_from_slice(&gy[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(x, gx)]
            }
            &Op::Conv2d { x, w, geom } => {
                let c_out = self.shape(w)[0];
                let (p, hw) = (geom.patch_len(), geom.out_len());
                let mut out = Vec::new();
                if want(w) {
                    let cols = kernels::im2col(self.data(x), &geom);
                    let cols_t = kernels::transpose(&cols, p, hw);
                    out.push((w, kernels::gemm(gy, &cols_t, c_out, hw, p)));
                }
                if want(x) {
                    let wt = kernels::transpose(self.data(w), c_out, p);
                    let dcols = kernels::gemm(&wt, gy, p, c_out, hw);
                    let mut gx = vec![T::zero(); self.value(x).len()];
                    kernels::col2im_acc(&dcols, &geom, &mut gx);
                    out.push((x, gx));
                }
                out
            }
            &Op::Depthwise { x, w, geom } => {
                let (c, h, wd, k) = (geom.c_in, geom.h, geom.w, geom.k);
                let (ho, wo) = (geom.h_out, geom.w_out);
                let xs = self.data(x);
                let ws = self.data(w);
                let mut gx = vec![T::zero(); xs.len()];
                let mut gw = vec![T::zero(); ws.len()];
                for ch in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let g = gy[(ch * ho + oy) * wo + ox];
                            for ky in 0..k {
                                let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = (ch * h + iy as usize) * wd + ix as usize;
                                    let wi = (ch * k + ky) * k + kx;
                                    gw[wi] = gw[wi] + g * xs[xi];
                                    gx[xi] = gx[xi] + g * ws[wi];
                                }
                            }
                        }
                    }
                }
                vec![(x, gx), (w, gw)]
            }
            &Op::Upsample { x, factor } => {
                let s = self.shape(x);
                let (c, h, w) = (s[0], s[1], s[2]);
                let wo = w * factor;
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for yy in 0..h * factor {
                        for xx in 0..wo {
                            let i = (ch * h + yy / factor) * w + xx / factor;
                            gx[i] = gx[i] + gy[(ch * h * factor + yy) * wo + xx];
                        }
                    }
                }
                vec![(x, gx)]
            }
            &Op::Conv1d { x, w } => {
                let xs = self.data(x);
                let ws = self.data(w);
                let n = xs.len() as isize;
                let r = (ws.len() / 2) as isize;
                let mut gx = vec![T::zero(); xs.len()];
                let mut gw = vec![T::zero(); ws.len()];
                for c in 0..n {
                    let g = gy[c as usize];
                    for (j, &wj) in ws.iter().enumerate() {
                        let idx = c + j as isize - r;
                        if idx >= 0 && idx < n {
                            gx[idx as usize] = gx[idx as usize] + wj * g;
                            gw[j] = gw[j] + xs[idx as usize] * g;
                        }
                    }
                }
                vec![(x, gx), (w, gw)]
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (n, d) = (rstd.len(), xhat.len() / rstd.len());
                let gs = self.data(*gamma);
                let mut gx = vec![T::zero(); n * d];
                let mut gg = vec![T::zero(); d];
                let mut gb = vec![T::zero(); d];
                let dt = T::of(d as f64);
                for i in 0..n {
                    let mut sum_dxh = T::zero();
                    let mut sum_dxh_xh = T::zero();
                    for j in 0..d {
                        let g = gy[i * d + j];
                        let xh = xhat[i * d + j];
                        gg[j] = gg[j] + g * xh;
                        gb[j] = gb[j] + g;
                        let dxh = g * gs[j];
                        sum_dxh = sum_dxh + dxh;
                        sum_dxh_xh = sum_dxh_xh + dxh * xh;
                    }
                    for j in 0..d {
                        let xh = xhat[i * d + j];
                        let dxh = gy[i * d + j] * gs[j];
                        gx[i * d + j] = rstd[i] / dt * (dt * dxh - sum_dxh - xh * sum_dxh_xh);
                    }
                }
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::BceLogits { x, target } => {
                let scale = gy[0] / T::of(target.len() as f64);
                let gx = self
                    .data(*x)
                    .iter()
                    .zip(target)
                    .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                    .collect();
                vec![(*x, gx)]
            }
            Op::CrossEntropy { x, target } => {
                let xs = self.data(*x);
                let k = self.shape(*x)[0];
                let n = target.len();
                let scale = gy[0] / T::of(n as f64);
                let mut gx = vec![T::zero(); xs.len()];
                for (i, &t) in target.iter().enumerate() {
                    let mut mx = T::neg_infinity();
                    for c in 0..k {
                        mx = mx.max(xs[c * n + i]);
                    }
                    let mut z = T::zero();
                    for c in 0..k {
                        z = z + (xs[c * n + i] - mx).exp();
                    }
                    for c in 0..k {
                        let p = (xs[c * n + i] - mx).exp() / z;
                        let one = if c == t { T::one() } else { T::zero() };
                        gx[c * n + i] = (p - one) * scale;
                    }
                }
                vec![(*x, gx)]
            }
            Op::SmoothL1 { pred, target, mask, count } => {
                let mut gx = vec![T::zero(); target.len()];
                if *count > 0 {
                    let scale = gy[0] / T::of(*count as f64);
                    for (i, ((&p, &t), &m)) in
                        self.data(*pred).iter().zip(target).zip(mask).enumerate()
                    {
                        if m {
                            let r = p - t;
                            let d = if r.abs() < T::one() { r } else { r.signum() };
                            gx[i] = d * scale;
                        }
                    }
                }
                vec![(*pred, gx)]
            }
            Op::Custom { inputs, backward } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = backward(&vals, &node.value, gy);
                inputs.iter().copied().zip(gs).collect()
            }
        }
    }
}

#[inline]
pub(crate) fn smooth_l1<T: Element>(r: T) -> T {
    let a = r.abs();
    if a < T::one() {
        T::of(0.5) * r * r
    } else {
        a - T::of(0.5)
    }
}

fn conv_geom(c_in: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<ConvGeom> {
    if k == 0 || stride == 0 {
        return Err(dim_err!("conv: kernel {k} and stride {stride} must be >= 1"));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(dim_err!(
            "conv: kernel {k}×{k} larger than padded input {}×{}",
            h + 2 * pad,
            w + 2 * pad
        ));
    }
    Ok(ConvGeom {
        c_in,
        h,
        w,
        k,
        stride,
        pad,
        h_out: (h + 2 * pad - k) / stride + 1,
        w_out: (w + 2 * pad - k) / stride + 1,
    })
}

fn depthwise_plane<T: Element>(plane: &[T], kern: &[T], dst: &mut [T], g: &ConvGeom) {
    for oy in 0..g.h_out {
        for ox in 0..g.w_out {
            let mut s = T::zero();
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    s = s + kern[ky * g.k + kx] * plane[iy as usize * g.w + ix as usize];
                }
            }
            dst[oy * g.w_out + ox] = s;
        }
    }
}

impl<T: Element> std::fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.nodes.len()).finish()
    }
}
