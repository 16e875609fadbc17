use super::ops::{self, Conv2dDims};
use super::{shape_err, Tensor, TensorError};
use crate::num::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum BnMode<'a, S> {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with the given running mean and variance.
    Eval { mean: &'a [S], var: &'a [S] },
}

/// Per-channel statistics of a train-mode batch-norm call. `var` is the
/// unbiased estimate, the one folded into running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> BatchStats<S> {
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running(&self, mean: &mut [S], var: &mut [S], momentum: S) {
        let keep = S::one() - momentum;
        for (r, b) in mean.iter_mut().zip(&self.mean) {
            *r = keep * *r + momentum * *b;
        }
        for (r, b) in var.iter_mut().zip(&self.var) {
            *r = keep * *r + momentum * *b;
        }
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Mean { x: Var, axis: usize },
    SumAll(Var),
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, rstd: Vec<S> },
    L2Normalize { x: Var, axis: usize, norms: Vec<S> },
    Reshape(Var),
    Permute { x: Var, index: Vec<usize> },
    Conv2d { x: Var, w: Var, b: Var },
    TConv1d { x: Var, w: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, invstd: Vec<S>, train: bool },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Mean { .. } => "mean",
            Op::SumAll(..) => "sum",
            Op::Linear { .. } => "linear",
            Op::Relu(..) => "relu",
            Op::Gelu(..) => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Reshape(..) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Conv2d { .. } => "conv2d",
            Op::TConv1d { .. } => "tconv1d_dw",
            Op::BatchNorm { .. } => "batchnorm2d",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

/// Recording tape. Nodes are appended in evaluation order.
#[derive(Debug, Clone, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

fn add_into<S: Scalar>(dst: &mut Option<Vec<S>>, src: &[S]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a = *a + *b),
        None => *dst = Some(src.to_vec()),
    }
}

/// Trailing-suffix broadcast check: `b` must equal `a` or a suffix of it.
fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// First node holding a non-finite value, with the op that produced it.
    pub fn first_non_finite(&self) -> Option<(Var, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.value.data().iter().any(|v| !v.is_finite()))
            .map(|(i, n)| (Var(i), n.op.name()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        ops::matmul_acc(&mut out, self.value(a).data(), self.value(b).data(), m, k, n, false, false);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise sum; `b` may have the shape of a trailing suffix of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b));
        if !broadcast_ok(&sa, sb) {
            return Err(shape_err("add", format!("{sa:?} + {sb:?}")));
        }
        let bd = self.value(b).data();
        let nb = bd.len();
        let out: Vec<S> = self.value(a).data().iter().enumerate().map(|(i, x)| *x + bd[i % nb]).collect();
        Ok(self.push(Tensor::new(sa, out)?, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b));
        if !broadcast_ok(&sa, sb) {
            return Err(shape_err("mul", format!("{sa:?} * {sb:?}")));
        }
        let bd = self.value(b).data();
        let nb = bd.len();
        let out: Vec<S> = self.value(a).data().iter().enumerate().map(|(i, x)| *x * bd[i % nb]).collect();
        Ok(self.push(Tensor::new(sa, out)?, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| *a * c).collect()).unwrap();
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let nb = self.scale(b, -S::one());
        self.add(a, nb)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs
            .first()
            .map(|v| self.shape(*v).to_vec())
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != first.len() || s.iter().enumerate().any(|(d, n)| d != axis && *n != first[d]) {
                return Err(shape_err("concat", format!("{first:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = ops::split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let d = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.value(*v).data()[o * d..(o + 1) * d]);
            }
        }
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// `x[..., start..end, ...]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(shape_err("slice", format!("{start}..{end} on axis {axis} of {s:?}")));
        }
        let (outer, dim, inner) = ops::split_axis(&s, axis);
        let len = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * dim + start) * inner..(o * dim + end) * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x, axis, start }, &[x]))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(shape_err("mean", format!("axis {axis} of {s:?}")));
        }
        let (outer, dim, inner) = ops::split_axis(&s, axis);
        let src = self.value(x).data();
        let inv = S::one() / S::of(dim as f64);
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..dim {
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + src[(o * dim + k) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        let mut shape = s;
        shape.remove(axis);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mean { x, axis }, &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: S = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    /// `x W + b` for `x: [m, k]`, `W: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] || sb != [sw[1]] {
            return Err(shape_err("linear", format!("{sx:?} x {sw:?} + {sb:?}")));
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        let bias = self.value(b).data();
        let mut out: Vec<S> = (0..m).flat_map(|_| bias.iter().copied()).collect();
        ops::matmul_acc(&mut out, self.value(x).data(), self.value(w).data(), m, k, n, false, false);
        Ok(self.push(Tensor::new([m, n], out)?, Op::Linear { x, w, b }, &[x, w, b]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| f(*a)).collect()).unwrap();
        self.push(out, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(S::zero()), Op::Relu(x))
    }

    /// GELU, tanh approximation with cubic coefficient 0.044715.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, ops::gelu, Op::Gelu(x))
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, log: bool) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(shape_err("softmax", format!("axis {axis} of {s:?}")));
        }
        let (outer, dim, inner) = ops::split_axis(&s, axis);
        let src = self.value(x).data();
        let mut out = vec![S::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * dim + k) * inner + i;
                let m = (0..dim).map(|k| src[at(k)]).fold(S::neg_infinity(), S::max);
                let z: S = (0..dim).map(|k| (src[at(k)] - m).exp()).sum();
                let lz = z.ln();
                for k in 0..dim {
                    out[at(k)] = if log {
                        src[at(k)] - m - lz
                    } else {
                        (src[at(k)] - m).exp() / z
                    };
                }
            }
        }
        let op = if log {
            Op::LogSoftmax { x, axis }
        } else {
            Op::Softmax { x, axis }
        };
        Ok(self.push(Tensor::new(s, out)?, op, &[x]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.softmax_impl(x, axis, false)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.softmax_impl(x, axis, true)
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| shape_err("layernorm", "scalar input"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(
                "layernorm",
                format!("{s:?} with gamma {:?} beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = src.len() / d;
        let inv_d = S::one() / S::of(d as f64);
        let mut xhat = vec![S::zero(); src.len()];
        let mut rstd = vec![S::zero(); rows];
        let mut out = vec![S::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<S>() * inv_d;
            let var = row.iter().map(|v| (*v - mu) * (*v - mu)).sum::<S>() * inv_d;
            let rs = S::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mu) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        Ok(self.push(
            Tensor::new(s, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Scales every fibre along `axis` to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(shape_err("l2_normalize", format!("axis {axis} of {s:?}")));
        }
        let (outer, dim, inner) = ops::split_axis(&s, axis);
        let src = self.value(x).data();
        let floor = S::of(1e-12);
        let mut norms = vec![S::zero(); outer * inner];
        let mut out = vec![S::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * dim + k) * inner + i;
                let n = (0..dim).map(|k| src[at(k)] * src[at(k)]).sum::<S>().sqrt().max(floor);
                norms[o * inner + i] = n;
                for k in 0..dim {
                    out[at(k)] = src[at(k)] / n;
                }
            }
        }
        Ok(self.push(Tensor::new(s, out)?, Op::L2Normalize { x, axis, norms }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `d` is input axis `axes[d]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(shape_err("permute", format!("axes {axes:?} for {s:?}")));
        }
        let index = ops::permute_index(&s, axes);
        let src = self.value(x).data();
        let out: Vec<S> = index.iter().map(|&i| src[i]).collect();
        let shape: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
        Ok(self.push(Tensor::new(shape, out)?, Op::Permute { x, index }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        if self.shape(x).len() != 2 {
            return Err(shape_err("transpose", format!("{:?} is not a matrix", self.shape(x))));
        }
        self.permute(x, &[1, 0])
    }

    /// Same-padded 2-D cross-correlation, `x: [N, C_in, H, W]`,
    /// `w: [C_out, C_in, k, k]`, `b: [C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (sx, sw, sb) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        if sw.len() != 4 || sw[2] != sw[3] {
            return Err(shape_err("conv2d", format!("kernel shape {sw:?}")));
        }
        if sw[2] % 2 == 0 {
            return Err(TensorError::UnsupportedKernel(sw[2]));
        }
        if sx.len() != 4 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(shape_err("conv2d", format!("input {sx:?}, kernel {sw:?}, bias {sb:?}")));
        }
        let dims = Conv2dDims {
            n: sx[0],
            c_in: sx[1],
            c_out: sw[0],
            h: sx[2],
            w: sx[3],
            k: sw[2],
        };
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let plane = dims.h * dims.w;
        let mut out: Vec<S> = (0..dims.n * dims.c_out * plane)
            .map(|i| bd[(i / plane) % dims.c_out])
            .collect();
        dims.for_each_tap(|xo, wo, yo| out[yo] = out[yo] + wd[wo] * xd[xo]);
        let shape = vec![dims.n, dims.c_out, dims.h, dims.w];
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv2d { x, w, b }, &[x, w, b]))
    }

    /// Depthwise same-padded temporal convolution, `x: [N, C, T]`, `w: [C, kt]`.
    pub fn tconv1d_dw(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 2 || sw[0] != sx[1] {
            return Err(shape_err("tconv1d_dw", format!("input {sx:?}, kernel {sw:?}")));
        }
        let (n, c, t, kt) = (sx[0], sx[1], sx[2], sw[1]);
        if kt % 2 == 0 {
            return Err(TensorError::UnsupportedKernel(kt));
        }
        if kt > 2 * t + 1 {
            return Err(TensorError::KernelTooLong { kernel: kt, frames: t });
        }
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![S::zero(); n * c * t];
        ops::for_each_tconv_tap(n, c, t, kt, |xo, wo, yo| out[yo] = out[yo] + wd[wo] * xd[xo]);
        Ok(self.push(Tensor::new(sx, out)?, Op::TConv1d { x, w }, &[x, w]))
    }

    /// Per-channel batch norm over `[N, C, H, W]`. In train mode the batch
    /// statistics are returned so the caller can fold them into its running
    /// estimates; the graph itself holds no state.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, S>,
        eps: S,
    ) -> Result<(Var, Option<BatchStats<S>>), TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err("batchnorm2d", format!("input {s:?}")));
        }
        let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("batchnorm2d", format!("{c} channels, affine {:?}", self.shape(gamma))));
        }
        let m = n * plane;
        let train = matches!(mode, BnMode::Train);
        if train && m < 2 {
            return Err(TensorError::DegenerateBatch);
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let at = |b_: usize, ch: usize, p: usize| (b_ * c + ch) * plane + p;
        let mut means = vec![S::zero(); c];
        let mut vars = vec![S::zero(); c];
        match mode {
            BnMode::Train => {
                let inv_m = S::one() / S::of(m as f64);
                for ch in 0..c {
                    let mut sum = S::zero();
                    for b_ in 0..n {
                        for p in 0..plane {
                            sum = sum + src[at(b_, ch, p)];
                        }
                    }
                    let mu = sum * inv_m;
                    let mut sq = S::zero();
                    for b_ in 0..n {
                        for p in 0..plane {
                            let d = src[at(b_, ch, p)] - mu;
                            sq = sq + d * d;
                        }
                    }
                    means[ch] = mu;
                    vars[ch] = sq * inv_m;
                }
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err("batchnorm2d", "running statistics length"));
                }
                means.copy_from_slice(mean);
                vars.copy_from_slice(var);
            }
        }
        let invstd: Vec<S> = vars.iter().map(|v| S::one() / (*v + eps).sqrt()).collect();
        let mut xhat = vec![S::zero(); src.len()];
        let mut out = vec![S::zero(); src.len()];
        for b_ in 0..n {
            for ch in 0..c {
                for p in 0..plane {
                    let i = at(b_, ch, p);
                    let xh = (src[i] - means[ch]) * invstd[ch];
                    xhat[i] = xh;
                    out[i] = xh * g[ch] + b[ch];
                }
            }
        }
        let stats = train.then(|| {
            let unbias = S::of(m as f64 / (m as f64 - 1.0));
            BatchStats {
                mean: means.clone(),
                var: vars.iter().map(|v| *v * unbias).collect(),
            }
        });
        let var = self.push(
            Tensor::new(s, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
                train,
            },
            &[x, gamma, beta],
        );
        Ok((var, stats))
    }

    /// Reverse-mode sweep from a scalar `loss`. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![S::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                add_into(&mut self.nodes[id].grad, &g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| self.nodes[v.0].value.data();
        let shp = |v: Var| self.nodes[v.0].value.shape();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, d: Vec<S>| {
            if self.nodes[v.0].requires_grad {
                add_into(&mut grads[v.0], &d);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (shp(*a)[0], shp(*a)[1]);
                let n = shp(*b)[1];
                if wants(*a) {
                    let mut da = vec![S::zero(); m * k];
                    ops::matmul_acc(&mut da, g, val(*b), m, n, k, false, true);
                    send(*a, da);
                }
                if wants(*b) {
                    let mut db = vec![S::zero(); k * n];
                    ops::matmul_acc(&mut db, val(*a), g, k, m, n, true, false);
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                if wants(*b) {
                    let nb = val(*b).len();
                    let mut db = vec![S::zero(); nb];
                    g.iter().enumerate().for_each(|(i, v)| db[i % nb] = db[i % nb] + *v);
                    send(*b, db);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let nb = bv.len();
                if wants(*a) {
                    send(*a, g.iter().enumerate().map(|(i, v)| *v * bv[i % nb]).collect());
                }
                if wants(*b) {
                    let mut db = vec![S::zero(); nb];
                    g.iter().enumerate().for_each(|(i, v)| db[i % nb] = db[i % nb] + *v * av[i]);
                    send(*b, db);
                }
            }
            Op::Scale(x, c) => send(*x, g.iter().map(|v| *v * *c).collect()),
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = ops::split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                let row = node.value.shape()[*axis] * inner;
                for v in inputs {
                    let d = shp(*v)[*axis] * inner;
                    if wants(*v) {
                        let mut dv = Vec::with_capacity(outer * d);
                        for o in 0..outer {
                            dv.extend_from_slice(&g[o * row + offset..o * row + offset + d]);
                        }
                        send(*v, dv);
                    }
                    offset += d;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, dim, inner) = ops::split_axis(shp(*x), *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![S::zero(); val(*x).len()];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                send(*x, dx);
            }
            Op::Mean { x, axis } => {
                let (outer, dim, inner) = ops::split_axis(shp(*x), *axis);
                let inv = S::one() / S::of(dim as f64);
                let mut dx = vec![S::zero(); outer * dim * inner];
                for o in 0..outer {
                    for k in 0..dim {
                        for i in 0..inner {
                            dx[(o * dim + k) * inner + i] = g[o * inner + i] * inv;
                        }
                    }
                }
                send(*x, dx);
            }
            Op::SumAll(x) => send(*x, vec![g[0]; val(*x).len()]),
            Op::Linear { x, w, b } => {
                let (m, k) = (shp(*x)[0], shp(*x)[1]);
                let n = shp(*w)[1];
                if wants(*x) {
                    let mut dx = vec![S::zero(); m * k];
                    ops::matmul_acc(&mut dx, g, val(*w), m, n, k, false, true);
                    send(*x, dx);
                }
                if wants(*w) {
                    let mut dw = vec![S::zero(); k * n];
                    ops::matmul_acc(&mut dw, val(*x), g, k, m, n, true, false);
                    send(*w, dw);
                }
                if wants(*b) {
                    let mut db = vec![S::zero(); n];
                    g.chunks(n).for_each(|r| db.iter_mut().zip(r).for_each(|(a, v)| *a = *a + *v));
                    send(*b, db);
                }
            }
            Op::Relu(x) => send(
                *x,
                g.iter()
                    .zip(val(*x))
                    .map(|(d, a)| if *a > S::zero() { *d } else { S::zero() })
                    .collect(),
            ),
            Op::Gelu(x) => send(*x, g.iter().zip(val(*x)).map(|(d, a)| *d * ops::gelu_grad(*a)).collect()),
            Op::Softmax { x, axis } | Op::LogSoftmax { x, axis } => {
                let log = matches!(node.op, Op::LogSoftmax { .. });
                let y = node.value.data();
                let (outer, dim, inner) = ops::split_axis(node.value.shape(), *axis);
                let mut dx = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * dim + k) * inner + i;
                        if log {
                            let gs: S = (0..dim).map(|k| g[at(k)]).sum();
                            for k in 0..dim {
                                dx[at(k)] = g[at(k)] - y[at(k)].exp() * gs;
                            }
                        } else {
                            let dot: S = (0..dim).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..dim {
                                dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                }
                send(*x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = *shp(*x).last().unwrap();
                let gm = val(*gamma);
                let inv_d = S::one() / S::of(d as f64);
                if wants(*x) {
                    let mut dx = vec![S::zero(); xhat.len()];
                    for (r, rs) in rstd.iter().enumerate() {
                        let row = r * d..(r + 1) * d;
                        let (mut s1, mut s2) = (S::zero(), S::zero());
                        for j in row.clone() {
                            let dxh = g[j] * gm[j - r * d];
                            s1 = s1 + dxh;
                            s2 = s2 + dxh * xhat[j];
                        }
                        for j in row {
                            let dxh = g[j] * gm[j - r * d];
                            dx[j] = *rs * (dxh - s1 * inv_d - xhat[j] * s2 * inv_d);
                        }
                    }
                    send(*x, dx);
                }
                if wants(*gamma) || wants(*beta) {
                    let mut dg = vec![S::zero(); d];
                    let mut db = vec![S::zero(); d];
                    for (j, gv) in g.iter().enumerate() {
                        dg[j % d] = dg[j % d] + *gv * xhat[j];
                        db[j % d] = db[j % d] + *gv;
                    }
                    send(*gamma, dg);
                    send(*beta, db);
                }
            }
            Op::L2Normalize { x, axis, norms } => {
                let y = node.value.data();
                let (outer, dim, inner) = ops::split_axis(node.value.shape(), *axis);
                let mut dx = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * dim + k) * inner + i;
                        let n = norms[o * inner + i];
                        let dot: S = (0..dim).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..dim {
                            dx[at(k)] = (g[at(k)] - y[at(k)] * dot) / n;
                        }
                    }
                }
                send(*x, dx);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Permute { x, index } => {
                let mut dx = vec![S::zero(); g.len()];
                for (o, &i) in index.iter().enumerate() {
                    dx[i] = g[o];
                }
                send(*x, dx);
            }
            Op::Conv2d { x, w, b } => {
                let (sx, sw) = (shp(*x), shp(*w));
                let dims = Conv2dDims {
                    n: sx[0],
                    c_in: sx[1],
                    c_out: sw[0],
                    h: sx[2],
                    w: sx[3],
                    k: sw[2],
                };
                let (xd, wd) = (val(*x), val(*w));
                if wants(*x) {
                    let mut dx = vec![S::zero(); xd.len()];
                    dims.for_each_tap(|xo, wo, yo| dx[xo] = dx[xo] + wd[wo] * g[yo]);
                    send(*x, dx);
                }
                if wants(*w) {
                    let mut dw = vec![S::zero(); wd.len()];
                    dims.for_each_tap(|xo, wo, yo| dw[wo] = dw[wo] + xd[xo] * g[yo]);
                    send(*w, dw);
                }
                if wants(*b) {
                    let plane = dims.h * dims.w;
                    let mut db = vec![S::zero(); dims.c_out];
                    for (i, v) in g.iter().enumerate() {
                        let co = (i / plane) % dims.c_out;
                        db[co] = db[co] + *v;
                    }
                    send(*b, db);
                }
            }
            Op::TConv1d { x, w } => {
                let (sx, kt) = (shp(*x), shp(*w)[1]);
                let (n, c, t) = (sx[0], sx[1], sx[2]);
                let (xd, wd) = (val(*x), val(*w));
                if wants(*x) {
                    let mut dx = vec![S::zero(); xd.len()];
                    ops::for_each_tconv_tap(n, c, t, kt, |xo, wo, yo| dx[xo] = dx[xo] + wd[wo] * g[yo]);
                    send(*x, dx);
                }
                if wants(*w) {
                    let mut dw = vec![S::zero(); wd.len()];
                    ops::for_each_tconv_tap(n, c, t, kt, |xo, wo, yo| dw[wo] = dw[wo] + xd[xo] * g[yo]);
                    send(*w, dw);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
                train,
            } => {
                let s = shp(*x);
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let gm = val(*gamma);
                let at = |b_: usize, ch: usize, p: usize| (b_ * c + ch) * plane + p;
                if wants(*x) {
                    let mut dx = vec![S::zero(); xhat.len()];
                    let inv_m = S::one() / S::of((n * plane) as f64);
                    for ch in 0..c {
                        let (mut s1, mut s2) = (S::zero(), S::zero());
                        if *train {
                            for b_ in 0..n {
                                for p in 0..plane {
                                    let i = at(b_, ch, p);
                                    s1 = s1 + g[i];
                                    s2 = s2 + g[i] * xhat[i];
                                }
                            }
                        }
                        let k = gm[ch] * invstd[ch];
                        for b_ in 0..n {
                            for p in 0..plane {
                                let i = at(b_, ch, p);
                                dx[i] = if *train {
                                    k * (g[i] - s1 * inv_m - xhat[i] * s2 * inv_m)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                    send(*x, dx);
                }
                if wants(*gamma) || wants(*beta) {
                    let mut dg = vec![S::zero(); c];
                    let mut db = vec![S::zero(); c];
                    for b_ in 0..n {
                        for ch in 0..c {
                            for p in 0..plane {
                                let i = at(b_, ch, p);
                                dg[ch] = dg[ch] + g[i] * xhat[i];
                                db[ch] = db[ch] + g[i];
                            }
                        }
                    }
                    send(*gamma, dg);
                    send(*beta, db);
                }
            }
        }
    }
}
