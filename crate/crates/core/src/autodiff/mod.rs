//! Tape-based reverse-mode differentiation over dense row-major tensors.
//!
//! A [`Graph`] records every executed op in order together with whatever the
//! backward pass needs. [`Graph::backward`] walks the tape in exact reverse
//! order and sums the contributions of every use of a node. Broadcasting is
//! limited to a per-channel bias ([`Graph::add_bias`]) and scalar gain
//! ([`Graph::scale_by`]); every other binary op needs identical shapes.
//!
//! Layout conventions:
//! - `matmul`: `[m, k] · [k, n] -> [m, n]`
//! - `conv1d`: input `[c_in, len]`, weight `[c_out, c_in, k]`, bias `[c_out]`
//! - `conv1d_transposed`: input `[c_in, len]`, weight `[c_in, c_out, k]`, bias `[c_out]`
//! - `layer_norm`: normalizes over the last axis, gain/shift shaped like that axis
//! - scalars have shape `[1]`

pub mod gradcheck;

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a custom elementwise op: `(input, output, output_grad) -> input_grad`.
pub type CustomBackward<T> = Box<dyn Fn(&[T], &[T], &[T]) -> Vec<T>>;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    ScaleBy(Var, Var),
    Sum(Var),
    Mean(Var),
    Center(Var),
    Square(Var),
    Log10(Var),
    Sin(Var),
    Snake(Var),
    Relu(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    PadReflect {
        x: Var,
        left: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Passthrough {
        grad_to: Var,
    },
    Custom {
        x: Var,
        name: &'static str,
        backward: CustomBackward<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::ScaleBy(..) => "scale_by",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Center(..) => "center",
            Op::Square(..) => "square",
            Op::Log10(..) => "log10",
            Op::Sin(..) => "sin",
            Op::Snake(..) => "snake",
            Op::Relu(..) => "relu",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvTranspose1d { .. } => "conv1d_transposed",
            Op::PadReflect { .. } => "pad_reflect",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax { .. } => "softmax",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Passthrough { .. } => "passthrough_grad",
            Op::Custom { name, .. } => name,
        }
    }
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits a shape around `axis` into (outer, axis length, inner).
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

/// `cols[(c*k + j) * t_out + t] = src[c][t*stride + j - padding]`, zero outside `src`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    src: &[T],
    channels: usize,
    len: usize,
    k: usize,
    stride: usize,
    padding: usize,
    t_out: usize,
) -> Vec<T> {
    let mut cols = vec![T::zero(); channels * k * t_out];
    for c in 0..channels {
        let row = &src[c * len..(c + 1) * len];
        for j in 0..k {
            let dst = &mut cols[(c * k + j) * t_out..(c * k + j + 1) * t_out];
            for (t, d) in dst.iter_mut().enumerate() {
                let pos = t * stride + j;
                if pos >= padding && pos - padding < len {
                    *d = row[pos - padding];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters `cols` back, adding into `dst`.
#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Real>(
    cols: &[T],
    dst: &mut [T],
    channels: usize,
    len: usize,
    k: usize,
    stride: usize,
    padding: usize,
    t_in: usize,
) {
    for c in 0..channels {
        let row = &mut dst[c * len..(c + 1) * len];
        for j in 0..k {
            let src = &cols[(c * k + j) * t_in..(c * k + j + 1) * t_in];
            for (t, &v) in src.iter().enumerate() {
                let pos = t * stride + j;
                if pos >= padding && pos - padding < len {
                    row[pos - padding] += v;
                }
            }
        }
    }
}

fn reflect_index(i: isize, len: usize) -> usize {
    let n = len as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

fn slot<'a, T: Real>(
    grads: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// The tape in execution order as `(op name, output shape)`.
    pub fn tape(&self) -> impl Iterator<Item = (&'static str, &[usize])> + '_ {
        self.nodes.iter().map(|n| (n.op.name(), n.shape.as_slice()))
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v` requires one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        let index = self.nodes.len();
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: op.name(),
                node: index,
            });
        }
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(index))
    }

    pub fn leaf(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool) -> Result<Var> {
        if numel(&shape) != value.len() || shape.is_empty() || shape.contains(&0) {
            return Err(shape_err(
                "leaf",
                format!("shape {shape:?} does not hold {} values", value.len()),
            ));
        }
        let v = self.push(shape, value, Op::Leaf, &[])?;
        self.nodes[v.0].requires_grad = requires_grad;
        Ok(v)
    }

    pub fn param(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t.shape.clone(), t.data.iter().map(|&x| T::lit(x as f64)).collect(), true)
    }

    pub fn constant(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t.shape.clone(), t.data.iter().map(|&x| T::lit(x as f64)).collect(), false)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: &[f32]) -> Result<Var> {
        self.leaf(shape, data.iter().map(|&x| T::lit(x as f64)).collect(), false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn rank(&self, op: &'static str, v: Var, rank: usize) -> Result<()> {
        if self.shape(v).len() != rank {
            return Err(shape_err(
                op,
                format!("expected rank {rank}, got shape {:?}", self.shape(v)),
            ));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, value, op, &[a, b])
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_const(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary(x, Op::AddConst(x), |v| v + c)
    }

    /// Multiplies every element of `x` by the scalar node `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scale_by", format!("gain must be scalar, got {:?}", self.shape(s))));
        }
        let c = self.scalar(s);
        let value = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, value, Op::ScaleBy(x, s), &[x, s])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::lit(self.value(x).len() as f64);
        let s: T = self.value(x).iter().copied().sum();
        self.push(vec![1], vec![s / n], Op::Mean(x), &[x])
    }

    /// `x - mean(x)` over all elements.
    pub fn center(&mut self, x: Var) -> Result<Var> {
        let n = T::lit(self.value(x).len() as f64);
        let m = self.value(x).iter().copied().sum::<T>() / n;
        self.unary(x, Op::Center(x), |v| v - m)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn log10(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log10(x), |v| v.log10())
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sin(x), |v| v.sin())
    }

    /// `x + sin²(x)`.
    pub fn snake(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Snake(x), |v| {
            let s = v.sin();
            v + s * s
        })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| v.max(T::zero()))
    }

    /// Elementwise op with a caller-supplied backward rule.
    pub fn custom_unary(
        &mut self,
        x: Var,
        name: &'static str,
        forward: impl Fn(T) -> T,
        backward: CustomBackward<T>,
    ) -> Result<Var> {
        self.unary(x, Op::Custom { x, name, backward }, forward)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.rank("matmul", a, 2)?;
        self.rank("matmul", b, 2)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (k2, n) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}, {k}] · [{k2}, {n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), self.value(a), k, 1, self.value(b), n, 1, T::zero(), &mut out, n, 1);
        self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// Adds `b` (shape `[n]`) to every row of `x` (last axis `n`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if self.shape(b) != [n] {
            return Err(shape_err("add_bias", format!("bias {:?} for input {:?}", self.shape(b), self.shape(x))));
        }
        let bias = self.value(b);
        let value = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &c)| v + c))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, value, Op::AddBias(x, b), &[x, b])
    }

    fn check_conv_bias(&self, op: &'static str, b: Option<Var>, c_out: usize) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(shape_err(op, format!("bias {:?} for {c_out} output channels", self.shape(b))));
            }
        }
        Ok(())
    }

    fn add_channel_bias(&self, y: &mut [T], b: Option<Var>, len: usize) {
        if let Some(b) = b {
            for (row, &c) in y.chunks_mut(len).zip(self.value(b)) {
                row.iter_mut().for_each(|v| *v += c);
            }
        }
    }

    /// Strided 1-D convolution with zero padding on both sides.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        self.rank("conv1d", x, 2)?;
        self.rank("conv1d", w, 3)?;
        let (c_in, len) = (self.shape(x)[0], self.shape(x)[1]);
        let (c_out, wc_in, k) = (self.shape(w)[0], self.shape(w)[1], self.shape(w)[2]);
        if wc_in != c_in || stride == 0 || len + 2 * padding < k {
            return Err(shape_err(
                "conv1d",
                format!("input {:?}, weight {:?}, stride {stride}, padding {padding}", self.shape(x), self.shape(w)),
            ));
        }
        self.check_conv_bias("conv1d", b, c_out)?;
        let t_out = (len + 2 * padding - k) / stride + 1;
        let cols = im2col(self.value(x), c_in, len, k, stride, padding, t_out);
        let mut y = vec![T::zero(); c_out * t_out];
        T::gemm(c_out, c_in * k, t_out, T::one(), self.value(w), c_in * k, 1, &cols, t_out, 1, T::zero(), &mut y, t_out, 1);
        self.add_channel_bias(&mut y, b, t_out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(vec![c_out, t_out], y, Op::Conv1d { x, w, b, stride, padding }, &inputs)
    }

    /// Transposed 1-D convolution, the adjoint of [`Graph::conv1d`] in its input.
    /// Output length is `(len - 1) * stride + k - 2 * padding + output_padding`.
    pub fn conv1d_transposed(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        self.rank("conv1d_transposed", x, 2)?;
        self.rank("conv1d_transposed", w, 3)?;
        let (c_in, len) = (self.shape(x)[0], self.shape(x)[1]);
        let (wc_in, c_out, k) = (self.shape(w)[0], self.shape(w)[1], self.shape(w)[2]);
        if wc_in != c_in || stride == 0 || output_padding >= stride || (len - 1) * stride + k + output_padding <= 2 * padding {
            return Err(shape_err(
                "conv1d_transposed",
                format!("input {:?}, weight {:?}, stride {stride}, padding {padding}", self.shape(x), self.shape(w)),
            ));
        }
        self.check_conv_bias("conv1d_transposed", b, c_out)?;
        let l_out = (len - 1) * stride + k + output_padding - 2 * padding;
        let mut cols = vec![T::zero(); c_out * k * len];
        T::gemm(c_out * k, c_in, len, T::one(), self.value(w), 1, c_out * k, self.value(x), len, 1, T::zero(), &mut cols, len, 1);
        let mut y = vec![T::zero(); c_out * l_out];
        col2im_add(&cols, &mut y, c_out, l_out, k, stride, padding, len);
        self.add_channel_bias(&mut y, b, l_out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(vec![c_out, l_out], y, Op::ConvTranspose1d { x, w, b, stride, padding }, &inputs)
    }

    /// Reflect-pads the last axis of a `[channels, len]` tensor.
    pub fn pad_reflect(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        self.rank("pad_reflect", x, 2)?;
        let (c, len) = (self.shape(x)[0], self.shape(x)[1]);
        if left >= len || right >= len {
            return Err(shape_err("pad_reflect", format!("padding ({left}, {right}) needs length > both, got {len}")));
        }
        let out_len = len + left + right;
        let src = self.value(x);
        let mut y = Vec::with_capacity(c * out_len);
        for ch in 0..c {
            let row = &src[ch * len..(ch + 1) * len];
            y.extend((0..out_len).map(|i| row[reflect_index(i as isize - left as isize, len)]));
        }
        self.push(vec![c, out_len], y, Op::PadReflect { x, left }, &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(shape_err("layer_norm", format!("gain {:?} / shift {:?} for input {:?}", self.shape(gamma), self.shape(beta), self.shape(x))));
        }
        let rows = self.value(x).len() / n;
        let nn = T::lit(n as f64);
        let eps = T::lit(eps);
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let mut y = Vec::with_capacity(rows * n);
        let (g, bt) = (self.value(gamma), self.value(beta));
        for row in self.value(x).chunks(n) {
            let m = row.iter().copied().sum::<T>() / nn;
            let var = row.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / nn;
            let r = T::one() / (var + eps).sqrt();
            y.extend(row.iter().enumerate().map(|(i, &v)| (v - m) * r * g[i] + bt[i]));
            mean.push(m);
            rstd.push(r);
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, y, Op::LayerNorm { x, gamma, beta, mean, rstd }, &[x, gamma, beta])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = around_axis(&shape, axis);
        let src = self.value(x);
        let mut y = vec![T::zero(); src.len()];
        for o in 0..outer {
            for r in 0..inner {
                let at = |i: usize| (o * len + i) * inner + r;
                let max = (0..len).map(|i| src[at(i)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for i in 0..len {
                    let e = (src[at(i)] - max).exp();
                    y[at(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    y[at(i)] = y[at(i)] / total;
                }
            }
        }
        self.push(shape, y, Op::Softmax { x, axis }, &[x])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} vs {base:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = around_axis(&base, axis);
        let mut y = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let block = self.shape(v)[axis] * inner;
                y.extend_from_slice(&self.value(v)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(shape, y, Op::Concat { inputs: inputs.to_vec(), axis }, inputs)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(shape_err("slice", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, full, inner) = around_axis(&shape, axis);
        let src = self.value(x);
        let mut y = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            y.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push(out_shape, y, Op::Slice { x, axis, start }, &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.rank("transpose", x, 2)?;
        let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
        let src = self.value(x);
        let mut y = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                y[j * r + i] = src[i * c + j];
            }
        }
        self.push(vec![c, r], y, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(x).len() || shape.is_empty() {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let y = self.value(x).to_vec();
        self.push(shape, y, Op::Reshape(x), &[x])
    }

    /// Straight-through node: the value of `value_from`, the gradient routed to `grad_to`.
    pub fn passthrough_grad(&mut self, grad_to: Var, value_from: Var) -> Result<Var> {
        self.same_shape("passthrough_grad", grad_to, value_from)?;
        let y = self.value(value_from).to_vec();
        let shape = self.shape(value_from).to_vec();
        self.push(shape, y, Op::Passthrough { grad_to }, &[grad_to])
    }

    /// Runs the reverse sweep from a scalar `loss`. A graph supports one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            backprop_node(node, &g, nodes, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}

fn backprop_node<T: Real>(node: &Node<T>, g: &[T], nodes: &[Node<T>], grads: &mut [Option<Vec<T>>]) {
    let val = |v: Var| nodes[v.0].value.as_slice();
    let shp = |v: Var| nodes[v.0].shape.as_slice();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(d) = slot(grads, nodes, *a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = slot(grads, nodes, *b) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(d) = slot(grads, nodes, *a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = slot(grads, nodes, *b) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g);
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if let Some(d) = slot(grads, nodes, *a) {
                for i in 0..d.len() {
                    d[i] += g[i] * vb[i];
                }
            }
            if let Some(d) = slot(grads, nodes, *b) {
                for i in 0..d.len() {
                    d[i] += g[i] * va[i];
                }
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if let Some(d) = slot(grads, nodes, *a) {
                for i in 0..d.len() {
                    d[i] += g[i] / vb[i];
                }
            }
            if let Some(d) = slot(grads, nodes, *b) {
                for i in 0..d.len() {
                    d[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(d) = slot(grads, nodes, *x) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *c);
            }
        }
        Op::AddConst(x) | Op::Reshape(x) | Op::Passthrough { grad_to: x } => {
            if let Some(d) = slot(grads, nodes, *x) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
        }
        Op::ScaleBy(x, s) => {
            let c = val(*s)[0];
            let vx = val(*x);
            if let Some(d) = slot(grads, nodes, *x) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * c);
            }
            if let Some(d) = slot(grads, nodes, *s) {
                d[0] += g.iter().zip(vx).map(|(&g, &v)| g * v).sum::<T>();
            }
        }
        Op::Sum(x) => {
            if let Some(d) = slot(grads, nodes, *x) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(x) => {
            if let Some(d) = slot(grads, nodes, *x) {
                let s = g[0] / T::lit(d.len() as f64);
                d.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::Center(x) => {
            if let Some(d) = slot(grads, nodes, *x) {
                let m = g.iter().copied().sum::<T>() / T::lit(g.len() as f64);
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g - m);
            }
        }
        Op::Square(x) => {
            let vx = val(*x);
            if let Some(d) = slot(grads, nodes, *x) {
                for i in 0..d.len() {
                    d[i] += g[i] * T::lit(2.0) * vx[i];
                }
            }
        }
        Op::Log10(x) => {
            let vx = val(*x);
            if let Some(d) = slot(grads, nodes, *x) {
                let ln10 = T::LN_10();
                for i in 0..d.len() {
                    d[i] += g[i] / (vx[i] * ln10);
                }
            }
        }
        Op::Sin(x) => {
            let vx = val(*x);
            if let Some(d) = slot(grads, nodes, *x) {
                for i in 0..d.len() {
                    d[i] += g[i] * vx[i].cos();
                }
            }
        }
        Op::Snake(x) => {
            let vx = val(*x);
            if let Some(d) = slot(grads, nodes, *x) {
                for i in 0..d.len() {
                    d[i] += g[i] * (T::one() + (vx[i] + vx[i]).sin());
                }
            }
        }
        Op::Relu(x) => {
            let vx = val(*x);
            if let Some(d) = slot(grads, nodes, *x) {
                for i in 0..d.len() {
                    if vx[i] > T::zero() {
                        d[i] += g[i];
                    }
                }
            }
        }
        Op::Custom { x, backward, .. } => {
            let dx = backward(val(*x), &node.value, g);
            if let Some(d) = slot(grads, nodes, *x) {
                d.iter_mut().zip(dx).for_each(|(d, v)| *d += v);
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (shp(*a)[0], shp(*a)[1]);
            let n = shp(*b)[1];
            let (va, vb) = (val(*a), val(*b));
            if let Some(d) = slot(grads, nodes, *a) {
                // dA[m,k] += g[m,n] · Bᵀ
                T::gemm(m, n, k, T::one(), g, n, 1, vb, 1, n, T::one(), d, k, 1);
            }
            if let Some(d) = slot(grads, nodes, *b) {
                // dB[k,n] += Aᵀ · g
                T::gemm(k, m, n, T::one(), va, 1, k, g, n, 1, T::one(), d, n, 1);
            }
        }
        Op::AddBias(x, b) => {
            if let Some(d) = slot(grads, nodes, *x) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = slot(grads, nodes, *b) {
                let n = d.len();
                for row in g.chunks(n) {
                    d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::Conv1d { x, w, b, stride, padding } => {
            let (c_in, len) = (shp(*x)[0], shp(*x)[1]);
            let (c_out, _, k) = (shp(*w)[0], shp(*w)[1], shp(*w)[2]);
            let t_out = node.shape[1];
            if nodes[w.0].requires_grad {
                let cols = im2col(val(*x), c_in, len, k, *stride, *padding, t_out);
                let d = slot(grads, nodes, *w).unwrap();
                T::gemm(c_out, t_out, c_in * k, T::one(), g, t_out, 1, &cols, 1, t_out, T::one(), d, c_in * k, 1);
            }
            if nodes[x.0].requires_grad {
                let mut dcols = vec![T::zero(); c_in * k * t_out];
                T::gemm(c_in * k, c_out, t_out, T::one(), val(*w), 1, c_in * k, g, t_out, 1, T::zero(), &mut dcols, t_out, 1);
                let d = slot(grads, nodes, *x).unwrap();
                col2im_add(&dcols, d, c_in, len, k, *stride, *padding, t_out);
            }
            if let Some(b) = b {
                if let Some(d) = slot(grads, nodes, *b) {
                    for (o, row) in g.chunks(t_out).enumerate() {
                        d[o] += row.iter().copied().sum::<T>();
                    }
                }
            }
        }
        Op::ConvTranspose1d { x, w, b, stride, padding } => {
            let (c_in, len) = (shp(*x)[0], shp(*x)[1]);
            let (_, c_out, k) = (shp(*w)[0], shp(*w)[1], shp(*w)[2]);
            let l_out = node.shape[1];
            let need_x = nodes[x.0].requires_grad;
            let need_w = nodes[w.0].requires_grad;
            if need_x || need_w {
                let dcols = im2col(g, c_out, l_out, k, *stride, *padding, len);
                if need_x {
                    let d = slot(grads, nodes, *x).unwrap();
                    T::gemm(c_in, c_out * k, len, T::one(), val(*w), c_out * k, 1, &dcols, len, 1, T::one(), d, len, 1);
                }
                if need_w {
                    let vx = val(*x);
                    let d = slot(grads, nodes, *w).unwrap();
                    T::gemm(c_in, len, c_out * k, T::one(), vx, len, 1, &dcols, 1, len, T::one(), d, c_out * k, 1);
                }
            }
            if let Some(b) = b {
                if let Some(d) = slot(grads, nodes, *b) {
                    for (o, row) in g.chunks(l_out).enumerate() {
                        d[o] += row.iter().copied().sum::<T>();
                    }
                }
            }
        }
        Op::PadReflect { x, left } => {
            let (c, len) = (shp(*x)[0], shp(*x)[1]);
            let out_len = node.shape[1];
            if let Some(d) = slot(grads, nodes, *x) {
                for ch in 0..c {
                    for i in 0..out_len {
                        let src = reflect_index(i as isize - *left as isize, len);
                        d[ch * len + src] += g[ch * out_len + i];
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, mean, rstd } => {
            let n = *node.shape.last().unwrap();
            let vx = val(*x);
            let gm = val(*gamma);
            let nn = T::lit(n as f64);
            if nodes[x.0].requires_grad {
                let d = slot(grads, nodes, *x).unwrap();
                for (r, (row_g, row_x)) in g.chunks(n).zip(vx.chunks(n)).enumerate() {
                    let (m, s) = (mean[r], rstd[r]);
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for i in 0..n {
                        let dh = row_g[i] * gm[i];
                        let h = (row_x[i] - m) * s;
                        mean_dh += dh;
                        mean_dh_h += dh * h;
                    }
                    mean_dh = mean_dh / nn;
                    mean_dh_h = mean_dh_h / nn;
                    for i in 0..n {
                        let dh = row_g[i] * gm[i];
                        let h = (row_x[i] - m) * s;
                        d[r * n + i] += s * (dh - mean_dh - h * mean_dh_h);
                    }
                }
            }
            if let Some(d) = slot(grads, nodes, *gamma) {
                for (r, (row_g, row_x)) in g.chunks(n).zip(vx.chunks(n)).enumerate() {
                    for i in 0..n {
                        d[i] += row_g[i] * (row_x[i] - mean[r]) * rstd[r];
                    }
                }
            }
            if let Some(d) = slot(grads, nodes, *beta) {
                for row_g in g.chunks(n) {
                    d.iter_mut().zip(row_g).for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = around_axis(&node.shape, *axis);
            let y = &node.value;
            if let Some(d) = slot(grads, nodes, *x) {
                for o in 0..outer {
                    for r in 0..inner {
                        let at = |i: usize| (o * len + i) * inner + r;
                        let dot = (0..len).map(|i| g[at(i)] * y[at(i)]).sum::<T>();
                        for i in 0..len {
                            d[at(i)] += y[at(i)] * (g[at(i)] - dot);
                        }
                    }
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = around_axis(&node.shape, *axis);
            let mut offset = 0;
            for &v in inputs {
                let part = shp(v)[*axis];
                if let Some(d) = slot(grads, nodes, v) {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * part * inner;
                        for i in 0..part * inner {
                            d[dst + i] += g[src + i];
                        }
                    }
                }
                offset += part;
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, full, inner) = around_axis(shp(*x), *axis);
            let len = node.shape[*axis];
            if let Some(d) = slot(grads, nodes, *x) {
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    for i in 0..len * inner {
                        d[dst + i] += g[src + i];
                    }
                }
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (shp(*x)[0], shp(*x)[1]);
            if let Some(d) = slot(grads, nodes, *x) {
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
    }
}

impl Graph<f32> {
    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor {
            shape: self.shape(v).to_vec(),
            data: self.value(v).to_vec(),
        }
    }
}
