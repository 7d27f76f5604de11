//! Eager reverse-mode tape over real-valued arrays.
//!
//! Complex values are carried as pairs of real nodes (see [`CVar`]), so every
//! gradient here is a gradient with respect to the real and imaginary parts
//! taken as independent real variables.

use ndarray::{s, Array2, ArrayD, ArrayView2, Axis, IxDyn, Zip};
use rayon::prelude::*;

use crate::error::{contract_err, shape_err, Result};

use super::ComplexTensor;

/// Magnitudes below this are clamped when forming gradients of `|z|^p`-style
/// operations. Forward values are never clamped.
pub const MAGNITUDE_GRAD_FLOOR: f64 = 1e-8;

/// Handle to a real-valued node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A complex value on the tape: one node per part.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sqrt(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Hypot(Var, Var),
    AbsPow { re: Var, im: Var, p: f64 },
    Compress { re: Var, im: Var, c: f64, imag: bool },
    SumAll(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Conv2d { x: Var, w: Var, stride: (usize, usize), pad: (usize, usize) },
    ZeroStuff { x: Var, stride: (usize, usize) },
    Concat { parts: Vec<Var>, axis: usize },
    BroadcastAxis { x: Var, axis: usize },
    SumToAxis { x: Var, axis: usize },
    Softmax(Var),
    Index { x: Var, axis: usize, idx: usize },
    Stack { parts: Vec<Var>, axis: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sqrt(..) => "sqrt",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Hypot(..) => "hypot",
            Op::AbsPow { .. } => "abs_pow",
            Op::Compress { .. } => "compress",
            Op::SumAll(..) => "sum",
            Op::MatMul { .. } => "matmul",
            Op::Permute(..) => "permute",
            Op::Reshape(..) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::ZeroStuff { .. } => "zero_stuff",
            Op::Concat { .. } => "concat",
            Op::BroadcastAxis { .. } => "broadcast_axis",
            Op::SumToAxis { .. } => "sum_to_axis",
            Op::Softmax(..) => "softmax",
            Op::Index { .. } => "index",
            Op::Stack { .. } => "stack",
        }
    }
}

struct Node {
    op: Op,
    value: ArrayD<f64>,
    requires_grad: bool,
}

/// Append-only operation record. Nodes are stored in execution order, so the
/// inputs of every node precede it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// require gradients or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient pair of a complex node. Parts without a gradient are zero.
    pub fn get_complex(&self, tape: &Tape, v: CVar) -> ComplexTensor {
        let re = self.get(v.re).cloned().unwrap_or_else(|| ArrayD::zeros(tape.value(v.re).raw_dim()));
        let im = self.get(v.im).cloned().unwrap_or_else(|| ArrayD::zeros(tape.value(v.im).raw_dim()));
        ComplexTensor::new(re, im).expect("gradient parts share the value shape")
    }
}

fn same_shape(op: &str, a: &ArrayD<f64>, b: &ArrayD<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{op}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn as2(a: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality().expect("rank-2 view")
}

fn mm2(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, ta: bool, tb: bool) -> Array2<f64> {
    let a = if ta { a.reversed_axes() } else { a };
    let b = if tb { b.reversed_axes() } else { b };
    a.dot(&b)
}

/// Batched product over the leading axis; rank-2 operands broadcast.
fn bmm(a: &ArrayD<f64>, b: &ArrayD<f64>, ta: bool, tb: bool) -> ArrayD<f64> {
    match (a.ndim(), b.ndim()) {
        (2, 2) => mm2(as2(a), as2(b), ta, tb).into_dyn(),
        _ => {
            let n = if a.ndim() == 3 { a.shape()[0] } else { b.shape()[0] };
            let outs: Vec<Array2<f64>> = (0..n)
                .map(|i| {
                    let av = if a.ndim() == 3 { a.index_axis(Axis(0), i) } else { a.view() };
                    let bv = if b.ndim() == 3 { b.index_axis(Axis(0), i) } else { b.view() };
                    mm2(av.into_dimensionality().unwrap(), bv.into_dimensionality().unwrap(), ta, tb)
                })
                .collect();
            let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
            ndarray::stack(Axis(0), &views).expect("uniform batch").into_dyn()
        }
    }
}

fn sum_leading(g: ArrayD<f64>, target_ndim: usize) -> ArrayD<f64> {
    if g.ndim() > target_ndim {
        g.sum_axis(Axis(0))
    } else {
        g
    }
}

fn conv_out_len(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: (usize, usize),
    pad: (usize, usize),
}

impl ConvGeom {
    fn im2col(&self, x: ndarray::ArrayView3<'_, f64>) -> Array2<f64> {
        let mut cols = Array2::zeros((self.cin * self.kh * self.kw, self.oh * self.ow));
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let mut dst = cols.row_mut(row);
                    for oi in 0..self.oh {
                        let ii = (oi * self.stride.0 + ki) as isize - self.pad.0 as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        for oj in 0..self.ow {
                            let jj = (oj * self.stride.1 + kj) as isize - self.pad.1 as isize;
                            if jj < 0 || jj >= self.w as isize {
                                continue;
                            }
                            dst[oi * self.ow + oj] = x[[c, ii as usize, jj as usize]];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>) -> ndarray::Array3<f64> {
        let mut x = ndarray::Array3::zeros((self.cin, self.h, self.w));
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = cols.row(row);
                    for oi in 0..self.oh {
                        let ii = (oi * self.stride.0 + ki) as isize - self.pad.0 as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        for oj in 0..self.ow {
                            let jj = (oj * self.stride.1 + kj) as isize - self.pad.1 as isize;
                            if jj < 0 || jj >= self.w as isize {
                                continue;
                            }
                            x[[c, ii as usize, jj as usize]] += src[oi * self.ow + oj];
                        }
                    }
                }
            }
        }
        x
    }
}

fn conv_geom(x: &ArrayD<f64>, w: &ArrayD<f64>, stride: (usize, usize), pad: (usize, usize)) -> Result<ConvGeom> {
    if x.ndim() != 4 || w.ndim() != 4 {
        return Err(shape_err!("conv2d expects [B,C,H,W] input and [O,C,KH,KW] kernel, got {:?} and {:?}", x.shape(), w.shape()));
    }
    let (cin, h, wd) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kc, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
    if kc != cin {
        return Err(shape_err!("conv2d channel mismatch: input has {cin}, kernel expects {kc}"));
    }
    let oh = conv_out_len(h, kh, stride.0, pad.0)
        .ok_or_else(|| shape_err!("conv2d: height {h} with padding {} smaller than kernel {kh}", pad.0))?;
    let ow = conv_out_len(wd, kw, stride.1, pad.1)
        .ok_or_else(|| shape_err!("conv2d: width {wd} with padding {} smaller than kernel {kw}", pad.1))?;
    Ok(ConvGeom { cin, h, w: wd, kh, kw, oh, ow, stride, pad })
}

fn conv2d_forward(x: &ArrayD<f64>, w: &ArrayD<f64>, g: &ConvGeom) -> ArrayD<f64> {
    let b = x.shape()[0];
    let cout = w.shape()[0];
    let wmat = w.view().into_shape_with_order((cout, g.cin * g.kh * g.kw)).expect("contiguous kernel");
    let outs: Vec<Array2<f64>> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let xb = x.index_axis(Axis(0), bi).into_dimensionality().expect("rank 3");
            wmat.dot(&g.im2col(xb))
        })
        .collect();
    let mut out = ArrayD::zeros(IxDyn(&[b, cout, g.oh, g.ow]));
    for (bi, o) in outs.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), bi)
            .assign(&o.into_shape_with_order((cout, g.oh, g.ow)).expect("output block"));
    }
    out
}

fn conv2d_backward(x: &ArrayD<f64>, w: &ArrayD<f64>, gout: &ArrayD<f64>, g: &ConvGeom) -> (ArrayD<f64>, ArrayD<f64>) {
    let b = x.shape()[0];
    let cout = w.shape()[0];
    let kdim = g.cin * g.kh * g.kw;
    let wmat = w.view().into_shape_with_order((cout, kdim)).expect("contiguous kernel");
    let gout = gout.as_standard_layout();
    let per_batch: Vec<(Array2<f64>, ndarray::Array3<f64>)> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let xb = x.index_axis(Axis(0), bi).into_dimensionality().expect("rank 3");
            let cols = g.im2col(xb);
            let gb = gout.index_axis(Axis(0), bi);
            let gb = gb.into_shape_with_order((cout, g.oh * g.ow)).expect("contiguous grad");
            let dw = gb.dot(&cols.t());
            let dcols = wmat.t().dot(&gb);
            (dw, g.col2im(&dcols))
        })
        .collect();
    let mut dw = Array2::zeros((cout, kdim));
    let mut dx = ArrayD::zeros(x.raw_dim());
    for (bi, (dwb, dxb)) in per_batch.into_iter().enumerate() {
        dw += &dwb;
        dx.index_axis_mut(Axis(0), bi).assign(&dxb);
    }
    (dx, dw.into_shape_with_order(w.raw_dim()).expect("kernel shape"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Scalar value of a rank-0 or single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val.iter().next().copied().unwrap_or(f64::NAN)
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: ArrayD<f64>, requires_grad: bool) -> Var {
        let value = value.as_standard_layout().into_owned();
        self.nodes.push(Node { op: Op::Leaf, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(Op::Add(a, b), v, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(Op::Sub(a, b), v, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(Op::Mul(a, b), v, &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("div", self.value(a), self.value(b))?;
        let v = self.value(a) / self.value(b);
        Ok(self.push(Op::Div(a, b), v, &[a, b]))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        self.push(Op::Neg(a), v, &[a])
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let v = self.value(a) * alpha;
        self.push(Op::Scale(a, alpha), v, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(Op::AddScalar(a), v, &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        self.push(Op::Sqrt(a), v, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), v, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v, &[a])
    }

    /// Elementwise `sqrt(a² + b²)`.
    pub fn hypot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("hypot", self.value(a), self.value(b))?;
        let mut v = self.value(a).clone();
        Zip::from(&mut v).and(self.value(b)).for_each(|x, &y| *x = x.hypot(y));
        Ok(self.push(Op::Hypot(a, b), v, &[a, b]))
    }

    /// Elementwise `|re + j·im|^p`, with `0^p = 0`.
    pub fn abs_pow(&mut self, re: Var, im: Var, p: f64) -> Result<Var> {
        same_shape("abs_pow", self.value(re), self.value(im))?;
        let mut v = self.value(re).clone();
        Zip::from(&mut v).and(self.value(im)).for_each(|x, &y| {
            let r = x.hypot(y);
            *x = if r == 0.0 { 0.0 } else { r.powf(p) };
        });
        Ok(self.push(Op::AbsPow { re, im, p }, v, &[re, im]))
    }

    /// One part of `|z|^c · e^{jφ_z}` (real part unless `imag`); zero maps to zero.
    pub fn compress_part(&mut self, re: Var, im: Var, c: f64, imag: bool) -> Result<Var> {
        same_shape("compress", self.value(re), self.value(im))?;
        let mut v = self.value(re).clone();
        Zip::from(&mut v).and(self.value(im)).for_each(|x, &y| {
            let r = x.hypot(y);
            *x = if r == 0.0 {
                0.0
            } else {
                let f = r.powf(c - 1.0);
                if imag { y * f } else { *x * f }
            };
        });
        Ok(self.push(Op::Compress { re, im, c, imag }, v, &[re, im]))
    }

    /// Sum of all elements as a rank-0 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = ArrayD::from_elem(IxDyn(&[]), self.value(a).sum());
        self.push(Op::SumAll(a), v, &[a])
    }

    /// Matrix product over the last two axes. Either operand may be rank 2
    /// (broadcast over the batch) or rank 3 `[N, rows, cols]`. `ta`/`tb`
    /// transpose the respective operand's matrix axes.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok_rank = |n: usize| n == 2 || n == 3;
        if !ok_rank(sa.len()) || !ok_rank(sb.len()) {
            return Err(shape_err!("matmul expects rank 2 or 3 operands, got {sa:?} and {sb:?}"));
        }
        if sa.len() == 3 && sb.len() == 3 && sa[0] != sb[0] {
            return Err(shape_err!("matmul batch sizes differ: {sa:?} vs {sb:?}"));
        }
        let (ar, ac) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (br, bc) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let inner_a = if ta { ar } else { ac };
        let inner_b = if tb { bc } else { br };
        if inner_a != inner_b {
            return Err(shape_err!("matmul inner dimensions differ: {sa:?} (t={ta}) by {sb:?} (t={tb})"));
        }
        let v = bmm(self.value(a), self.value(b), ta, tb);
        Ok(self.push(Op::MatMul { a, b, ta, tb }, v, &[a, b]))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let nd = self.value(a).ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&i| i >= nd || std::mem::replace(&mut seen[i], true)) {
            return Err(shape_err!("permute: {axes:?} is not a permutation of {nd} axes"));
        }
        let v = self.value(a).clone().permuted_axes(IxDyn(axes)).as_standard_layout().into_owned();
        Ok(self.push(Op::Permute(a, axes.to_vec()), v, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self
            .value(a)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .map_err(|e| shape_err!("reshape {:?} -> {shape:?}: {e}", self.shape(a)))?;
        Ok(self.push(Op::Reshape(a), v, &[a]))
    }

    /// Real 2-D cross-correlation: input `[B,C,H,W]`, kernel `[O,C,KH,KW]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: (usize, usize), pad: (usize, usize)) -> Result<Var> {
        let geom = conv_geom(self.value(x), self.value(w), stride, pad)?;
        let v = conv2d_forward(self.value(x), self.value(w), &geom);
        Ok(self.push(Op::Conv2d { x, w, stride, pad }, v, &[x, w]))
    }

    /// Inserts zeros between samples of the last two axes of a `[B,C,H,W]`
    /// tensor: `out[.., h·sh, w·sw] = x[.., h, w]`, output `[B,C,H·sh,W·sw]`.
    pub fn zero_stuff(&mut self, x: Var, stride: (usize, usize)) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 4 || stride.0 == 0 || stride.1 == 0 {
            return Err(shape_err!("zero_stuff expects rank 4 and nonzero strides, got {:?}", xv.shape()));
        }
        let sh = xv.shape();
        let mut v = ArrayD::zeros(IxDyn(&[sh[0], sh[1], sh[2] * stride.0, sh[3] * stride.1]));
        v.slice_mut(s![.., .., ..;stride.0, ..;stride.1]).assign(xv);
        Ok(self.push(Op::ZeroStuff { x, stride }, v, &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).map_err(|e| shape_err!("concat: {e}"))?;
        Ok(self.push(Op::Concat { parts: parts.to_vec(), axis }, v, parts))
    }

    /// Expands a rank-1 `[n]` node to `shape`, varying along `axis`.
    pub fn broadcast_axis(&mut self, x: Var, axis: usize, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 1 || axis >= shape.len() || shape[axis] != xv.len() {
            return Err(shape_err!("broadcast_axis: {:?} onto {shape:?} along {axis}", xv.shape()));
        }
        let mut view_shape = vec![1; shape.len()];
        view_shape[axis] = xv.len();
        let v = xv
            .view()
            .into_shape_with_order(IxDyn(&view_shape))
            .expect("rank-1 reshape")
            .broadcast(IxDyn(shape))
            .expect("broadcastable")
            .to_owned();
        Ok(self.push(Op::BroadcastAxis { x, axis }, v, &[x]))
    }

    /// Sums over every axis except `axis`, returning `[shape[axis]]`.
    pub fn sum_to_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(shape_err!("sum_to_axis: axis {axis} out of range for {:?}", xv.shape()));
        }
        let v: Vec<f64> = xv.axis_iter(Axis(axis)).map(|sub| sub.sum()).collect();
        let v = ArrayD::from_shape_vec(IxDyn(&[v.len()]), v).expect("rank 1");
        Ok(self.push(Op::SumToAxis { x, axis }, v, &[x]))
    }

    /// Softmax over the last axis, with per-row max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let last = Axis(v.ndim() - 1);
        for mut row in v.lanes_mut(last) {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(Op::Softmax(x), v, &[x])
    }

    /// Selects position `idx` along `axis`, dropping that axis.
    pub fn index(&mut self, x: Var, axis: usize, idx: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() || idx >= xv.shape()[axis] {
            return Err(shape_err!("index {idx} on axis {axis} out of range for {:?}", xv.shape()));
        }
        let v = xv.index_axis(Axis(axis), idx).to_owned();
        Ok(self.push(Op::Index { x, axis, idx }, v, &[x]))
    }

    /// Stacks equally-shaped nodes along a new `axis`.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::stack(Axis(axis), &views).map_err(|e| shape_err!("stack: {e}"))?;
        Ok(self.push(Op::Stack { parts: parts.to_vec(), axis }, v, parts))
    }

    /// Reverse pass from a scalar node. Returns gradients for every node that
    /// requires them and depends on `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(contract_err!("backward needs a scalar loss, got shape {:?}", lv.shape()));
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ArrayD::from_elem(lv.raw_dim(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Only keep gradients for nodes that actually need them.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<ArrayD<f64>>], v: Var, g: ArrayD<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                self.accum(grads, *a, g * self.value(*b));
                self.accum(grads, *b, g * self.value(*a));
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                self.accum(grads, *a, g / bv);
                let mut gb = g.clone();
                Zip::from(&mut gb).and(y).and(bv).for_each(|gb, &q, &d| *gb = -*gb * q / d);
                self.accum(grads, *b, gb);
            }
            Op::Neg(a) => self.accum(grads, *a, g.mapv(|x| -x)),
            Op::Scale(a, alpha) => self.accum(grads, *a, g * *alpha),
            Op::AddScalar(a) => self.accum(grads, *a, g.clone()),
            Op::Sqrt(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(y).for_each(|ga, &s| *ga = if s > 0.0 { *ga * 0.5 / s } else { 0.0 });
                self.accum(grads, *a, ga);
            }
            Op::Relu(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(self.value(*a)).for_each(|ga, &x| {
                    if x <= 0.0 {
                        *ga = 0.0
                    }
                });
                self.accum(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(y).for_each(|ga, &s| *ga *= s * (1.0 - s));
                self.accum(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(y).for_each(|ga, &t| *ga *= 1.0 - t * t);
                self.accum(grads, *a, ga);
            }
            Op::Hypot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = g.clone();
                let mut gb = g.clone();
                Zip::from(&mut ga).and(&mut gb).and(y).and(av).and(bv).for_each(|ga, gb, &r, &x, &z| {
                    if r > 0.0 {
                        *ga *= x / r;
                        *gb *= z / r;
                    } else {
                        *ga = 0.0;
                        *gb = 0.0;
                    }
                });
                self.accum(grads, *a, ga);
                self.accum(grads, *b, gb);
            }
            Op::AbsPow { re, im, p } => {
                let (av, bv) = (self.value(*re), self.value(*im));
                let mut ga = g.clone();
                let mut gb = g.clone();
                Zip::from(&mut ga).and(&mut gb).and(av).and(bv).for_each(|ga, gb, &x, &z| {
                    let r = x.hypot(z).max(MAGNITUDE_GRAD_FLOOR);
                    let f = p * r.powf(p - 2.0);
                    *ga *= f * x;
                    *gb *= f * z;
                });
                self.accum(grads, *re, ga);
                self.accum(grads, *im, gb);
            }
            Op::Compress { re, im, c, imag } => {
                let (av, bv) = (self.value(*re), self.value(*im));
                let mut ga = g.clone();
                let mut gb = g.clone();
                Zip::from(&mut ga).and(&mut gb).and(av).and(bv).for_each(|ga, gb, &x, &z| {
                    let r = x.hypot(z).max(MAGNITUDE_GRAD_FLOOR);
                    let base = r.powf(c - 1.0);
                    let cross = (c - 1.0) * r.powf(c - 3.0);
                    let (dx, dz) = if *imag {
                        (cross * x * z, base + cross * z * z)
                    } else {
                        (base + cross * x * x, cross * x * z)
                    };
                    *ga *= dx;
                    *gb *= dz;
                });
                self.accum(grads, *re, ga);
                self.accum(grads, *im, gb);
            }
            Op::SumAll(a) => {
                let s = g.iter().next().copied().unwrap_or(0.0);
                self.accum(grads, *a, ArrayD::from_elem(self.value(*a).raw_dim(), s));
            }
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = if *ta { bmm(bv, g, *tb, true) } else { bmm(g, bv, false, !*tb) };
                let gb = if *tb { bmm(g, av, true, *ta) } else { bmm(av, g, !*ta, false) };
                self.accum(grads, *a, sum_leading(ga, av.ndim()));
                self.accum(grads, *b, sum_leading(gb, bv.ndim()));
            }
            Op::Permute(a, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                let ga = g.clone().permuted_axes(IxDyn(&inv)).as_standard_layout().into_owned();
                self.accum(grads, *a, ga);
            }
            Op::Reshape(a) => {
                let ga = g.clone().into_shape_with_order(self.value(*a).raw_dim()).expect("reshape back");
                self.accum(grads, *a, ga);
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let geom = conv_geom(xv, wv, *stride, *pad).expect("validated in forward");
                let (dx, dw) = conv2d_backward(xv, wv, g, &geom);
                self.accum(grads, *x, dx);
                self.accum(grads, *w, dw);
            }
            Op::ZeroStuff { x, stride } => {
                let ga = g.slice(s![.., .., ..;stride.0, ..;stride.1]).to_owned().into_dyn();
                self.accum(grads, *x, ga);
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let n = self.value(p).shape()[*axis];
                    let piece = g.slice_axis(Axis(*axis), (start..start + n).into()).to_owned();
                    self.accum(grads, p, piece);
                    start += n;
                }
            }
            Op::BroadcastAxis { x, axis } => {
                let v: Vec<f64> = g.axis_iter(Axis(*axis)).map(|sub| sub.sum()).collect();
                self.accum(grads, *x, ArrayD::from_shape_vec(IxDyn(&[v.len()]), v).expect("rank 1"));
            }
            Op::SumToAxis { x, axis } => {
                let shape = self.value(*x).shape().to_vec();
                let mut view_shape = vec![1; shape.len()];
                view_shape[*axis] = g.len();
                let ga = g
                    .view()
                    .into_shape_with_order(IxDyn(&view_shape))
                    .expect("rank-1 grad")
                    .broadcast(IxDyn(&shape))
                    .expect("broadcastable")
                    .to_owned();
                self.accum(grads, *x, ga);
            }
            Op::Softmax(x) => {
                let mut ga = g * y;
                let last = Axis(y.ndim() - 1);
                let dots = ga.sum_axis(last).insert_axis(last);
                Zip::from(&mut ga)
                    .and(y)
                    .and_broadcast(&dots)
                    .for_each(|ga, &s, &d| *ga -= s * d);
                self.accum(grads, *x, ga);
            }
            Op::Index { x, axis, idx } => {
                let mut ga = ArrayD::zeros(self.value(*x).raw_dim());
                ga.index_axis_mut(Axis(*axis), *idx).assign(g);
                self.accum(grads, *x, ga);
            }
            Op::Stack { parts, axis } => {
                for (i, &p) in parts.iter().enumerate() {
                    self.accum(grads, p, g.index_axis(Axis(*axis), i).to_owned());
                }
            }
        }
    }
}
