use super::conv::{col2im, im2col, ConvGeom};
use super::gemm::{gemm, MatRef};
use super::{Conv2dParams, Scalar, Tensor, TensorError};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, p: Conv2dParams },
    Deconv2d { x: Var, w: Var, b: Option<Var>, p: Conv2dParams },
    Downsample { x: Var, factor: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Relu { x: Var },
    Affine { x: Var, scale: Var, shift: Var },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    MatMul { a: Var, b: Var },
    TransposeLast2 { x: Var },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    Log { x: Var },
    Sum { x: Var, axes: Vec<usize> },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op,
}

/// Operation tape. Nodes are appended in evaluation order, so the tape is a
/// topological order and backward visits each node once in reverse.
///
/// A graph is single-threaded; build one per forward pass.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn nchw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize), TensorError> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(TensorError::invalid(op, format!("expected NCHW input, got shape {shape:?}"))),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input: receives a gradient from [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad: true, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad: false, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    // ---------------------------------------------------------------- ops

    /// 2-D convolution. `x: [N, C, H, W]`, `w: [O, C, kh, kw]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, p: Conv2dParams) -> Result<Var, TensorError> {
        let (n, c, h, wd) = nchw("conv2d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != c {
            return Err(TensorError::mismatch("conv2d", self.shape(x), &ws));
        }
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(TensorError::mismatch("conv2d bias", &ws, self.shape(b)));
            }
        }
        let g = ConvGeom::forward(c, h, wd, kh, kw, p)
            .ok_or_else(|| TensorError::invalid("conv2d", format!("kernel {kh}x{kw} {p:?} does not fit {h}x{wd}")))?;
        let ohw = g.col_cols();
        let mut out = vec![T::zero(); n * o * ohw];
        let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { g.col_rows() * ohw }];
        let xv = self.value(x).data();
        let wm = MatRef::new(self.value(w).data(), o, g.col_rows());
        for i in 0..n {
            let img = &xv[i * c * h * wd..(i + 1) * c * h * wd];
            let colm = if g.is_pointwise() {
                MatRef::new(img, c, ohw)
            } else {
                im2col(img, &g, &mut cols);
                MatRef::new(&cols, g.col_rows(), ohw)
            };
            let dst = &mut out[i * o * ohw..(i + 1) * o * ohw];
            gemm(T::one(), wm, colm, T::zero(), dst);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), ohw);
        }
        let value = Tensor::new(vec![n, o, g.oh, g.ow], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, p }, &parents))
    }

    /// Transposed convolution (adjoint of [`Graph::conv2d`] with the same
    /// weight tensor). `x: [N, Ci, H, W]`, `w: [Ci, Co, kh, kw]`, `b: [Co]`;
    /// output side `(H − 1)·stride + kh − 2·padding`.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Option<Var>, p: Conv2dParams) -> Result<Var, TensorError> {
        let (n, ci, h, wd) = nchw("deconv2d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[0] != ci {
            return Err(TensorError::mismatch("deconv2d", self.shape(x), &ws));
        }
        let (co, kh, kw) = (ws[1], ws[2], ws[3]);
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(TensorError::mismatch("deconv2d bias", &ws, self.shape(b)));
            }
        }
        let g = ConvGeom::transposed(co, h, wd, kh, kw, p)
            .ok_or_else(|| TensorError::invalid("deconv2d", format!("kernel {kh}x{kw} {p:?} invalid for {h}x{wd}")))?;
        let hw = h * wd;
        let out_plane = co * g.h * g.w;
        let mut out = vec![T::zero(); n * out_plane];
        let mut cols = vec![T::zero(); g.col_rows() * hw];
        let xv = self.value(x).data();
        let wm = MatRef::new(self.value(w).data(), ci, g.col_rows());
        for i in 0..n {
            let xm = MatRef::new(&xv[i * ci * hw..(i + 1) * ci * hw], ci, hw);
            gemm(T::one(), wm.t(), xm, T::zero(), &mut cols);
            col2im(&cols, &g, &mut out[i * out_plane..(i + 1) * out_plane]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), g.h * g.w);
        }
        let value = Tensor::new(vec![n, co, g.h, g.w], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::Deconv2d { x, w, b, p }, &parents))
    }

    /// Keeps every `factor`-th row and column of an NCHW map.
    pub fn downsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var, TensorError> {
        let (n, c, h, w) = nchw("downsample_nearest", self.shape(x))?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(TensorError::invalid("downsample_nearest", format!("factor {factor} does not divide {h}x{w}")));
        }
        let (oh, ow) = (h / factor, w / factor);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in xv.chunks_exact(h * w) {
            for i in 0..oh {
                for j in 0..ow {
                    out.push(plane[i * factor * w + j * factor]);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, Op::Downsample { x, factor }, &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = xs.first().ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in xs {
            let s = self.shape(*v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(TensorError::mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let t = self.value(*v);
                let blk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { xs: xs.to_vec(), axis }, xs))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(TensorError::invalid(
                "slice",
                format!("range {start}..{} of axis {axis} out of bounds for {s:?}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&s, axis);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| if *v > T::zero() { *v } else { T::zero() }).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Relu { x }, &[x])
    }

    /// Per-channel affine map `y = x·scale[c] + shift[c]` over axis 1.
    pub fn batch_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(TensorError::invalid("batch_affine", format!("need a channel axis, got {s:?}")));
        }
        let c = s[1];
        if self.shape(scale) != [c] || self.shape(shift) != [c] {
            return Err(TensorError::mismatch("batch_affine", &s, self.shape(scale)));
        }
        let inner: usize = s[2..].iter().product();
        let (sc, sh) = (self.value(scale).data(), self.value(shift).data());
        let out = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = (i / inner) % c;
                *v * sc[ch] + sh[ch]
            })
            .collect();
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, Op::Affine { x, scale, shift }, &[x, scale, shift]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let value = self.softmax_value(x, axis, "softmax", false)?;
        Ok(self.push(value, Op::Softmax { x, axis }, &[x]))
    }

    /// Numerically stable `log(softmax(x))`.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let value = self.softmax_value(x, axis, "log_softmax", true)?;
        Ok(self.push(value, Op::LogSoftmax { x, axis }, &[x]))
    }

    fn softmax_value(&self, x: Var, axis: usize, op: &'static str, log: bool) -> Result<Tensor<T>, TensorError> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(TensorError::invalid(op, format!("axis {axis} out of range for {s:?}")));
        }
        let (outer, len, inner) = split_axis(s, axis);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| xv[at(k)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for k in 0..len {
                    let e = (xv[at(k)] - max).exp();
                    out[at(k)] = e;
                    sum += e;
                }
                if log {
                    let lse = sum.ln();
                    for k in 0..len {
                        out[at(k)] = xv[at(k)] - max - lse;
                    }
                } else {
                    for k in 0..len {
                        out[at(k)] /= sum;
                    }
                }
            }
        }
        Tensor::new(s.to_vec(), out)
    }

    /// Matrix product of `[M, K]·[K, N]` or batched `[B, M, K]·[B, K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => (*ba, *m, *k, *n),
            _ => return Err(TensorError::mismatch("matmul", &sa, &sb)),
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                T::one(),
                MatRef::new(&av[i * m * k..(i + 1) * m * k], m, k),
                MatRef::new(&bv[i * k * n..(i + 1) * k * n], k, n),
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b }, &[a, b]))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(TensorError::invalid("transpose_last2", format!("rank < 2: {s:?}")));
        }
        let value = transpose_last2_value(self.value(x));
        Ok(self.push(value, Op::TransposeLast2 { x }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: impl FnOnce(Var, Var) -> Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::mismatch(op, ta.shape(), tb.shape()));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, make(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("div", a, b, |x, y| x / y, |a, b| Op::Div { a, b })
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect()).expect("same shape");
        self.push(value, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let ct = T::lit(c);
        self.unary(x, |v| v * ct, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let ct = T::lit(c);
        self.unary(x, |v| v + ct, Op::AddScalar { x })
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log { x })
    }

    /// Sums over `axes`, removing them from the shape.
    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|a| *a >= s.len()) {
            return Err(TensorError::invalid("sum", format!("axes {axes:?} out of range for {s:?}")));
        }
        let (out_shape, map) = reduction_map(&s, &axes);
        let mut out = vec![T::zero(); out_shape.iter().product()];
        for (v, o) in self.value(x).data().iter().zip(&map) {
            out[*o] += *v;
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Sum { x, axes }, &[x]))
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(x);
        let mut count = 1usize;
        for (k, d) in s.iter().enumerate() {
            if axes.contains(&k) {
                count *= d;
            }
        }
        let total = self.sum(x, axes)?;
        Ok(self.scale(total, 1.0 / count.max(1) as f64))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.sum(x, &axes).expect("valid axes")
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.mean(x, &axes).expect("valid axes")
    }

    /// Multiplicative self-attention `softmax(q kᵀ / √d) v` over
    /// `q, k: [B, L, d]`, `v: [B, L, dv]`.
    pub fn scale_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var, TensorError> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if sq.len() != 3 || sq != sk {
            return Err(TensorError::mismatch("scale_dot_attention", &sq, &sk));
        }
        if sv.len() != 3 || sv[..2] != sq[..2] {
            return Err(TensorError::mismatch("scale_dot_attention", &sq, &sv));
        }
        let kt = self.transpose_last2(k)?;
        let scores = self.matmul(q, kt)?;
        let scores = self.scale(scores, 1.0 / (sq[2] as f64).sqrt());
        let weights = self.softmax(scores, 2)?;
        self.matmul(weights, v)
    }

    // ----------------------------------------------------------- backward

    /// Reverse pass from a one-element `loss`, accumulating `dloss/dleaf`
    /// into every leaf created with [`Graph::leaf`]. Gradients from repeated
    /// calls add up.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::invalid(
                "backward",
                format!("loss must have one element, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            for (parent, contrib) in self.node_backward(i, &g)? {
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>, TensorError> {
        let node = &self.nodes[i];
        let gd = g.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, p } => {
                let (n, c, h, wd) = nchw("conv2d", self.shape(*x))?;
                let ws = self.shape(*w);
                let (o, kh, kw) = (ws[0], ws[2], ws[3]);
                let geom = ConvGeom::forward(c, h, wd, kh, kw, *p).expect("validated in forward");
                let ohw = geom.col_cols();
                let xv = self.value(*x).data();
                let wm = MatRef::new(self.value(*w).data(), o, geom.col_rows());
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    out.push((b, channel_sums(gd, o, ohw)));
                }
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); o * geom.col_rows()];
                    let mut cols = vec![T::zero(); if geom.is_pointwise() { 0 } else { geom.col_rows() * ohw }];
                    for s in 0..n {
                        let img = &xv[s * c * h * wd..(s + 1) * c * h * wd];
                        let colm = if geom.is_pointwise() {
                            MatRef::new(img, c, ohw)
                        } else {
                            im2col(img, &geom, &mut cols);
                            MatRef::new(&cols, geom.col_rows(), ohw)
                        };
                        let gm = MatRef::new(&gd[s * o * ohw..(s + 1) * o * ohw], o, ohw);
                        gemm(T::one(), gm, colm.t(), T::one(), &mut dw);
                    }
                    out.push((*w, Tensor::new(ws.to_vec(), dw)?));
                }
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); xv.len()];
                    let mut dcols = vec![T::zero(); geom.col_rows() * ohw];
                    for s in 0..n {
                        let gm = MatRef::new(&gd[s * o * ohw..(s + 1) * o * ohw], o, ohw);
                        let dst = &mut dx[s * c * h * wd..(s + 1) * c * h * wd];
                        if geom.is_pointwise() {
                            gemm(T::one(), wm.t(), gm, T::zero(), dst);
                        } else {
                            gemm(T::one(), wm.t(), gm, T::zero(), &mut dcols);
                            col2im(&dcols, &geom, dst);
                        }
                    }
                    out.push((*x, Tensor::new(self.shape(*x).to_vec(), dx)?));
                }
            }
            Op::Deconv2d { x, w, b, p } => {
                let (n, ci, h, wd) = nchw("deconv2d", self.shape(*x))?;
                let ws = self.shape(*w);
                let (co, kh, kw) = (ws[1], ws[2], ws[3]);
                let geom = ConvGeom::transposed(co, h, wd, kh, kw, *p).expect("validated in forward");
                let hw = h * wd;
                let out_plane = co * geom.h * geom.w;
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    out.push((b, channel_sums(gd, co, geom.h * geom.w)));
                }
                let xv = self.value(*x).data();
                let wm = MatRef::new(self.value(*w).data(), ci, geom.col_rows());
                let mut gcols = vec![T::zero(); geom.col_rows() * hw];
                let mut dw = vec![T::zero(); if self.needs(*w) { ci * geom.col_rows() } else { 0 }];
                let mut dx = vec![T::zero(); if self.needs(*x) { xv.len() } else { 0 }];
                for s in 0..n {
                    im2col(&gd[s * out_plane..(s + 1) * out_plane], &geom, &mut gcols);
                    let gcm = MatRef::new(&gcols, geom.col_rows(), hw);
                    if self.needs(*w) {
                        let xm = MatRef::new(&xv[s * ci * hw..(s + 1) * ci * hw], ci, hw);
                        gemm(T::one(), xm, gcm.t(), T::one(), &mut dw);
                    }
                    if self.needs(*x) {
                        gemm(T::one(), wm, gcm, T::zero(), &mut dx[s * ci * hw..(s + 1) * ci * hw]);
                    }
                }
                if self.needs(*w) {
                    out.push((*w, Tensor::new(ws.to_vec(), dw)?));
                }
                if self.needs(*x) {
                    out.push((*x, Tensor::new(self.shape(*x).to_vec(), dx)?));
                }
            }
            Op::Downsample { x, factor } => {
                let (_, _, h, w) = nchw("downsample_nearest", self.shape(*x))?;
                let (oh, ow) = (h / factor, w / factor);
                let mut dx = Tensor::zeros(self.shape(*x));
                for (plane, gplane) in dx.data_mut().chunks_exact_mut(h * w).zip(gd.chunks_exact(oh * ow)) {
                    for i in 0..oh {
                        for j in 0..ow {
                            plane[i * factor * w + j * factor] = gplane[i * ow + j];
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for v in xs {
                    let len = self.shape(*v)[*axis];
                    if self.needs(*v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&gd[base..base + len * inner]);
                        }
                        out.push((*v, Tensor::new(self.shape(*v).to_vec(), d)?));
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, full, inner) = split_axis(self.shape(*x), *axis);
                let len = g.shape()[*axis];
                let mut dx = Tensor::zeros(self.shape(*x));
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    dx.data_mut()[base..base + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((*x, dx));
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                let d = gd.iter().zip(xv).map(|(g, v)| if *v > T::zero() { *g } else { T::zero() }).collect();
                out.push((*x, Tensor::new(g.shape().to_vec(), d)?));
            }
            Op::Affine { x, scale, shift } => {
                let s = self.shape(*x);
                let c = s[1];
                let inner: usize = s[2..].iter().product();
                let xv = self.value(*x).data();
                let sc = self.value(*scale).data();
                let mut dscale = vec![T::zero(); c];
                let mut dshift = vec![T::zero(); c];
                let mut dx = vec![T::zero(); xv.len()];
                for (i, gv) in gd.iter().enumerate() {
                    let ch = (i / inner) % c;
                    dscale[ch] += *gv * xv[i];
                    dshift[ch] += *gv;
                    dx[i] = *gv * sc[ch];
                }
                if self.needs(*x) {
                    out.push((*x, Tensor::new(s.to_vec(), dx)?));
                }
                if self.needs(*scale) {
                    out.push((*scale, Tensor::new(vec![c], dscale)?));
                }
                if self.needs(*shift) {
                    out.push((*shift, Tensor::new(vec![c], dshift)?));
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(g.shape(), *axis);
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot: T = (0..len).map(|k| gd[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            dx[at(k)] = y[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
                out.push((*x, Tensor::new(g.shape().to_vec(), dx)?));
            }
            Op::LogSoftmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(g.shape(), *axis);
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let total: T = (0..len).map(|k| gd[at(k)]).sum();
                        for k in 0..len {
                            dx[at(k)] = gd[at(k)] - y[at(k)].exp() * total;
                        }
                    }
                }
                out.push((*x, Tensor::new(g.shape().to_vec(), dx)?));
            }
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, m, k, n) =
                    if sa.len() == 2 { (1, sa[0], sa[1], sb[1]) } else { (sa[0], sa[1], sa[2], sb[2]) };
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let mut da = vec![T::zero(); if self.needs(*a) { av.len() } else { 0 }];
                let mut db = vec![T::zero(); if self.needs(*b) { bv.len() } else { 0 }];
                for i in 0..batch {
                    let gm = MatRef::new(&gd[i * m * n..(i + 1) * m * n], m, n);
                    if self.needs(*a) {
                        let bm = MatRef::new(&bv[i * k * n..(i + 1) * k * n], k, n);
                        gemm(T::one(), gm, bm.t(), T::zero(), &mut da[i * m * k..(i + 1) * m * k]);
                    }
                    if self.needs(*b) {
                        let am = MatRef::new(&av[i * m * k..(i + 1) * m * k], m, k);
                        gemm(T::one(), am.t(), gm, T::zero(), &mut db[i * k * n..(i + 1) * k * n]);
                    }
                }
                if self.needs(*a) {
                    out.push((*a, Tensor::new(sa.to_vec(), da)?));
                }
                if self.needs(*b) {
                    out.push((*b, Tensor::new(sb.to_vec(), db)?));
                }
            }
            Op::TransposeLast2 { x } => out.push((*x, transpose_last2_value(g))),
            Op::Reshape { x } => out.push((*x, g.clone().reshape(self.shape(*x))?)),
            Op::Add { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, map(g, |v| -v)));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                out.push((*a, zip_map(g, bv, |g, b| g * b)));
                out.push((*b, zip_map(g, av, |g, a| g * a)));
            }
            Op::Div { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                out.push((*a, zip_map(g, bv, |g, b| g / b)));
                let gb = Tensor::new(
                    g.shape().to_vec(),
                    gd.iter().zip(av.data()).zip(bv.data()).map(|((g, a), b)| -*g * *a / (*b * *b)).collect(),
                )?;
                out.push((*b, gb));
            }
            Op::Scale { x, c } => {
                let ct = T::lit(*c);
                out.push((*x, map(g, |v| v * ct)));
            }
            Op::AddScalar { x } => out.push((*x, g.clone())),
            Op::Log { x } => out.push((*x, zip_map(g, self.value(*x), |g, x| g / x))),
            Op::Sum { x, axes } => {
                let (_, idx) = reduction_map(self.shape(*x), axes);
                let d = idx.iter().map(|o| gd[*o]).collect();
                out.push((*x, Tensor::new(self.shape(*x).to_vec(), d)?));
            }
        }
        out.retain(|(v, _)| self.needs(*v));
        Ok(out)
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    let c = bias.len();
    for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
        let b = bias[i % c];
        for v in chunk {
            *v += b;
        }
    }
}

fn channel_sums<T: Scalar>(g: &[T], channels: usize, plane: usize) -> Tensor<T> {
    let mut sums = vec![T::zero(); channels];
    for (i, chunk) in g.chunks_exact(plane).enumerate() {
        sums[i % channels] += chunk.iter().copied().sum::<T>();
    }
    Tensor::new(vec![channels], sums).expect("channel count")
}

fn map<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect()).expect("same shape")
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect())
        .expect("same shape")
}

fn transpose_last2_value<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let r = s.len();
    let (m, n) = (s[r - 2], s[r - 1]);
    let batch: usize = s[..r - 2].iter().product();
    let src = t.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..batch {
        let base = b * m * n;
        for i in 0..m {
            for j in 0..n {
                out[base + j * m + i] = src[base + i * n + j];
            }
        }
    }
    let mut shape = s.to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::new(shape, out).expect("same numel")
}

/// Output shape of a reduction and, per input element in row-major order,
/// the flat index of the output element it contributes to.
fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape.iter().enumerate().filter(|(k, _)| !axes.contains(k)).map(|(_, d)| *d).collect();
    // output stride for every input axis (0 on reduced axes)
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for k in (0..shape.len()).rev() {
        if !axes.contains(&k) {
            strides[k] = acc;
            acc *= shape[k];
        }
    }
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for k in (0..shape.len()).rev() {
            idx[k] += 1;
            off += strides[k];
            if idx[k] < shape[k] {
                break;
            }
            off -= strides[k] * shape[k];
            idx[k] = 0;
        }
    }
    (out_shape, map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut g = Graph::<f32>::new();
        let img = Tensor::from_fn(&[1, 1, 4, 5], |i| i as f32 * 0.5 - 3.0);
        let x = g.constant(img.clone());
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let w = g.constant(k);
        let y = g.conv2d(x, w, None, Conv2dParams::new(1, 1)).unwrap();
        assert_eq!(g.value(y), &img);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform_with_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn reduction_map_over_middle_axis() {
        let (shape, map) = reduction_map(&[2, 3, 2], &[1]);
        assert_eq!(shape, vec![2, 2]);
        assert_eq!(map, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
        let (shape, map) = reduction_map(&[2, 3], &[0, 1]);
        assert!(shape.is_empty());
        assert!(map.iter().all(|o| *o == 0));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        let err = g.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn shared_input_sums_path_gradients() {
        // y = x*x + 3x  => dy/dx = 2x + 3
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let lin = g.scale(x, 3.0);
        let y = g.add(sq, lin).unwrap();
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[5.0, -1.0, 4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::full(&[2], 2.0));
        let x = g.leaf(Tensor::full(&[2], 3.0));
        let y = g.mul(c, x).unwrap();
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }
}
