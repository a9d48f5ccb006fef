use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::{numel, Real, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Pow(Var, f64),
    Exp(Var),
    Ln(Var),
    /// Derivative mask is recomputed from the input sign.
    LeakyRelu(Var, f64),
    ClampMin(Var, f64),
    Reshape(Var),
    BroadcastTo(Var),
    SumTo(Var),
    MatMul(Var, Var),
    Swap01(Var),
    Conv { x: Var, k: Var, stride: usize, pad: usize },
    /// Input-adjoint of a convolution (transposed convolution).
    ConvT { g: Var, k: Var, stride: usize, pad: usize },
    /// Kernel-adjoint of a convolution.
    ConvK { x: Var, g: Var, stride: usize, pad: usize },
    ZeroInsert(Var, usize),
    Subsample(Var, usize),
    AvgPool2(Var),
    UpNearest2(Var),
    PadChannels { x: Var, start: usize },
    SliceChannels { x: Var, start: usize },
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => [Some(a), Some(b)],
            Conv { x, k, .. } => [Some(x), Some(k)],
            ConvT { g, k, .. } => [Some(g), Some(k)],
            ConvK { x, g, .. } => [Some(x), Some(g)],
            Scale(a, _) | AddConst(a) | Pow(a, _) | Exp(a) | Ln(a) | LeakyRelu(a, _) | ClampMin(a, _) | Reshape(a)
            | BroadcastTo(a) | SumTo(a) | Swap01(a) | ZeroInsert(a, _) | Subsample(a, _) | AvgPool2(a)
            | UpNearest2(a) => [Some(a), None],
            PadChannels { x, .. } | SliceChannels { x, .. } => [Some(x), None],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

/// Ordered record of every value and the primitive that produced it.
///
/// Nodes are appended in evaluation order, so the record is topologically
/// sorted; [`Tape::grad`] walks it backwards and appends the adjoint
/// computations as new nodes.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn dims4(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize, usize), TensorError> {
    match *s {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(TensorError::InvalidArgument { op, what: "expected a rank-4 tensor [batch, channels, height, width]" }),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn raw(&mut self, shape: &[usize], data: Vec<T>, op: Op) -> Var {
        debug_assert_eq!(numel(shape), data.len());
        self.push(Tensor { shape: shape.to_vec(), data }, op)
    }

    /// Record an input value. Whether it is treated as a parameter or a
    /// constant is decided by what [`Tape::grad`] is asked for.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn data(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value.data
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|&v| T::from_f64(f(v.to_f64()))).collect();
        self.raw(&shape, data, op)
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(name, self.shape(a), self.shape(b)));
        }
        let shape = self.shape(a).to_vec();
        let data =
            self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| T::from_f64(f(x.to_f64(), y.to_f64()))).collect();
        Ok(self.raw(&shape, data, op))
    }

    // ---- elementwise ----

    /// Broadcast a rank-0 operand against the other one.
    fn align(&mut self, a: Var, b: Var) -> Result<(Var, Var), TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            return Ok((a, b));
        }
        let lift = |t: &mut Self, v: Var, to: &[usize]| -> Result<Var, TensorError> {
            let ones = vec![1; to.len()];
            let r = t.reshape(v, &ones)?;
            t.broadcast_to(r, to)
        };
        match (sa.is_empty(), sb.is_empty()) {
            (true, false) => Ok((lift(self, a, &sb)?, b)),
            (false, true) => Ok((a, lift(self, b, &sa)?)),
            _ => Ok((a, b)),
        }
    }

    /// Elementwise sum; a scalar operand is broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (a, b) = self.align(a, b)?;
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (a, b) = self.align(a, b)?;
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (a, b) = self.align(a, b)?;
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddConst(a), |x| x + c)
    }

    pub fn pow(&mut self, a: Var, p: f64) -> Var {
        self.map(a, Op::Pow(a, p), |x| libm::pow(x, p))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.pow(a, 0.5)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), libm::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a), libm::log)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, Op::LeakyRelu(a, slope), |x| if x >= 0.0 { x } else { slope * x })
    }

    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        self.map(a, Op::ClampMin(a, lo), |x| if x < lo { lo } else { x })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `1 / (1 + exp(-x))`, composed from primitives.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let n = self.scale(a, -1.0);
        let e = self.exp(n);
        let d = self.add_scalar(e, 1.0);
        self.pow(d, -1.0)
    }

    // ---- shape ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        if numel(shape) != numel(self.shape(a)) {
            return Err(mismatch("reshape", self.shape(a), shape));
        }
        let data = self.data(a).to_vec();
        Ok(self.raw(shape, data, Op::Reshape(a)))
    }

    fn check_broadcast(&self, op: &'static str, small: &[usize], big: &[usize]) -> Result<(), TensorError> {
        if small.len() != big.len() || small.iter().zip(big).any(|(&s, &b)| s != b && s != 1) {
            return Err(mismatch(op, small, big));
        }
        Ok(())
    }

    /// Repeat along axes where `a` has extent 1 (ranks must match).
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let small = self.shape(a).to_vec();
        self.check_broadcast("broadcast_to", &small, shape)?;
        if small == shape {
            return Ok(a);
        }
        let data = kernels::broadcast_to(self.data(a), &small, shape);
        Ok(self.raw(shape, data, Op::BroadcastTo(a)))
    }

    /// Sum over the axes where `shape` has extent 1 (ranks must match).
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let big = self.shape(a).to_vec();
        self.check_broadcast("sum_to", shape, &big)?;
        if big == shape {
            return Ok(a);
        }
        let data = kernels::sum_to(self.data(a), &big, shape);
        Ok(self.raw(shape, data, Op::SumTo(a)))
    }

    pub fn mean_to(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let n = numel(self.shape(a)) / numel(shape).max(1);
        let s = self.sum_to(a, shape)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Population variance over the axes where `shape` has extent 1.
    pub fn variance_to(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let full = self.shape(a).to_vec();
        let mean = self.mean_to(a, shape)?;
        let mb = self.broadcast_to(mean, &full)?;
        let d = self.sub(a, mb)?;
        let d2 = self.mul(d, d)?;
        self.mean_to(d2, shape)
    }

    /// Sum of all elements as a scalar (empty shape).
    pub fn sum_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let ones = vec![1; self.shape(a).len()];
        let s = self.sum_to(a, &ones)?;
        self.reshape(s, &[])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = numel(self.shape(a));
        let s = self.sum_all(a)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    pub fn variance_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let ones = vec![1; self.shape(a).len()];
        let v = self.variance_to(a, &ones)?;
        self.reshape(v, &[])
    }

    /// Swap the two leading axes; a matrix transpose for rank 2.
    pub fn swap01(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(TensorError::InvalidArgument { op: "swap01", what: "rank must be at least 2" });
        }
        let rest = numel(&s[2..]);
        let data = kernels::swap01(self.data(a), s[0], s[1], rest);
        let mut ns = s.clone();
        ns.swap(0, 1);
        Ok(self.raw(&ns, data, Op::Swap01(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        self.swap01(a)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let data = kernels::matmul(self.data(a), self.data(b), sa[0], sa[1], sb[1]);
        Ok(self.raw(&[sa[0], sb[1]], data, Op::MatMul(a, b)))
    }

    /// `x·W + bias` with the bias broadcast over the batch.
    pub fn dense(&mut self, x: Var, w: Var, bias: Var) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        let m = self.shape(y)[1];
        if self.shape(bias) != [m] {
            return Err(mismatch("dense bias", self.shape(bias), &[m]));
        }
        let b = self.reshape(bias, &[1, m])?;
        let shape = self.shape(y).to_vec();
        let bb = self.broadcast_to(b, &shape)?;
        self.add(y, bb)
    }

    // ---- convolution ----

    fn conv_geom(
        &self,
        op: &'static str,
        x: &[usize],
        k: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeom, TensorError> {
        let (b, c, h, w) = dims4(op, x)?;
        let (o, kc, kh, kw) = dims4(op, k)?;
        if kc != c || kh != kw {
            return Err(mismatch(op, x, k));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument { op, what: "stride must be positive" });
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::NonIntegralOutput { op });
        }
        if (h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0 {
            return Err(TensorError::NonIntegralOutput { op });
        }
        Ok(ConvGeom {
            batch: b,
            in_ch: c,
            out_ch: o,
            in_h: h,
            in_w: w,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
            ksize: kh,
            stride,
            pad,
        })
    }

    /// Cross-correlation of `x` [b,c,h,w] with `k` [o,c,s,s], summed over
    /// input channels.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let g = self.conv_geom("conv2d", self.shape(x), self.shape(k), stride, pad)?;
        let data = kernels::conv_forward(self.data(x), self.data(k), &g);
        Ok(self.raw(&[g.batch, g.out_ch, g.out_h, g.out_w], data, Op::Conv { x, k, stride, pad }))
    }

    /// Transposed convolution: the adjoint of `conv2d(·, k, stride, pad)`
    /// applied to `g`, producing an input of spatial size `in_hw`.
    pub fn conv2d_transpose(
        &mut self,
        g: Var,
        k: Var,
        stride: usize,
        pad: usize,
        in_hw: (usize, usize),
    ) -> Result<Var, TensorError> {
        let (b, o, gh, gw) = dims4("conv2d_transpose", self.shape(g))?;
        let (ko, c, _, _) = dims4("conv2d_transpose", self.shape(k))?;
        if ko != o {
            return Err(mismatch("conv2d_transpose", self.shape(g), self.shape(k)));
        }
        let geom = self.conv_geom("conv2d_transpose", &[b, c, in_hw.0, in_hw.1], self.shape(k), stride, pad)?;
        if geom.out_h != gh || geom.out_w != gw {
            return Err(mismatch("conv2d_transpose", self.shape(g), &[b, o, geom.out_h, geom.out_w]));
        }
        let data = kernels::conv_input_grad(self.data(g), self.data(k), &geom);
        Ok(self.raw(&[b, c, in_hw.0, in_hw.1], data, Op::ConvT { g, k, stride, pad }))
    }

    /// Kernel-adjoint of a convolution: correlation of `x` with output
    /// gradients `g`, giving a [o,c,ksize,ksize] tensor.
    pub fn conv2d_kernel_grad(
        &mut self,
        x: Var,
        g: Var,
        stride: usize,
        pad: usize,
        ksize: usize,
    ) -> Result<Var, TensorError> {
        let (_, c, _, _) = dims4("conv2d_kernel_grad", self.shape(x))?;
        let (gb, o, gh, gw) = dims4("conv2d_kernel_grad", self.shape(g))?;
        let geom = self.conv_geom("conv2d_kernel_grad", self.shape(x), &[o, c, ksize, ksize], stride, pad)?;
        if geom.batch != gb || geom.out_h != gh || geom.out_w != gw {
            return Err(mismatch("conv2d_kernel_grad", self.shape(x), self.shape(g)));
        }
        let data = kernels::conv_kernel_grad(self.data(x), self.data(g), &geom);
        Ok(self.raw(&[o, c, ksize, ksize], data, Op::ConvK { x, g, stride, pad }))
    }

    /// `stride-1` zeros after every pixel along both axes.
    pub fn zero_insert(&mut self, x: Var, stride: usize) -> Result<Var, TensorError> {
        let (b, c, h, w) = dims4("zero_insert", self.shape(x))?;
        if stride == 0 {
            return Err(TensorError::InvalidArgument { op: "zero_insert", what: "stride must be positive" });
        }
        if stride == 1 {
            return Ok(x);
        }
        let data = kernels::zero_insert(self.data(x), b * c, h, w, stride);
        Ok(self.raw(&[b, c, h * stride, w * stride], data, Op::ZeroInsert(x, stride)))
    }

    /// Keep every `stride`-th pixel along both axes.
    pub fn subsample(&mut self, x: Var, stride: usize) -> Result<Var, TensorError> {
        let (b, c, h, w) = dims4("subsample", self.shape(x))?;
        if stride == 0 {
            return Err(TensorError::InvalidArgument { op: "subsample", what: "stride must be positive" });
        }
        if h % stride != 0 || w % stride != 0 {
            return Err(TensorError::OddDimension { op: "subsample", shape: self.shape(x).to_vec() });
        }
        if stride == 1 {
            return Ok(x);
        }
        let data = kernels::subsample(self.data(x), b * c, h, w, stride);
        Ok(self.raw(&[b, c, h / stride, w / stride], data, Op::Subsample(x, stride)))
    }

    /// Fractionally strided convolution with kernel `k` laid out as
    /// [in, out, s, s]: zero insertion followed by a same-padded
    /// convolution, so spatial extents grow by exactly `stride`.
    pub fn deconv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var, TensorError> {
        if !(1..=2).contains(&stride) {
            return Err(TensorError::InvalidArgument { op: "deconv2d", what: "stride must be 1 or 2" });
        }
        let ks = self.shape(k).to_vec();
        let xs = self.shape(x).to_vec();
        if ks.len() != 4 || xs.len() != 4 || ks[0] != xs[1] || ks[2] != ks[3] {
            return Err(mismatch("deconv2d", &xs, &ks));
        }
        if ks[2] % 2 == 0 {
            return Err(TensorError::InvalidArgument { op: "deconv2d", what: "kernel size must be odd" });
        }
        let up = self.zero_insert(x, stride)?;
        let kt = self.swap01(k)?;
        self.conv2d(up, kt, 1, ks[2] / 2)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var, TensorError> {
        let (b, c, h, w) = dims4("avg_pool2", self.shape(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::OddDimension { op: "avg_pool2", shape: self.shape(x).to_vec() });
        }
        let data = kernels::avg_pool2(self.data(x), b * c, h, w);
        Ok(self.raw(&[b, c, h / 2, w / 2], data, Op::AvgPool2(x)))
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var, TensorError> {
        let (b, c, h, w) = dims4("upsample_nearest2", self.shape(x))?;
        let data = kernels::upsample_nearest2(self.data(x), b * c, h, w);
        Ok(self.raw(&[b, c, 2 * h, 2 * w], data, Op::UpNearest2(x)))
    }

    /// Embed `x` [b,c,h,w] at channel offset `start` of a zero [b,total,h,w].
    pub fn pad_channels(&mut self, x: Var, start: usize, total: usize) -> Result<Var, TensorError> {
        let (b, c, h, w) = dims4("pad_channels", self.shape(x))?;
        if start + c > total {
            return Err(TensorError::InvalidArgument { op: "pad_channels", what: "channels overflow the target" });
        }
        let data = kernels::pad_channels(self.data(x), b, c, h * w, start, total);
        Ok(self.raw(&[b, total, h, w], data, Op::PadChannels { x, start }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (b, c, h, w) = dims4("slice_channels", self.shape(x))?;
        if start + len > c {
            return Err(TensorError::InvalidArgument { op: "slice_channels", what: "slice leaves the tensor" });
        }
        let data = kernels::slice_channels(self.data(x), b, c, h * w, start, len);
        Ok(self.raw(&[b, len, h, w], data, Op::SliceChannels { x, start }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ba, ca, ha, wa) = dims4("concat_channels", self.shape(a))?;
        let (bb, cb, hb, wb) = dims4("concat_channels", self.shape(b))?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(mismatch("concat_channels", self.shape(a), self.shape(b)));
        }
        let pa = self.pad_channels(a, 0, ca + cb)?;
        let pb = self.pad_channels(b, ca, ca + cb)?;
        self.add(pa, pb)
    }

    // ---- differentiation ----

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// The adjoint computations are appended to the tape as ordinary nodes,
    /// so the returned gradients can themselves be differentiated. Inputs
    /// that do not influence `loss` get an all-zero gradient.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>, TensorError> {
        if numel(self.shape(loss)) != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let end = loss.0 + 1;
        let mut reach = vec![false; end];
        let mut start = end;
        for &w in wrt {
            if w.0 < end {
                reach[w.0] = true;
                start = start.min(w.0);
            }
        }
        for i in start..end {
            if !reach[i] {
                reach[i] = self.nodes[i].op.inputs().iter().flatten().any(|v| reach[v.0]);
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; end];
        if reach[loss.0] {
            let shape = self.shape(loss).to_vec();
            grads[loss.0] = Some(self.constant(Tensor::full(&shape, 1.0)));
        }
        for i in (start..end).rev() {
            if !reach[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op;
            let [a, b] = op.inputs();
            let need_a = a.is_some_and(|v| reach[v.0]);
            let need_b = b.is_some_and(|v| reach[v.0]);
            if !need_a && !need_b {
                continue;
            }
            let (ga, gb) = self.adjoint(Var(i), op, g, need_a, need_b)?;
            for (input, gi) in [(a, ga), (b, gb)] {
                if let (Some(v), Some(gi)) = (input, gi) {
                    grads[v.0] = Some(match grads[v.0] {
                        Some(prev) => self.add(prev, gi)?,
                        None => gi,
                    });
                }
            }
        }
        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(w).to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    /// Adjoints of one node's inputs given its output adjoint `g`.
    fn adjoint(
        &mut self,
        out: Var,
        op: Op,
        g: Var,
        need_a: bool,
        need_b: bool,
    ) -> Result<(Option<Var>, Option<Var>), TensorError> {
        use Op::*;
        let r = match op {
            Leaf => (None, None),
            Add(_, _) => (Some(g), Some(g)),
            Sub(_, _) => (Some(g), need_b.then(|| self.scale(g, -1.0))),
            Mul(a, b) => {
                let ga = if need_a { Some(self.mul(g, b)?) } else { None };
                let gb = if need_b { Some(self.mul(g, a)?) } else { None };
                (ga, gb)
            }
            Scale(_, c) => (Some(self.scale(g, c)), None),
            AddConst(_) => (Some(g), None),
            Pow(a, p) => {
                if p == 1.0 {
                    (Some(g), None)
                } else {
                    let d = self.pow(a, p - 1.0);
                    let d = self.scale(d, p);
                    (Some(self.mul(g, d)?), None)
                }
            }
            Exp(_) => (Some(self.mul(g, out)?), None),
            Ln(a) => {
                let inv = self.pow(a, -1.0);
                (Some(self.mul(g, inv)?), None)
            }
            LeakyRelu(a, slope) => {
                let mask = self.mask_of(a, |x| if x >= 0.0 { 1.0 } else { slope });
                (Some(self.mul(g, mask)?), None)
            }
            ClampMin(a, lo) => {
                let mask = self.mask_of(a, |x| if x < lo { 0.0 } else { 1.0 });
                (Some(self.mul(g, mask)?), None)
            }
            Reshape(a) => {
                let s = self.shape(a).to_vec();
                (Some(self.reshape(g, &s)?), None)
            }
            BroadcastTo(a) => {
                let s = self.shape(a).to_vec();
                (Some(self.sum_to(g, &s)?), None)
            }
            SumTo(a) => {
                let s = self.shape(a).to_vec();
                (Some(self.broadcast_to(g, &s)?), None)
            }
            MatMul(a, b) => {
                let ga = if need_a {
                    let bt = self.swap01(b)?;
                    Some(self.matmul(g, bt)?)
                } else {
                    None
                };
                let gb = if need_b {
                    let at = self.swap01(a)?;
                    Some(self.matmul(at, g)?)
                } else {
                    None
                };
                (ga, gb)
            }
            Swap01(_) => (Some(self.swap01(g)?), None),
            Conv { x, k, stride, pad } => {
                let xs = self.shape(x).to_vec();
                let ksize = self.shape(k)[2];
                let gx = if need_a { Some(self.conv2d_transpose(g, k, stride, pad, (xs[2], xs[3]))?) } else { None };
                let gk = if need_b { Some(self.conv2d_kernel_grad(x, g, stride, pad, ksize)?) } else { None };
                (gx, gk)
            }
            ConvT { g: gy, k, stride, pad } => {
                // out = convT(gy, k); adjoint h has the shape of out
                let ksize = self.shape(k)[2];
                let ggy = if need_a { Some(self.conv2d(g, k, stride, pad)?) } else { None };
                let gk = if need_b { Some(self.conv2d_kernel_grad(g, gy, stride, pad, ksize)?) } else { None };
                (ggy, gk)
            }
            ConvK { x, g: gy, stride, pad } => {
                // out = convK(x, gy); adjoint h is kernel shaped
                let xs = self.shape(x).to_vec();
                let gx = if need_a { Some(self.conv2d_transpose(gy, g, stride, pad, (xs[2], xs[3]))?) } else { None };
                let ggy = if need_b { Some(self.conv2d(x, g, stride, pad)?) } else { None };
                (gx, ggy)
            }
            ZeroInsert(_, s) => (Some(self.subsample(g, s)?), None),
            Subsample(_, s) => (Some(self.zero_insert(g, s)?), None),
            AvgPool2(_) => {
                let u = self.upsample_nearest2(g)?;
                (Some(self.scale(u, 0.25)), None)
            }
            UpNearest2(_) => {
                let p = self.avg_pool2(g)?;
                (Some(self.scale(p, 4.0)), None)
            }
            PadChannels { x, start } => {
                let c = self.shape(x)[1];
                (Some(self.slice_channels(g, start, c)?), None)
            }
            SliceChannels { x, start } => {
                let total = self.shape(x)[1];
                (Some(self.pad_channels(g, start, total)?), None)
            }
        };
        Ok(r)
    }

    fn mask_of(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|&v| T::from_f64(f(v.to_f64()))).collect();
        self.constant(Tensor { shape, data })
    }
}
