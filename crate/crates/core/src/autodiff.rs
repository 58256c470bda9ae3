//! A small reverse-mode automatic differentiation tape over [`DenseTensor`].
//!
//! Only the operations the model needs are provided. Every node stores its
//! forward value; [`Tape::backward`] walks the nodes in reverse creation order.

use std::rc::Rc;

use crate::error::{shape_err, Error, Result};
use crate::tensor::dense::{gemm, DenseTensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dense per-graph operator applied to a contiguous row block.
#[derive(Debug, Clone)]
pub struct RowBlock {
    pub offset: usize,
    pub matrix: DenseTensor,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    SumAxis(Var, usize),
    SumAll(Var),
    Stack(Vec<Var>, usize),
    ConcatLast(Vec<Var>),
    Propagate(Var, Rc<Vec<RowBlock>>),
    SegmentSum(Var, Rc<Vec<(usize, usize)>>),
    Conv2d { x: Var, w: Var, b: Var, stride: usize },
    MeanSpatial(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: DenseTensor, inv_std: Vec<f64> },
    CrossEntropy { logits: Var, labels: Rc<Vec<usize>>, probs: DenseTensor },
    NtXent { a: Var, b: Var, zeta: f64, include_positive: bool },
}

#[derive(Debug, Clone)]
struct Node {
    value: DenseTensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseTensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseTensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<DenseTensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn trailing_broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
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

    fn push(&mut self, value: DenseTensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: DenseTensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: DenseTensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &DenseTensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let g = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let g = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let g = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), g))
    }

    /// `a + b` where `b`'s shape equals the trailing modes of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !trailing_broadcast_ok(av.shape(), bv.shape()) {
            return Err(shape_err!("cannot broadcast {:?} onto {:?}", bv.shape(), av.shape()));
        }
        let mut out = av.clone();
        let n = bv.len();
        for chunk in out.data_mut().chunks_mut(n) {
            for (x, y) in chunk.iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        let g = self.needs(&[a, b]);
        Ok(self.push(out, Op::AddBroadcast(a, b), g))
    }

    /// `a * b` elementwise where `b`'s shape equals the trailing modes of `a`.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !trailing_broadcast_ok(av.shape(), bv.shape()) {
            return Err(shape_err!("cannot broadcast {:?} onto {:?}", bv.shape(), av.shape()));
        }
        let mut out = av.clone();
        let n = bv.len();
        for chunk in out.data_mut().chunks_mut(n) {
            for (x, y) in chunk.iter_mut().zip(bv.data()) {
                *x *= y;
            }
        }
        let g = self.needs(&[a, b]);
        Ok(self.push(out, Op::MulBroadcast(a, b), g))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let g = self.needs(&[a]);
        self.push(out, Op::Scale(a, s), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let g = self.needs(&[a]);
        self.push(out, Op::Relu(a), g)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        let g = self.needs(&[a]);
        Ok(self.push(out, Op::Reshape(a), g))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        let g = self.needs(&[a]);
        Ok(self.push(out, Op::Permute(a, axes.to_vec()), g))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.value(a).ndim() != 2 {
            return Err(shape_err!("transpose needs a matrix, got {:?}", self.shape(a)));
        }
        self.permute(a, &[1, 0])
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        if axis >= av.ndim() {
            return Err(shape_err!("axis {} out of range for {:?}", axis, av.shape()));
        }
        let outer: usize = av.shape()[..axis].iter().product();
        let d = av.shape()[axis];
        let inner: usize = av.shape()[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..d {
                let src = &av.data()[(o * d + i) * inner..(o * d + i + 1) * inner];
                for (x, y) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *x += y;
                }
            }
        }
        let mut shape = av.shape().to_vec();
        shape.remove(axis);
        let out = DenseTensor::new(shape, data)?;
        let g = self.needs(&[a]);
        Ok(self.push(out, Op::SumAxis(a, axis), g))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = DenseTensor::scalar(self.value(a).sum());
        let g = self.needs(&[a]);
        self.push(out, Op::SumAll(a), g)
    }

    /// Stack equally shaped values along a new mode.
    pub fn stack(&mut self, vs: &[Var], position: usize) -> Result<Var> {
        let values: Vec<DenseTensor> = vs.iter().map(|&v| self.value(v).clone()).collect();
        let out = crate::tensor::concatenate(&values, position)?;
        let g = self.needs(vs);
        Ok(self.push(out, Op::Stack(vs.to_vec(), position), g))
    }

    /// Concatenate matrices with equal row counts column-wise.
    pub fn concat_last(&mut self, vs: &[Var]) -> Result<Var> {
        let rows = self.value(vs[0]).rows();
        if vs.iter().any(|&v| self.value(v).ndim() != 2 || self.value(v).rows() != rows) {
            return Err(shape_err!("concat_last needs matrices with {} rows", rows));
        }
        let total: usize = vs.iter().map(|&v| self.value(v).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &v in vs {
                data.extend_from_slice(self.value(v).row(r));
            }
        }
        let out = DenseTensor::new(vec![rows, total], data)?;
        let g = self.needs(vs);
        Ok(self.push(out, Op::ConcatLast(vs.to_vec()), g))
    }

    /// Block-diagonal propagation: rows `offset..offset+n` of `x` are replaced
    /// by `matrix @ x[offset..offset+n]`.
    pub fn propagate(&mut self, x: Var, blocks: Rc<Vec<RowBlock>>) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(shape_err!("propagate needs a matrix, got {:?}", xv.shape()));
        }
        let f = xv.cols();
        let mut out = DenseTensor::zeros(xv.shape());
        for blk in blocks.iter() {
            let n = blk.matrix.rows();
            if blk.offset + n > xv.rows() || blk.matrix.cols() != n {
                return Err(shape_err!("propagation block exceeds {} rows", xv.rows()));
            }
            let off = blk.offset * f;
            gemm(
                n,
                n,
                f,
                1.0,
                blk.matrix.data(),
                n,
                1,
                &xv.data()[off..],
                f,
                1,
                0.0,
                &mut out.data_mut()[off..],
                f,
                1,
            );
        }
        let g = self.needs(&[x]);
        Ok(self.push(out, Op::Propagate(x, blocks), g))
    }

    /// Sum rows of `x` within each `(start, len)` segment.
    pub fn segment_sum(&mut self, x: Var, segments: Rc<Vec<(usize, usize)>>) -> Result<Var> {
        let xv = self.value(x);
        let inner: usize = xv.shape()[1..].iter().product();
        let mut shape = xv.shape().to_vec();
        shape[0] = segments.len();
        let mut out = DenseTensor::zeros(&shape);
        for (s, &(start, len)) in segments.iter().enumerate() {
            if start + len > xv.rows() {
                return Err(shape_err!("segment {}..{} exceeds {} rows", start, start + len, xv.rows()));
            }
            let dst = &mut out.data_mut()[s * inner..(s + 1) * inner];
            for r in start..start + len {
                for (d, v) in dst.iter_mut().zip(&xv.data()[r * inner..(r + 1) * inner]) {
                    *d += v;
                }
            }
        }
        let g = self.needs(&[x]);
        Ok(self.push(out, Op::SegmentSum(x, segments), g))
    }

    /// Valid (unpadded) 2-D convolution. `x`: `B x C x H x W`, `w`: `O x C x k x k`, `b`: `O`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let geo = ConvGeometry::new(xv.shape(), wv.shape(), stride)?;
        if bv.shape() != [geo.o] {
            return Err(shape_err!("conv bias {:?} for {} output channels", bv.shape(), geo.o));
        }
        let mut out = DenseTensor::zeros(&[geo.b, geo.o, geo.ho, geo.wo]);
        let ckk = geo.c * geo.k * geo.k;
        let hw = geo.ho * geo.wo;
        let mut cols = vec![0.0; ckk * hw];
        for s in 0..geo.b {
            geo.im2col(&xv.data()[s * geo.in_len()..(s + 1) * geo.in_len()], &mut cols);
            let dst = &mut out.data_mut()[s * geo.o * hw..(s + 1) * geo.o * hw];
            for (o, row) in dst.chunks_mut(hw).enumerate() {
                row.fill(bv.data()[o]);
            }
            gemm(geo.o, ckk, hw, 1.0, wv.data(), ckk, 1, &cols, hw, 1, 1.0, dst, hw, 1);
        }
        let g = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride }, g))
    }

    /// Mean over the two trailing spatial modes: `B x C x H x W -> B x C`.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 4 {
            return Err(shape_err!("spatial mean needs a 4-mode tensor, got {:?}", xv.shape()));
        }
        let (bsz, c) = (xv.shape()[0], xv.shape()[1]);
        let hw = xv.shape()[2] * xv.shape()[3];
        let data = xv.data().chunks(hw).map(|ch| ch.iter().sum::<f64>() / hw as f64).collect();
        let out = DenseTensor::new(vec![bsz, c], data)?;
        let g = self.needs(&[x]);
        Ok(self.push(out, Op::MeanSpatial(x), g))
    }

    /// Batch normalization with batch statistics over rows of a matrix.
    /// Returns the output plus the batch mean and (biased) variance.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(shape_err!("batch norm needs a matrix, got {:?}", xv.shape()));
        }
        let (n, f) = (xv.rows(), xv.cols());
        if self.value(gamma).shape() != [f] || self.value(beta).shape() != [f] {
            return Err(shape_err!("batch norm affine parameters must have length {}", f));
        }
        let mut mean = vec![0.0; f];
        for r in 0..n {
            for (m, x) in mean.iter_mut().zip(xv.row(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for r in 0..n {
            for ((v, x), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for r in 0..n {
            for (j, x) in xhat.row_mut(r).iter_mut().enumerate() {
                *x = (*x - mean[j]) * inv_std[j];
            }
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut out = xhat.clone();
        for r in 0..n {
            for (j, y) in out.row_mut(r).iter_mut().enumerate() {
                *y = *y * gv.data()[j] + bv.data()[j];
            }
        }
        let g = self.needs(&[x, gamma, beta]);
        let v = self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std }, g);
        Ok((v, mean, var))
    }

    /// Mean softmax cross-entropy of `B x C` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: Rc<Vec<usize>>) -> Result<Var> {
        let lv = self.value(logits);
        if lv.ndim() != 2 || lv.rows() != labels.len() {
            return Err(shape_err!("cross entropy: logits {:?} for {} labels", lv.shape(), labels.len()));
        }
        let (bsz, c) = (lv.rows(), lv.cols());
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(Error::Argument(format!("label {} out of range for {} classes", label, c)));
            }
            let row = probs.row_mut(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            loss += mx + z.ln() - row[label];
            for x in row.iter_mut() {
                *x = (*x - mx).exp() / z;
            }
        }
        let out = DenseTensor::scalar(loss / bsz as f64);
        let g = self.needs(&[logits]);
        Ok(self.push(out, Op::CrossEntropy { logits, labels, probs }, g))
    }

    /// Contrastive loss between paired rows of `a` and `b` (both `N x E`).
    ///
    /// Anchor `i` is row `i` of `a`; its positive is row `i` of `b`; every other
    /// row of either matrix is a negative. Unless `include_positive` is set the
    /// positive is left out of the denominator. The mean over anchors is returned.
    pub fn nt_xent(&mut self, a: Var, b: Var, zeta: f64, include_positive: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || av.shape() != bv.shape() {
            return Err(shape_err!("paired views must be equal matrices: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        if av.rows() < 2 {
            return Err(Error::Argument("contrastive loss needs at least two graphs (no negatives)".into()));
        }
        if zeta <= 0.0 {
            return Err(Error::Argument(format!("temperature must be positive, got {zeta}")));
        }
        let fwd = NtXentForward::compute(av, bv, zeta, include_positive);
        let g = self.needs(&[a, b]);
        Ok(self.push(DenseTensor::scalar(fwd.loss), Op::NtXent { a, b, zeta, include_positive }, g))
    }

    /// Sign of every ReLU input recorded so far, in tape order. Two evaluations
    /// with equal patterns lie on the same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                out.extend(self.value(a).data().iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err!("backward needs a scalar, got {:?}", self.shape(loss)));
        }
        self.backward_from(loss, DenseTensor::filled(self.shape(loss), 1.0))
    }

    /// Reverse pass seeded with an explicit upstream gradient for `output`.
    pub fn backward_from(&self, output: Var, seed: DenseTensor) -> Result<Gradients> {
        if seed.shape() != self.shape(output) {
            return Err(shape_err!("seed gradient {:?} for value {:?}", seed.shape(), self.shape(output)));
        }
        let mut grads: Vec<Option<DenseTensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate_node(node, &gout, &mut grads)?;
            }
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<DenseTensor>], v: Var, g: DenseTensor) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate_node(&self, node: &Node, gout: &DenseTensor, grads: &mut [Option<DenseTensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    let mut ga = DenseTensor::zeros(&[m, k]);
                    gemm(m, n, k, 1.0, gout.data(), n, 1, bv.data(), 1, n, 0.0, ga.data_mut(), k, 1);
                    self.accumulate(grads, *a, ga)?;
                }
                if self.wants(*b) {
                    let mut gb = DenseTensor::zeros(&[k, n]);
                    gemm(k, m, n, 1.0, av.data(), 1, k, gout.data(), n, 1, 0.0, gb.data_mut(), n, 1);
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone())?;
                self.accumulate(grads, *b, gout.clone())?;
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, gout.zip_map(self.value(*b), |g, y| g * y)?)?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, gout.zip_map(self.value(*a), |g, x| g * x)?)?;
                }
            }
            Op::AddBroadcast(a, b) => {
                self.accumulate(grads, *a, gout.clone())?;
                if self.wants(*b) {
                    let bshape = self.shape(*b).to_vec();
                    let n = bshape.iter().product::<usize>();
                    let mut gb = DenseTensor::zeros(&bshape);
                    for chunk in gout.data().chunks(n) {
                        for (x, y) in gb.data_mut().iter_mut().zip(chunk) {
                            *x += y;
                        }
                    }
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::MulBroadcast(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let n = bv.len();
                if self.wants(*a) {
                    let mut ga = gout.clone();
                    for chunk in ga.data_mut().chunks_mut(n) {
                        for (x, y) in chunk.iter_mut().zip(bv.data()) {
                            *x *= y;
                        }
                    }
                    self.accumulate(grads, *a, ga)?;
                }
                if self.wants(*b) {
                    let mut gb = DenseTensor::zeros(bv.shape());
                    for (gch, ach) in gout.data().chunks(n).zip(av.data().chunks(n)) {
                        for ((x, g), y) in gb.data_mut().iter_mut().zip(gch).zip(ach) {
                            *x += g * y;
                        }
                    }
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, gout.scale(*s))?,
            Op::Relu(a) => {
                let ga = gout.zip_map(&node.value, |g, y| if y > 0.0 { g } else { 0.0 })?;
                self.accumulate(grads, *a, ga)?;
            }
            Op::Reshape(a) => {
                let ga = gout.reshaped(self.shape(*a))?;
                self.accumulate(grads, *a, ga)?;
            }
            Op::Permute(a, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                self.accumulate(grads, *a, gout.permute(&inv)?)?;
            }
            Op::SumAxis(a, axis) => {
                let shape = self.shape(*a).to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let d = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let mut ga = DenseTensor::zeros(&shape);
                for o in 0..outer {
                    let src = &gout.data()[o * inner..(o + 1) * inner];
                    for i in 0..d {
                        ga.data_mut()[(o * d + i) * inner..(o * d + i + 1) * inner].copy_from_slice(src);
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::SumAll(a) => {
                self.accumulate(grads, *a, DenseTensor::filled(self.shape(*a), gout.item()))?;
            }
            Op::Stack(vs, position) => {
                for (i, v) in vs.iter().enumerate() {
                    if self.wants(*v) {
                        self.accumulate(grads, *v, gout.index_axis(*position, i))?;
                    }
                }
            }
            Op::ConcatLast(vs) => {
                let rows = gout.rows();
                let mut start = 0;
                for v in vs {
                    let c = self.value(*v).cols();
                    if self.wants(*v) {
                        let mut gv = DenseTensor::zeros(&[rows, c]);
                        for r in 0..rows {
                            gv.row_mut(r).copy_from_slice(&gout.row(r)[start..start + c]);
                        }
                        self.accumulate(grads, *v, gv)?;
                    }
                    start += c;
                }
            }
            Op::Propagate(x, blocks) => {
                let f = gout.cols();
                let mut gx = DenseTensor::zeros(gout.shape());
                for blk in blocks.iter() {
                    let n = blk.matrix.rows();
                    let off = blk.offset * f;
                    gemm(
                        n,
                        n,
                        f,
                        1.0,
                        blk.matrix.data(),
                        1,
                        n,
                        &gout.data()[off..],
                        f,
                        1,
                        0.0,
                        &mut gx.data_mut()[off..],
                        f,
                        1,
                    );
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::SegmentSum(x, segments) => {
                let shape = self.shape(*x).to_vec();
                let inner: usize = shape[1..].iter().product();
                let mut gx = DenseTensor::zeros(&shape);
                for (s, &(start, len)) in segments.iter().enumerate() {
                    let src = &gout.data()[s * inner..(s + 1) * inner];
                    for r in start..start + len {
                        gx.data_mut()[r * inner..(r + 1) * inner].copy_from_slice(src);
                    }
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::Conv2d { x, w, b, stride } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let geo = ConvGeometry::new(xv.shape(), wv.shape(), *stride)?;
                let ckk = geo.c * geo.k * geo.k;
                let hw = geo.ho * geo.wo;
                let mut cols = vec![0.0; ckk * hw];
                let mut dcols = vec![0.0; ckk * hw];
                let mut gw = DenseTensor::zeros(wv.shape());
                let mut gb = DenseTensor::zeros(&[geo.o]);
                let mut gx = if self.wants(*x) { Some(DenseTensor::zeros(xv.shape())) } else { None };
                for s in 0..geo.b {
                    let gs = &gout.data()[s * geo.o * hw..(s + 1) * geo.o * hw];
                    for (o, row) in gs.chunks(hw).enumerate() {
                        gb.data_mut()[o] += row.iter().sum::<f64>();
                    }
                    if self.wants(*w) {
                        geo.im2col(&xv.data()[s * geo.in_len()..(s + 1) * geo.in_len()], &mut cols);
                        gemm(geo.o, hw, ckk, 1.0, gs, hw, 1, &cols, 1, hw, 1.0, gw.data_mut(), ckk, 1);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(ckk, geo.o, hw, 1.0, wv.data(), 1, ckk, gs, hw, 1, 0.0, &mut dcols, hw, 1);
                        let len = geo.in_len();
                        geo.col2im(&dcols, &mut gx.data_mut()[s * len..(s + 1) * len]);
                    }
                }
                self.accumulate(grads, *w, gw)?;
                self.accumulate(grads, *b, gb)?;
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx)?;
                }
            }
            Op::MeanSpatial(x) => {
                let shape = self.shape(*x).to_vec();
                let hw = shape[2] * shape[3];
                let mut gx = DenseTensor::zeros(&shape);
                for (dst, g) in gx.data_mut().chunks_mut(hw).zip(gout.data()) {
                    dst.fill(g / hw as f64);
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let (n, f) = (xhat.rows(), xhat.cols());
                let gv = self.value(*gamma);
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for r in 0..n {
                    for j in 0..f {
                        let g = gout.row(r)[j];
                        dgamma[j] += g * xhat.row(r)[j];
                        dbeta[j] += g;
                    }
                }
                if self.wants(*x) {
                    let mut gx = DenseTensor::zeros(xhat.shape());
                    let nf = n as f64;
                    for j in 0..f {
                        let gj = gv.data()[j];
                        let sum_dxhat = dbeta[j] * gj;
                        let sum_dxhat_xhat = dgamma[j] * gj;
                        for r in 0..n {
                            let dxhat = gout.row(r)[j] * gj;
                            gx.row_mut(r)[j] =
                                inv_std[j] / nf * (nf * dxhat - sum_dxhat - xhat.row(r)[j] * sum_dxhat_xhat);
                        }
                    }
                    self.accumulate(grads, *x, gx)?;
                }
                self.accumulate(grads, *gamma, DenseTensor::vector(dgamma))?;
                self.accumulate(grads, *beta, DenseTensor::vector(dbeta))?;
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let scale = gout.item() / labels.len() as f64;
                let mut g = probs.clone();
                for (r, &label) in labels.iter().enumerate() {
                    g.row_mut(r)[label] -= 1.0;
                }
                self.accumulate(grads, *logits, g.scale(scale))?;
            }
            Op::NtXent { a, b, zeta, include_positive } => {
                let fwd = NtXentForward::compute(self.value(*a), self.value(*b), *zeta, *include_positive);
                let (ga, gb) = fwd.gradients(gout.item());
                self.accumulate(grads, *a, ga)?;
                self.accumulate(grads, *b, gb)?;
            }
        }
        Ok(())
    }
}

pub(crate) const NORM_FLOOR: f64 = 1e-12;

/// Forward quantities of the contrastive loss, shared by the forward value
/// and its analytic gradient.
struct NtXentForward {
    n: usize,
    zeta: f64,
    include_positive: bool,
    /// Row-normalized embeddings, rows `0..n` view one, `n..2n` view two.
    unit: DenseTensor,
    norms: Vec<f64>,
    /// Softmax weights over each anchor's denominator set, `n x 2n`.
    weights: DenseTensor,
    loss: f64,
}

impl NtXentForward {
    fn compute(a: &DenseTensor, b: &DenseTensor, zeta: f64, include_positive: bool) -> Self {
        let (n, e) = (a.rows(), a.cols());
        let mut unit = DenseTensor::zeros(&[2 * n, e]);
        let mut norms = Vec::with_capacity(2 * n);
        for r in 0..2 * n {
            let src = if r < n { a.row(r) } else { b.row(r - n) };
            let norm = src.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
            norms.push(norm);
            for (d, s) in unit.row_mut(r).iter_mut().zip(src) {
                *d = s / norm;
            }
        }
        let mut weights = DenseTensor::zeros(&[n, 2 * n]);
        let mut loss = 0.0;
        for i in 0..n {
            let j = i + n;
            let sims: Vec<f64> = (0..2 * n)
                .map(|m| dot(unit.row(i), unit.row(m)) / zeta)
                .collect();
            let in_denominator = |m: usize| m != i && (m != j || include_positive);
            let mx = (0..2 * n).filter(|&m| in_denominator(m)).map(|m| sims[m]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..2 * n).filter(|&m| in_denominator(m)).map(|m| (sims[m] - mx).exp()).sum();
            loss += -sims[j] + mx + z.ln();
            for m in (0..2 * n).filter(|&m| in_denominator(m)) {
                weights.row_mut(i)[m] = (sims[m] - mx).exp() / z;
            }
        }
        Self {
            n,
            zeta,
            include_positive,
            unit,
            norms,
            weights,
            loss: loss / n as f64,
        }
    }

    fn gradients(&self, upstream: f64) -> (DenseTensor, DenseTensor) {
        let n = self.n;
        let e = self.unit.cols();
        let scale = upstream / (n as f64 * self.zeta);
        let mut dunit = DenseTensor::zeros(&[2 * n, e]);
        for i in 0..n {
            let j = i + n;
            for m in 0..2 * n {
                if m == i {
                    continue;
                }
                let mut g = self.weights.row(i)[m];
                if m == j {
                    g -= 1.0;
                }
                if g == 0.0 {
                    continue;
                }
                let g = g * scale;
                for c in 0..e {
                    let (ui, um) = (self.unit.row(i)[c], self.unit.row(m)[c]);
                    dunit.row_mut(i)[c] += g * um;
                    dunit.row_mut(m)[c] += g * ui;
                }
            }
        }
        let _ = self.include_positive;
        // back through row normalization
        let mut dz = DenseTensor::zeros(&[2 * n, e]);
        for r in 0..2 * n {
            let u = self.unit.row(r);
            let du = dunit.row(r);
            let norm = self.norms[r];
            if norm <= NORM_FLOOR {
                for (d, g) in dz.row_mut(r).iter_mut().zip(du) {
                    *d = g / NORM_FLOOR;
                }
                continue;
            }
            let proj = dot(u, du);
            for c in 0..e {
                dz.row_mut(r)[c] = (du[c] - u[c] * proj) / norm;
            }
        }
        let ga = DenseTensor::new(vec![n, e], dz.data()[..n * e].to_vec()).expect("shape");
        let gb = DenseTensor::new(vec![n, e], dz.data()[n * e..].to_vec()).expect("shape");
        (ga, gb)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn new(x: &[usize], w: &[usize], stride: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 || w[1] != x[1] || w[2] != w[3] || stride == 0 {
            return Err(shape_err!("conv input {:?} with kernel {:?} (stride {})", x, w, stride));
        }
        let k = w[2];
        if x[2] < k || x[3] < k {
            return Err(Error::Argument(format!(
                "input resolution {}x{} is below kernel size {}",
                x[2], x[3], k
            )));
        }
        Ok(Self {
            b: x[0],
            c: x[1],
            h: x[2],
            w: x[3],
            o: w[0],
            k,
            stride,
            ho: (x[2] - k) / stride + 1,
            wo: (x[3] - k) / stride + 1,
        })
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let hw = self.ho * self.wo;
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let src = &x[(c * self.h + oy * self.stride + ki) * self.w..];
                        for ox in 0..self.wo {
                            dst[oy * self.wo + ox] = src[ox * self.stride + kj];
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let hw = self.ho * self.wo;
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let base = (c * self.h + oy * self.stride + ki) * self.w;
                        for ox in 0..self.wo {
                            x[base + ox * self.stride + kj] += src[oy * self.wo + ox];
                        }
                    }
                }
            }
        }
    }
}
