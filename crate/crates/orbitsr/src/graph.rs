//! Reverse-mode differentiation over the tensor op set.
//!
//! A `Graph` is built shape-first: recording an op validates shapes and
//! counts its multiply-accumulates, but computes nothing. `run` then
//! executes the schedule keeping every intermediate (for `backward`),
//! while `run_inference` frees each buffer after its last use and reports
//! the measured peak of live activation bytes. The same graph can be built
//! with value-less leaves and analyzed without ever executing, which is
//! how whole-image resource estimates are produced for inputs far too
//! large to run.

use crate::error::{Error, Result};
use crate::tensor::{self, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    /// Position of this node in the graph; indexes `backward`'s result.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: NodeId, pad: usize, stride: usize },
    ConvT2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    PixelShuffle { x: NodeId, s: usize },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Abs { x: NodeId },
    Concat { xs: Vec<NodeId> },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    MatMul { a: NodeId, b: NodeId },
    TransposeMat { x: NodeId },
    Reshape { x: NodeId },
    SoftmaxRows { x: NodeId },
    SumAll { x: NodeId },
    Affine { x: NodeId, mul: f64, add: f64 },
    Ln { x: NodeId },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::ConvT2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::PixelShuffle { x, .. }
            | Op::Relu { x }
            | Op::Sigmoid { x }
            | Op::Abs { x }
            | Op::TransposeMat { x }
            | Op::Reshape { x }
            | Op::SoftmaxRows { x }
            | Op::SumAll { x }
            | Op::Affine { x, .. }
            | Op::Ln { x } => vec![*x],
            Op::Concat { xs } => xs.clone(),
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::MatMul { a, b } => {
                vec![*a, *b]
            }
        }
    }
}

struct Node<E> {
    op: Op,
    shape: [usize; 4],
    value: Option<Tensor<E>>,
    is_param: bool,
    macs: u64,
}

/// Execution statistics from an inference run.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunStats {
    /// Peak of simultaneously live non-parameter tensor bytes.
    pub peak_activation_bytes: u64,
    /// Total multiply-accumulate count over all executed ops.
    pub total_macs: u64,
}

pub struct Graph<E: Scalar> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> [usize; 4] {
        self.nodes[id.0].shape
    }

    /// Value of a node; available for leaves immediately and for interior
    /// nodes after `run`.
    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("node value not computed; call run() first")
    }

    fn push(&mut self, op: Op, shape: [usize; 4], value: Option<Tensor<E>>, is_param: bool, macs: u64) -> NodeId {
        self.nodes.push(Node { op, shape, value, is_param, macs });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-parameter leaf (input data, constants).
    pub fn leaf(&mut self, t: Tensor<E>) -> NodeId {
        let shape = t.shape();
        self.push(Op::Leaf, shape, Some(t), false, 0)
    }

    /// Trainable-parameter leaf; excluded from activation accounting.
    pub fn param(&mut self, t: Tensor<E>) -> NodeId {
        let shape = t.shape();
        self.push(Op::Leaf, shape, Some(t), true, 0)
    }

    /// Shape-only leaf for symbolic analysis; executing a graph containing
    /// one is an error.
    pub fn leaf_shape(&mut self, shape: [usize; 4]) -> NodeId {
        self.push(Op::Leaf, shape, None, false, 0)
    }

    pub fn param_shape(&mut self, shape: [usize; 4]) -> NodeId {
        self.push(Op::Leaf, shape, None, true, 0)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, pad: usize, stride: usize) -> Result<NodeId> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let out = tensor::conv2d_out_shape(xs, ws, pad, stride)?;
        let macs = (out.iter().product::<usize>() * ws[1] * ws[2] * ws[3]) as u64;
        Ok(self.push(Op::Conv2d { x, w, b, pad, stride }, out, None, false, macs))
    }

    pub fn conv_transpose2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let out = tensor::conv_transpose2d_out_shape(xs, ws, stride, pad)?;
        // Actual multiplication count: every input element hits k*k*c_out taps.
        let macs = (xs.iter().product::<usize>() * ws[1] * ws[2] * ws[3]) as u64;
        Ok(self.push(Op::ConvT2d { x, w, b, stride, pad }, out, None, false, macs))
    }

    pub fn pixel_shuffle(&mut self, x: NodeId, s: usize) -> Result<NodeId> {
        let [n, c, h, w] = self.shape(x);
        if s == 0 || c % (s * s) != 0 {
            return Err(Error::InvalidArgument(format!(
                "pixel_shuffle: channels {c} not divisible by {s}^2"
            )));
        }
        Ok(self.push(Op::PixelShuffle { x, s }, [n, c / (s * s), h * s, w * s], None, false, 0))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::Relu { x }, s, None, false, 0)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::Sigmoid { x }, s, None, false, 0)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::Abs { x }, s, None, false, 0)
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero nodes".into()));
        }
        let [n, _, h, w] = self.shape(xs[0]);
        let mut c = 0;
        for &id in xs {
            let [xn, xc, xh, xw] = self.shape(id);
            if xn != n || xh != h || xw != w {
                return Err(Error::ShapeMismatch(format!(
                    "concat: {:?} vs {:?}",
                    self.shape(id),
                    self.shape(xs[0])
                )));
            }
            c += xc;
        }
        Ok(self.push(Op::Concat { xs: xs.to_vec() }, [n, c, h, w], None, false, 0))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, make: impl Fn(NodeId, NodeId) -> Op) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch(format!(
                "elementwise op: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let s = self.shape(a);
        Ok(self.push(make(a, b), s, None, false, 0))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |a, b| Op::Mul { a, b })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let [an, ac, r, k] = self.shape(a);
        let [bn, bc, k2, c] = self.shape(b);
        if an != bn || ac != 1 || bc != 1 || k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let macs = (an * r * c * k) as u64;
        Ok(self.push(Op::MatMul { a, b }, [an, 1, r, c], None, false, macs))
    }

    pub fn transpose_mat(&mut self, x: NodeId) -> Result<NodeId> {
        let [n, c1, r, c] = self.shape(x);
        if c1 != 1 {
            return Err(Error::ShapeMismatch(format!(
                "transpose_mat expects (n,1,r,c), got {:?}",
                self.shape(x)
            )));
        }
        Ok(self.push(Op::TransposeMat { x }, [n, 1, c, r], None, false, 0))
    }

    pub fn reshape(&mut self, x: NodeId, shape: [usize; 4]) -> Result<NodeId> {
        let cur: usize = self.shape(x).iter().product();
        let new: usize = shape.iter().product();
        if cur != new {
            return Err(Error::ShapeMismatch(format!(
                "reshape {:?} -> {:?}",
                self.shape(x),
                shape
            )));
        }
        Ok(self.push(Op::Reshape { x }, shape, None, false, 0))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::SoftmaxRows { x }, s, None, false, 0)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SumAll { x }, [1, 1, 1, 1], None, false, 0)
    }

    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let s = self.shape(x);
        self.push(Op::Affine { x, mul, add }, s, None, false, 0)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::Ln { x }, s, None, false, 0)
    }

    pub fn total_macs(&self) -> u64 {
        self.nodes.iter().map(|n| n.macs).sum()
    }

    /// Per-op-kind MAC totals, for ledger breakdowns.
    pub fn macs_by_kind(&self) -> Vec<(&'static str, u64)> {
        let mut conv = 0u64;
        let mut deconv = 0u64;
        let mut attn = 0u64;
        for n in &self.nodes {
            match n.op {
                Op::Conv2d { .. } => conv += n.macs,
                Op::ConvT2d { .. } => deconv += n.macs,
                Op::MatMul { .. } => attn += n.macs,
                _ => {}
            }
        }
        vec![("conv", conv), ("deconv", deconv), ("attention_matmul", attn)]
    }

    fn compute(&self, op: &Op) -> Result<Tensor<E>> {
        let v = |id: NodeId| -> Result<&Tensor<E>> {
            self.nodes[id.0]
                .value
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("executing graph with value-less leaf".into()))
        };
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not computed"),
            Op::Conv2d { x, w, b, pad, stride } => {
                tensor::conv2d(v(*x)?, v(*w)?, v(*b)?.data(), *pad, *stride)?
            }
            Op::ConvT2d { x, w, b, stride, pad } => {
                tensor::conv_transpose2d(v(*x)?, v(*w)?, v(*b)?.data(), *stride, *pad)?
            }
            Op::PixelShuffle { x, s } => tensor::pixel_shuffle(v(*x)?, *s)?,
            Op::Relu { x } => tensor::relu(v(*x)?),
            Op::Sigmoid { x } => tensor::sigmoid(v(*x)?),
            Op::Abs { x } => v(*x)?.map(|z| z.abs()),
            Op::Concat { xs } => {
                let parts: Vec<&Tensor<E>> = xs
                    .iter()
                    .map(|&id| v(id))
                    .collect::<Result<Vec<_>>>()?;
                tensor::concat_channels(&parts)?
            }
            Op::Add { a, b } => tensor::ew_add(v(*a)?, v(*b)?)?,
            Op::Sub { a, b } => tensor::ew_sub(v(*a)?, v(*b)?)?,
            Op::Mul { a, b } => tensor::ew_mul(v(*a)?, v(*b)?)?,
            Op::MatMul { a, b } => tensor::matmul(v(*a)?, v(*b)?)?,
            Op::TransposeMat { x } => tensor::transpose_mat(v(*x)?)?,
            // Reshape carries its target shape on the node itself and is
            // handled by the executors directly.
            Op::Reshape { .. } => unreachable!("reshape handled by executor"),
            Op::SoftmaxRows { x } => tensor::softmax_rows(v(*x)?),
            Op::SumAll { x } => {
                let mut s = E::zero();
                for &z in v(*x)?.data() {
                    s += z;
                }
                Tensor::from_vec([1, 1, 1, 1], vec![s])?
            }
            Op::Affine { x, mul, add } => {
                let (m, a0) = (E::from_f64(*mul), E::from_f64(*add));
                v(*x)?.map(|z| z * m + a0)
            }
            Op::Ln { x } => v(*x)?.map(|z| z.ln()),
        })
    }

    /// Executes every node in order, retaining all values so `backward`
    /// can run afterwards.
    pub fn run(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            // Reshape needs the recorded target shape of *this* node, not a
            // search; handle it directly to avoid ambiguity between
            // reshapes of the same input.
            let value = match &self.nodes[i].op {
                Op::Reshape { x } => {
                    let shape = self.nodes[i].shape;
                    let x = *x;
                    self.nodes[x.0]
                        .value
                        .as_ref()
                        .ok_or_else(|| {
                            Error::InvalidArgument("executing graph with value-less leaf".into())
                        })?
                        .reshaped(shape)?
                }
                op => {
                    let op = op.clone();
                    self.compute(&op)?
                }
            };
            self.nodes[i].value = Some(value);
        }
        Ok(())
    }

    fn reachable_and_last_use(&self, out: NodeId) -> (Vec<bool>, Vec<usize>) {
        let n = self.nodes.len();
        let mut reach = vec![false; n];
        reach[out.0] = true;
        for i in (0..n).rev() {
            if !reach[i] {
                continue;
            }
            for inp in self.nodes[i].op.inputs() {
                reach[inp.0] = true;
            }
        }
        let mut last_use = (0..n).collect::<Vec<_>>();
        for i in 0..n {
            if !reach[i] {
                continue;
            }
            for inp in self.nodes[i].op.inputs() {
                last_use[inp.0] = i;
            }
        }
        last_use[out.0] = n; // the requested output stays live to the end
        (reach, last_use)
    }

    /// Executes only what `out` needs, freeing each intermediate after its
    /// last use, and measures the peak of live non-parameter bytes from
    /// the actual buffers.
    pub fn run_inference(&mut self, out: NodeId) -> Result<(Tensor<E>, RunStats)> {
        let (reach, last_use) = self.reachable_and_last_use(out);
        let mut live_bytes: u64 = 0;
        let mut peak: u64 = 0;
        let mut total_macs: u64 = 0;
        // Leaves that are reachable and not parameters count as live from
        // the start (the input image is an activation).
        for (i, node) in self.nodes.iter().enumerate() {
            if reach[i] && !node.is_param && matches!(node.op, Op::Leaf) {
                if let Some(v) = &node.value {
                    live_bytes += (v.numel() * E::BYTES) as u64;
                }
            }
        }
        peak = peak.max(live_bytes);
        for i in 0..self.nodes.len() {
            if !reach[i] || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let value = match &self.nodes[i].op {
                Op::Reshape { x } => {
                    let shape = self.nodes[i].shape;
                    let x = *x;
                    self.nodes[x.0]
                        .value
                        .as_ref()
                        .ok_or_else(|| {
                            Error::InvalidArgument("executing graph with value-less leaf".into())
                        })?
                        .reshaped(shape)?
                }
                op => {
                    let op = op.clone();
                    self.compute(&op)?
                }
            };
            total_macs += self.nodes[i].macs;
            live_bytes += (value.numel() * E::BYTES) as u64;
            self.nodes[i].value = Some(value);
            peak = peak.max(live_bytes);
            // Free everything whose last consumer was this step.
            for inp in self.nodes[i].op.inputs() {
                let j = inp.0;
                if last_use[j] == i && !self.nodes[j].is_param {
                    if let Some(v) = self.nodes[j].value.take() {
                        live_bytes -= (v.numel() * E::BYTES) as u64;
                    }
                }
            }
        }
        let result = self.nodes[out.0]
            .value
            .take()
            .expect("output value missing after inference run");
        Ok((
            result,
            RunStats {
                peak_activation_bytes: peak,
                total_macs,
            },
        ))
    }

    /// Symbolic peak-liveness walk over the same schedule `run_inference`
    /// uses; bytes are `elements x 4` (the 32-bit inference width)
    /// regardless of the graph's own precision.
    pub fn peak_activation_bytes(&self, out: NodeId) -> u64 {
        const BYTES: u64 = 4;
        let (reach, last_use) = self.reachable_and_last_use(out);
        let bytes = |i: usize| -> u64 { self.nodes[i].shape.iter().product::<usize>() as u64 * BYTES };
        let mut live: u64 = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            if reach[i] && !node.is_param && matches!(node.op, Op::Leaf) {
                live += bytes(i);
            }
        }
        let mut peak = live;
        for i in 0..self.nodes.len() {
            if !reach[i] || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            live += bytes(i);
            peak = peak.max(live);
            for inp in self.nodes[i].op.inputs() {
                let j = inp.0;
                if last_use[j] == i && !self.nodes[j].is_param {
                    live -= bytes(j);
                }
            }
        }
        peak
    }

    /// Total MACs over nodes reachable from `out`.
    pub fn macs_for(&self, out: NodeId) -> u64 {
        let (reach, _) = self.reachable_and_last_use(out);
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| reach[*i])
            .map(|(_, n)| n.macs)
            .sum()
    }

    /// Backpropagates from a scalar loss node. Returns one gradient slot
    /// per node; unreachable nodes keep `None`. Accumulation order is
    /// fixed by node index, so repeated runs are bitwise identical.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Tensor<E>>>> {
        if self.nodes[loss.0].shape.iter().product::<usize>() != 1 {
            return Err(Error::InvalidArgument(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<E>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.nodes[loss.0].shape, E::one()));
        let acc = |slot: &mut Option<Tensor<E>>, g: Tensor<E>| {
            match slot {
                Some(existing) => {
                    for (d, s) in existing.data_mut().iter_mut().zip(g.data()) {
                        *d += *s;
                    }
                }
                None => *slot = Some(g),
            }
        };
        for i in (0..=loss.0).rev() {
            let gy = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let val = |id: NodeId| self.nodes[id.0].value.as_ref().expect("backward before run");
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(gy);
                    continue;
                }
                Op::Conv2d { x, w, b, pad, stride } => {
                    let (dx, dk, db) = tensor::conv2d_backward(val(*x), val(*w), &gy, *pad, *stride);
                    acc(&mut grads[x.0], dx);
                    acc(&mut grads[w.0], dk);
                    let bshape = self.nodes[b.0].shape;
                    acc(&mut grads[b.0], Tensor::from_vec(bshape, db)?);
                }
                Op::ConvT2d { x, w, b, stride, pad } => {
                    let (dx, dk, db) =
                        tensor::conv_transpose2d_backward(val(*x), val(*w), &gy, *stride, *pad);
                    acc(&mut grads[x.0], dx);
                    acc(&mut grads[w.0], dk);
                    let bshape = self.nodes[b.0].shape;
                    acc(&mut grads[b.0], Tensor::from_vec(bshape, db)?);
                }
                Op::PixelShuffle { x, s } => {
                    acc(&mut grads[x.0], tensor::pixel_unshuffle(&gy, *s)?);
                }
                Op::Relu { x } => {
                    let xv = val(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&xz, &g)| if xz > E::zero() { g } else { E::zero() })
                        .collect();
                    acc(&mut grads[x.0], Tensor::from_vec(xv.shape(), data)?);
                }
                Op::Sigmoid { x } => {
                    // Use the cached forward output, not a recomputation.
                    let yv = self.nodes[i].value.as_ref().expect("backward before run");
                    let data = yv
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&y, &g)| g * y * (E::one() - y))
                        .collect();
                    acc(&mut grads[x.0], Tensor::from_vec(yv.shape(), data)?);
                }
                Op::Abs { x } => {
                    let xv = val(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&xz, &g)| {
                            if xz > E::zero() {
                                g
                            } else if xz < E::zero() {
                                -g
                            } else {
                                E::zero()
                            }
                        })
                        .collect();
                    acc(&mut grads[x.0], Tensor::from_vec(xv.shape(), data)?);
                }
                Op::Concat { xs } => {
                    let sizes: Vec<usize> = xs.iter().map(|&id| self.nodes[id.0].shape[1]).collect();
                    let parts = tensor::split_channels(&gy, &sizes)?;
                    for (id, part) in xs.iter().zip(parts) {
                        acc(&mut grads[id.0], part);
                    }
                }
                Op::Add { a, b } => {
                    acc(&mut grads[a.0], gy.clone());
                    acc(&mut grads[b.0], gy);
                }
                Op::Sub { a, b } => {
                    acc(&mut grads[a.0], gy.clone());
                    acc(&mut grads[b.0], gy.map(|z| -z));
                }
                Op::Mul { a, b } => {
                    let da = tensor::ew_mul(&gy, val(*b))?;
                    let db = tensor::ew_mul(&gy, val(*a))?;
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::MatMul { a, b } => {
                    let bt = tensor::transpose_mat(val(*b))?;
                    let at = tensor::transpose_mat(val(*a))?;
                    acc(&mut grads[a.0], tensor::matmul(&gy, &bt)?);
                    acc(&mut grads[b.0], tensor::matmul(&at, &gy)?);
                }
                Op::TransposeMat { x } => {
                    acc(&mut grads[x.0], tensor::transpose_mat(&gy)?);
                }
                Op::Reshape { x } => {
                    acc(&mut grads[x.0], gy.reshaped(self.nodes[x.0].shape)?);
                }
                Op::SoftmaxRows { x } => {
                    // dx_i = y_i * (g_i - sum_j g_j y_j), from cached output.
                    let yv = self.nodes[i].value.as_ref().expect("backward before run");
                    let [bn, c, r, w] = yv.shape();
                    let mut dx = Tensor::zeros(yv.shape());
                    for b0 in 0..bn {
                        for ch in 0..c {
                            for row in 0..r {
                                let mut dot = E::zero();
                                for j in 0..w {
                                    dot += gy.at(b0, ch, row, j) * yv.at(b0, ch, row, j);
                                }
                                for j in 0..w {
                                    let v = yv.at(b0, ch, row, j)
                                        * (gy.at(b0, ch, row, j) - dot);
                                    dx.set(b0, ch, row, j, v);
                                }
                            }
                        }
                    }
                    acc(&mut grads[x.0], dx);
                }
                Op::SumAll { x } => {
                    let g = gy.data()[0];
                    acc(&mut grads[x.0], Tensor::filled(self.nodes[x.0].shape, g));
                }
                Op::Affine { x, mul, .. } => {
                    let m = E::from_f64(*mul);
                    acc(&mut grads[x.0], gy.map(|z| z * m));
                }
                Op::Ln { x } => {
                    let xv = val(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&xz, &g)| g / xz)
                        .collect();
                    acc(&mut grads[x.0], Tensor::from_vec(xv.shape(), data)?);
                }
            }
        }
        Ok(grads)
    }
}

/// Max relative error between analytic gradients and central finite
/// differences of `loss_fn`, sampled over up to `max_samples_per_param`
/// coordinates of each parameter (seeded, deterministic).
pub fn finite_diff_check(
    loss_fn: impl Fn(&[Tensor<f64>]) -> Result<f64>,
    analytic: &[Tensor<f64>],
    params: &[Tensor<f64>],
    eps: f64,
    max_samples_per_param: usize,
    seed: u64,
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be > 0".into()));
    }
    let base = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::InvalidArgument("non-finite loss value".into()));
    }
    let mut state = seed.wrapping_add(0x9e3779b97f4a7c15);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let indices: Vec<usize> = if n <= max_samples_per_param {
            (0..n).collect()
        } else {
            (0..max_samples_per_param).map(|_| (next() as usize) % n).collect()
        };
        for idx in indices {
            let orig = p.data()[idx];
            work[pi].data_mut()[idx] = orig + eps;
            let up = loss_fn(&work)?;
            work[pi].data_mut()[idx] = orig - eps;
            let down = loss_fn(&work)?;
            work[pi].data_mut()[idx] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::InvalidArgument("non-finite loss value".into()));
            }
            let cd = (up - down) / (2.0 * eps);
            let an = analytic[pi].data()[idx];
            // Differences below float-summation dust are agreement, not
            // error; otherwise a dead path whose analytic gradient is
            // ~1e-16 of rounding noise would dominate the relative error.
            if (an - cd).abs() <= 1e-8 {
                continue;
            }
            let rel = (an - cd).abs() / an.abs().max(cd.abs()).max(1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
