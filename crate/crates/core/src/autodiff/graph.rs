use rayon::prelude::*;

use super::{kernel_threads, AutodiffError, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Running statistics carried by a batch-norm layer between passes.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

/// Selects batch statistics (updating the running estimates) or the stored
/// running estimates.
pub enum BatchNormMode<'a> {
    Train {
        stats: &'a mut BatchNormStats,
        momentum: f64,
    },
    Eval {
        stats: &'a BatchNormStats,
    },
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Relu(Var),
    ClampFloorZero(Var),
    Reduce {
        kind: ReduceKind,
        a: Var,
        axis: Option<usize>,
    },
    LogSumExp {
        a: Var,
        axis: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Gather {
        a: Var,
        index: Vec<usize>,
    },
    Transpose(Var),
    NormalizeRows {
        a: Var,
        denom: Vec<f64>,
        clamped: Vec<bool>,
    },
    AddBias {
        a: Var,
        bias: Var,
    },
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    needs_grad: bool,
}

/// Append-only tape of tensor operations, evaluated eagerly.
///
/// Every node's inputs precede it, so a single reverse sweep in append order
/// is a valid topological traversal for [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one call to [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to a `requires_grad` leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let row = |(i, out_row): (usize, &mut [f64])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if n == 0 {
        return out;
    }
    // Each output row is produced by one thread in a fixed order, so the
    // result does not depend on the thread count.
    if kernel_threads() > 1 && m * k * n >= 1 << 16 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

fn transpose_data(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], contribution: impl FnOnce(&mut [f64])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    contribution(t.data_mut());
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records a leaf. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(value, op, false, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::Dimension(format!(
                "matmul of {sa:?} and {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.record(value, Op::MatMul { a, b }, &[a, b]))
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = if ta.shape() == tb.shape() || tb.is_scalar() {
            ta.shape().to_vec()
        } else if ta.is_scalar() {
            tb.shape().to_vec()
        } else {
            return Err(AutodiffError::Dimension(format!(
                "{kind:?} of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        };
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
            BinaryKind::Div => |x: f64, y: f64| x / y,
        };
        let data = (0..n).map(|i| f(pick(da, i), pick(db, i))).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.record(value, Op::Binary { kind, a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, b, BinaryKind::Div)
    }

    /// `a * c` for a constant scalar `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        let c = self.constant(Tensor::scalar(c));
        self.mul(a, c)
    }

    /// `c - a` for a constant scalar `c`.
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Result<Var, AutodiffError> {
        let c = self.constant(Tensor::scalar(c));
        self.sub(c, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.mul(a, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.record(value, Op::Relu(a), &[a])
    }

    /// `max(0, a)`; same kernel as [`Graph::relu`], recorded separately so
    /// hinge terms are identifiable on the tape.
    pub fn clamp_floor_zero(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.record(value, Op::ClampFloorZero(a), &[a])
    }

    pub fn reduce(&mut self, a: Var, kind: ReduceKind, axis: Option<usize>) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let value = match axis {
            None => {
                let s: f64 = t.data().iter().sum();
                let v = match kind {
                    ReduceKind::Sum => s,
                    ReduceKind::Mean => s / t.len() as f64,
                };
                Tensor::scalar(v)
            }
            Some(ax) => {
                if ax >= t.rank() {
                    return Err(AutodiffError::Dimension(format!(
                        "axis {ax} out of range for shape {:?}",
                        t.shape()
                    )));
                }
                let (outer, n, inner) = axis_split(t.shape(), ax);
                let mut out = vec![0.0; outer * inner];
                let d = t.data();
                for o in 0..outer {
                    for i in 0..n {
                        let base = (o * n + i) * inner;
                        for j in 0..inner {
                            out[o * inner + j] += d[base + j];
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    out.iter_mut().for_each(|x| *x /= n as f64);
                }
                let mut shape = t.shape().to_vec();
                shape.remove(ax);
                Tensor::new(shape, out)?
            }
        };
        Ok(self.record(value, Op::Reduce { kind, a, axis }, &[a]))
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var, AutodiffError> {
        self.reduce(a, ReduceKind::Sum, axis)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var, AutodiffError> {
        self.reduce(a, ReduceKind::Mean, axis)
    }

    /// `log Σ exp(a)` along `axis`, stabilized by subtracting the maximum.
    pub fn log_sum_exp(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(AutodiffError::Dimension(format!(
                "axis {axis} out of range for shape {:?}",
                t.shape()
            )));
        }
        let (outer, n, inner) = axis_split(t.shape(), axis);
        if n == 0 {
            return Err(AutodiffError::Domain("log_sum_exp over an empty axis".into()));
        }
        let d = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| d[(o * n + i) * inner + j];
                let m = (0..n).map(at).fold(f64::NEG_INFINITY, f64::max);
                out[o * inner + j] = if m.is_finite() {
                    m + (0..n).map(|i| (at(i) - m).exp()).sum::<f64>().ln()
                } else {
                    m
                };
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        Ok(self.record(value, Op::LogSumExp { a, axis }, &[a]))
    }

    /// Batch normalization over the rows of an `N×C` input.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        epsilon: f64,
    ) -> Result<Var, AutodiffError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(AutodiffError::Dimension(format!("batchnorm input {xs:?} is not N×C")));
        }
        let (n, c) = (xs[0], xs[1]);
        for p in [gamma, beta] {
            if self.value(p).len() != c {
                return Err(AutodiffError::Dimension(format!(
                    "batchnorm affine {:?} for {c} channels",
                    self.shape(p)
                )));
            }
        }
        let xd = self.value(x).data();
        let train = matches!(mode, BatchNormMode::Train { .. });
        let (mean, var) = match &mode {
            BatchNormMode::Train { .. } => {
                if n < 2 {
                    return Err(AutodiffError::Domain(format!(
                        "batchnorm in train mode needs at least 2 rows, got {n}"
                    )));
                }
                let mut mean = vec![0.0; c];
                for row in xd.chunks(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; c];
                for row in xd.chunks(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                (mean, var)
            }
            BatchNormMode::Eval { stats } => (stats.running_mean.clone(), stats.running_var.clone()),
        };
        if mean.len() != c || var.len() != c {
            return Err(AutodiffError::Dimension(format!(
                "batchnorm running stats sized {} for {c} channels",
                mean.len()
            )));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; n * c];
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for j in 0..c {
                let h = (xd[i * c + j] - mean[j]) * inv_std[j];
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        if let BatchNormMode::Train { stats, momentum } = mode {
            let unbias = n as f64 / (n as f64 - 1.0);
            for j in 0..c {
                stats.running_mean[j] = (1.0 - momentum) * stats.running_mean[j] + momentum * mean[j];
                stats.running_var[j] = (1.0 - momentum) * stats.running_var[j] + momentum * var[j] * unbias;
            }
        }
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.record(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        ))
    }

    /// Picks `a`'s flat elements at `index` into a tensor of `shape`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var, AutodiffError> {
        let src = self.value(a).data();
        if shape.iter().product::<usize>() != index.len() {
            return Err(AutodiffError::Dimension(format!(
                "gather of {} indices into shape {shape:?}",
                index.len()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(AutodiffError::Dimension(format!(
                "gather index {bad} out of range for {} elements",
                src.len()
            )));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        Ok(self.record(value, Op::Gather { a, index }, &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(AutodiffError::Dimension(format!("transpose of {s:?}")));
        }
        let data = transpose_data(self.value(a).data(), s[0], s[1]);
        let value = Tensor::new(vec![s[1], s[0]], data)?;
        Ok(self.record(value, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.record(value, Op::Reshape(a), &[a]))
    }

    /// Divides each row of an `N×C` tensor by `max(‖row‖, epsilon)`.
    pub fn normalize_rows(&mut self, a: Var, epsilon: f64) -> Result<Var, AutodiffError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(AutodiffError::Dimension(format!("normalize_rows of {s:?}")));
        }
        let c = s[1];
        let src = self.value(a).data();
        let mut denom = Vec::with_capacity(s[0]);
        let mut clamped = Vec::with_capacity(s[0]);
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(c.max(1)).take(s[0]) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let d = norm.max(epsilon);
            clamped.push(norm <= epsilon);
            denom.push(d);
            out.extend(row.iter().map(|x| x / d));
        }
        let value = Tensor::new(s, out)?;
        Ok(self.record(value, Op::NormalizeRows { a, denom, clamped }, &[a]))
    }

    /// Adds a length-`C` bias to every row of an `N×C` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(a).to_vec();
        let bs = self.shape(bias);
        if s.len() != 2 || bs.iter().product::<usize>() != s[1] {
            return Err(AutodiffError::Dimension(format!("add_bias of {s:?} and {bs:?}")));
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(s[1].max(1)) {
            for (x, bv) in row.iter_mut().zip(&b) {
                *x += bv;
            }
        }
        let value = Tensor::new(s, data)?;
        Ok(self.record(value, Op::AddBias { a, bias }, &[a, bias]))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        if root.0 >= self.nodes.len() {
            return Err(AutodiffError::Contract(format!(
                "root {} does not belong to this graph",
                root.0
            )));
        }
        if !self.value(root).is_scalar() {
            return Err(AutodiffError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(up) = grads[id].take() else { continue };
            if node.requires_grad {
                // Leaves keep their gradient; they have no inputs.
                grads[id] = Some(up);
                continue;
            }
            self.propagate(node, &up, &mut grads);
        }
        // Only requires_grad leaves report gradients; unreached ones get zeros.
        for (id, node) in self.nodes.iter().enumerate() {
            if node.requires_grad {
                if grads[id].is_none() {
                    grads[id] = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let g = up.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let bt = transpose_data(self.value(*b).data(), k, n);
                    let da = matmul_kernel(g, &bt, m, n, k);
                    accumulate(&mut grads[a.0], sa, |t| add_into(t, &da));
                }
                if self.wants(*b) {
                    let at = transpose_data(self.value(*a).data(), m, k);
                    let db = matmul_kernel(&at, g, k, m, n);
                    accumulate(&mut grads[b.0], sb, |t| add_into(t, &db));
                }
            }
            Op::Binary { kind, a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (da, db) = (va.data(), vb.data());
                let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                let idx = |d: &[f64], i: usize| if d.len() == 1 { 0 } else { i };
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], va.shape(), |t| {
                        for (i, &gi) in g.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            let d = match kind {
                                BinaryKind::Add | BinaryKind::Sub => gi,
                                BinaryKind::Mul => gi * pick(db, i),
                                BinaryKind::Div => gi / pick(db, i),
                            };
                            t[idx(da, i)] += d;
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], vb.shape(), |t| {
                        for (i, &gi) in g.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            let d = match kind {
                                BinaryKind::Add => gi,
                                BinaryKind::Sub => -gi,
                                BinaryKind::Mul => gi * pick(da, i),
                                BinaryKind::Div => {
                                    let bv = pick(db, i);
                                    -gi * pick(da, i) / (bv * bv)
                                }
                            };
                            t[idx(db, i)] += d;
                        }
                    });
                }
            }
            Op::Relu(a) | Op::ClampFloorZero(a) => {
                let x = self.value(*a);
                accumulate(&mut grads[a.0], x.shape(), |t| {
                    for ((ti, &xi), &gi) in t.iter_mut().zip(x.data()).zip(g) {
                        if xi > 0.0 {
                            *ti += gi;
                        }
                    }
                });
            }
            Op::Reduce { kind, a, axis } => {
                let x = self.value(*a);
                match axis {
                    None => {
                        let s = match kind {
                            ReduceKind::Sum => g[0],
                            ReduceKind::Mean => g[0] / x.len() as f64,
                        };
                        accumulate(&mut grads[a.0], x.shape(), |t| t.iter_mut().for_each(|v| *v += s));
                    }
                    Some(ax) => {
                        let (outer, n, inner) = axis_split(x.shape(), *ax);
                        let scale = match kind {
                            ReduceKind::Sum => 1.0,
                            ReduceKind::Mean => 1.0 / n as f64,
                        };
                        accumulate(&mut grads[a.0], x.shape(), |t| {
                            for o in 0..outer {
                                for i in 0..n {
                                    for j in 0..inner {
                                        t[(o * n + i) * inner + j] += g[o * inner + j] * scale;
                                    }
                                }
                            }
                        });
                    }
                }
            }
            Op::LogSumExp { a, axis } => {
                let x = self.value(*a);
                let out = node.value.data();
                let (outer, n, inner) = axis_split(x.shape(), *axis);
                let xd = x.data();
                accumulate(&mut grads[a.0], x.shape(), |t| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let gi = g[o * inner + j];
                            let lse = out[o * inner + j];
                            if gi == 0.0 || !lse.is_finite() {
                                continue;
                            }
                            for i in 0..n {
                                let k = (o * n + i) * inner + j;
                                t[k] += gi * (xd[k] - lse).exp();
                            }
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let s = self.shape(*x);
                let (n, c) = (s[0], s[1]);
                if self.wants(*gamma) {
                    accumulate(&mut grads[gamma.0], self.shape(*gamma), |t| {
                        for i in 0..n {
                            for j in 0..c {
                                t[j] += g[i * c + j] * xhat[i * c + j];
                            }
                        }
                    });
                }
                if self.wants(*beta) {
                    accumulate(&mut grads[beta.0], self.shape(*beta), |t| {
                        for i in 0..n {
                            for j in 0..c {
                                t[j] += g[i * c + j];
                            }
                        }
                    });
                }
                if self.wants(*x) {
                    let gam = self.value(*gamma).data();
                    accumulate(&mut grads[x.0], s, |t| {
                        if *train {
                            let nf = n as f64;
                            for j in 0..c {
                                let mut sum_d = 0.0;
                                let mut sum_dh = 0.0;
                                for i in 0..n {
                                    let d = g[i * c + j] * gam[j];
                                    sum_d += d;
                                    sum_dh += d * xhat[i * c + j];
                                }
                                for i in 0..n {
                                    let d = g[i * c + j] * gam[j];
                                    t[i * c + j] +=
                                        inv_std[j] / nf * (nf * d - sum_d - xhat[i * c + j] * sum_dh);
                                }
                            }
                        } else {
                            for i in 0..n {
                                for j in 0..c {
                                    t[i * c + j] += g[i * c + j] * gam[j] * inv_std[j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Gather { a, index } => {
                accumulate(&mut grads[a.0], self.shape(*a), |t| {
                    for (&i, &gi) in index.iter().zip(g) {
                        t[i] += gi;
                    }
                });
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let back = transpose_data(g, s[1], s[0]);
                accumulate(&mut grads[a.0], s, |t| add_into(t, &back));
            }
            Op::Reshape(a) => {
                accumulate(&mut grads[a.0], self.shape(*a), |t| add_into(t, g));
            }
            Op::NormalizeRows { a, denom, clamped } => {
                let s = self.shape(*a);
                let c = s[1];
                let y = node.value.data();
                accumulate(&mut grads[a.0], s, |t| {
                    for r in 0..s[0] {
                        let range = r * c..(r + 1) * c;
                        let (yr, gr) = (&y[range.clone()], &g[range.clone()]);
                        let tr = &mut t[range];
                        if clamped[r] {
                            for (ti, gi) in tr.iter_mut().zip(gr) {
                                *ti += gi / denom[r];
                            }
                        } else {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((ti, yi), gi) in tr.iter_mut().zip(yr).zip(gr) {
                                *ti += (gi - yi * dot) / denom[r];
                            }
                        }
                    }
                });
            }
            Op::AddBias { a, bias } => {
                let s = self.shape(*a);
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], s, |t| add_into(t, g));
                }
                if self.wants(*bias) {
                    let c = s[1];
                    accumulate(&mut grads[bias.0], self.shape(*bias), |t| {
                        for row in g.chunks(c.max(1)) {
                            for (ti, gi) in t.iter_mut().zip(row) {
                                *ti += gi;
                            }
                        }
                    });
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
