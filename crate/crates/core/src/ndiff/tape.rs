use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs has one entry per column and is repeated down the rows.
    Row,
    /// rhs has one entry per row and is repeated across the columns.
    Col,
    Scalar,
}

impl Broadcast {
    fn resolve(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Self> {
        let rhs_numel: usize = rhs.iter().product();
        if lhs == rhs {
            return Ok(Broadcast::Same);
        }
        if rhs_numel == 1 {
            return Ok(Broadcast::Scalar);
        }
        if lhs.len() == 2 {
            let (r, c) = (lhs[0], lhs[1]);
            if rhs == [c] || rhs == [1, c] {
                return Ok(Broadcast::Row);
            }
            if rhs == [r, 1] {
                return Ok(Broadcast::Col);
            }
        }
        Err(Error::dim(op, lhs, rhs))
    }

    #[inline]
    fn rhs_index(self, i: usize, cols: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Row => i % cols,
            Broadcast::Col => i / cols,
            Broadcast::Scalar => 0,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    Relu(usize),
    RowNormalize {
        x: usize,
        eps: f64,
        norms: Vec<f64>,
    },
    MaskedMeanPool {
        x: usize,
        rows: Vec<usize>,
    },
    SegmentMean {
        x: usize,
        segments: Vec<Option<usize>>,
        counts: Vec<usize>,
    },
    GatherRows {
        x: usize,
        index: Vec<usize>,
    },
    Take {
        x: usize,
        index: Vec<usize>,
    },
    Reshape(usize),
    MeanAxis {
        x: usize,
        axis: usize,
    },
    Sum(usize),
    LogSumExp(usize),
    Log(usize),
    Exp(usize),
    ConcatRows(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation record for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and a reverse sweep visits each node once. A tape is confined to one
/// thread; independent tapes can run concurrently.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
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

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v);
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v);
        self.nodes[v.index].requires_grad
    }

    /// Gradient of the last backward root with respect to a leaf.
    ///
    /// Differentiable leaves that the root does not depend on report zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.check(v);
        let node = &self.nodes[v.index];
        if !self.backward_done || !node.requires_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        let data = self.grads[v.index]
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.numel()]);
        Tensor::new(node.value.shape().to_vec(), data).ok()
    }

    /// Clears gradients so that another backward pass may run.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    fn check(&self, v: Var) {
        assert!(
            v.tape == self.id && v.index < self.nodes.len(),
            "variable does not belong to this tape"
        );
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            matches!(op, Op::Leaf) || value.all_finite(),
            "non-finite output from {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn rg(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|&v| self.nodes[v.index].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a.index, b.index), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Transpose(x.index), rg))
    }

    /// `a + b`, where `b` may be broadcast along rows, columns, or as a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = Broadcast::resolve("add", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv.data()[bc.rhs_index(i, cols)])
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a.index, b.index, bc), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = Broadcast::resolve("mul", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * bv.data()[bc.rhs_index(i, cols)])
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a.index, b.index, bc), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|v| v * s).collect(),
        )
        .expect("shape preserved");
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x.index, s), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(
            xv.shape().to_vec(),
            xv.data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { 0.0 })
                .collect(),
        )
        .expect("shape preserved");
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x.index), rg)
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn row_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::contract("row_normalize requires eps > 0"));
        }
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::dim("row_normalize", xv.shape(), &[]));
        }
        let (r, c) = (xv.rows(), xv.cols());
        let mut data = vec![0.0; r * c];
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let d = n.max(eps);
            for (o, v) in data[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = v / d;
            }
            norms.push(n);
        }
        let out = Tensor::new(vec![r, c], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::RowNormalize {
                x: x.index,
                eps,
                norms,
            },
            rg,
        ))
    }

    /// Mean of the rows selected by `mask`.
    pub fn masked_mean_pool(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || mask.len() != xv.rows() {
            return Err(Error::dim("masked_mean_pool", xv.shape(), &[mask.len()]));
        }
        let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if rows.is_empty() {
            return Err(Error::EmptyClass);
        }
        let c = xv.cols();
        let mut acc = vec![0.0; c];
        for &i in &rows {
            for (a, v) in acc.iter_mut().zip(xv.row(i)) {
                *a += v;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::vector(acc),
            Op::MaskedMeanPool { x: x.index, rows },
            rg,
        ))
    }

    /// Per-segment row means; rows tagged `None` are dropped and empty
    /// segments yield zero rows.
    pub fn segment_mean(
        &mut self,
        x: Var,
        segments: &[Option<usize>],
        num_segments: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || segments.len() != xv.rows() {
            return Err(Error::dim("segment_mean", xv.shape(), &[segments.len()]));
        }
        let c = xv.cols();
        let mut counts = vec![0usize; num_segments];
        let mut acc = vec![0.0; num_segments * c];
        for (i, s) in segments.iter().enumerate() {
            if let Some(s) = *s {
                if s >= num_segments {
                    return Err(Error::contract(format!(
                        "segment id {s} out of range {num_segments}"
                    )));
                }
                counts[s] += 1;
                for (a, v) in acc[s * c..(s + 1) * c].iter_mut().zip(xv.row(i)) {
                    *a += v;
                }
            }
        }
        for (s, &n) in counts.iter().enumerate() {
            if n > 1 {
                let inv = 1.0 / n as f64;
                acc[s * c..(s + 1) * c].iter_mut().for_each(|a| *a *= inv);
            }
        }
        let out = Tensor::new(vec![num_segments, c], acc)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::SegmentMean {
                x: x.index,
                segments: segments.to_vec(),
                counts,
            },
            rg,
        ))
    }

    /// Selects rows (or entries, for vectors) by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = match xv.rank() {
            1 => (xv.numel(), 1),
            2 => (xv.rows(), xv.cols()),
            _ => return Err(Error::dim("gather_rows", xv.shape(), &[])),
        };
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= rows {
                return Err(Error::dim("gather_rows", xv.shape(), &[i]));
            }
            data.extend_from_slice(&xv.data()[i * c..(i + 1) * c]);
        }
        let shape = if xv.rank() == 1 {
            vec![index.len()]
        } else {
            vec![index.len(), c]
        };
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::GatherRows {
                x: x.index,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Selects entries of the row-major buffer into a tensor of `shape`.
    pub fn take(&mut self, x: Var, index: &[usize], shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::dim("take", shape, &[index.len()]));
        }
        let mut data = Vec::with_capacity(index.len());
        for &i in index {
            match xv.data().get(i) {
                Some(&v) => data.push(v),
                None => return Err(Error::dim("take", xv.shape(), &[i])),
            }
        }
        let out = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::Take {
                x: x.index,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x.index), rg))
    }

    /// Mean over `axis` of a matrix: axis 0 gives column means, axis 1 row means.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || axis > 1 {
            return Err(Error::dim("mean_axis", xv.shape(), &[axis]));
        }
        let (r, c) = (xv.rows(), xv.cols());
        let out = if axis == 0 {
            let mut acc = vec![0.0; c];
            for i in 0..r {
                for (a, v) in acc.iter_mut().zip(xv.row(i)) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= r as f64);
            acc
        } else {
            (0..r)
                .map(|i| xv.row(i).iter().sum::<f64>() / c as f64)
                .collect()
        };
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::vector(out), Op::MeanAxis { x: x.index, axis }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x.index), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Max-shifted `log Σ exp`. A vector reduces to a scalar; a matrix
    /// reduces each row, giving a vector.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = match xv.rank() {
            1 if xv.numel() > 0 => Tensor::scalar(lse(xv.data())),
            2 if xv.cols() > 0 => Tensor::vector((0..xv.rows()).map(|i| lse(xv.row(i))).collect()),
            _ => return Err(Error::dim("logsumexp", xv.shape(), &[])),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LogSumExp(x.index), rg))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|v| v.ln()).collect(),
        )
        .expect("shape preserved");
        let rg = self.rg(&[x]);
        self.push(out, Op::Log(x.index), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|v| v.exp()).collect(),
        )
        .expect("shape preserved");
        let rg = self.rg(&[x]);
        self.push(out, Op::Exp(x.index), rg)
    }

    /// Stacks matrices (or vectors, as single rows) with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let c = self.value(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() == 0 || pv.rank() > 2 || pv.cols() != c {
                return Err(Error::dim("concat_rows", &[c], pv.shape()));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::new(vec![rows, c], data)?;
        let rg = self.rg(parts);
        let idx = parts.iter().map(|p| p.index).collect();
        Ok(self.push(out, Op::ConcatRows(idx), rg))
    }

    /// Accumulates `∂root/∂leaf` into every differentiable leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if root.tape != self.id || root.index >= self.nodes.len() {
            return Err(Error::contract("backward root is not on this tape"));
        }
        if self.backward_done {
            return Err(Error::contract(
                "backward already ran on this tape; call zero_grad first",
            ));
        }
        if !self.nodes[root.index].value.is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.index].value.shape()
            )));
        }
        self.backward_done = true;
        if !self.nodes[root.index].requires_grad {
            return Ok(());
        }
        let Tape { nodes, grads, .. } = self;
        grads[root.index] = Some(vec![1.0]);
        for i in (0..=root.index).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(nodes, grads, i, &g);
        }
        Ok(())
    }
}

fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn grad_slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    j: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[j].requires_grad {
        return None;
    }
    let n = nodes[j].value.numel();
    Some(grads[j].get_or_insert_with(|| vec![0.0; n]))
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                // dA = G · Bᵀ
                gemm(
                    m,
                    n,
                    k,
                    1.0,
                    (g, n as isize, 1),
                    (bv.data(), 1, n as isize),
                    1.0,
                    ga,
                );
            }
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                // dB = Aᵀ · G
                gemm(
                    k,
                    m,
                    n,
                    1.0,
                    (av.data(), 1, k as isize),
                    (g, n as isize, 1),
                    1.0,
                    gb,
                );
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for p in 0..r {
                    for q in 0..c {
                        gx[q * r + p] += g[p * c + q];
                    }
                }
            }
        }
        Op::Add(a, b, bc) => {
            let cols = out.cols();
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                for (idx, v) in g.iter().enumerate() {
                    gb[bc.rhs_index(idx, cols)] += v;
                }
            }
        }
        Op::Mul(a, b, bc) => {
            let cols = out.cols();
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                for (idx, v) in g.iter().enumerate() {
                    ga[idx] += v * bv[bc.rhs_index(idx, cols)];
                }
            }
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                for (idx, v) in g.iter().enumerate() {
                    gb[bc.rhs_index(idx, cols)] += v * av[idx];
                }
            }
        }
        Op::Scale(x, s) => {
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(d, v)| *d += s * v);
            }
        }
        Op::Relu(x) => {
            let xv = nodes[*x].value.data();
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for ((d, v), xi) in gx.iter_mut().zip(g).zip(xv) {
                    if *xi > 0.0 {
                        *d += v;
                    }
                }
            }
        }
        Op::RowNormalize { x, eps, norms } => {
            let c = out.cols();
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for (r, &n) in norms.iter().enumerate() {
                    let y = &out.data()[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let dst = &mut gx[r * c..(r + 1) * c];
                    if n > *eps {
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, gv), yv) in dst.iter_mut().zip(gr).zip(y) {
                            *d += (gv - yv * dot) / n;
                        }
                    } else {
                        for (d, gv) in dst.iter_mut().zip(gr) {
                            *d += gv / eps;
                        }
                    }
                }
            }
        }
        Op::MaskedMeanPool { x, rows } => {
            let c = out.numel();
            let inv = 1.0 / rows.len() as f64;
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for &r in rows {
                    for (d, v) in gx[r * c..(r + 1) * c].iter_mut().zip(g) {
                        *d += v * inv;
                    }
                }
            }
        }
        Op::SegmentMean {
            x,
            segments,
            counts,
        } => {
            let c = out.cols();
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for (r, s) in segments.iter().enumerate() {
                    if let Some(s) = *s {
                        let inv = 1.0 / counts[s] as f64;
                        for (d, v) in gx[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(&g[s * c..(s + 1) * c])
                        {
                            *d += v * inv;
                        }
                    }
                }
            }
        }
        Op::GatherRows { x, index } => {
            let xv = &nodes[*x].value;
            let c = if xv.rank() == 1 { 1 } else { xv.cols() };
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for (j, &r) in index.iter().enumerate() {
                    for (d, v) in gx[r * c..(r + 1) * c]
                        .iter_mut()
                        .zip(&g[j * c..(j + 1) * c])
                    {
                        *d += v;
                    }
                }
            }
        }
        Op::Take { x, index } => {
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for (j, &e) in index.iter().enumerate() {
                    gx[e] += g[j];
                }
            }
        }
        Op::Reshape(x) | Op::Sum(x) => {
            let scalar_out = matches!(nodes[i].op, Op::Sum(_));
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                if scalar_out {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                } else {
                    gx.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
        }
        Op::MeanAxis { x, axis } => {
            let xv = &nodes[*x].value;
            let (r, c) = (xv.rows(), xv.cols());
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for p in 0..r {
                    for q in 0..c {
                        gx[p * c + q] += if *axis == 0 {
                            g[q] / r as f64
                        } else {
                            g[p] / c as f64
                        };
                    }
                }
            }
        }
        Op::LogSumExp(x) => {
            let xv = &nodes[*x].value;
            let c = xv.cols();
            let xd = xv.data();
            let od = out.data();
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for (e, d) in gx.iter_mut().enumerate() {
                    let r = if xv.rank() == 1 { 0 } else { e / c };
                    *d += g[r] * (xd[e] - od[r]).exp();
                }
            }
        }
        Op::Log(x) => {
            let xd = nodes[*x].value.data();
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for ((d, v), xv) in gx.iter_mut().zip(g).zip(xd) {
                    *d += v / xv;
                }
            }
        }
        Op::Exp(x) => {
            let od = out.data();
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                for ((d, v), o) in gx.iter_mut().zip(g).zip(od) {
                    *d += v * o;
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p].value.numel();
                if let Some(gp) = grad_slot(nodes, grads, p) {
                    gp.iter_mut()
                        .zip(&g[offset..offset + n])
                        .for_each(|(d, v)| *d += v);
                }
                offset += n;
            }
        }
    }
}
