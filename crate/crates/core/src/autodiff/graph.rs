use super::{AutodiffError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Primitive operation kinds, with their attributes.
///
/// Every kind has a forward rule (applied eagerly) and a backward rule.
/// `GradReverse` is the identity forward; its backward multiplies the
/// upstream gradient by `-lambda`.
#[derive(Debug, Clone)]
pub enum Op {
    /// Input node holding a constant or parameter value.
    Leaf,
    /// `a @ b`, or `a @ b^T` when `transpose_b` is set. 2-D operands only.
    Matmul { transpose_b: bool },
    /// Elementwise sum; also broadcasts a 1-D right operand across the rows
    /// of a 2-D left operand (bias add).
    Add,
    /// Multiply every element by a constant.
    Scale { factor: f32 },
    /// Concatenate 2-D tensors along `axis` (0 = rows, 1 = columns).
    Concat { axis: usize },
    /// Contiguous range `[start, end)` along `axis`.
    Slice { axis: usize, start: usize, end: usize },
    /// Select rows of a 2-D table; backward scatter-adds into the table.
    EmbeddingLookup { ids: Vec<usize> },
    /// Row-wise layer normalization with learned gain and bias.
    LayerNorm { eps: f32 },
    Gelu,
    Relu,
    /// Row-wise softmax. Entries further than ~100 below the row max
    /// underflow to exact zero, which attention masking relies on.
    Softmax,
    /// Natural log; domain is strictly positive inputs.
    Log,
    /// Mean of all elements (scalar output).
    Mean,
    /// Sum of all elements (scalar output).
    Sum,
    /// `sum((a - b)^2)` over all elements (scalar output).
    SquaredError,
    /// Mean over rows of `-log softmax(row)[target]` (scalar output).
    CrossEntropyWithLogits { targets: Vec<usize> },
    /// Identity forward; backward is `-lambda` times the upstream gradient.
    GradReverse { lambda: f32 },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::Add => "add",
            Op::Scale { .. } => "multiply-by-scalar",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::EmbeddingLookup { .. } => "embedding-lookup",
            Op::LayerNorm { .. } => "layer-norm",
            Op::Gelu => "gelu",
            Op::Relu => "relu",
            Op::Softmax => "softmax",
            Op::Log => "log",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::SquaredError => "squared-error",
            Op::CrossEntropyWithLogits { .. } => "cross-entropy-with-logits",
            Op::GradReverse { .. } => "grad-reverse",
        }
    }
}

struct Node {
    op: Op,
    parents: Vec<NodeId>,
    value: Tensor,
}

/// Gradient table produced by backpropagation, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient at `id`, if the node is reachable from the loss.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

/// Recorded computation: an append-only tape of eagerly evaluated nodes.
///
/// Parents of node `i` always have index less than `i`, so a single reverse
/// sweep implements the chain rule. A graph is confined to one thread during
/// construction and backprop.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Insert an input node. Tensor construction already guarantees the
    /// value is finite.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, parents, value });
        id
    }

    fn parent_value(&self, parents: &[NodeId], slot: usize) -> &Tensor {
        &self.nodes[parents[slot].0].value
    }

    /// Append one primitive node: validates shapes, computes the forward
    /// value eagerly, and checks the output is finite.
    pub fn apply(&mut self, op: Op, parents: &[NodeId]) -> Result<NodeId, AutodiffError> {
        for p in parents {
            if p.0 >= self.nodes.len() {
                return Err(AutodiffError::UnknownNode { index: p.0, len: self.nodes.len() });
            }
        }
        let name = op.name();
        let arity_ok = match op {
            Op::Leaf => parents.is_empty(),
            Op::Matmul { .. } | Op::Add | Op::SquaredError => parents.len() == 2,
            Op::LayerNorm { .. } => parents.len() == 3,
            Op::Concat { .. } => !parents.is_empty(),
            _ => parents.len() == 1,
        };
        if !arity_ok {
            return Err(AutodiffError::InvalidOperand {
                op: name.into(),
                detail: format!("wrong number of parents: {}", parents.len()),
            });
        }

        let (shape, data) = self.forward(&op, parents)?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: name.into() });
        }
        // Bypass Tensor::new's finite scan; it was just done above.
        let value = Tensor::new(shape, data)?;
        Ok(self.push(op, parents.to_vec(), value))
    }

    fn forward(&self, op: &Op, parents: &[NodeId]) -> Result<(Vec<usize>, Vec<f32>), AutodiffError> {
        let name = op.name();
        let mismatch = |detail: String| AutodiffError::ShapeMismatch { op: name.into(), detail };
        let invalid = |detail: String| AutodiffError::InvalidOperand { op: name.into(), detail };

        match op {
            Op::Leaf => unreachable!("leaves are inserted via Graph::leaf"),

            Op::Matmul { transpose_b } => {
                let a = self.parent_value(parents, 0);
                let b = self.parent_value(parents, 1);
                if a.shape().len() != 2 || b.shape().len() != 2 {
                    return Err(mismatch(format!(
                        "needs 2-D operands, got {:?} and {:?}",
                        a.shape(),
                        b.shape()
                    )));
                }
                let (m, k) = (a.shape()[0], a.shape()[1]);
                if *transpose_b {
                    let (n, kb) = (b.shape()[0], b.shape()[1]);
                    if kb != k {
                        return Err(mismatch(format!(
                            "inner extents differ: {:?} x {:?}^T",
                            a.shape(),
                            b.shape()
                        )));
                    }
                    Ok((vec![m, n], mm_nt(a.data(), m, k, b.data(), n)))
                } else {
                    let (kb, n) = (b.shape()[0], b.shape()[1]);
                    if kb != k {
                        return Err(mismatch(format!(
                            "inner extents differ: {:?} x {:?}",
                            a.shape(),
                            b.shape()
                        )));
                    }
                    Ok((vec![m, n], mm_nn(a.data(), m, k, b.data(), n)))
                }
            }

            Op::Add => {
                let a = self.parent_value(parents, 0);
                let b = self.parent_value(parents, 1);
                if a.shape() == b.shape() {
                    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                    Ok((a.shape().to_vec(), data))
                } else if a.shape().len() == 2 && b.shape().len() == 1 && b.shape()[0] == a.shape()[1] {
                    let (m, n) = (a.shape()[0], a.shape()[1]);
                    let mut data = a.data().to_vec();
                    for i in 0..m {
                        for j in 0..n {
                            data[i * n + j] += b.data()[j];
                        }
                    }
                    Ok((a.shape().to_vec(), data))
                } else {
                    Err(mismatch(format!("{:?} + {:?}", a.shape(), b.shape())))
                }
            }

            Op::Scale { factor } => {
                let x = self.parent_value(parents, 0);
                Ok((x.shape().to_vec(), x.data().iter().map(|v| v * factor).collect()))
            }

            Op::Concat { axis } => {
                let first = self.parent_value(parents, 0);
                if first.shape().len() != 2 || *axis > 1 {
                    return Err(invalid(format!(
                        "concat needs 2-D operands and axis 0 or 1, got {:?} axis {axis}",
                        first.shape()
                    )));
                }
                let (mut rows, mut cols) = (first.shape()[0], first.shape()[1]);
                for p in &parents[1..] {
                    let t = &self.nodes[p.0].value;
                    if t.shape().len() != 2 {
                        return Err(mismatch(format!("rank mismatch at {:?}", t.shape())));
                    }
                    if *axis == 0 {
                        if t.shape()[1] != cols {
                            return Err(mismatch(format!("column mismatch at {:?}", t.shape())));
                        }
                        rows += t.shape()[0];
                    } else {
                        if t.shape()[0] != rows {
                            return Err(mismatch(format!("row mismatch at {:?}", t.shape())));
                        }
                        cols += t.shape()[1];
                    }
                }
                let mut data = vec![0.0; rows * cols];
                if *axis == 0 {
                    let mut row0 = 0;
                    for p in parents {
                        let t = &self.nodes[p.0].value;
                        let r = t.shape()[0];
                        data[row0 * cols..(row0 + r) * cols].copy_from_slice(t.data());
                        row0 += r;
                    }
                } else {
                    let mut col0 = 0;
                    for p in parents {
                        let t = &self.nodes[p.0].value;
                        let c = t.shape()[1];
                        for i in 0..rows {
                            data[i * cols + col0..i * cols + col0 + c]
                                .copy_from_slice(&t.data()[i * c..(i + 1) * c]);
                        }
                        col0 += c;
                    }
                }
                Ok((vec![rows, cols], data))
            }

            Op::Slice { axis, start, end } => {
                let x = self.parent_value(parents, 0);
                let extent = match (x.shape().len(), axis) {
                    (1, 0) => x.shape()[0],
                    (2, 0) => x.shape()[0],
                    (2, 1) => x.shape()[1],
                    _ => {
                        return Err(invalid(format!(
                            "slice axis {axis} invalid for shape {:?}",
                            x.shape()
                        )))
                    }
                };
                if start >= end || *end > extent {
                    return Err(invalid(format!(
                        "range {start}..{end} out of bounds for extent {extent}"
                    )));
                }
                match (x.shape().len(), axis) {
                    (1, _) => Ok((vec![end - start], x.data()[*start..*end].to_vec())),
                    (2, 0) => {
                        let n = x.shape()[1];
                        Ok((vec![end - start, n], x.data()[start * n..end * n].to_vec()))
                    }
                    _ => {
                        let (m, n) = (x.shape()[0], x.shape()[1]);
                        let w = end - start;
                        let mut data = Vec::with_capacity(m * w);
                        for i in 0..m {
                            data.extend_from_slice(&x.data()[i * n + start..i * n + end]);
                        }
                        Ok((vec![m, w], data))
                    }
                }
            }

            Op::EmbeddingLookup { ids } => {
                let table = self.parent_value(parents, 0);
                if table.shape().len() != 2 {
                    return Err(mismatch(format!("table must be 2-D, got {:?}", table.shape())));
                }
                if ids.is_empty() {
                    return Err(invalid("empty id list".into()));
                }
                let (v, h) = (table.shape()[0], table.shape()[1]);
                let mut data = Vec::with_capacity(ids.len() * h);
                for &id in ids {
                    if id >= v {
                        return Err(invalid(format!("id {id} out of range for table rows {v}")));
                    }
                    data.extend_from_slice(&table.data()[id * h..(id + 1) * h]);
                }
                Ok((vec![ids.len(), h], data))
            }

            Op::LayerNorm { eps } => {
                let x = self.parent_value(parents, 0);
                let gamma = self.parent_value(parents, 1);
                let beta = self.parent_value(parents, 2);
                let (m, n) = x.rows_cols();
                if gamma.shape() != [n] || beta.shape() != [n] {
                    return Err(mismatch(format!(
                        "gain/bias must be [{n}], got {:?} and {:?}",
                        gamma.shape(),
                        beta.shape()
                    )));
                }
                let mut data = vec![0.0f32; m * n];
                for i in 0..m {
                    let row = &x.data()[i * n..(i + 1) * n];
                    let (mean, inv_std) = row_stats(row, *eps);
                    for j in 0..n {
                        let xhat = ((row[j] as f64 - mean) * inv_std) as f32;
                        data[i * n + j] = gamma.data()[j] * xhat + beta.data()[j];
                    }
                }
                Ok((x.shape().to_vec(), data))
            }

            Op::Gelu => {
                let x = self.parent_value(parents, 0);
                let data = x.data().iter().map(|&v| gelu_f64(v as f64).0 as f32).collect();
                Ok((x.shape().to_vec(), data))
            }

            Op::Relu => {
                let x = self.parent_value(parents, 0);
                Ok((x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect()))
            }

            Op::Softmax => {
                let x = self.parent_value(parents, 0);
                let (m, n) = x.rows_cols();
                let mut data = vec![0.0f32; m * n];
                for i in 0..m {
                    softmax_row(&x.data()[i * n..(i + 1) * n], &mut data[i * n..(i + 1) * n]);
                }
                Ok((x.shape().to_vec(), data))
            }

            Op::Log => {
                let x = self.parent_value(parents, 0);
                if x.data().iter().any(|&v| v <= 0.0) {
                    return Err(invalid("log requires strictly positive inputs".into()));
                }
                Ok((x.shape().to_vec(), x.data().iter().map(|v| v.ln()).collect()))
            }

            Op::Mean => {
                let x = self.parent_value(parents, 0);
                let s: f64 = x.data().iter().map(|&v| v as f64).sum();
                Ok((vec![1], vec![(s / x.numel() as f64) as f32]))
            }

            Op::Sum => {
                let x = self.parent_value(parents, 0);
                let s: f64 = x.data().iter().map(|&v| v as f64).sum();
                Ok((vec![1], vec![s as f32]))
            }

            Op::SquaredError => {
                let a = self.parent_value(parents, 0);
                let b = self.parent_value(parents, 1);
                if a.shape() != b.shape() {
                    return Err(mismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let s: f64 = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| {
                        let d = x as f64 - y as f64;
                        d * d
                    })
                    .sum();
                Ok((vec![1], vec![s as f32]))
            }

            Op::CrossEntropyWithLogits { targets } => {
                let z = self.parent_value(parents, 0);
                let (m, n) = z.rows_cols();
                if targets.len() != m {
                    return Err(mismatch(format!("{m} rows but {} targets", targets.len())));
                }
                let mut total = 0.0f64;
                for (i, &t) in targets.iter().enumerate() {
                    if t >= n {
                        return Err(invalid(format!("target {t} out of range for {n} classes")));
                    }
                    let row = &z.data()[i * n..(i + 1) * n];
                    total += log_sum_exp(row) - row[t] as f64;
                }
                Ok((vec![1], vec![(total / m as f64) as f32]))
            }

            Op::GradReverse { lambda } => {
                if *lambda < 0.0 {
                    return Err(AutodiffError::NegativeLambda { lambda: *lambda });
                }
                let x = self.parent_value(parents, 0);
                Ok((x.shape().to_vec(), x.data().to_vec()))
            }
        }
    }

    /// Backpropagate from a scalar loss node, seeding its gradient with 1.
    pub fn backprop(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode { index: loss.0, len: self.nodes.len() });
        }
        let v = self.value(loss);
        if !v.is_scalar() {
            return Err(AutodiffError::NonScalarLoss { shape: v.shape().to_vec() });
        }
        self.backprop_from(loss, Tensor::scalar(1.0)?)
    }

    /// Backpropagate from an arbitrary node with an externally supplied
    /// upstream gradient (used when a head loss is differentiated in closed
    /// form outside the graph).
    pub fn backprop_from(&self, node: NodeId, seed: Tensor) -> Result<Gradients, AutodiffError> {
        if node.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode { index: node.0, len: self.nodes.len() });
        }
        if seed.shape() != self.value(node).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "backprop".into(),
                detail: format!(
                    "seed shape {:?} vs node shape {:?}",
                    seed.shape(),
                    self.value(node).shape()
                ),
            });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[node.0] = Some(seed.data().to_vec());

        for i in (0..=node.0).rev() {
            let g = match &grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            let n = &self.nodes[i];
            self.backward_node(n, &g, &mut grads)?;
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (i, slot) in grads.into_iter().enumerate() {
            match slot {
                Some(data) => {
                    let shape = self.nodes[i].value.shape().to_vec();
                    out.push(Some(Tensor::new(shape, data)?));
                }
                None => out.push(None),
            }
        }
        Ok(Gradients { grads: out })
    }

    fn backward_node(
        &self,
        node: &Node,
        g: &[f32],
        grads: &mut [Option<Vec<f32>>],
    ) -> Result<(), AutodiffError> {
        let parents = &node.parents;
        let accum = |grads: &mut [Option<Vec<f32>>], p: NodeId, contrib: Vec<f32>| {
            match &mut grads[p.0] {
                Some(dst) => {
                    for (d, c) in dst.iter_mut().zip(&contrib) {
                        *d += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };

        match &node.op {
            Op::Leaf => {}

            Op::Matmul { transpose_b } => {
                let a = self.parent_value(parents, 0);
                let b = self.parent_value(parents, 1);
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = node.value.shape()[1];
                let (da, db) = if *transpose_b {
                    (mm_nn(g, m, n, b.data(), k), mm_tn(g, m, n, a.data(), k))
                } else {
                    (mm_nt(g, m, n, b.data(), k), mm_tn(a.data(), m, k, g, n))
                };
                accum(grads, parents[0], da);
                accum(grads, parents[1], db);
            }

            Op::Add => {
                let a = self.parent_value(parents, 0);
                let b = self.parent_value(parents, 1);
                accum(grads, parents[0], g.to_vec());
                if a.shape() == b.shape() {
                    accum(grads, parents[1], g.to_vec());
                } else {
                    let (m, n) = (a.shape()[0], a.shape()[1]);
                    let mut db = vec![0.0f32; n];
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += g[i * n + j];
                        }
                    }
                    accum(grads, parents[1], db);
                }
            }

            Op::Scale { factor } => {
                accum(grads, parents[0], g.iter().map(|v| v * factor).collect());
            }

            Op::Concat { axis } => {
                let cols = node.value.shape()[1];
                if *axis == 0 {
                    let mut row0 = 0;
                    for p in parents {
                        let t = &self.nodes[p.0].value;
                        let r = t.shape()[0];
                        accum(grads, *p, g[row0 * cols..(row0 + r) * cols].to_vec());
                        row0 += r;
                    }
                } else {
                    let rows = node.value.shape()[0];
                    let mut col0 = 0;
                    for p in parents {
                        let t = &self.nodes[p.0].value;
                        let c = t.shape()[1];
                        let mut dp = vec![0.0f32; rows * c];
                        for i in 0..rows {
                            dp[i * c..(i + 1) * c]
                                .copy_from_slice(&g[i * cols + col0..i * cols + col0 + c]);
                        }
                        accum(grads, *p, dp);
                        col0 += c;
                    }
                }
            }

            Op::Slice { axis, start, end } => {
                let x = self.parent_value(parents, 0);
                let mut dx = vec![0.0f32; x.numel()];
                match (x.shape().len(), axis) {
                    (1, _) => dx[*start..*end].copy_from_slice(g),
                    (2, 0) => {
                        let n = x.shape()[1];
                        dx[start * n..end * n].copy_from_slice(g);
                    }
                    _ => {
                        let (m, n) = (x.shape()[0], x.shape()[1]);
                        let w = end - start;
                        for i in 0..m {
                            dx[i * n + start..i * n + end]
                                .copy_from_slice(&g[i * w..(i + 1) * w]);
                        }
                    }
                }
                accum(grads, parents[0], dx);
            }

            Op::EmbeddingLookup { ids } => {
                let table = self.parent_value(parents, 0);
                let h = table.shape()[1];
                let mut dt = vec![0.0f32; table.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..h {
                        dt[id * h + j] += g[i * h + j];
                    }
                }
                accum(grads, parents[0], dt);
            }

            Op::LayerNorm { eps } => {
                let x = self.parent_value(parents, 0);
                let gamma = self.parent_value(parents, 1);
                let (m, n) = x.rows_cols();
                let mut dx = vec![0.0f32; m * n];
                let mut dgamma = vec![0.0f32; n];
                let mut dbeta = vec![0.0f32; n];
                for i in 0..m {
                    let row = &x.data()[i * n..(i + 1) * n];
                    let grow = &g[i * n..(i + 1) * n];
                    let (mean, inv_std) = row_stats(row, *eps);
                    let mut m1 = 0.0f64;
                    let mut m2 = 0.0f64;
                    let mut xhat = vec![0.0f64; n];
                    for j in 0..n {
                        xhat[j] = (row[j] as f64 - mean) * inv_std;
                        let gh = grow[j] as f64 * gamma.data()[j] as f64;
                        m1 += gh;
                        m2 += gh * xhat[j];
                    }
                    m1 /= n as f64;
                    m2 /= n as f64;
                    for j in 0..n {
                        let gh = grow[j] as f64 * gamma.data()[j] as f64;
                        dx[i * n + j] = ((gh - m1 - xhat[j] * m2) * inv_std) as f32;
                        dgamma[j] += (grow[j] as f64 * xhat[j]) as f32;
                        dbeta[j] += grow[j];
                    }
                }
                accum(grads, parents[0], dx);
                accum(grads, parents[1], dgamma);
                accum(grads, parents[2], dbeta);
            }

            Op::Gelu => {
                let x = self.parent_value(parents, 0);
                let dx = x
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| (gelu_f64(v as f64).1 * gi as f64) as f32)
                    .collect();
                accum(grads, parents[0], dx);
            }

            Op::Relu => {
                let x = self.parent_value(parents, 0);
                let dx = x
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                accum(grads, parents[0], dx);
            }

            Op::Softmax => {
                let p = &node.value;
                let (m, n) = p.rows_cols();
                let mut dx = vec![0.0f32; m * n];
                for i in 0..m {
                    let prow = &p.data()[i * n..(i + 1) * n];
                    let grow = &g[i * n..(i + 1) * n];
                    let dot: f64 = prow
                        .iter()
                        .zip(grow)
                        .map(|(&pv, &gv)| pv as f64 * gv as f64)
                        .sum();
                    for j in 0..n {
                        dx[i * n + j] = (prow[j] as f64 * (grow[j] as f64 - dot)) as f32;
                    }
                }
                accum(grads, parents[0], dx);
            }

            Op::Log => {
                let x = self.parent_value(parents, 0);
                let dx = x.data().iter().zip(g).map(|(&v, &gi)| gi / v).collect();
                accum(grads, parents[0], dx);
            }

            Op::Mean => {
                let x = self.parent_value(parents, 0);
                let c = g[0] / x.numel() as f32;
                accum(grads, parents[0], vec![c; x.numel()]);
            }

            Op::Sum => {
                let x = self.parent_value(parents, 0);
                accum(grads, parents[0], vec![g[0]; x.numel()]);
            }

            Op::SquaredError => {
                let a = self.parent_value(parents, 0);
                let b = self.parent_value(parents, 1);
                let da: Vec<f32> = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| 2.0 * (x - y) * g[0])
                    .collect();
                let db: Vec<f32> = da.iter().map(|v| -v).collect();
                accum(grads, parents[0], da);
                accum(grads, parents[1], db);
            }

            Op::CrossEntropyWithLogits { targets } => {
                let z = self.parent_value(parents, 0);
                let (m, n) = z.rows_cols();
                let scale = g[0] as f64 / m as f64;
                let mut dz = vec![0.0f32; m * n];
                let mut prow = vec![0.0f32; n];
                for (i, &t) in targets.iter().enumerate() {
                    softmax_row(&z.data()[i * n..(i + 1) * n], &mut prow);
                    for j in 0..n {
                        let p = prow[j] as f64;
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        dz[i * n + j] = ((p - onehot) * scale) as f32;
                    }
                }
                accum(grads, parents[0], dz);
            }

            Op::GradReverse { lambda } => {
                accum(grads, parents[0], g.iter().map(|v| -lambda * v).collect());
            }
        }
        Ok(())
    }

    // Convenience constructors.

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Matmul { transpose_b: false }, &[a, b])
    }

    /// `a @ b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Matmul { transpose_b: true }, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, factor: f32) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Scale { factor }, &[x])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Concat { axis }, parts)
    }

    pub fn slice(
        &mut self,
        x: NodeId,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Slice { axis, start, end }, &[x])
    }

    pub fn lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, AutodiffError> {
        self.apply(Op::EmbeddingLookup { ids: ids.to_vec() }, &[table])
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f32,
    ) -> Result<NodeId, AutodiffError> {
        self.apply(Op::LayerNorm { eps }, &[x, gamma, beta])
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Gelu, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Relu, &[x])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Softmax, &[x])
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Log, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Mean, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sum, &[x])
    }

    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::SquaredError, &[a, b])
    }

    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
    ) -> Result<NodeId, AutodiffError> {
        self.apply(Op::CrossEntropyWithLogits { targets: targets.to_vec() }, &[logits])
    }

    /// Identity forward; gradient through this node is multiplied by
    /// `-lambda`.
    pub fn grad_reverse(&mut self, x: NodeId, lambda: f32) -> Result<NodeId, AutodiffError> {
        self.apply(Op::GradReverse { lambda }, &[x])
    }
}

// Matmul kernels over row-major slices.

/// `a[m,k] @ b[k,n]`.
fn mm_nn(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// `a[m,k] @ b[n,k]^T`.
fn mm_nt(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0f32;
            for (av, bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// `a[m,k]^T @ b[m,n]` -> `[k,n]`.
fn mm_tn(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// Population mean and 1/sqrt(var + eps) of a row, accumulated in f64.
fn row_stats(row: &[f32], eps: f32) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = row
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, 1.0 / (var + eps as f64).sqrt())
}

fn softmax_row(row: &[f32], out: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0f64;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = ((v as f64) - max).exp();
        *o = e as f32;
        sum += e;
    }
    for o in out.iter_mut() {
        *o = (*o as f64 / sum) as f32;
    }
}

fn log_sum_exp(row: &[f32]) -> f64 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let sum: f64 = row.iter().map(|&v| ((v as f64) - max).exp()).sum();
    max + sum.ln()
}

/// GELU (tanh approximation) value and derivative.
fn gelu_f64(x: f64) -> (f64, f64) {
    const K: f64 = 0.7978845608028654; // sqrt(2/pi)
    const C: f64 = 0.044715;
    let u = K * (x + C * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = K * (1.0 + 3.0 * C * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}
