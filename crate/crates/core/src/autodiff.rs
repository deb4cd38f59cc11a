//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every operation appends a node holding its forward value. Node ids are
//! handed out in append order, so inputs always precede their consumers and
//! a single reverse sweep over the node list visits everything in reverse
//! topological order.

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by the tape. Parameterised kinds carry their
/// static arguments; tensor operands are passed separately as node ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    MatMul,
    SquaredDiff,
    Minimum,
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Clamp { lo: f64, hi: f64 },
    Sum,
    Mean,
    SumAxis(usize),
    LogSumExp(usize),
    Concat,
    Slice { start: usize, len: usize },
    Transpose,
    BroadcastRows(usize),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::MatMul => "matmul",
            OpKind::SquaredDiff => "squared_diff",
            OpKind::Minimum => "minimum",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Neg => "neg",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::Clamp { .. } => "clamp",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumAxis(_) => "sum_axis",
            OpKind::LogSumExp(_) => "logsumexp",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Transpose => "transpose",
            OpKind::BroadcastRows(_) => "broadcast_rows",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    kind: OpKind,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(OpKind::Leaf, Vec::new(), value, true)
    }

    /// An input treated as a constant: gradients never flow into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(OpKind::Leaf, Vec::new(), value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, kind: OpKind, inputs: Vec<NodeId>, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            kind,
            inputs,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Appends `kind` applied to `inputs` and returns the new node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let arity_ok = match kind {
            OpKind::Leaf => false,
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::MatMul
            | OpKind::SquaredDiff
            | OpKind::Minimum => inputs.len() == 2,
            OpKind::Concat => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(Error::contract(format!(
                "{} cannot take {} inputs",
                kind.name(),
                inputs.len()
            )));
        }
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(Error::contract(format!("unknown node {}", bad.0)));
        }
        let value = self.eval(kind, inputs)?;
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {}", kind.name())));
        }
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        Ok(self.push(kind, inputs.to_vec(), value, requires_grad))
    }

    fn eval(&self, kind: OpKind, inputs: &[NodeId]) -> Result<Tensor> {
        let v = |i: usize| &self.nodes[inputs[i].0].value;
        let same_shape = |op| {
            let (a, b) = (v(0), v(1));
            if a.shape() != b.shape() {
                Err(Error::dim(op, a.shape(), b.shape()))
            } else {
                Ok(())
            }
        };
        let out = match kind {
            OpKind::Leaf => unreachable!("leaves are not evaluated"),
            OpKind::Add => {
                same_shape("add")?;
                v(0).zip_map(v(1), |a, b| a + b)
            }
            OpKind::Sub => {
                same_shape("sub")?;
                v(0).zip_map(v(1), |a, b| a - b)
            }
            OpKind::Mul => {
                same_shape("mul")?;
                v(0).zip_map(v(1), |a, b| a * b)
            }
            OpKind::SquaredDiff => {
                same_shape("squared_diff")?;
                v(0).zip_map(v(1), |a, b| (a - b) * (a - b))
            }
            OpKind::Minimum => {
                same_shape("minimum")?;
                v(0).zip_map(v(1), |a, b| if a <= b { a } else { b })
            }
            OpKind::MatMul => {
                let (a, b) = (v(0), v(1));
                if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(Error::dim("matmul", a.shape(), b.shape()));
                }
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let mut out = vec![0.0; m * n];
                matmul_into(a.data(), b.data(), &mut out, m, k, n);
                Tensor::from_parts(vec![m, n], out)
            }
            OpKind::Relu => v(0).map(|x| x.max(0.0)),
            OpKind::Tanh => v(0).map(f64::tanh),
            OpKind::Sigmoid => v(0).map(sigmoid),
            OpKind::Exp => v(0).map(f64::exp),
            OpKind::Log => v(0).map(f64::ln),
            OpKind::Neg => v(0).map(|x| -x),
            OpKind::Scale(k) => v(0).map(|x| k * x),
            OpKind::AddScalar(k) => v(0).map(|x| x + k),
            OpKind::Clamp { lo, hi } => {
                if lo > hi {
                    return Err(Error::contract(format!("clamp bounds {lo} > {hi}")));
                }
                v(0).map(|x| x.clamp(lo, hi))
            }
            OpKind::Sum => Tensor::scalar(v(0).sum()),
            OpKind::Mean => Tensor::scalar(v(0).mean()),
            OpKind::SumAxis(axis) => reduce_axis("sum_axis", v(0), axis, |xs| xs.iter().sum())?,
            OpKind::LogSumExp(axis) => reduce_axis("logsumexp", v(0), axis, logsumexp)?,
            OpKind::Concat => {
                let first = v(0);
                let lead = &first.shape()[..first.rank() - 1];
                let mut width = 0;
                for id in inputs {
                    let t = &self.nodes[id.0].value;
                    if t.rank() != first.rank() || &t.shape()[..t.rank() - 1] != lead {
                        return Err(Error::dim("concat", first.shape(), t.shape()));
                    }
                    width += t.cols();
                }
                let rows = first.numel() / first.cols();
                let mut out = Vec::with_capacity(rows * width);
                for r in 0..rows {
                    for id in inputs {
                        let t = &self.nodes[id.0].value;
                        let c = t.cols();
                        out.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
                    }
                }
                let mut shape = lead.to_vec();
                shape.push(width);
                Tensor::from_parts(shape, out)
            }
            OpKind::Slice { start, len } => {
                let a = v(0);
                let c = a.cols();
                if len == 0 || start + len > c {
                    return Err(Error::dim("slice", a.shape(), &[start, len]));
                }
                let rows = a.numel() / c;
                let mut out = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    out.extend_from_slice(&a.data()[r * c + start..r * c + start + len]);
                }
                let mut shape = a.shape().to_vec();
                *shape.last_mut().unwrap() = len;
                Tensor::from_parts(shape, out)
            }
            OpKind::Transpose => {
                let a = v(0);
                if a.rank() != 2 {
                    return Err(Error::dim("transpose", a.shape(), &[2]));
                }
                let (m, n) = (a.shape()[0], a.shape()[1]);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = a.data()[i * n + j];
                    }
                }
                Tensor::from_parts(vec![n, m], out)
            }
            OpKind::BroadcastRows(n) => {
                let a = v(0);
                if a.rank() != 2 || a.shape()[0] != 1 || n == 0 {
                    return Err(Error::dim("broadcast_rows", a.shape(), &[n]));
                }
                let mut out = Vec::with_capacity(n * a.cols());
                for _ in 0..n {
                    out.extend_from_slice(a.data());
                }
                Tensor::from_parts(vec![n, a.cols()], out)
            }
        };
        Ok(out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn squared_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::SquaredDiff, &[a, b])
    }

    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Minimum, &[a, b])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Neg, &[a])
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale(k), &[a])
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        self.apply(OpKind::AddScalar(k), &[a])
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.apply(OpKind::Clamp { lo, hi }, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mean, &[a])
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(OpKind::SumAxis(axis), &[a])
    }

    pub fn logsumexp(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(OpKind::LogSumExp(axis), &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::Concat, parts)
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(OpKind::Slice { start, len }, &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Transpose, &[a])
    }

    pub fn broadcast_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        self.apply(OpKind::BroadcastRows(n), &[a])
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_node = self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::contract(format!("unknown root node {}", root.0)))?;
        if !root_node.value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::ones(root_node.value.shape()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let ins = &node.inputs;
        let val = |i: usize| &self.nodes[ins[i].0].value;
        let wants = |i: usize| self.nodes[ins[i].0].requires_grad;
        let out = &node.value;

        match node.kind {
            OpKind::Leaf => {}
            OpKind::Add => {
                if wants(0) {
                    accumulate(grads, ins[0], g.clone());
                }
                if wants(1) {
                    accumulate(grads, ins[1], g.clone());
                }
            }
            OpKind::Sub => {
                if wants(0) {
                    accumulate(grads, ins[0], g.clone());
                }
                if wants(1) {
                    accumulate(grads, ins[1], g.map(|x| -x));
                }
            }
            OpKind::Mul => {
                if wants(0) {
                    accumulate(grads, ins[0], g.zip_map(val(1), |g, b| g * b));
                }
                if wants(1) {
                    accumulate(grads, ins[1], g.zip_map(val(0), |g, a| g * a));
                }
            }
            OpKind::SquaredDiff => {
                let diff = val(0).zip_map(val(1), |a, b| 2.0 * (a - b));
                if wants(0) {
                    accumulate(grads, ins[0], g.zip_map(&diff, |g, d| g * d));
                }
                if wants(1) {
                    accumulate(grads, ins[1], g.zip_map(&diff, |g, d| -g * d));
                }
            }
            OpKind::Minimum => {
                let (a, b) = (val(0), val(1));
                if wants(0) {
                    let mut ga = g.clone();
                    for ((x, &av), &bv) in ga.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                        if av > bv {
                            *x = 0.0;
                        }
                    }
                    accumulate(grads, ins[0], ga);
                }
                if wants(1) {
                    let mut gb = g.clone();
                    for ((x, &av), &bv) in gb.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                        if av <= bv {
                            *x = 0.0;
                        }
                    }
                    accumulate(grads, ins[1], gb);
                }
            }
            OpKind::MatMul => {
                let (a, b) = (val(0), val(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                if wants(0) {
                    let mut ga = vec![0.0; m * k];
                    matmul_nt_into(g.data(), b.data(), &mut ga, m, n, k);
                    accumulate(grads, ins[0], Tensor::from_parts(vec![m, k], ga));
                }
                if wants(1) {
                    let mut gb = vec![0.0; k * n];
                    matmul_tn_into(a.data(), g.data(), &mut gb, m, k, n);
                    accumulate(grads, ins[1], Tensor::from_parts(vec![k, n], gb));
                }
            }
            OpKind::Relu => {
                accumulate(grads, ins[0], g.zip_map(val(0), |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            OpKind::Tanh => {
                accumulate(grads, ins[0], g.zip_map(out, |g, y| g * (1.0 - y * y)));
            }
            OpKind::Sigmoid => {
                accumulate(grads, ins[0], g.zip_map(out, |g, y| g * y * (1.0 - y)));
            }
            OpKind::Exp => {
                accumulate(grads, ins[0], g.zip_map(out, |g, y| g * y));
            }
            OpKind::Log => {
                accumulate(grads, ins[0], g.zip_map(val(0), |g, x| g / x));
            }
            OpKind::Neg => accumulate(grads, ins[0], g.map(|x| -x)),
            OpKind::Scale(k) => accumulate(grads, ins[0], g.map(|x| k * x)),
            OpKind::AddScalar(_) => accumulate(grads, ins[0], g.clone()),
            OpKind::Clamp { lo, hi } => {
                accumulate(
                    grads,
                    ins[0],
                    g.zip_map(val(0), |g, x| if x >= lo && x <= hi { g } else { 0.0 }),
                );
            }
            OpKind::Sum => {
                accumulate(grads, ins[0], Tensor::filled(val(0).shape(), g.item()));
            }
            OpKind::Mean => {
                let a = val(0);
                accumulate(grads, ins[0], Tensor::filled(a.shape(), g.item() / a.numel() as f64));
            }
            OpKind::SumAxis(axis) => {
                let a = val(0);
                let ga = expand_axis(a.shape(), axis, |_, _, out_idx| g.data()[out_idx]);
                accumulate(grads, ins[0], ga);
            }
            OpKind::LogSumExp(axis) => {
                let a = val(0);
                let ga = expand_axis(a.shape(), axis, |in_idx, _, out_idx| {
                    g.data()[out_idx] * (a.data()[in_idx] - out.data()[out_idx]).exp()
                });
                accumulate(grads, ins[0], ga);
            }
            OpKind::Concat => {
                let width = out.cols();
                let rows = out.numel() / width;
                let mut offset = 0;
                for (i, id) in ins.iter().enumerate() {
                    let part = val(i);
                    let c = part.cols();
                    if wants(i) {
                        let mut gp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.data()[r * width + offset..r * width + offset + c]);
                        }
                        accumulate(grads, *id, Tensor::from_parts(part.shape().to_vec(), gp));
                    }
                    offset += c;
                }
            }
            OpKind::Slice { start, len } => {
                let a = val(0);
                let c = a.cols();
                let rows = a.numel() / c;
                let mut ga = Tensor::zeros(a.shape());
                for r in 0..rows {
                    ga.data_mut()[r * c + start..r * c + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                accumulate(grads, ins[0], ga);
            }
            OpKind::Transpose => {
                let (n, m) = (g.shape()[0], g.shape()[1]);
                let mut ga = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..m {
                        ga[j * n + i] = g.data()[i * m + j];
                    }
                }
                accumulate(grads, ins[0], Tensor::from_parts(vec![m, n], ga));
            }
            OpKind::BroadcastRows(_) => {
                let c = g.cols();
                let mut ga = vec![0.0; c];
                for r in 0..g.rows() {
                    for (acc, x) in ga.iter_mut().zip(g.row_slice(r)) {
                        *acc += x;
                    }
                }
                accumulate(grads, ins[0], Tensor::from_parts(vec![1, c], ga));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, contribution: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Output shape of a keep-dim reduction over `axis`, or a dimension error.
fn reduced_shape(op: &'static str, shape: &[usize], axis: usize) -> Result<Vec<usize>> {
    if shape.len() > 2 || axis >= shape.len() {
        return Err(Error::dim(op, shape, &[axis]));
    }
    let mut out = shape.to_vec();
    out[axis] = 1;
    Ok(out)
}

fn reduce_axis(op: &'static str, a: &Tensor, axis: usize, f: impl Fn(&[f64]) -> f64) -> Result<Tensor> {
    let out_shape = reduced_shape(op, a.shape(), axis)?;
    let (rows, cols) = (a.numel() / a.cols(), a.cols());
    let data = if axis + 1 == a.rank() {
        (0..rows).map(|r| f(&a.data()[r * cols..(r + 1) * cols])).collect()
    } else {
        let mut column = vec![0.0; rows];
        (0..cols)
            .map(|c| {
                for r in 0..rows {
                    column[r] = a.data()[r * cols + c];
                }
                f(&column)
            })
            .collect()
    };
    Ok(Tensor::from_parts(out_shape, data))
}

/// Builds a tensor of `shape` whose entry at flat index `i` is
/// `f(i, axis_position, reduced_flat_index)`.
fn expand_axis(shape: &[usize], axis: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor {
    let cols = *shape.last().unwrap();
    let rows = shape.iter().product::<usize>() / cols;
    let last_axis = axis + 1 == shape.len();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if last_axis {
                data.push(f(i, c, r));
            } else {
                data.push(f(i, r, c));
            }
        }
    }
    Tensor::from_parts(shape.to_vec(), data)
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`; zeros when the node does not influence the root.
    pub fn get(&self, id: NodeId) -> Tensor {
        self.grads
            .get(id.0)
            .and_then(Option::as_ref)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        self.grads
            .get_mut(id.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    pub fn is_zero(&self, id: NodeId) -> bool {
        match self.grads.get(id.0).and_then(Option::as_ref) {
            Some(t) => t.data().iter().all(|&x| x == 0.0),
            None => true,
        }
    }
}
