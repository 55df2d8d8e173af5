use std::collections::BTreeMap;
use std::str::FromStr;

use super::{matmul_a_bt_into, matmul_at_b_into, matmul_into, Tensor};
use crate::error::{Error, Result};

/// Index of a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by [`Graph::apply`].
///
/// Beyond the arithmetic core the graph carries a few structural kinds the
/// model needs: segment pooling, row stacking, and two gradient-routing kinds
/// (`StopGradient`, `StraightThrough`) whose backward rule intentionally
/// disagrees with the forward derivative.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Subtract,
    Multiply,
    MatMul,
    Exp,
    Log,
    Tanh,
    Relu,
    Square,
    Sqrt,
    /// Sum over all elements, producing a scalar.
    Sum,
    /// Mean over all elements, producing a scalar.
    Mean,
    /// Repeats a single row `rows` times.
    BroadcastRow { rows: usize },
    GatherRows { indices: Vec<usize> },
    /// Concatenates matrices with equal row counts along the column axis.
    ConcatLast,
    /// Stacks matrices with equal column counts along the row axis.
    ConcatRows,
    /// Mean of consecutive row blocks of the given lengths.
    SegmentMean { lengths: Vec<usize> },
    Scale(f64),
    Clamp { min: f64, max: f64 },
    StopGradient,
    /// Forward value of the second input; gradient goes to the first input.
    StraightThrough,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Subtract => "subtract",
            OpKind::Multiply => "multiply",
            OpKind::MatMul => "matmul",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Square => "square",
            OpKind::Sqrt => "sqrt",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::BroadcastRow { .. } => "broadcast_row",
            OpKind::GatherRows { .. } => "gather_rows",
            OpKind::ConcatLast => "concat_last",
            OpKind::ConcatRows => "concat_rows",
            OpKind::SegmentMean { .. } => "segment_mean",
            OpKind::Scale(_) => "scale",
            OpKind::Clamp { .. } => "clamp",
            OpKind::StopGradient => "stop_gradient",
            OpKind::StraightThrough => "straight_through",
        }
    }

    fn blocks_gradient(&self) -> bool {
        matches!(self, OpKind::StopGradient | OpKind::StraightThrough)
    }
}

/// Parses parameter-free kinds by name.
impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "add" => OpKind::Add,
            "subtract" | "sub" => OpKind::Subtract,
            "multiply" | "mul" => OpKind::Multiply,
            "matmul" => OpKind::MatMul,
            "exp" => OpKind::Exp,
            "log" => OpKind::Log,
            "tanh" => OpKind::Tanh,
            "relu" => OpKind::Relu,
            "square" => OpKind::Square,
            "sqrt" => OpKind::Sqrt,
            "sum" => OpKind::Sum,
            "mean" => OpKind::Mean,
            "concat_last" => OpKind::ConcatLast,
            "concat_rows" => OpKind::ConcatRows,
            "stop_gradient" => OpKind::StopGradient,
            "straight_through" => OpKind::StraightThrough,
            other => return Err(Error::UnsupportedOperation(other.to_string())),
        })
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Option<OpKind>,
    inputs: Vec<NodeId>,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only computation graph. Inputs always precede the nodes that use
/// them, so node order is a topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    by_leaf: BTreeMap<NodeId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.by_leaf.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &[f64])> {
        self.by_leaf.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
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

    /// Adds a leaf; it is trainable iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let needs_grad = tensor.requires_grad();
        self.push(None, Vec::new(), tensor, needs_grad)
    }

    pub fn parameter(&mut self, tensor: Tensor) -> NodeId {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(Error::NodeLookup(id.0))
    }

    pub fn scalar_value(&self, id: NodeId) -> Result<f64> {
        self.value(id)?.item()
    }

    pub fn is_leaf(&self, id: NodeId) -> Result<bool> {
        self.node(id).map(|n| n.op.is_none())
    }

    pub fn op(&self, id: NodeId) -> Result<Option<&OpKind>> {
        self.node(id).map(|n| n.op.as_ref())
    }

    pub fn inputs(&self, id: NodeId) -> Result<&[NodeId]> {
        self.node(id).map(|n| n.inputs.as_slice())
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::NodeLookup(id.0))
    }

    fn push(&mut self, op: Option<OpKind>, inputs: Vec<NodeId>, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
        });
        id
    }

    /// Records `kind` applied to `inputs` and returns the new node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let values = inputs
            .iter()
            .map(|&id| self.value(id))
            .collect::<Result<Vec<_>>>()?;
        let out = forward(&kind, &values)?;
        let needs_grad = match kind {
            OpKind::StopGradient => false,
            OpKind::StraightThrough => self.nodes[inputs[0].0].needs_grad,
            _ => inputs.iter().any(|id| self.nodes[id.0].needs_grad),
        };
        Ok(self.push(Some(kind), inputs.to_vec(), out, needs_grad))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Subtract, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Multiply, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Exp, &[x])
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Log, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Tanh, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Square, &[x])
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sqrt, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mean, &[x])
    }

    pub fn broadcast_row(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        self.apply(OpKind::BroadcastRow { rows }, &[x])
    }

    pub fn gather_rows(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::GatherRows { indices }, &[x])
    }

    pub fn concat_last(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::ConcatLast, parts)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::ConcatRows, parts)
    }

    pub fn segment_mean(&mut self, x: NodeId, lengths: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::SegmentMean { lengths }, &[x])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale(factor), &[x])
    }

    pub fn clamp(&mut self, x: NodeId, min: f64, max: f64) -> Result<NodeId> {
        self.apply(OpKind::Clamp { min, max }, &[x])
    }

    pub fn stop_gradient(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::StopGradient, &[x])
    }

    /// Forward value of `quantized`, gradient routed to `pre`.
    pub fn straight_through(&mut self, pre: NodeId, quantized: NodeId) -> Result<NodeId> {
        self.apply(OpKind::StraightThrough, &[pre, quantized])
    }

    /// `x @ w + b` with `b` a single row broadcast over the rows of `x`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        let rows = self.value(xw)?.matrix_dims()?.0;
        let bb = if rows == 1 { b } else { self.broadcast_row(b, rows)? };
        self.add(xw, bb)
    }

    /// Gradients of the scalar `loss` with respect to every trainable leaf.
    /// Trainable leaves the loss does not reach get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let root = self.node(loss)?;
        if !root.value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                root.value.shape()
            )));
        }

        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoint[loss.0] = Some(vec![1.0]);
        let mut grads = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(g) = adjoint[idx].take() else {
                continue;
            };
            let Some(op) = &node.op else {
                if node.value.requires_grad() {
                    grads.by_leaf.insert(NodeId(idx), g);
                }
                continue;
            };
            if !node.needs_grad {
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            let wanted: Vec<bool> = node.inputs.iter().map(|id| self.nodes[id.0].needs_grad).collect();
            let input_grads = backward_rule(op, &inputs, &node.value, &g, &wanted);
            for ((id, want), ig) in node.inputs.iter().zip(wanted).zip(input_grads) {
                if !want {
                    continue;
                }
                if let Some(ig) = ig {
                    match &mut adjoint[id.0] {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, v)| *a += v),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.op.is_none() && node.value.requires_grad() {
                grads
                    .by_leaf
                    .entry(NodeId(idx))
                    .or_insert_with(|| vec![0.0; node.value.len()]);
            }
        }
        Ok(grads)
    }

    /// Leaves that reach `loss` through at least one gradient-blocking node
    /// (`StopGradient` or `StraightThrough`). For these, analytic gradients
    /// are not expected to match finite differences.
    pub fn blocked_leaves(&self, loss: NodeId) -> Result<Vec<NodeId>> {
        self.node(loss)?;
        let n = loss.0 + 1;
        let mut reaches = vec![false; n];
        let mut blocked = vec![false; n];
        reaches[loss.0] = true;
        for idx in (0..n).rev() {
            if !reaches[idx] {
                continue;
            }
            let node = &self.nodes[idx];
            let through_block = node.op.as_ref().is_some_and(OpKind::blocks_gradient);
            for id in &node.inputs {
                reaches[id.0] = true;
                blocked[id.0] |= blocked[idx] || through_block;
            }
        }
        Ok((0..n)
            .filter(|&i| blocked[i] && self.nodes[i].op.is_none())
            .map(NodeId)
            .collect())
    }
}

fn same_shape(kind: &OpKind, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{} needs equal shapes, got {:?} and {:?}",
            kind.name(),
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn arity(kind: &OpKind, inputs: &[&Tensor], expected: usize) -> Result<()> {
    if inputs.len() != expected {
        return Err(Error::contract(format!(
            "{} takes {expected} input(s), got {}",
            kind.name(),
            inputs.len()
        )));
    }
    Ok(())
}

fn map_unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.values().iter().map(|&v| f(v)).collect())
}

fn forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    use OpKind::*;
    match kind {
        Add | Subtract | Multiply | StraightThrough => {
            arity(kind, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            same_shape(kind, a, b)?;
            if matches!(kind, StraightThrough) {
                return Ok(Tensor::from_parts(b.shape().to_vec(), b.values().to_vec()));
            }
            let values = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| match kind {
                    Add => x + y,
                    Subtract => x - y,
                    _ => x * y,
                })
                .collect();
            Ok(Tensor::from_parts(a.shape().to_vec(), values))
        }
        MatMul => {
            arity(kind, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = rank2(kind, a)?;
            let (k2, n) = rank2(kind, b)?;
            if k != k2 {
                return Err(Error::dim(format!(
                    "matmul inner dimensions differ: [{m}, {k}] x [{k2}, {n}]"
                )));
            }
            let mut out = vec![0.0; m * n];
            matmul_into(a.values(), b.values(), &mut out, m, k, n);
            Ok(Tensor::from_parts(vec![m, n], out))
        }
        Exp | Log | Tanh | Relu | Square | Sqrt | Scale(_) | Clamp { .. } | StopGradient => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            Ok(match kind {
                Exp => map_unary(x, f64::exp),
                Log => map_unary(x, f64::ln),
                Tanh => map_unary(x, f64::tanh),
                Relu => map_unary(x, |v| if v > 0.0 { v } else { 0.0 }),
                Square => map_unary(x, |v| v * v),
                Sqrt => map_unary(x, f64::sqrt),
                Scale(c) => map_unary(x, |v| c * v),
                Clamp { min, max } => {
                    if min > max {
                        return Err(Error::contract(format!("clamp range [{min}, {max}] is empty")));
                    }
                    map_unary(x, |v| v.clamp(*min, *max))
                }
                _ => Tensor::from_parts(x.shape().to_vec(), x.values().to_vec()),
            })
        }
        Sum | Mean => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            let s: f64 = x.values().iter().sum();
            let v = if matches!(kind, Mean) { s / x.len() as f64 } else { s };
            Ok(Tensor::scalar(v))
        }
        BroadcastRow { rows } => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            let (r, c) = x.matrix_dims()?;
            if r != 1 || *rows == 0 {
                return Err(Error::dim(format!(
                    "broadcast_row needs a single row and rows >= 1, got shape {:?} to {rows} rows",
                    x.shape()
                )));
            }
            let mut out = Vec::with_capacity(rows * c);
            for _ in 0..*rows {
                out.extend_from_slice(x.values());
            }
            Ok(Tensor::from_parts(vec![*rows, c], out))
        }
        GatherRows { indices } => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            let (r, c) = rank2(kind, x)?;
            if indices.is_empty() {
                return Err(Error::dim("gather_rows needs at least one index"));
            }
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                if i >= r {
                    return Err(Error::dim(format!("gather_rows index {i} out of range for {r} rows")));
                }
                out.extend_from_slice(&x.values()[i * c..(i + 1) * c]);
            }
            Ok(Tensor::from_parts(vec![indices.len(), c], out))
        }
        ConcatLast => {
            if inputs.is_empty() {
                return Err(Error::contract("concat_last needs at least one input"));
            }
            let dims = inputs
                .iter()
                .map(|t| rank2(kind, t))
                .collect::<Result<Vec<_>>>()?;
            let rows = dims[0].0;
            if dims.iter().any(|d| d.0 != rows) {
                return Err(Error::dim(format!("concat_last row counts differ: {dims:?}")));
            }
            let total: usize = dims.iter().map(|d| d.1).sum();
            let mut out = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for (t, (_, c)) in inputs.iter().zip(&dims) {
                    out.extend_from_slice(&t.values()[i * c..(i + 1) * c]);
                }
            }
            Ok(Tensor::from_parts(vec![rows, total], out))
        }
        ConcatRows => {
            if inputs.is_empty() {
                return Err(Error::contract("concat_rows needs at least one input"));
            }
            let dims = inputs
                .iter()
                .map(|t| rank2(kind, t))
                .collect::<Result<Vec<_>>>()?;
            let cols = dims[0].1;
            if dims.iter().any(|d| d.1 != cols) {
                return Err(Error::dim(format!("concat_rows column counts differ: {dims:?}")));
            }
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut out = Vec::with_capacity(rows * cols);
            for t in inputs {
                out.extend_from_slice(t.values());
            }
            Ok(Tensor::from_parts(vec![rows, cols], out))
        }
        SegmentMean { lengths } => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            let (r, c) = rank2(kind, x)?;
            if lengths.is_empty() || lengths.contains(&0) || lengths.iter().sum::<usize>() != r {
                return Err(Error::dim(format!(
                    "segment lengths {lengths:?} do not partition {r} rows"
                )));
            }
            let mut out = vec![0.0; lengths.len() * c];
            let mut start = 0;
            for (s, &len) in lengths.iter().enumerate() {
                let acc = &mut out[s * c..(s + 1) * c];
                for row in start..start + len {
                    for (a, v) in acc.iter_mut().zip(&x.values()[row * c..(row + 1) * c]) {
                        *a += v;
                    }
                }
                let inv = 1.0 / len as f64;
                acc.iter_mut().for_each(|a| *a *= inv);
                start += len;
            }
            Ok(Tensor::from_parts(vec![lengths.len(), c], out))
        }
    }
}

fn rank2(kind: &OpKind, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::dim(format!(
            "{} needs rank-2 inputs, got shape {other:?}",
            kind.name()
        ))),
    }
}

/// Adjoints for each input given the output adjoint `g`. Entries for inputs
/// with `wanted == false` may be `None`.
fn backward_rule(
    kind: &OpKind,
    inputs: &[&Tensor],
    out: &Tensor,
    g: &[f64],
    wanted: &[bool],
) -> Vec<Option<Vec<f64>>> {
    use OpKind::*;
    let zip_map = |x: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        x.values().iter().zip(g).map(|(&v, &gv)| f(v, gv)).collect()
    };
    match kind {
        Add => vec![Some(g.to_vec()), Some(g.to_vec())],
        Subtract => vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
        Multiply => vec![
            wanted[0].then(|| zip_map(inputs[1], &|b, gv| gv * b)),
            wanted[1].then(|| zip_map(inputs[0], &|a, gv| gv * a)),
        ],
        MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let da = wanted[0].then(|| {
                let mut d = vec![0.0; m * k];
                matmul_a_bt_into(g, b.values(), &mut d, m, k, n);
                d
            });
            let db = wanted[1].then(|| {
                let mut d = vec![0.0; k * n];
                matmul_at_b_into(a.values(), g, &mut d, m, k, n);
                d
            });
            vec![da, db]
        }
        Exp => vec![Some(out.values().iter().zip(g).map(|(y, gv)| gv * y).collect())],
        Log => vec![Some(zip_map(inputs[0], &|x, gv| gv / x))],
        Tanh => vec![Some(out.values().iter().zip(g).map(|(y, gv)| gv * (1.0 - y * y)).collect())],
        Relu => vec![Some(zip_map(inputs[0], &|x, gv| if x > 0.0 { gv } else { 0.0 }))],
        Square => vec![Some(zip_map(inputs[0], &|x, gv| 2.0 * x * gv))],
        // Subgradient 0 where the output is exactly 0.
        Sqrt => vec![Some(
            out.values()
                .iter()
                .zip(g)
                .map(|(&y, gv)| if y > 0.0 { gv * 0.5 / y } else { 0.0 })
                .collect(),
        )],
        Scale(c) => vec![Some(g.iter().map(|gv| c * gv).collect())],
        Clamp { min, max } => vec![Some(zip_map(inputs[0], &|x, gv| {
            if x >= *min && x <= *max {
                gv
            } else {
                0.0
            }
        }))],
        StopGradient => vec![None],
        StraightThrough => vec![Some(g.to_vec()), None],
        Sum => vec![Some(vec![g[0]; inputs[0].len()])],
        Mean => {
            let n = inputs[0].len();
            vec![Some(vec![g[0] / n as f64; n])]
        }
        BroadcastRow { .. } => {
            let c = inputs[0].len();
            let mut d = vec![0.0; c];
            for row in g.chunks(c) {
                d.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            vec![Some(d)]
        }
        GatherRows { indices } => {
            let x = inputs[0];
            let c = x.shape()[1];
            let mut d = vec![0.0; x.len()];
            for (row, &i) in g.chunks(c).zip(indices) {
                d[i * c..(i + 1) * c]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(a, v)| *a += v);
            }
            vec![Some(d)]
        }
        ConcatLast => {
            let rows = out.shape()[0];
            let total = out.shape()[1];
            let mut offset = 0;
            let mut result = Vec::with_capacity(inputs.len());
            for (t, want) in inputs.iter().zip(wanted) {
                let c = t.shape()[1];
                if *want {
                    let mut d = Vec::with_capacity(rows * c);
                    for i in 0..rows {
                        d.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                    }
                    result.push(Some(d));
                } else {
                    result.push(None);
                }
                offset += c;
            }
            result
        }
        ConcatRows => {
            let mut offset = 0;
            inputs
                .iter()
                .zip(wanted)
                .map(|(t, want)| {
                    let n = t.len();
                    let d = want.then(|| g[offset..offset + n].to_vec());
                    offset += n;
                    d
                })
                .collect()
        }
        SegmentMean { lengths } => {
            let c = inputs[0].shape()[1];
            let mut d = Vec::with_capacity(inputs[0].len());
            for (s, &len) in lengths.iter().enumerate() {
                let inv = 1.0 / len as f64;
                let gs = &g[s * c..(s + 1) * c];
                for _ in 0..len {
                    d.extend(gs.iter().map(|v| v * inv));
                }
            }
            vec![Some(d)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let a = g.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let eye = g.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let p = g.matmul(a, eye).unwrap();
        assert_eq!(g.value(p).unwrap().values(), &[1.0, 2.0, 3.0, 4.0]);

        let r = g.constant(mat(&[&[1.0, 2.0]]));
        let c = g.constant(mat(&[&[3.0], &[4.0]]));
        let d = g.matmul(r, c).unwrap();
        assert_eq!(g.value(d).unwrap().shape(), &[1, 1]);
        assert_eq!(g.scalar_value(d).unwrap(), 11.0);
    }

    #[test]
    fn add_zeros_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[3], vec![1.5, -2.0, 0.25]).unwrap());
        let z = g.constant(Tensor::zeros(&[3]).unwrap());
        let y = g.add(x, z).unwrap();
        assert_eq!(g.value(y).unwrap().values(), g.value(x).unwrap().values());
    }

    #[test]
    fn shape_errors_are_descriptive() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]).unwrap());
        let b = g.constant(Tensor::zeros(&[2, 3]).unwrap());
        let err = g.matmul(a, b).unwrap_err();
        assert!(matches!(err, Error::Dimension(ref m) if m.contains("[2, 3] x [2, 3]")));
        let c = g.constant(Tensor::zeros(&[3]).unwrap());
        assert!(matches!(g.add(a, c), Err(Error::Dimension(_))));
        assert!(matches!("softmax".parse::<OpKind>(), Err(Error::UnsupportedOperation(_))));
        assert!(matches!(g.value(NodeId(99)), Err(Error::NodeLookup(99))));
    }

    #[test]
    fn stop_gradient_semantics() {
        let mut g = Graph::new();
        let x = g.parameter(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let s = g.stop_gradient(x).unwrap();
        assert_eq!(g.value(s).unwrap().values(), &[1.0, 2.0, 3.0]);
        let p = g.mul(s, x).unwrap();
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 2.0, 3.0]);

        let mut g = Graph::new();
        let x = g.parameter(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let s = g.stop_gradient(x).unwrap();
        let loss = g.sum(s).unwrap();
        assert_eq!(g.backward(loss).unwrap().get(x).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn analytic_backward_cases() {
        let mut g = Graph::new();
        let x = g.parameter(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        assert_eq!(g.backward(loss).unwrap().get(x).unwrap(), &[2.0, 4.0, 6.0]);

        let mut g = Graph::new();
        let x = g.parameter(Tensor::new(&[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let loss = g.mean(x).unwrap();
        assert_eq!(g.backward(loss).unwrap().get(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.parameter(Tensor::zeros(&[2]).unwrap());
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn sqrt_gradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.parameter(Tensor::zeros(&[2]).unwrap());
        let sq = g.square(x).unwrap();
        let s = g.sum(sq).unwrap();
        let r = g.sqrt(s).unwrap();
        assert_eq!(g.backward(r).unwrap().get(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn straight_through_routes_to_first_input() {
        let mut g = Graph::new();
        let z = g.parameter(Tensor::new(&[1, 2], vec![0.9, 0.8]).unwrap());
        let e = g.parameter(Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap());
        let q = g.straight_through(z, e).unwrap();
        assert_eq!(g.value(q).unwrap().values(), &[1.0, 1.0]);
        let w = g.constant(Tensor::new(&[1, 2], vec![3.0, -1.0]).unwrap());
        let p = g.mul(q, w).unwrap();
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(z).unwrap(), &[3.0, -1.0]);
        assert_eq!(grads.get(e).unwrap(), &[0.0, 0.0]);
        let blocked = g.blocked_leaves(loss).unwrap();
        assert_eq!(blocked, vec![z, e]);
    }

    #[test]
    fn structural_ops() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let gathered = g.gather_rows(x, vec![2, 0, 2]).unwrap();
        assert_eq!(g.value(gathered).unwrap().values(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let seg = g.segment_mean(x, vec![2, 1]).unwrap();
        assert_eq!(g.value(seg).unwrap().values(), &[2.0, 3.0, 5.0, 6.0]);
        let cat = g.concat_last(&[x, x]).unwrap();
        assert_eq!(g.value(cat).unwrap().shape(), &[3, 4]);
        assert_eq!(g.value(cat).unwrap().row_slice(1).unwrap(), &[3.0, 4.0, 3.0, 4.0]);
        let rows = g.concat_rows(&[x, seg]).unwrap();
        assert_eq!(g.value(rows).unwrap().shape(), &[5, 2]);
        let r = g.constant(mat(&[&[7.0, 8.0]]));
        let b = g.broadcast_row(r, 3).unwrap();
        assert_eq!(g.value(b).unwrap().values(), &[7.0, 8.0, 7.0, 8.0, 7.0, 8.0]);
        assert!(g.gather_rows(x, vec![3]).is_err());
        assert!(g.segment_mean(x, vec![1, 1]).is_err());
    }
}
