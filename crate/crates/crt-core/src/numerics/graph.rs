//! Define-by-run reverse-mode tape. A `Graph` is built per batch: every op
//! appends a node holding its computed value, `backward` walks the tape once
//! in reverse id order. Op construction validates shapes and rejects
//! non-finite outputs immediately, so a NaN surfaces at the op that made it.

use crate::error::{CrtError, Result};
use crate::numerics::kernels;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Conv1d { input: NodeId, weight: NodeId, bias: NodeId },
    LayerNorm { input: NodeId, gamma: NodeId, beta: NodeId },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Gelu(NodeId),
    Relu(NodeId),
    MeanAll(NodeId),
    SumAll(NodeId),
    MeanLast(NodeId),
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { input: NodeId, axis: usize, start: usize },
    Transpose(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Power(NodeId, f64),
    CosineRows(NodeId, NodeId),
    GatherRows { input: NodeId, indices: Vec<usize> },
    Reshape(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Gelu(..) => "gelu",
            Op::Relu(..) => "relu",
            Op::MeanAll(..) => "mean_all",
            Op::SumAll(..) => "sum_all",
            Op::MeanLast(..) => "mean_last",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(..) => "transpose",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Power(..) => "power",
            Op::CosineRows(..) => "cosine_similarity",
            Op::GatherRows { .. } => "gather_rows",
            Op::Reshape(..) => "reshape",
        }
    }

    fn inputs(&self, out: &mut Vec<usize>) {
        out.clear();
        match self {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b)
            | Op::CosineRows(a, b) => {
                out.push(a.0);
                out.push(b.0);
            }
            Op::Scale(a, _) | Op::AddScalar(a) | Op::Power(a, _) => out.push(a.0),
            Op::Conv1d { input, weight, bias } => {
                out.push(input.0);
                out.push(weight.0);
                out.push(bias.0);
            }
            Op::LayerNorm { input, gamma, beta } => {
                out.push(input.0);
                out.push(gamma.0);
                out.push(beta.0);
            }
            Op::Softmax(a) | Op::LogSoftmax(a) | Op::Gelu(a) | Op::Relu(a) | Op::MeanAll(a)
            | Op::SumAll(a) | Op::MeanLast(a) | Op::Transpose(a) | Op::Exp(a) | Op::Log(a)
            | Op::Reshape(a) => out.push(a.0),
            Op::Concat { inputs, .. } => out.extend(inputs.iter().map(|n| n.0)),
            Op::Slice { input, .. } => out.push(input.0),
            Op::GatherRows { input, .. } => out.push(input.0),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
    /// Cached per-row statistics some backward rules reuse
    /// (layer_norm: mean,rstd; cosine: dot,|u|,|v|).
    aux: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. node `id`, if it received one.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Result<NodeId> {
        self.push(Op::Leaf, value, needs_grad, Vec::new())
    }

    /// Leaf that never receives a gradient (targets, masks, selectors).
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool, aux: Vec<f64>) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(CrtError::NonFinite { context: format!("op {}", op.name()) });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, needs_grad, aux });
        Ok(id)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|n| self.nodes[n.0].needs_grad)
    }

    fn shape_err(&self, op: &'static str, a: NodeId, b: NodeId) -> CrtError {
        CrtError::ShapeMismatch {
            op,
            lhs: self.nodes[a.0].value.shape().to_vec(),
            rhs: self.nodes[b.0].value.shape().to_vec(),
        }
    }

    // ---- elementwise and broadcast ----

    /// a + b. Shapes must match, or b may be a vector / single row broadcast
    /// over the rows of a rank-2 a.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = va.clone();
        if va.shape() == vb.shape() {
            for (o, x) in out.data_mut().iter_mut().zip(vb.data()) {
                *o += x;
            }
        } else if Self::row_broadcast(va, vb) {
            let c = *va.shape().last().unwrap();
            for row in out.data_mut().chunks_mut(c) {
                for (o, x) in row.iter_mut().zip(vb.data()) {
                    *o += x;
                }
            }
        } else {
            return Err(self.shape_err("add", a, b));
        }
        let needs = self.needs(&[a, b]);
        self.push(Op::Add(a, b), out, needs, Vec::new())
    }

    fn row_broadcast(a: &Tensor, b: &Tensor) -> bool {
        a.rank() == 2
            && b.numel() == *a.shape().last().unwrap()
            && (b.rank() == 1 || (b.rank() == 2 && b.shape()[0] == 1))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(self.shape_err("sub", a, b));
        }
        let mut out = va.clone();
        for (o, x) in out.data_mut().iter_mut().zip(vb.data()) {
            *o -= x;
        }
        let needs = self.needs(&[a, b]);
        self.push(Op::Sub(a, b), out, needs, Vec::new())
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(self.shape_err("mul", a, b));
        }
        let mut out = va.clone();
        for (o, x) in out.data_mut().iter_mut().zip(vb.data()) {
            *o *= x;
        }
        let needs = self.needs(&[a, b]);
        self.push(Op::Mul(a, b), out, needs, Vec::new())
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data_mut() {
            *o *= c;
        }
        let needs = self.needs(&[a]);
        self.push(Op::Scale(a, c), out, needs, Vec::new())
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data_mut() {
            *o += c;
        }
        let needs = self.needs(&[a]);
        self.push(Op::AddScalar(a), out, needs, Vec::new())
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data_mut() {
            *o = o.exp();
        }
        let needs = self.needs(&[a]);
        self.push(Op::Exp(a), out, needs, Vec::new())
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if va.data().iter().any(|&x| x <= 0.0) {
            return Err(CrtError::InvalidArgument {
                op: "log",
                reason: "input must be strictly positive".into(),
            });
        }
        let mut out = va.clone();
        for o in out.data_mut() {
            *o = o.ln();
        }
        let needs = self.needs(&[a]);
        self.push(Op::Log(a), out, needs, Vec::new())
    }

    /// Elementwise x^p for a fixed exponent. Fractional p requires x >= 0.
    pub fn power(&mut self, a: NodeId, p: f64) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if p.fract() != 0.0 && va.data().iter().any(|&x| x < 0.0) {
            return Err(CrtError::InvalidArgument {
                op: "power",
                reason: format!("negative base with fractional exponent {p}"),
            });
        }
        let mut out = va.clone();
        for o in out.data_mut() {
            *o = o.powf(p);
        }
        let needs = self.needs(&[a]);
        self.push(Op::Power(a, p), out, needs, Vec::new())
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data_mut() {
            *o = kernels::tanh_gelu(*o);
        }
        let needs = self.needs(&[a]);
        self.push(Op::Gelu(a), out, needs, Vec::new())
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data_mut() {
            *o = o.max(0.0);
        }
        let needs = self.needs(&[a]);
        self.push(Op::Relu(a), out, needs, Vec::new())
    }

    // ---- reductions ----

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let m = va.data().iter().sum::<f64>() / va.numel() as f64;
        let needs = self.needs(&[a]);
        self.push(Op::MeanAll(a), Tensor::scalar(m), needs, Vec::new())
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.nodes[a.0].value.data().iter().sum::<f64>();
        let needs = self.needs(&[a]);
        self.push(Op::SumAll(a), Tensor::scalar(s), needs, Vec::new())
    }

    /// Mean over the last axis: (.., L) -> (..). Rank-1 input yields a scalar.
    pub fn mean_last(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let last = *va.shape().last().unwrap();
        let rows = va.numel() / last;
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            data.push(va.data()[r * last..(r + 1) * last].iter().sum::<f64>() / last as f64);
        }
        let shape = if va.rank() == 1 {
            vec![1]
        } else {
            va.shape()[..va.rank() - 1].to_vec()
        };
        let needs = self.needs(&[a]);
        self.push(Op::MeanLast(a), Tensor::new(shape, data)?, needs, Vec::new())
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(self.shape_err("matmul", a, b));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = Tensor::zeros(vec![m, n]);
        kernels::matmul_nn_acc(va.data(), vb.data(), out.data_mut(), m, k, n);
        let needs = self.needs(&[a, b]);
        self.push(Op::MatMul(a, b), out, needs, Vec::new())
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if va.rank() != 2 {
            return Err(CrtError::InvalidArgument {
                op: "transpose",
                reason: format!("rank-2 required, got {:?}", va.shape()),
            });
        }
        let (r, c) = (va.shape()[0], va.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = va.data()[i * c + j];
            }
        }
        let needs = self.needs(&[a]);
        self.push(Op::Transpose(a), Tensor::new(vec![c, r], data)?, needs, Vec::new())
    }

    /// input (b, c_in, l) * weight (c_out, c_in, kw) + bias (c_out), zero-padded
    /// to the same length, stride 1, odd kw.
    pub fn conv1d(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vi, vw, vb) = (
            &self.nodes[input.0].value,
            &self.nodes[weight.0].value,
            &self.nodes[bias.0].value,
        );
        let ok = vi.rank() == 3
            && vw.rank() == 3
            && vb.rank() == 1
            && vw.shape()[1] == vi.shape()[1]
            && vb.shape()[0] == vw.shape()[0]
            && vw.shape()[2] % 2 == 1;
        if !ok {
            return Err(CrtError::InvalidArgument {
                op: "conv1d",
                reason: format!(
                    "input {:?}, weight {:?}, bias {:?} (need (b,ci,l), (co,ci,odd k), (co))",
                    vi.shape(),
                    vw.shape(),
                    vb.shape()
                ),
            });
        }
        let (b, c_in, l) = (vi.shape()[0], vi.shape()[1], vi.shape()[2]);
        let (c_out, kw) = (vw.shape()[0], vw.shape()[2]);
        let mut out = Tensor::zeros(vec![b, c_out, l]);
        kernels::conv1d_acc(vi.data(), vw.data(), vb.data(), out.data_mut(), b, c_in, l, c_out, kw);
        let needs = self.needs(&[input, weight, bias]);
        self.push(Op::Conv1d { input, weight, bias }, out, needs, Vec::new())
    }

    /// Row-wise layer normalization over the last axis of a rank-2 input,
    /// with per-feature gain and shift.
    pub fn layer_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let (vi, vg, vb) = (
            &self.nodes[input.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
        );
        let c = *vi.shape().last().unwrap();
        if vi.rank() != 2 || vg.shape() != [c] || vb.shape() != [c] {
            return Err(CrtError::InvalidArgument {
                op: "layer_norm",
                reason: format!(
                    "input {:?}, gamma {:?}, beta {:?} (need (r,c), (c), (c))",
                    vi.shape(),
                    vg.shape(),
                    vb.shape()
                ),
            });
        }
        let rows = vi.shape()[0];
        let mut out = vi.clone();
        let mut aux = Vec::with_capacity(2 * rows);
        for r in 0..rows {
            let row = &mut out.data_mut()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for (x, (&g, &b2)) in row.iter_mut().zip(vg.data().iter().zip(vb.data())) {
                *x = g * ((*x - mean) * rstd) + b2;
            }
            aux.push(mean);
            aux.push(rstd);
        }
        let needs = self.needs(&[input, gamma, beta]);
        self.push(Op::LayerNorm { input, gamma, beta }, out, needs, aux)
    }

    // ---- row-wise nonlinear maps ----

    fn rows_last(t: &Tensor) -> (usize, usize) {
        let last = *t.shape().last().unwrap();
        (t.numel() / last, last)
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let (rows, last) = Self::rows_last(va);
        let mut out = va.clone();
        for r in 0..rows {
            let row = &mut out.data_mut()[r * last..(r + 1) * last];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let needs = self.needs(&[a]);
        self.push(Op::Softmax(a), out, needs, Vec::new())
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let (rows, last) = Self::rows_last(va);
        let mut out = va.clone();
        for r in 0..rows {
            let row = &mut out.data_mut()[r * last..(r + 1) * last];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = row.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
            for x in row.iter_mut() {
                *x -= z;
            }
        }
        let needs = self.needs(&[a]);
        self.push(Op::LogSoftmax(a), out, needs, Vec::new())
    }

    /// Row-wise cosine similarity of two equal-shape rank-2 (or rank-1)
    /// inputs: (r, c) x (r, c) -> (r). Zero-norm rows are an error.
    pub fn cosine_similarity(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() || va.rank() > 2 {
            return Err(self.shape_err("cosine_similarity", a, b));
        }
        let (rows, c) = Self::rows_last(va);
        let mut data = Vec::with_capacity(rows);
        let mut aux = Vec::with_capacity(3 * rows);
        for r in 0..rows {
            let u = &va.data()[r * c..(r + 1) * c];
            let v = &vb.data()[r * c..(r + 1) * c];
            let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu < 1e-12 || nv < 1e-12 {
                return Err(CrtError::InvalidArgument {
                    op: "cosine_similarity",
                    reason: format!("zero-norm vector at row {r}"),
                });
            }
            data.push(dot / (nu * nv));
            aux.extend_from_slice(&[dot, nu, nv]);
        }
        let needs = self.needs(&[a, b]);
        self.push(Op::CosineRows(a, b), Tensor::from_vec(data), needs, aux)
    }

    // ---- structural ops ----

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(CrtError::InvalidArgument { op: "concat", reason: "no inputs".into() });
        }
        let rank = self.nodes[inputs[0].0].value.rank();
        if axis >= rank || rank > 2 {
            return Err(CrtError::InvalidArgument {
                op: "concat",
                reason: format!("axis {axis} on rank {rank}"),
            });
        }
        for &n in inputs {
            let s = self.nodes[n.0].value.shape();
            let s0 = self.nodes[inputs[0].0].value.shape();
            if s.len() != rank
                || (0..rank).any(|d| d != axis && s[d] != s0[d])
            {
                return Err(self.shape_err("concat", inputs[0], n));
            }
        }
        let total_axis: usize =
            inputs.iter().map(|n| self.nodes[n.0].value.shape()[axis]).sum();
        let mut shape = self.nodes[inputs[0].0].value.shape().to_vec();
        shape[axis] = total_axis;
        let out = if rank == 1 || axis == 0 {
            let mut data = Vec::with_capacity(shape.iter().product());
            for &n in inputs {
                data.extend_from_slice(self.nodes[n.0].value.data());
            }
            Tensor::new(shape, data)?
        } else {
            // rank 2, axis 1: interleave row fragments
            let rows = shape[0];
            let cols = shape[1];
            let mut data = vec![0.0; rows * cols];
            let mut col0 = 0;
            for &n in inputs {
                let v = &self.nodes[n.0].value;
                let c = v.shape()[1];
                for r in 0..rows {
                    data[r * cols + col0..r * cols + col0 + c]
                        .copy_from_slice(&v.data()[r * c..(r + 1) * c]);
                }
                col0 += c;
            }
            Tensor::new(shape, data)?
        };
        let needs = self.needs(inputs);
        self.push(Op::Concat { inputs: inputs.to_vec(), axis }, out, needs, Vec::new())
    }

    pub fn slice(&mut self, input: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let vi = &self.nodes[input.0].value;
        let rank = vi.rank();
        if axis >= rank || start >= end || end > vi.shape()[axis] {
            return Err(CrtError::InvalidArgument {
                op: "slice",
                reason: format!("range {start}..{end} on axis {axis} of {:?}", vi.shape()),
            });
        }
        let outer: usize = vi.shape()[..axis].iter().product();
        let inner: usize = vi.shape()[axis + 1..].iter().product();
        let span = vi.shape()[axis];
        let take = end - start;
        let mut data = Vec::with_capacity(outer * take * inner);
        for o in 0..outer {
            let base = o * span * inner + start * inner;
            data.extend_from_slice(&vi.data()[base..base + take * inner]);
        }
        let mut shape = vi.shape().to_vec();
        shape[axis] = take;
        let needs = self.needs(&[input]);
        self.push(Op::Slice { input, axis, start }, Tensor::new(shape, data)?, needs, Vec::new())
    }

    /// Select rows of a rank-2 input by index; duplicates allowed.
    pub fn gather_rows(&mut self, input: NodeId, indices: &[usize]) -> Result<NodeId> {
        let vi = &self.nodes[input.0].value;
        if vi.rank() != 2 {
            return Err(CrtError::InvalidArgument {
                op: "gather_rows",
                reason: format!("rank-2 required, got {:?}", vi.shape()),
            });
        }
        let (rows, c) = (vi.shape()[0], vi.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(CrtError::InvalidArgument {
                op: "gather_rows",
                reason: format!("index {bad} out of {rows} rows"),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&vi.data()[i * c..(i + 1) * c]);
        }
        let needs = self.needs(&[input]);
        self.push(
            Op::GatherRows { input, indices: indices.to_vec() },
            Tensor::new(vec![indices.len(), c], data)?,
            needs,
            Vec::new(),
        )
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.nodes[input.0].value.clone().reshaped(shape)?;
        let needs = self.needs(&[input]);
        self.push(Op::Reshape(input), out, needs, Vec::new())
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Each reachable node is visited exactly
    /// once, in reverse construction order (which is a reverse topological
    /// order by construction: ops only reference earlier ids).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(CrtError::InvalidArgument {
                op: "backward",
                reason: format!("loss must be scalar, got {:?}", self.nodes[loss.0].value.shape()),
            });
        }
        let n = self.nodes.len();
        let mut reachable = vec![false; n];
        let mut stack = vec![loss.0];
        let mut ids = Vec::new();
        while let Some(id) = stack.pop() {
            if reachable[id] {
                continue;
            }
            reachable[id] = true;
            self.nodes[id].op.inputs(&mut ids);
            for &i in &ids {
                if i >= id {
                    return Err(CrtError::InvalidArgument {
                        op: "backward",
                        reason: format!("node {id} references later node {i}: graph is not a DAG"),
                    });
                }
                if !reachable[i] {
                    stack.push(i);
                }
            }
        }

        self.grads = (0..n).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !reachable[id] || !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g_out) = self.grads[id].take() else { continue };
            self.propagate(id, &g_out)?;
            self.grads[id] = Some(g_out);
        }
        Ok(())
    }

    fn propagate(&mut self, id: usize, g: &[f64]) -> Result<()> {
        let Graph { nodes, grads } = self;

        fn buf<'g>(
            nodes: &[Node],
            grads: &'g mut [Option<Vec<f64>>],
            id: NodeId,
        ) -> &'g mut [f64] {
            let numel = nodes[id.0].value.numel();
            grads[id.0].get_or_insert_with(|| vec![0.0; numel])
        }
        let wants = |n: NodeId| nodes[n.0].needs_grad;

        match &nodes[id].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                if wants(a) {
                    for (o, x) in buf(nodes, grads, a).iter_mut().zip(g) {
                        *o += x;
                    }
                }
                if wants(b) {
                    let vb_numel = nodes[b.0].value.numel();
                    if vb_numel == g.len() {
                        for (o, x) in buf(nodes, grads, b).iter_mut().zip(g) {
                            *o += x;
                        }
                    } else {
                        // row broadcast: sum gradient over rows
                        let bb = buf(nodes, grads, b);
                        for row in g.chunks(vb_numel) {
                            for (o, x) in bb.iter_mut().zip(row) {
                                *o += x;
                            }
                        }
                    }
                }
            }
            &Op::Sub(a, b) => {
                if wants(a) {
                    for (o, x) in buf(nodes, grads, a).iter_mut().zip(g) {
                        *o += x;
                    }
                }
                if wants(b) {
                    for (o, x) in buf(nodes, grads, b).iter_mut().zip(g) {
                        *o -= x;
                    }
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    let vb = nodes[b.0].value.data();
                    for ((o, x), y) in buf(nodes, grads, a).iter_mut().zip(g).zip(vb) {
                        *o += x * y;
                    }
                }
                if wants(b) {
                    let va = nodes[a.0].value.data();
                    for ((o, x), y) in buf(nodes, grads, b).iter_mut().zip(g).zip(va) {
                        *o += x * y;
                    }
                }
            }
            &Op::Scale(a, c) => {
                if wants(a) {
                    for (o, x) in buf(nodes, grads, a).iter_mut().zip(g) {
                        *o += c * x;
                    }
                }
            }
            &Op::AddScalar(a) | &Op::Reshape(a) => {
                if wants(a) {
                    for (o, x) in buf(nodes, grads, a).iter_mut().zip(g) {
                        *o += x;
                    }
                }
            }
            &Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n2 = nodes[b.0].value.shape()[1];
                if wants(a) {
                    let vb = nodes[b.0].value.data();
                    kernels::matmul_nt_acc(g, vb, buf(nodes, grads, a), m, n2, k);
                }
                if wants(b) {
                    let va = nodes[a.0].value.data();
                    kernels::matmul_tn_acc(va, g, buf(nodes, grads, b), m, k, n2);
                }
            }
            &Op::Conv1d { input, weight, bias } => {
                let vi = &nodes[input.0].value;
                let vw = &nodes[weight.0].value;
                let (b, c_in, l) = (vi.shape()[0], vi.shape()[1], vi.shape()[2]);
                let (c_out, kw) = (vw.shape()[0], vw.shape()[2]);
                let mut d_in = if wants(input) { vec![0.0; vi.numel()] } else { Vec::new() };
                let mut d_w = if wants(weight) { vec![0.0; vw.numel()] } else { Vec::new() };
                let mut d_b = if wants(bias) { vec![0.0; c_out] } else { Vec::new() };
                kernels::conv1d_backward(
                    vi.data(), vw.data(), g, &mut d_in, &mut d_w, &mut d_b, b, c_in, l, c_out, kw,
                );
                if wants(input) {
                    for (o, x) in buf(nodes, grads, input).iter_mut().zip(&d_in) {
                        *o += x;
                    }
                }
                if wants(weight) {
                    for (o, x) in buf(nodes, grads, weight).iter_mut().zip(&d_w) {
                        *o += x;
                    }
                }
                if wants(bias) {
                    for (o, x) in buf(nodes, grads, bias).iter_mut().zip(&d_b) {
                        *o += x;
                    }
                }
            }
            &Op::LayerNorm { input, gamma, beta } => {
                let vi = nodes[input.0].value.data();
                let c = *nodes[input.0].value.shape().last().unwrap();
                let rows = nodes[input.0].value.shape()[0];
                let vg = nodes[gamma.0].value.data();
                let aux = &nodes[id].aux;
                if wants(input) {
                    let bb = buf(nodes, grads, input);
                    for r in 0..rows {
                        let (mean, rstd) = (aux[2 * r], aux[2 * r + 1]);
                        let x = &vi[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let xh = (x[j] - mean) * rstd;
                            let dxh = gr[j] * vg[j];
                            m1 += dxh;
                            m2 += dxh * xh;
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        let dr = &mut bb[r * c..(r + 1) * c];
                        for j in 0..c {
                            let xh = (x[j] - mean) * rstd;
                            dr[j] += rstd * (gr[j] * vg[j] - m1 - xh * m2);
                        }
                    }
                }
                if wants(gamma) {
                    let bb = buf(nodes, grads, gamma);
                    for r in 0..rows {
                        let (mean, rstd) = (aux[2 * r], aux[2 * r + 1]);
                        for j in 0..c {
                            let xh = (vi[r * c + j] - mean) * rstd;
                            bb[j] += g[r * c + j] * xh;
                        }
                    }
                }
                if wants(beta) {
                    let bb = buf(nodes, grads, beta);
                    for r in 0..rows {
                        for j in 0..c {
                            bb[j] += g[r * c + j];
                        }
                    }
                }
            }
            &Op::Softmax(a) => {
                if wants(a) {
                    let y = nodes[id].value.data();
                    let last = *nodes[id].value.shape().last().unwrap();
                    let bb = buf(nodes, grads, a);
                    for (r, (y_row, g_row)) in y.chunks(last).zip(g.chunks(last)).enumerate() {
                        let dot: f64 = y_row.iter().zip(g_row).map(|(a2, b2)| a2 * b2).sum();
                        let out = &mut bb[r * last..(r + 1) * last];
                        for j in 0..last {
                            out[j] += y_row[j] * (g_row[j] - dot);
                        }
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                if wants(a) {
                    let y = nodes[id].value.data();
                    let last = *nodes[id].value.shape().last().unwrap();
                    let bb = buf(nodes, grads, a);
                    for (r, (y_row, g_row)) in y.chunks(last).zip(g.chunks(last)).enumerate() {
                        let gsum: f64 = g_row.iter().sum();
                        let out = &mut bb[r * last..(r + 1) * last];
                        for j in 0..last {
                            out[j] += g_row[j] - y_row[j].exp() * gsum;
                        }
                    }
                }
            }
            &Op::Gelu(a) => {
                if wants(a) {
                    let x = nodes[a.0].value.data();
                    for ((o, gx), xv) in buf(nodes, grads, a).iter_mut().zip(g).zip(x) {
                        *o += gx * kernels::tanh_gelu_derivative(*xv);
                    }
                }
            }
            &Op::Relu(a) => {
                if wants(a) {
                    let x = nodes[a.0].value.data();
                    for ((o, gx), xv) in buf(nodes, grads, a).iter_mut().zip(g).zip(x) {
                        if *xv > 0.0 {
                            *o += gx;
                        }
                    }
                }
            }
            &Op::MeanAll(a) => {
                if wants(a) {
                    let gv = g[0] / nodes[a.0].value.numel() as f64;
                    for o in buf(nodes, grads, a).iter_mut() {
                        *o += gv;
                    }
                }
            }
            &Op::SumAll(a) => {
                if wants(a) {
                    for o in buf(nodes, grads, a).iter_mut() {
                        *o += g[0];
                    }
                }
            }
            &Op::MeanLast(a) => {
                if wants(a) {
                    let last = *nodes[a.0].value.shape().last().unwrap();
                    let bb = buf(nodes, grads, a);
                    for (r, gv) in g.iter().enumerate() {
                        let gvl = gv / last as f64;
                        for o in &mut bb[r * last..(r + 1) * last] {
                            *o += gvl;
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let out_shape = nodes[id].value.shape();
                if *axis == 0 || out_shape.len() == 1 {
                    let mut start = 0;
                    for &n in inputs {
                        let numel = nodes[n.0].value.numel();
                        if wants(n) {
                            for (o, x) in
                                buf(nodes, grads, n).iter_mut().zip(&g[start..start + numel])
                            {
                                *o += x;
                            }
                        }
                        start += numel;
                    }
                } else {
                    let rows = out_shape[0];
                    let cols = out_shape[1];
                    let mut col0 = 0;
                    for &n in inputs {
                        let c = nodes[n.0].value.shape()[1];
                        if wants(n) {
                            let bb = buf(nodes, grads, n);
                            for r in 0..rows {
                                for j in 0..c {
                                    bb[r * c + j] += g[r * cols + col0 + j];
                                }
                            }
                        }
                        col0 += c;
                    }
                }
            }
            &Op::Slice { input, axis, start } => {
                if wants(input) {
                    let shape = nodes[input.0].value.shape();
                    let outer: usize = shape[..axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let span = shape[axis];
                    let take = nodes[id].value.shape()[axis];
                    let bb = buf(nodes, grads, input);
                    for o in 0..outer {
                        let src = o * take * inner;
                        let dst = o * span * inner + start * inner;
                        for i in 0..take * inner {
                            bb[dst + i] += g[src + i];
                        }
                    }
                }
            }
            &Op::Transpose(a) => {
                if wants(a) {
                    let (c, r) = {
                        let s = nodes[id].value.shape();
                        (s[0], s[1])
                    };
                    let bb = buf(nodes, grads, a);
                    for i in 0..c {
                        for j in 0..r {
                            bb[j * c + i] += g[i * r + j];
                        }
                    }
                }
            }
            &Op::Exp(a) => {
                if wants(a) {
                    let y = nodes[id].value.data();
                    for ((o, gx), yv) in buf(nodes, grads, a).iter_mut().zip(g).zip(y) {
                        *o += gx * yv;
                    }
                }
            }
            &Op::Log(a) => {
                if wants(a) {
                    let x = nodes[a.0].value.data();
                    for ((o, gx), xv) in buf(nodes, grads, a).iter_mut().zip(g).zip(x) {
                        *o += gx / xv;
                    }
                }
            }
            &Op::Power(a, p) => {
                if wants(a) {
                    let x = nodes[a.0].value.data();
                    for ((o, gx), xv) in buf(nodes, grads, a).iter_mut().zip(g).zip(x) {
                        *o += gx * p * xv.powf(p - 1.0);
                    }
                }
            }
            &Op::CosineRows(a, b) => {
                let c = *nodes[a.0].value.shape().last().unwrap();
                let aux = &nodes[id].aux;
                for r in 0..g.len() {
                    let (dot, nu, nv) = (aux[3 * r], aux[3 * r + 1], aux[3 * r + 2]);
                    let cos = dot / (nu * nv);
                    let gr = g[r];
                    if wants(a) {
                        let va = nodes[a.0].value.data();
                        let vb = nodes[b.0].value.data();
                        let bb = buf(nodes, grads, a);
                        for j in 0..c {
                            bb[r * c + j] += gr
                                * (vb[r * c + j] / (nu * nv) - cos * va[r * c + j] / (nu * nu));
                        }
                    }
                    if wants(b) {
                        let va = nodes[a.0].value.data();
                        let vb = nodes[b.0].value.data();
                        let bb = buf(nodes, grads, b);
                        for j in 0..c {
                            bb[r * c + j] += gr
                                * (va[r * c + j] / (nu * nv) - cos * vb[r * c + j] / (nv * nv));
                        }
                    }
                }
            }
            Op::GatherRows { input, indices } => {
                let input = *input;
                if wants(input) {
                    let c = nodes[input.0].value.shape()[1];
                    let bb = buf(nodes, grads, input);
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            bb[i * c + j] += g[k * c + j];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
