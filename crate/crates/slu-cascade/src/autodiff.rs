//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! The graph is a define-by-run tape: every operation executes its forward
//! pass at insertion time and records enough to replay the chain rule
//! backwards. Topological order is insertion order, and `backward` walks
//! nodes in exact reverse insertion order, so two runs over identical graphs
//! produce bitwise-identical gradients.

use crate::error::{Result, SluError};
use crate::tensor::{
    add_slices, dot, log_softmax_row, matmul, matvec, mul_slices, relu_slice, sigmoid_slice,
    tanh_slice, Tensor,
};

pub type NodeId = usize;

/// Extension point for operations whose backward pass is hand-derived
/// (e.g. the CTC loss). The forward value is computed by the caller before
/// insertion; the tape only needs the backward rule.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Distribute `out_grad` to the input gradient buffers. `input_grads[i]`
    /// is `None` when input `i` does not require a gradient.
    fn backward(
        &self,
        inputs: &[&Tensor],
        out_value: &Tensor,
        out_grad: &[f64],
        input_grads: &mut [Option<Vec<f64>>],
    );
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    MatMul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    // c = a · bᵀ with both operands row-major; every dot runs over two
    // contiguous rows
    MatMulNT(NodeId, NodeId),
    // b added to every row of a
    AddRowVec(NodeId, NodeId),
    LogSoftmax(NodeId),
    RowSelect(NodeId, usize),
    PickElem(NodeId, usize),
    SumAll(NodeId),
    SumList(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    Custom(Vec<NodeId>, Box<dyn CustomOp>),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Define-by-run compute graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    // Gradient buffers live outside `nodes` so backward can read input
    // values while writing input gradients. Empty vec = gradient untracked.
    grads: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Insert a leaf holding a copy of `t`. The leaf participates in
    /// backward iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        let needs = t.requires_grad();
        self.push(Op::Leaf, t.clone(), needs)
    }

    /// Insert a non-differentiable leaf (dropout masks, frozen inputs).
    pub fn constant(&mut self, mut t: Tensor) -> NodeId {
        t.set_requires_grad(false);
        self.push(Op::Leaf, t, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "add")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "mul")
    }

    fn binary_elementwise(&mut self, a: NodeId, b: NodeId, kind: &'static str) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.dims() != vb.dims() {
            return Err(SluError::Shape {
                op: kind,
                left: va.dims().to_vec(),
                right: vb.dims().to_vec(),
            });
        }
        let mut out = vec![0.0; va.len()];
        let op = match kind {
            "add" => {
                add_slices(va.data(), vb.data(), &mut out);
                Op::Add(a, b)
            }
            _ => {
                mul_slices(va.data(), vb.data(), &mut out);
                Op::Mul(a, b)
            }
        };
        let value = Tensor::new(va.dims().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(op, value, needs))
    }

    /// Scalar-with-tensor product, the one permitted broadcast.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = &self.nodes[a].value;
        let data: Vec<f64> = va.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(va.dims().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(Op::Scale(a, c), value, needs)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let mut out = vec![0.0; va.len()];
        sigmoid_slice(va.data(), &mut out);
        let value = Tensor::new(va.dims().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(Op::Sigmoid(a), value, needs)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let mut out = vec![0.0; va.len()];
        tanh_slice(va.data(), &mut out);
        let value = Tensor::new(va.dims().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(Op::Tanh(a), value, needs)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let mut out = vec![0.0; va.len()];
        relu_slice(va.data(), &mut out);
        let value = Tensor::new(va.dims().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(Op::Relu(a), value, needs)
    }

    /// Matrix product. `a` must be rank-2 `[m×k]`; `b` is rank-2 `[k×n]`
    /// (full matmul) or rank-1 `[k]` (matrix-vector).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.rank() != 2 {
            return Err(SluError::Shape {
                op: "matmul",
                left: va.dims().to_vec(),
                right: vb.dims().to_vec(),
            });
        }
        let (m, k) = (va.dims()[0], va.dims()[1]);
        match vb.rank() {
            1 => {
                if vb.dims()[0] != k {
                    return Err(SluError::Shape {
                        op: "matmul",
                        left: va.dims().to_vec(),
                        right: vb.dims().to_vec(),
                    });
                }
                let mut out = vec![0.0; m];
                matvec(va.data(), m, k, vb.data(), &mut out);
                let needs = self.needs(a) || self.needs(b);
                Ok(self.push(Op::MatVec(a, b), Tensor::vector(out), needs))
            }
            2 => {
                if vb.dims()[0] != k {
                    return Err(SluError::Shape {
                        op: "matmul",
                        left: va.dims().to_vec(),
                        right: vb.dims().to_vec(),
                    });
                }
                let n = vb.dims()[1];
                let mut out = vec![0.0; m * n];
                matmul(va.data(), m, k, vb.data(), n, &mut out);
                let needs = self.needs(a) || self.needs(b);
                Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, needs))
            }
            _ => Err(SluError::Shape {
                op: "matmul",
                left: va.dims().to_vec(),
                right: vb.dims().to_vec(),
            }),
        }
    }

    /// `a[m×k] · b[n×k]ᵀ -> [m×n]`: matrix product against a transposed
    /// row-major matrix, so each output element is a dot of two rows.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.rank() != 2 || vb.rank() != 2 || va.dims()[1] != vb.dims()[1] {
            return Err(SluError::Shape {
                op: "matmul_nt",
                left: va.dims().to_vec(),
                right: vb.dims().to_vec(),
            });
        }
        let (m, n) = (va.dims()[0], vb.dims()[0]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = va.row(i);
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = dot(arow, vb.row(j));
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMulNT(a, b), Tensor::new(vec![m, n], out)?, needs))
    }

    /// Add a rank-1 vector to every row of a rank-2 tensor.
    pub fn add_row_vec(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.rank() != 2 || vb.rank() != 1 || va.dims()[1] != vb.dims()[0] {
            return Err(SluError::Shape {
                op: "add_row_vec",
                left: va.dims().to_vec(),
                right: vb.dims().to_vec(),
            });
        }
        let (m, n) = (va.dims()[0], va.dims()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            add_slices(va.row(i), vb.data(), &mut out[i * n..(i + 1) * n]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::AddRowVec(a, b), Tensor::new(vec![m, n], out)?, needs))
    }

    /// Log-softmax over the trailing dimension.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let rows = va.num_rows();
        let w = va.row_len();
        let mut out = vec![0.0; va.len()];
        for r in 0..rows {
            log_softmax_row(&va.data()[r * w..(r + 1) * w], &mut out[r * w..(r + 1) * w]);
        }
        let value = Tensor::new(va.dims().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(Op::LogSoftmax(a), value, needs)
    }

    /// Select row `i` of a rank-2 tensor as a rank-1 tensor.
    pub fn row_select(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let va = &self.nodes[a].value;
        if va.rank() != 2 || i >= va.dims()[0] {
            return Err(SluError::Contract(format!(
                "row_select: row {} of tensor {:?}",
                i,
                va.dims()
            )));
        }
        let value = Tensor::vector(va.row(i).to_vec());
        let needs = self.needs(a);
        Ok(self.push(Op::RowSelect(a, i), value, needs))
    }

    /// Select element `i` of a rank-1 tensor as a scalar.
    pub fn pick(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let va = &self.nodes[a].value;
        if va.rank() != 1 || i >= va.len() {
            return Err(SluError::Contract(format!(
                "pick: index {} of tensor {:?}",
                i,
                va.dims()
            )));
        }
        let value = Tensor::scalar(va.data()[i]);
        let needs = self.needs(a);
        Ok(self.push(Op::PickElem(a, i), value, needs))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let mut s = 0.0;
        for v in va.data() {
            s += v;
        }
        let needs = self.needs(a);
        self.push(Op::SumAll(a), Tensor::scalar(s), needs)
    }

    /// N-ary elementwise sum of same-shape tensors.
    pub fn sum_list(&mut self, ids: &[NodeId]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(SluError::Contract("sum_list of zero nodes".into()));
        }
        let dims = self.nodes[ids[0]].value.dims().to_vec();
        for &id in ids {
            if self.nodes[id].value.dims() != dims.as_slice() {
                return Err(SluError::Shape {
                    op: "sum_list",
                    left: dims,
                    right: self.nodes[id].value.dims().to_vec(),
                });
            }
        }
        let n = self.nodes[ids[0]].value.len();
        let mut out = vec![0.0; n];
        for &id in ids {
            for (o, v) in out.iter_mut().zip(self.nodes[id].value.data()) {
                *o += v;
            }
        }
        let needs = ids.iter().any(|&id| self.needs(id));
        Ok(self.push(Op::SumList(ids.to_vec()), Tensor::new(dims, out)?, needs))
    }

    /// Stack T rank-1 tensors of equal length into a `[T×n]` matrix.
    pub fn stack_rows(&mut self, ids: &[NodeId]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(SluError::Contract("stack_rows of zero rows".into()));
        }
        let n = self.nodes[ids[0]].value.len();
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            let v = &self.nodes[id].value;
            if v.rank() != 1 || v.len() != n {
                return Err(SluError::Shape {
                    op: "stack_rows",
                    left: vec![n],
                    right: v.dims().to_vec(),
                });
            }
            out.extend_from_slice(v.data());
        }
        let needs = ids.iter().any(|&id| self.needs(id));
        Ok(self.push(
            Op::StackRows(ids.to_vec()),
            Tensor::new(vec![ids.len(), n], out)?,
            needs,
        ))
    }

    /// Insert a custom node whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: Vec<NodeId>, value: Tensor, op: Box<dyn CustomOp>) -> NodeId {
        let needs = inputs.iter().any(|&id| self.needs(id));
        self.push(Op::Custom(inputs, op), value, needs)
    }

    /// Run the chain rule from a scalar `loss` node. Gradients accumulate
    /// additively across fan-out and are retrievable via [`Tape::grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss].value.is_scalar() {
            return Err(SluError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].value.dims()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(n);
        for node in &self.nodes {
            if node.needs_grad {
                grads.push(vec![0.0; node.value.len()]);
            } else {
                grads.push(Vec::new());
            }
        }
        if grads[loss].is_empty() {
            // Loss does not depend on any requires_grad leaf; nothing to do.
            self.grads = grads;
            return Ok(());
        }
        grads[loss][0] = 1.0;

        for id in (0..=loss).rev() {
            if grads[id].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[id]);
            self.propagate(id, &g, &mut grads);
            grads[id] = g;
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, id: NodeId, g: &[f64], grads: &mut [Vec<f64>]) {
        let value = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if !grads[*a].is_empty() {
                    for (ga, gi) in grads[*a].iter_mut().zip(g) {
                        *ga += gi;
                    }
                }
                if !grads[*b].is_empty() {
                    for (gb, gi) in grads[*b].iter_mut().zip(g) {
                        *gb += gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                if !grads[*a].is_empty() {
                    let vb = self.nodes[*b].value.data();
                    for i in 0..g.len() {
                        grads[*a][i] += g[i] * vb[i];
                    }
                }
                if !grads[*b].is_empty() {
                    let va = self.nodes[*a].value.data();
                    for i in 0..g.len() {
                        grads[*b][i] += g[i] * va[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if !grads[*a].is_empty() {
                    for (ga, gi) in grads[*a].iter_mut().zip(g) {
                        *ga += gi * c;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if !grads[*a].is_empty() {
                    let s = value.data();
                    for i in 0..g.len() {
                        grads[*a][i] += g[i] * s[i] * (1.0 - s[i]);
                    }
                }
            }
            Op::Tanh(a) => {
                if !grads[*a].is_empty() {
                    let t = value.data();
                    for i in 0..g.len() {
                        grads[*a][i] += g[i] * (1.0 - t[i] * t[i]);
                    }
                }
            }
            Op::Relu(a) => {
                if !grads[*a].is_empty() {
                    let x = self.nodes[*a].value.data();
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            grads[*a][i] += g[i];
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                let (m, k) = (va.dims()[0], va.dims()[1]);
                let nn = vb.dims()[1];
                if !grads[*a].is_empty() {
                    // ga[i][kk] = dot(g.row(i), b.row(kk))
                    for i in 0..m {
                        let grow = &g[i * nn..(i + 1) * nn];
                        for kk in 0..k {
                            grads[*a][i * k + kk] += dot(grow, vb.row(kk));
                        }
                    }
                }
                if !grads[*b].is_empty() {
                    // gb.row(kk) += a[i][kk] * g.row(i)
                    for i in 0..m {
                        let grow = &g[i * nn..(i + 1) * nn];
                        for kk in 0..k {
                            let aik = va.data()[i * k + kk];
                            for j in 0..nn {
                                grads[*b][kk * nn + j] += aik * grow[j];
                            }
                        }
                    }
                }
            }
            Op::MatVec(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                let (m, k) = (va.dims()[0], va.dims()[1]);
                if !grads[*a].is_empty() {
                    // gW.row(i) += g[i] * x
                    for i in 0..m {
                        let gr = &mut grads[*a][i * k..(i + 1) * k];
                        for (gw, xv) in gr.iter_mut().zip(vb.data()) {
                            *gw += g[i] * xv;
                        }
                    }
                }
                if !grads[*b].is_empty() {
                    // gx += W^T g
                    for i in 0..m {
                        let wrow = va.row(i);
                        for (gx, wv) in grads[*b].iter_mut().zip(wrow) {
                            *gx += g[i] * wv;
                        }
                    }
                }
            }
            Op::MatMulNT(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                let (m, k) = (va.dims()[0], va.dims()[1]);
                let n = vb.dims()[0];
                if !grads[*a].is_empty() {
                    // ga.row(i) += Σ_j g[i][j] · b.row(j)
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let garow = &mut grads[*a][i * k..(i + 1) * k];
                        for j in 0..n {
                            let gij = grow[j];
                            for (ga, bv) in garow.iter_mut().zip(vb.row(j)) {
                                *ga += gij * bv;
                            }
                        }
                    }
                }
                if !grads[*b].is_empty() {
                    // gb.row(j) += Σ_i g[i][j] · a.row(i)
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let arow = va.row(i);
                        for j in 0..n {
                            let gij = grow[j];
                            let gbrow = &mut grads[*b][j * k..(j + 1) * k];
                            for (gb, av) in gbrow.iter_mut().zip(arow) {
                                *gb += gij * av;
                            }
                        }
                    }
                }
            }
            Op::AddRowVec(a, b) => {
                let n = self.nodes[*b].value.len();
                let m = g.len() / n;
                if !grads[*a].is_empty() {
                    for (ga, gi) in grads[*a].iter_mut().zip(g) {
                        *ga += gi;
                    }
                }
                if !grads[*b].is_empty() {
                    for i in 0..m {
                        for (gb, gi) in grads[*b].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                            *gb += gi;
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if !grads[*a].is_empty() {
                    let rows = value.num_rows();
                    let w = value.row_len();
                    for r in 0..rows {
                        let out = &value.data()[r * w..(r + 1) * w];
                        let grow = &g[r * w..(r + 1) * w];
                        let gsum: f64 = grow.iter().sum();
                        let ga = &mut grads[*a][r * w..(r + 1) * w];
                        for i in 0..w {
                            ga[i] += grow[i] - out[i].exp() * gsum;
                        }
                    }
                }
            }
            Op::RowSelect(a, i) => {
                if !grads[*a].is_empty() {
                    let w = g.len();
                    for (ga, gi) in grads[*a][i * w..(i + 1) * w].iter_mut().zip(g) {
                        *ga += gi;
                    }
                }
            }
            Op::PickElem(a, i) => {
                if !grads[*a].is_empty() {
                    grads[*a][*i] += g[0];
                }
            }
            Op::SumAll(a) => {
                if !grads[*a].is_empty() {
                    for ga in grads[*a].iter_mut() {
                        *ga += g[0];
                    }
                }
            }
            Op::SumList(ids) => {
                for &a in ids {
                    if !grads[a].is_empty() {
                        for (ga, gi) in grads[a].iter_mut().zip(g) {
                            *ga += gi;
                        }
                    }
                }
            }
            Op::StackRows(ids) => {
                let w = value.row_len();
                for (t, &a) in ids.iter().enumerate() {
                    if !grads[a].is_empty() {
                        for (ga, gi) in grads[a].iter_mut().zip(&g[t * w..(t + 1) * w]) {
                            *ga += gi;
                        }
                    }
                }
            }
            Op::Custom(ids, op) => {
                let inputs: Vec<&Tensor> = ids.iter().map(|&a| &self.nodes[a].value).collect();
                let mut input_grads: Vec<Option<Vec<f64>>> = ids
                    .iter()
                    .map(|&a| {
                        if grads[a].is_empty() {
                            None
                        } else {
                            Some(vec![0.0; self.nodes[a].value.len()])
                        }
                    })
                    .collect();
                op.backward(&inputs, value, g, &mut input_grads);
                for (&a, gi) in ids.iter().zip(input_grads) {
                    if let Some(gi) = gi {
                        for (ga, v) in grads[a].iter_mut().zip(&gi) {
                            *ga += v;
                        }
                    }
                }
            }
        }
    }

    /// Gradient of the last `backward` loss w.r.t. node `id`, if tracked.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| {
            if g.is_empty() {
                None
            } else {
                Some(g.as_slice())
            }
        })
    }

    /// Add this node's gradient into `t.grad` (the write-back half of the
    /// backward contract for parameter tensors).
    pub fn accumulate_grad_into(&self, id: NodeId, t: &mut Tensor) {
        if let Some(g) = self.grad(id) {
            t.accumulate_grad(g);
        }
    }
}

/// Max over coordinates of `|analytic - central difference| / max(1, |analytic|)`
/// for a scalar-valued graph builder `f` evaluated at `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    let xs = [x.clone()];
    grad_check_multi(|tape, ids| f(tape, ids[0]), &xs, h)
}

/// Multi-input variant of [`grad_check`]; perturbs every coordinate of every
/// input and returns the worst relative error.
pub fn grad_check_multi<F>(f: F, xs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = xs
        .iter()
        .map(|x| {
            let mut t = x.clone();
            t.set_requires_grad(true);
            tape.leaf(&t)
        })
        .collect();
    let loss = f(&mut tape, &ids)?;
    if !tape.value(loss).is_scalar() {
        return Err(SluError::Contract(
            "grad_check requires a scalar-valued function".into(),
        ));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_default())
        .collect();

    let eval = |xs_pert: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = xs_pert.iter().map(|x| t.leaf(x)).collect();
        let l = f(&mut t, &ids)?;
        Ok(t.value(l).item())
    };

    let mut worst: f64 = 0.0;
    let mut pert: Vec<Tensor> = xs.to_vec();
    for (ti, x) in xs.iter().enumerate() {
        if analytic[ti].is_empty() {
            continue;
        }
        for ci in 0..x.len() {
            let orig = x.data()[ci];
            pert[ti].data_mut()[ci] = orig + h;
            let fp = eval(&pert)?;
            pert[ti].data_mut()[ci] = orig - h;
            let fm = eval(&pert)?;
            pert[ti].data_mut()[ci] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[ti][ci];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        Tensor::new(dims.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_identity_case() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_zero_case() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let m = tape.constant(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap());
        let c = tape.matmul(z, m).unwrap();
        assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
    }

    /// Independent naive triple-loop product used as the matmul oracle.
    fn triple_loop(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = (a.dims()[0], a.dims()[1]);
        let n = b.dims()[1];
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for kk in 0..k {
                    s += a.data()[i * k + kk] * b.data()[kk * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let expect = triple_loop(&a, &b);
        let mut tape = Tape::new();
        let (ia, ib) = (tape.leaf(&a), tape.leaf(&b));
        let c = tape.matmul(ia, ib).unwrap();
        for (got, want) in tape.value(c).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_dim_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        match tape.matmul(a, b) {
            Err(SluError::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 2]);
            }
            other => panic!("expected shape error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn elementwise_trivial_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0]));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).data()[0], 0.5);
        let t = tape.tanh(z);
        assert_eq!(tape.value(t).data()[0], 0.0);
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(tape.add(a, b), Err(SluError::Shape { .. })));
        assert!(matches!(tape.mul(a, b), Err(SluError::Shape { .. })));
    }

    #[test]
    fn log_softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = rand_tensor(&mut rng, &[5]);
            let mut tape = Tape::new();
            let id = tape.leaf(&x);
            let ls = tape.log_softmax(id);
            let total: f64 = tape.value(ls).data().iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "sum {}", total);
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let x = Tensor::vector(vec![1.0, -2.0, 3.0]).with_grad();
        let mut tape = Tape::new();
        let id = tape.leaf(&x);
        let loss = tape.sum_all(id);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(id).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_dot_gives_2x() {
        let x = Tensor::vector(vec![1.0, -2.0, 3.0]).with_grad();
        let mut tape = Tape::new();
        let id = tape.leaf(&x);
        let sq = tape.mul(id, id).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        let g = tape.grad(id).unwrap();
        assert_eq!(g, &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::vector(vec![1.0, 2.0]).with_grad();
        let mut tape = Tape::new();
        let id = tape.leaf(&x);
        let y = tape.scale(id, 2.0);
        assert!(matches!(tape.backward(y), Err(SluError::Contract(_))));
    }

    #[test]
    fn fanout_accumulates_additively() {
        let x = Tensor::vector(vec![1.5]).with_grad();
        let mut tape = Tape::new();
        let id = tape.leaf(&x);
        let y = tape.add(id, id).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(id).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[4, 3]).with_grad();
        let w = rand_tensor(&mut rng, &[3, 2]).with_grad();
        let run = || {
            let mut tape = Tape::new();
            let ix = tape.leaf(&x);
            let iw = tape.leaf(&w);
            let y = tape.matmul(ix, iw).unwrap();
            let s = tape.sigmoid(y);
            let loss = tape.sum_all(s);
            tape.backward(loss).unwrap();
            (
                tape.grad(ix).unwrap().to_vec(),
                tape.grad(iw).unwrap().to_vec(),
            )
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn grad_check_sum_of_squares_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = rand_tensor(&mut rng, &[6]);
        let err = grad_check(
            |tape, id| {
                let sq = tape.mul(id, id)?;
                Ok(tape.sum_all(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-7, "err {}", err);
    }

    #[test]
    fn grad_check_constant_function_zero_error() {
        let x = Tensor::vector(vec![0.3, -0.7]);
        let err = grad_check(
            |tape, _id| {
                let c = tape.constant(Tensor::scalar(4.2));
                Ok(tape.sum_all(c))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_composite_ops_across_seeds() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[3, 4]);
            let w = rand_tensor(&mut rng, &[4, 2]);
            let err = grad_check_multi(
                |tape, ids| {
                    let y = tape.matmul(ids[0], ids[1])?;
                    let s = tape.sigmoid(y);
                    let t = tape.tanh(s);
                    let r = tape.relu(t);
                    let ls = tape.log_softmax(r);
                    let m = tape.mul(ls, ls)?;
                    Ok(tape.sum_all(m))
                },
                &[x, w],
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {} err {}", seed, err);
        }
    }

    #[test]
    fn matmul_nt_matches_matmul_with_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[5, 4]);
        // transpose b by hand and compare against plain matmul
        let mut bt = vec![0.0; 20];
        for i in 0..5 {
            for j in 0..4 {
                bt[j * 5 + i] = b.data()[i * 4 + j];
            }
        }
        let bt = Tensor::new(vec![4, 5], bt).unwrap();
        let mut tape = Tape::new();
        let (ia, ib, ibt) = (tape.leaf(&a), tape.leaf(&b), tape.leaf(&bt));
        let nt = tape.matmul_nt(ia, ib).unwrap();
        let mm = tape.matmul(ia, ibt).unwrap();
        for (x, y) in tape.value(nt).data().iter().zip(tape.value(mm).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_nt_and_add_row_vec_grad_check() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_tensor(&mut rng, &[3, 4]);
            let b = rand_tensor(&mut rng, &[5, 4]);
            let bias = rand_tensor(&mut rng, &[5]);
            let err = grad_check_multi(
                |tape, ids| {
                    let c = tape.matmul_nt(ids[0], ids[1])?;
                    let d = tape.add_row_vec(c, ids[2])?;
                    let s = tape.sigmoid(d);
                    let sq = tape.mul(s, s)?;
                    Ok(tape.sum_all(sq))
                },
                &[a, b, bias],
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {} err {}", seed, err);
        }
    }

    #[test]
    fn forward_values_finite_on_finite_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[2, 5]);
        let mut tape = Tape::new();
        let id = tape.leaf(&x);
        let a = tape.sigmoid(id);
        let b = tape.tanh(a);
        let c = tape.log_softmax(b);
        assert!(tape.value(c).all_finite());
    }
}
