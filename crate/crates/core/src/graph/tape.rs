//! Dynamically recorded reverse-mode tape.
//!
//! Every builder method evaluates its primitive immediately and appends a
//! node holding the result plus whatever activations the backward pass
//! needs. [`Tape::backward`] walks the nodes in exact reverse order.

use super::params::{Gradients, ParamId, ParamSet};
use super::tensor::{axpy, dot, matvec_into, matvec_t_into, outer_into, sigmoid, softmax, Tensor};
use super::GraphError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatVec { m: NodeId, v: NodeId },
    VecMat { v: NodeId, m: NodeId },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Dot(NodeId, NodeId),
    ScaleRows { m: NodeId, s: NodeId },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    Concat(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    MeanRows(NodeId),
    MergeRows { m: NodeId, factor: usize },
    Row { m: NodeId, index: usize },
    Slice { v: NodeId, start: usize },
    LstmCell(Box<LstmCache>),
    Nll { p: NodeId, class: usize, eps: f64 },
    Detach,
}

#[derive(Debug)]
struct LstmCache {
    x: NodeId,
    prev: Option<NodeId>,
    w_ih: NodeId,
    w_hh: NodeId,
    b: NodeId,
    /// Post-activation gates laid out as `[i, f, g, o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` only for parameter nodes, whose value lives in the [`ParamSet`].
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Ordered record of primitive operations over a borrowed parameter set.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    consumed: bool,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(pid) => &self.params.get(pid).values,
            _ => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Result<NodeId, GraphError> {
        if !value.is_finite() {
            return Err(GraphError::NonFiniteActivation(op_name(&op)));
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a constant input.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId, GraphError> {
        self.push(Op::Input, value, false)
    }

    /// Returns the node for a parameter, recording it on first use.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.index()] {
            return n;
        }
        let frozen = self.params.get(id).frozen;
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: !frozen,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(n);
        n
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<NodeId, GraphError> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| GraphError::UnknownParam(name.to_string()))?;
        Ok(self.param(id))
    }

    /// `m · v` for an `r × c` matrix and a length-`c` vector.
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, GraphError> {
        let (mt, vt) = (self.value(m), self.value(v));
        if mt.cols() != vt.len() {
            return Err(shape("matvec", format!("{:?} · len {}", mt.shape(), vt.len())));
        }
        let mut out = vec![0.0; mt.rows()];
        matvec_into(mt.data(), mt.cols(), vt.data(), &mut out);
        let rg = self.requires_grad(m) || self.requires_grad(v);
        self.push(Op::MatVec { m, v }, Tensor::vector(out), rg)
    }

    /// `vᵀ · m` for a length-`r` vector and an `r × c` matrix: a weighted sum of rows.
    pub fn vecmat(&mut self, v: NodeId, m: NodeId) -> Result<NodeId, GraphError> {
        let (vt, mt) = (self.value(v), self.value(m));
        if mt.rows() != vt.len() {
            return Err(shape("vecmat", format!("len {} · {:?}", vt.len(), mt.shape())));
        }
        let mut out = vec![0.0; mt.cols()];
        for (w, row) in vt.data().iter().zip(mt.iter_rows()) {
            axpy(*w, row, &mut out);
        }
        let rg = self.requires_grad(m) || self.requires_grad(v);
        self.push(Op::VecMat { v, m }, Tensor::vector(out), rg)
    }

    fn same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<(), GraphError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += y;
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::Add(a, b), out, rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= y;
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::Mul(a, b), out, rg)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId, GraphError> {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= k);
        let rg = self.requires_grad(a);
        self.push(Op::Scale(a, k), out, rg)
    }

    /// Inner product of two equally sized tensors; yields a scalar.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        if self.value(a).len() != self.value(b).len() {
            return Err(shape(
                "dot",
                format!("{} vs {}", self.value(a).len(), self.value(b).len()),
            ));
        }
        let v = dot(self.value(a).data(), self.value(b).data());
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(Op::Dot(a, b), Tensor::vector(vec![v]), rg)
    }

    /// Multiplies every row of an `M × D` matrix elementwise by a length-`D` vector.
    pub fn scale_rows(&mut self, m: NodeId, s: NodeId) -> Result<NodeId, GraphError> {
        let (mt, st) = (self.value(m), self.value(s));
        if mt.cols() != st.len() {
            return Err(shape("scale_rows", format!("{:?} ⊙ len {}", mt.shape(), st.len())));
        }
        let mut out = mt.clone();
        let cols = out.cols();
        for row in out.data_mut().chunks_exact_mut(cols.max(1)) {
            for (o, g) in row.iter_mut().zip(st.data()) {
                *o *= g;
            }
        }
        let rg = self.requires_grad(m) || self.requires_grad(s);
        self.push(Op::ScaleRows { m, s }, out, rg)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId, GraphError> {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = f(*v));
        let rg = self.requires_grad(a);
        self.push(op, out, rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        self.unary(a, Op::Relu(a), |v| v.max(0.0))
    }

    /// Softmax over all entries of a vector.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(shape("softmax", "empty input".into()));
        }
        let out = Tensor::vector(softmax(t.data()));
        let rg = self.requires_grad(a);
        self.push(Op::Softmax(a), out, rg)
    }

    /// Flattens and concatenates the inputs into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        if parts.is_empty() {
            return Err(shape("concat", "no inputs".into()));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        let rg = parts.iter().any(|p| self.requires_grad(*p));
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(out), rg)
    }

    /// Stacks equally long vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId, GraphError> {
        let slices: Vec<&[f64]> = rows.iter().map(|r| self.value(*r).data()).collect();
        if slices.is_empty() {
            return Err(shape("stack_rows", "no rows".into()));
        }
        let out = Tensor::from_rows(&slices)?;
        let rg = rows.iter().any(|r| self.requires_grad(*r));
        self.push(Op::StackRows(rows.to_vec()), out, rg)
    }

    /// Mean over the row axis: `R × C → C`.
    pub fn mean_rows(&mut self, m: NodeId) -> Result<NodeId, GraphError> {
        let mt = self.value(m);
        if mt.rows() == 0 {
            return Err(shape("mean_rows", "zero rows".into()));
        }
        let mut out = vec![0.0; mt.cols()];
        for row in mt.iter_rows() {
            axpy(1.0, row, &mut out);
        }
        let n = mt.rows() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        let rg = self.requires_grad(m);
        self.push(Op::MeanRows(m), Tensor::vector(out), rg)
    }

    /// Averages consecutive groups of `factor` rows; a trailing partial group is dropped.
    pub fn merge_rows(&mut self, m: NodeId, factor: usize) -> Result<NodeId, GraphError> {
        let mt = self.value(m);
        if factor == 0 || mt.rows() < factor {
            return Err(GraphError::SequenceTooShort {
                rows: mt.rows(),
                needed: factor.max(1),
            });
        }
        let groups = mt.rows() / factor;
        let cols = mt.cols();
        let mut out = Tensor::zeros(groups, cols);
        for j in 0..groups {
            let dst = out.row_mut(j);
            for r in j * factor..(j + 1) * factor {
                axpy(1.0 / factor as f64, mt.row(r), dst);
            }
        }
        let rg = self.requires_grad(m);
        self.push(Op::MergeRows { m, factor }, out, rg)
    }

    pub fn row(&mut self, m: NodeId, index: usize) -> Result<NodeId, GraphError> {
        let mt = self.value(m);
        if index >= mt.rows() {
            return Err(shape("row", format!("row {index} of {:?}", mt.shape())));
        }
        let out = Tensor::vector(mt.row(index).to_vec());
        let rg = self.requires_grad(m);
        self.push(Op::Row { m, index }, out, rg)
    }

    pub fn slice(&mut self, v: NodeId, start: usize, len: usize) -> Result<NodeId, GraphError> {
        let vt = self.value(v);
        if start + len > vt.len() {
            return Err(shape("slice", format!("{start}..{} of {}", start + len, vt.len())));
        }
        let out = Tensor::vector(vt.data()[start..start + len].to_vec());
        let rg = self.requires_grad(v);
        self.push(Op::Slice { v, start }, out, rg)
    }

    /// One LSTM step. Returns a node holding `[h ‖ c]` (length `2H`).
    ///
    /// `w_ih` is `4H × F`, `w_hh` is `4H × H`, `b` has length `4H`, gate
    /// blocks ordered input, forget, cell, output. `prev` is the previous
    /// step's `[h ‖ c]`; `None` starts from the zero state.
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        prev: Option<NodeId>,
        w_ih: NodeId,
        w_hh: NodeId,
        b: NodeId,
    ) -> Result<NodeId, GraphError> {
        let (wi, wh, bt, xt) = (self.value(w_ih), self.value(w_hh), self.value(b), self.value(x));
        let h = wh.cols();
        if wh.rows() != 4 * h || wi.rows() != 4 * h || bt.len() != 4 * h || wi.cols() != xt.len() {
            return Err(shape(
                "lstm_cell",
                format!(
                    "w_ih {:?}, w_hh {:?}, b len {}, x len {}",
                    wi.shape(),
                    wh.shape(),
                    bt.len(),
                    xt.len()
                ),
            ));
        }
        let mut a = bt.data().to_vec();
        matvec_into(wi.data(), wi.cols(), xt.data(), &mut a);
        let zeros;
        let (h_prev, c_prev): (&[f64], &[f64]) = match prev {
            Some(p) => {
                let pt = self.value(p);
                if pt.len() != 2 * h {
                    return Err(shape("lstm_cell", format!("state len {} != {}", pt.len(), 2 * h)));
                }
                (&pt.data()[..h], &pt.data()[h..])
            }
            None => {
                zeros = vec![0.0; h];
                (&zeros, &zeros)
            }
        };
        matvec_into(wh.data(), h, h_prev, &mut a);
        let mut gates = a;
        for (k, v) in gates.iter_mut().enumerate() {
            *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { sigmoid(*v) };
        }
        let mut out = vec![0.0; 2 * h];
        let mut tanh_c = vec![0.0; h];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let c = f * c_prev[j] + i * g;
            tanh_c[j] = c.tanh();
            out[j] = o * tanh_c[j];
            out[h + j] = c;
        }
        let rg = [Some(x), prev, Some(w_ih), Some(w_hh), Some(b)]
            .into_iter()
            .flatten()
            .any(|n| self.requires_grad(n));
        let cache = LstmCache {
            x,
            prev,
            w_ih,
            w_hh,
            b,
            gates,
            tanh_c,
        };
        self.push(Op::LstmCell(Box::new(cache)), Tensor::vector(out), rg)
    }

    /// Negative log-likelihood `-ln(p[class] + eps)` of a probability vector.
    pub fn nll(&mut self, p: NodeId, class: usize, eps: f64) -> Result<NodeId, GraphError> {
        let pt = self.value(p);
        if class >= pt.len() {
            return Err(shape("nll", format!("class {class} of {}", pt.len())));
        }
        let loss = -(pt.data()[class] + eps).ln();
        let rg = self.requires_grad(p);
        self.push(Op::Nll { p, class, eps }, Tensor::vector(vec![loss]), rg)
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn detach(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let out = self.value(a).clone();
        self.push(Op::Detach, out, false)
    }

    /// Back-propagates `loss_grad` from the scalar node `root`.
    ///
    /// Parameters not reachable from `root`, and frozen parameters, receive
    /// zero gradient. A tape can only be differentiated once.
    pub fn backward(&mut self, root: NodeId, loss_grad: f64) -> Result<Gradients, GraphError> {
        if self.consumed {
            return Err(GraphError::TapeConsumed);
        }
        self.consumed = true;
        if self.value(root).len() != 1 {
            return Err(shape("backward", format!("root {:?} is not scalar", self.value(root).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.requires_grad(root) {
            grads[root.0] = Some(vec![loss_grad]);
        }
        for idx in (0..=root.0).rev() {
            // parameter leaves keep their gradient for collection below
            if matches!(self.nodes[idx].op, Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
        }
        let mut out = Gradients::zeros_like(self.params);
        for (pid, node) in self.param_nodes.iter().enumerate() {
            if let Some(n) = node {
                if let Some(g) = &grads[n.0] {
                    out.grads[pid].data_mut().copy_from_slice(g);
                }
            }
        }
        Ok(out)
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input | Op::Param(_) | Op::Detach => {}
            Op::MatVec { m, v } => {
                let (mt, vt) = (self.value(*m), self.value(*v));
                if let Some(dm) = self.buf(grads, *m) {
                    outer_into(g, vt.data(), dm);
                }
                if let Some(dv) = self.buf(grads, *v) {
                    matvec_t_into(mt.data(), mt.cols(), g, dv);
                }
            }
            Op::VecMat { v, m } => {
                let (mt, vt) = (self.value(*m), self.value(*v));
                if let Some(dv) = self.buf(grads, *v) {
                    for (d, row) in dv.iter_mut().zip(mt.iter_rows()) {
                        *d += dot(row, g);
                    }
                }
                if let Some(dm) = self.buf(grads, *m) {
                    outer_into(vt.data(), g, dm);
                }
            }
            Op::Add(a, b) => {
                for n in [*a, *b] {
                    if let Some(d) = self.buf(grads, n) {
                        axpy(1.0, g, d);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                if let Some(d) = self.buf(grads, *a) {
                    for ((d, gi), y) in d.iter_mut().zip(g).zip(bt.data()) {
                        *d += gi * y;
                    }
                }
                if let Some(d) = self.buf(grads, *b) {
                    for ((d, gi), x) in d.iter_mut().zip(g).zip(at.data()) {
                        *d += gi * x;
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(d) = self.buf(grads, *a) {
                    axpy(*k, g, d);
                }
            }
            Op::Dot(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                if let Some(d) = self.buf(grads, *a) {
                    axpy(g[0], bt.data(), d);
                }
                if let Some(d) = self.buf(grads, *b) {
                    axpy(g[0], at.data(), d);
                }
            }
            Op::ScaleRows { m, s } => {
                let (mt, st) = (self.value(*m), self.value(*s));
                let cols = mt.cols();
                if let Some(dm) = self.buf(grads, *m) {
                    for (drow, grow) in dm.chunks_exact_mut(cols).zip(g.chunks_exact(cols)) {
                        for ((d, gi), si) in drow.iter_mut().zip(grow).zip(st.data()) {
                            *d += gi * si;
                        }
                    }
                }
                if let Some(ds) = self.buf(grads, *s) {
                    for (mrow, grow) in mt.iter_rows().zip(g.chunks_exact(cols)) {
                        for ((d, gi), x) in ds.iter_mut().zip(grow).zip(mrow) {
                            *d += gi * x;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.as_ref().unwrap().data();
                if let Some(d) = self.buf(grads, *a) {
                    for ((d, gi), yi) in d.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = node.value.as_ref().unwrap().data();
                if let Some(d) = self.buf(grads, *a) {
                    for ((d, gi), yi) in d.iter_mut().zip(g).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Relu(a) => {
                let y = node.value.as_ref().unwrap().data();
                if let Some(d) = self.buf(grads, *a) {
                    for ((d, gi), yi) in d.iter_mut().zip(g).zip(y) {
                        if *yi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.as_ref().unwrap().data();
                let gy = dot(g, y);
                if let Some(d) = self.buf(grads, *a) {
                    for ((d, gi), yi) in d.iter_mut().zip(g).zip(y) {
                        *d += yi * (gi - gy);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if let Some(d) = self.buf(grads, *p) {
                        axpy(1.0, &g[offset..offset + n], d);
                    }
                    offset += n;
                }
            }
            Op::StackRows(rows) => {
                let cols = node.value.as_ref().unwrap().cols();
                for (i, r) in rows.iter().enumerate() {
                    if let Some(d) = self.buf(grads, *r) {
                        axpy(1.0, &g[i * cols..(i + 1) * cols], d);
                    }
                }
            }
            Op::MeanRows(m) => {
                let mt = self.value(*m);
                let (rows, cols) = mt.shape();
                if let Some(d) = self.buf(grads, *m) {
                    for drow in d.chunks_exact_mut(cols) {
                        axpy(1.0 / rows as f64, g, drow);
                    }
                }
            }
            Op::MergeRows { m, factor } => {
                let cols = self.value(*m).cols();
                let groups = node.value.as_ref().unwrap().rows();
                if let Some(d) = self.buf(grads, *m) {
                    for j in 0..groups {
                        let gj = &g[j * cols..(j + 1) * cols];
                        for r in j * factor..(j + 1) * factor {
                            axpy(1.0 / *factor as f64, gj, &mut d[r * cols..(r + 1) * cols]);
                        }
                    }
                }
            }
            Op::Row { m, index } => {
                let cols = self.value(*m).cols();
                if let Some(d) = self.buf(grads, *m) {
                    axpy(1.0, g, &mut d[index * cols..(index + 1) * cols]);
                }
            }
            Op::Slice { v, start } => {
                if let Some(d) = self.buf(grads, *v) {
                    axpy(1.0, g, &mut d[*start..*start + g.len()]);
                }
            }
            Op::Nll { p, class, eps } => {
                let pt = self.value(*p);
                if let Some(d) = self.buf(grads, *p) {
                    d[*class] -= g[0] / (pt.data()[*class] + eps);
                }
            }
            Op::LstmCell(cache) => self.backprop_lstm(cache, g, grads),
        }
    }

    fn backprop_lstm(&self, cache: &LstmCache, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let h = g.len() / 2;
        let (dh, dc) = g.split_at(h);
        let gates = &cache.gates;
        let prev = cache.prev.map(|p| self.value(p).data());
        let mut da = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for j in 0..h {
            let (i, f, gg, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = cache.tanh_c[j];
            let c_prev = prev.map_or(0.0, |p| p[h + j]);
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            let d_o = dh[j] * tc;
            let d_i = dct * gg;
            let d_g = dct * i;
            let d_f = dct * c_prev;
            dc_prev[j] = dct * f;
            da[j] = d_i * i * (1.0 - i);
            da[h + j] = d_f * f * (1.0 - f);
            da[2 * h + j] = d_g * (1.0 - gg * gg);
            da[3 * h + j] = d_o * o * (1.0 - o);
        }
        let xt = self.value(cache.x);
        let wi = self.value(cache.w_ih);
        let wh = self.value(cache.w_hh);
        if let Some(d) = self.buf(grads, cache.b) {
            axpy(1.0, &da, d);
        }
        if let Some(d) = self.buf(grads, cache.w_ih) {
            outer_into(&da, xt.data(), d);
        }
        if let Some(d) = self.buf(grads, cache.x) {
            matvec_t_into(wi.data(), wi.cols(), &da, d);
        }
        if let (Some(pn), Some(p)) = (cache.prev, prev) {
            if let Some(d) = self.buf(grads, cache.w_hh) {
                outer_into(&da, &p[..h], d);
            }
            if let Some(d) = self.buf(grads, pn) {
                matvec_t_into(wh.data(), h, &da, &mut d[..h]);
                axpy(1.0, &dc_prev, &mut d[h..]);
            }
        }
    }

    /// Gradient buffer for `id`, allocated on demand; `None` when no gradient is needed.
    fn buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> Option<&'g mut Vec<f64>> {
        if !self.requires_grad(id) {
            return None;
        }
        let len = self.value(id).len();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; len]))
    }
}

fn shape(op: &str, detail: String) -> GraphError {
    GraphError::ShapeMismatch(format!("{op}: {detail}"))
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "param",
        Op::MatVec { .. } => "matvec",
        Op::VecMat { .. } => "vecmat",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Dot(..) => "dot",
        Op::ScaleRows { .. } => "scale_rows",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Relu(_) => "relu",
        Op::Softmax(_) => "softmax",
        Op::Concat(_) => "concat",
        Op::StackRows(_) => "stack_rows",
        Op::MeanRows(_) => "mean_rows",
        Op::MergeRows { .. } => "merge_rows",
        Op::Row { .. } => "row",
        Op::Slice { .. } => "slice",
        Op::LstmCell(_) => "lstm_cell",
        Op::Nll { .. } => "nll",
        Op::Detach => "detach",
    }
}
