//! Reverse-mode differentiation over matrix-level primitives.
//!
//! A [`Tape`] records each forward operation together with the inputs its
//! adjoint needs. Values are either dense matrices or sparse matrices with a
//! fixed pattern; gradients for sparse-valued nodes live on that pattern.
//! Tape-internal sparse values may carry exact zeros so patterns stay stable
//! between the forward pass and the adjoints.
//!
//! [`Tape::backward`] consumes the tape, making a second replay a compile
//! error rather than a runtime one, and returns gradients keyed like the
//! model parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::nonlocal_from_projected;
use crate::model::ParamKey;
use crate::num;
use crate::sparse::{spmm_impl, weighted_sum_impl, DenseMatrix, SparseMatrix};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Value {
    Dense(DenseMatrix),
    Sparse(SparseMatrix),
}

#[derive(Debug, Clone)]
enum Grad {
    Dense(DenseMatrix),
    /// Values aligned with the owning node's sparse pattern.
    SparseVals(Vec<f64>),
}

#[derive(Debug, Clone)]
enum Op {
    ConstDense,
    ConstSparse,
    Param(ParamKey),
    MatMul { a: NodeId, b: NodeId },
    AddBiasRow { x: NodeId, b: NodeId },
    Relu { x: NodeId },
    Tanh { x: NodeId },
    Dropout { x: NodeId, mask: Vec<f64> },
    Lincomb { a: NodeId, b: NodeId, ca: f64, cb: f64 },
    MeanStack { xs: Vec<NodeId> },
    SumStack { xs: Vec<NodeId> },
    ConcatCols { xs: Vec<NodeId> },
    RowSoftmax { x: NodeId },
    SelectApply { alpha: NodeId, channel: usize, z: NodeId, mats: Vec<NodeId> },
    SelectSparse { alpha: NodeId, channel: usize, mats: Vec<NodeId> },
    SpMM { a: NodeId, b: NodeId },
    RowNormSp { x: NodeId },
    AddScaledEye { x: NodeId },
    SpApply { a: NodeId, z: NodeId },
    NonLocalBuild { g: NodeId },
    CrossEntropy { logits: NodeId, labels: Vec<i64>, mask: Vec<usize> },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients keyed like the model parameters. Bias gradients are `1 x d`.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<ParamKey, DenseMatrix>,
}

impl Gradients {
    pub fn get(&self, key: &ParamKey) -> Option<&DenseMatrix> {
        self.map.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &DenseMatrix)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[cfg(test)]
    pub(crate) fn insert(&mut self, key: ParamKey, grad: DenseMatrix) {
        self.map.insert(key, grad);
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Value, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn dense(&self, id: NodeId) -> Result<&DenseMatrix> {
        match &self.nodes[id].value {
            Value::Dense(d) => Ok(d),
            Value::Sparse(_) => Err(Error::InvalidParams(format!(
                "node {id} is sparse, expected dense"
            ))),
        }
    }

    pub fn sparse(&self, id: NodeId) -> Result<&SparseMatrix> {
        match &self.nodes[id].value {
            Value::Sparse(s) => Ok(s),
            Value::Dense(_) => Err(Error::InvalidParams(format!(
                "node {id} is dense, expected sparse"
            ))),
        }
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let d = self.dense(id)?;
        if d.n_rows() != 1 || d.n_cols() != 1 {
            return Err(Error::Shape {
                op: "scalar",
                detail: format!("node is {}x{}", d.n_rows(), d.n_cols()),
            });
        }
        Ok(d.get(0, 0))
    }

    pub fn const_dense(&mut self, m: DenseMatrix) -> NodeId {
        self.push(Value::Dense(m), Op::ConstDense, false)
    }

    pub fn const_sparse(&mut self, m: SparseMatrix) -> NodeId {
        self.push(Value::Sparse(m), Op::ConstSparse, false)
    }

    pub fn param(&mut self, key: ParamKey, value: DenseMatrix) -> NodeId {
        self.push(Value::Dense(value), Op::Param(key), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.dense(a)?.matmul(self.dense(b)?)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Dense(value), Op::MatMul { a, b }, needs))
    }

    /// Adds a `1 x d` bias row to every row of `x`.
    pub fn add_bias_row(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let bias = self.dense(b)?;
        if bias.n_rows() != 1 || bias.n_cols() != self.dense(x)?.n_cols() {
            return Err(Error::Shape {
                op: "add_bias_row",
                detail: format!(
                    "bias is {}x{}, x has {} columns",
                    bias.n_rows(),
                    bias.n_cols(),
                    self.dense(x)?.n_cols()
                ),
            });
        }
        let mut value = self.dense(x)?.clone();
        let brow: Vec<f64> = bias.row(0).to_vec();
        for i in 0..value.n_rows() {
            for (v, &bb) in value.row_mut(i).iter_mut().zip(&brow) {
                *v += bb;
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(Value::Dense(value), Op::AddBiasRow { x, b }, needs))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.dense(x)?.relu();
        let needs = self.needs(x);
        Ok(self.push(Value::Dense(value), Op::Relu { x }, needs))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.dense(x)?.tanh();
        let needs = self.needs(x);
        Ok(self.push(Value::Dense(value), Op::Tanh { x }, needs))
    }

    /// Multiplies elementwise by a fixed mask holding `0` or `1/keep_prob`.
    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let xv = self.dense(x)?;
        if mask.len() != xv.values().len() {
            return Err(Error::Shape {
                op: "dropout",
                detail: format!(
                    "mask has {} entries for {} values",
                    mask.len(),
                    xv.values().len()
                ),
            });
        }
        let mut value = xv.clone();
        for (v, &m) in value.values_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        let needs = self.needs(x);
        Ok(self.push(Value::Dense(value), Op::Dropout { x, mask }, needs))
    }

    pub fn lincomb(&mut self, ca: f64, a: NodeId, cb: f64, b: NodeId) -> Result<NodeId> {
        let value = DenseMatrix::lincomb(ca, self.dense(a)?, cb, self.dense(b)?)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Dense(value), Op::Lincomb { a, b, ca, cb }, needs))
    }

    pub fn mean_stack(&mut self, xs: Vec<NodeId>) -> Result<NodeId> {
        let mats: Vec<DenseMatrix> = xs
            .iter()
            .map(|&x| self.dense(x).cloned())
            .collect::<Result<_>>()?;
        let value = crate::layers::channel_average(&mats)?;
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(Value::Dense(value), Op::MeanStack { xs }, needs))
    }

    pub fn sum_stack(&mut self, xs: Vec<NodeId>) -> Result<NodeId> {
        let first = self.dense(*xs.first().ok_or(Error::Empty {
            what: "channel list",
        })?)?;
        let mut value = DenseMatrix::zeros(first.n_rows(), first.n_cols());
        for &x in &xs {
            value.add_assign(self.dense(x)?)?;
        }
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(Value::Dense(value), Op::SumStack { xs }, needs))
    }

    pub fn concat_cols(&mut self, xs: Vec<NodeId>) -> Result<NodeId> {
        let mats: Vec<&DenseMatrix> = xs
            .iter()
            .map(|&x| self.dense(x))
            .collect::<Result<_>>()?;
        let value = DenseMatrix::hconcat(&mats)?;
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(Value::Dense(value), Op::ConcatCols { xs }, needs))
    }

    /// Softmax over each row; used to turn selection logits into attention.
    pub fn row_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.dense(x)?.row_softmax();
        let needs = self.needs(x);
        Ok(self.push(Value::Dense(value), Op::RowSoftmax { x }, needs))
    }

    fn sparse_inputs(&self, mats: &[NodeId]) -> Result<Vec<&SparseMatrix>> {
        mats.iter().map(|&m| self.sparse(m)).collect()
    }

    fn alpha_row(&self, alpha: NodeId, channel: usize, want: usize) -> Result<Vec<f64>> {
        let a = self.dense(alpha)?;
        if channel >= a.n_rows() {
            return Err(Error::ChannelOutOfRange {
                channel,
                channels: a.n_rows(),
            });
        }
        if a.n_cols() != want {
            return Err(Error::Shape {
                op: "selection",
                detail: format!("{} weights for {} candidates", a.n_cols(), want),
            });
        }
        Ok(a.row(channel).to_vec())
    }

    /// Feature propagation through the selected combination:
    /// `sum_t alpha[channel][t] * mats[t] * z` without materializing any
    /// product. `alpha` is an attention node (for example [`Self::row_softmax`]
    /// output); `mats` may mix constant candidates and differentiable
    /// sparse-valued nodes such as [`Self::nonlocal_build`] outputs.
    pub fn select_apply(
        &mut self,
        alpha: NodeId,
        channel: usize,
        z: NodeId,
        mats: Vec<NodeId>,
    ) -> Result<NodeId> {
        let weights = self.alpha_row(alpha, channel, mats.len())?;
        let refs = self.sparse_inputs(&mats)?;
        let value = crate::layers::apply_selection(&refs, &weights, self.dense(z)?)?;
        let needs =
            self.needs(alpha) || self.needs(z) || mats.iter().any(|&m| self.needs(m));
        Ok(self.push(
            Value::Dense(value),
            Op::SelectApply {
                alpha,
                channel,
                z,
                mats,
            },
            needs,
        ))
    }

    /// Sparse-valued convex combination of candidates. The pattern is the
    /// union of every candidate's pattern regardless of the weights, so the
    /// adjoint sees a stable layout.
    pub fn select_sparse(
        &mut self,
        alpha: NodeId,
        channel: usize,
        mats: Vec<NodeId>,
    ) -> Result<NodeId> {
        let weights = self.alpha_row(alpha, channel, mats.len())?;
        let refs = self.sparse_inputs(&mats)?;
        let value = weighted_sum_impl(&refs, &weights, false)?;
        let needs = self.needs(alpha) || mats.iter().any(|&m| self.needs(m));
        Ok(self.push(
            Value::Sparse(value),
            Op::SelectSparse {
                alpha,
                channel,
                mats,
            },
            needs,
        ))
    }

    /// Sparse product of two sparse-valued nodes; exact zeros are kept so
    /// the pattern covers every structural contribution.
    pub fn spmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = spmm_impl(self.sparse(a)?, self.sparse(b)?, false, None)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Sparse(value), Op::SpMM { a, b }, needs))
    }

    /// Divides each row by its sum; zero-sum rows pass through unchanged.
    pub fn row_norm_sp(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.sparse(x)?;
        let mut vals = xv.values().to_vec();
        for i in 0..xv.n_rows() {
            let (_, rv) = xv.row(i);
            let s: f64 = rv.iter().sum();
            if s != 0.0 {
                let lo = xv.row_offsets()[i];
                for (k, _) in rv.iter().enumerate() {
                    vals[lo + k] /= s;
                }
            }
        }
        let value = SparseMatrix::from_sorted_parts(
            xv.n_rows(),
            xv.n_cols(),
            xv.row_offsets().to_vec(),
            xv.col_indices().to_vec(),
            vals,
        );
        let needs = self.needs(x);
        Ok(self.push(Value::Sparse(value), Op::RowNormSp { x }, needs))
    }

    /// Adds `gamma` to the diagonal of a sparse-valued node. `gamma` is a
    /// hyper-parameter, not differentiated.
    pub fn add_scaled_eye(&mut self, x: NodeId, gamma: f64) -> Result<NodeId> {
        let xv = self.sparse(x)?;
        if xv.n_rows() != xv.n_cols() {
            return Err(Error::Shape {
                op: "add_scaled_eye",
                detail: format!("matrix is {}x{}", xv.n_rows(), xv.n_cols()),
            });
        }
        // Merge the diagonal into the pattern, keeping exact zeros.
        let n = xv.n_rows();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0usize);
        let mut cols = Vec::with_capacity(xv.nnz() + n);
        let mut vals = Vec::with_capacity(xv.nnz() + n);
        for i in 0..n {
            let (rc, rv) = xv.row(i);
            let mut placed = false;
            for (&c, &v) in rc.iter().zip(rv) {
                if !placed && c >= i {
                    if c == i {
                        cols.push(c);
                        vals.push(v + gamma);
                    } else {
                        cols.push(i);
                        vals.push(gamma);
                        cols.push(c);
                        vals.push(v);
                    }
                    placed = true;
                    continue;
                }
                cols.push(c);
                vals.push(v);
            }
            if !placed {
                cols.push(i);
                vals.push(gamma);
            }
            offsets.push(cols.len());
        }
        let value = SparseMatrix::from_sorted_parts(n, n, offsets, cols, vals);
        let needs = self.needs(x);
        Ok(self.push(Value::Sparse(value), Op::AddScaledEye { x }, needs))
    }

    /// Sparse-valued node applied to dense features.
    pub fn sp_apply(&mut self, a: NodeId, z: NodeId) -> Result<NodeId> {
        let value = crate::sparse::spdm(self.sparse(a)?, self.dense(z)?)?;
        let needs = self.needs(a) || self.needs(z);
        Ok(self.push(Value::Dense(value), Op::SpApply { a, z }, needs))
    }

    /// Top-n sparsified, row-softmaxed affinity matrix from projected
    /// representations. The selection pattern is treated as locally constant
    /// under differentiation; gradients flow through the kept entries only.
    pub fn nonlocal_build(&mut self, g: NodeId, top_n: usize) -> Result<NodeId> {
        let value = nonlocal_from_projected(self.dense(g)?, top_n)?;
        let needs = self.needs(g);
        Ok(self.push(Value::Sparse(value), Op::NonLocalBuild { g }, needs))
    }

    /// Mean cross-entropy over the masked nodes, computed from logits with
    /// log-sum-exp stabilization. Returns a `1 x 1` node.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        labels: Vec<i64>,
        mask: Vec<usize>,
    ) -> Result<NodeId> {
        let lv = self.dense(logits)?;
        if mask.is_empty() {
            return Err(Error::Empty { what: "loss mask" });
        }
        if labels.len() != lv.n_rows() {
            return Err(Error::Shape {
                op: "cross_entropy",
                detail: format!(
                    "{} labels for {} rows",
                    labels.len(),
                    lv.n_rows()
                ),
            });
        }
        let n_classes = lv.n_cols() as i64;
        let mut total = 0.0;
        for &i in &mask {
            if i >= lv.n_rows() {
                return Err(Error::NodeOutOfRange {
                    node: i,
                    n_nodes: lv.n_rows(),
                });
            }
            let label = labels[i];
            if label < 0 || label >= n_classes {
                return Err(Error::InvalidLabel {
                    node: i,
                    label,
                    n_classes: n_classes as usize,
                });
            }
            let row = lv.row(i);
            total += num::log_sum_exp(row) - row[label as usize];
        }
        let value = DenseMatrix::from_vec(1, 1, vec![total / mask.len() as f64])?;
        let needs = self.needs(logits);
        Ok(self.push(
            Value::Dense(value),
            Op::CrossEntropy {
                logits,
                labels,
                mask,
            },
            needs,
        ))
    }

    /// Runs the adjoints in reverse creation order starting from a scalar
    /// root and collects parameter gradients. Consuming `self` makes a
    /// second replay of the same tape impossible.
    pub fn backward(self, root: NodeId) -> Result<Gradients> {
        let Tape { nodes } = self;
        {
            let rv = match &nodes[root].value {
                Value::Dense(d) => d,
                Value::Sparse(_) => {
                    return Err(Error::Shape {
                        op: "backward",
                        detail: "root must be a scalar node".into(),
                    })
                }
            };
            if rv.n_rows() != 1 || rv.n_cols() != 1 {
                return Err(Error::Shape {
                    op: "backward",
                    detail: format!("root is {}x{}, expected 1x1", rv.n_rows(), rv.n_cols()),
                });
            }
        }
        let mut grads: Vec<Option<Grad>> = nodes.iter().map(|_| None).collect();
        grads[root] = Some(Grad::Dense(DenseMatrix::from_vec(1, 1, vec![1.0])?));

        fn dense_of(nodes: &[Node], id: NodeId) -> &DenseMatrix {
            match &nodes[id].value {
                Value::Dense(d) => d,
                Value::Sparse(_) => unreachable!("builder enforced a dense input"),
            }
        }
        fn sparse_of(nodes: &[Node], id: NodeId) -> &SparseMatrix {
            match &nodes[id].value {
                Value::Sparse(s) => s,
                Value::Dense(_) => unreachable!("builder enforced a sparse input"),
            }
        }

        fn add_dense(
            grads: &mut [Option<Grad>],
            nodes: &[Node],
            id: NodeId,
            update: impl FnOnce(&mut DenseMatrix),
        ) {
            if !nodes[id].needs_grad {
                return;
            }
            if grads[id].is_none() {
                let (r, c) = match &nodes[id].value {
                    Value::Dense(d) => (d.n_rows(), d.n_cols()),
                    Value::Sparse(_) => unreachable!("dense gradient for sparse node"),
                };
                grads[id] = Some(Grad::Dense(DenseMatrix::zeros(r, c)));
            }
            match grads[id].as_mut() {
                Some(Grad::Dense(d)) => update(d),
                _ => unreachable!(),
            }
        }

        fn add_sparse(
            grads: &mut [Option<Grad>],
            nodes: &[Node],
            id: NodeId,
            update: impl FnOnce(&mut [f64]),
        ) {
            if !nodes[id].needs_grad {
                return;
            }
            if grads[id].is_none() {
                let nnz = match &nodes[id].value {
                    Value::Sparse(s) => s.nnz(),
                    Value::Dense(_) => unreachable!("sparse gradient for dense node"),
                };
                grads[id] = Some(Grad::SparseVals(vec![0.0; nnz]));
            }
            match grads[id].as_mut() {
                Some(Grad::SparseVals(v)) => update(v),
                _ => unreachable!(),
            }
        }

        for id in (0..=root).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            match (&nodes[id].op, grad) {
                (Op::ConstDense | Op::ConstSparse, _) => {}
                (Op::Param(_), g) => {
                    // Re-stash; collected after the sweep.
                    grads[id] = Some(g);
                }
                (Op::MatMul { a, b }, Grad::Dense(g)) => {
                    if nodes[*a].needs_grad {
                        let da = g.matmul_nt(dense_of(&nodes, *b))?;
                        add_dense(&mut grads, &nodes, *a, |d| {
                            d.add_assign(&da).expect("shape fixed")
                        });
                    }
                    if nodes[*b].needs_grad {
                        let db = dense_of(&nodes, *a).matmul_tn(&g)?;
                        add_dense(&mut grads, &nodes, *b, |d| {
                            d.add_assign(&db).expect("shape fixed")
                        });
                    }
                }
                (Op::AddBiasRow { x, b }, Grad::Dense(g)) => {
                    add_dense(&mut grads, &nodes, *x, |d| {
                        d.add_assign(&g).expect("shape fixed")
                    });
                    if nodes[*b].needs_grad {
                        let sums = g.col_sums();
                        add_dense(&mut grads, &nodes, *b, |d| {
                            for (v, s) in d.row_mut(0).iter_mut().zip(sums) {
                                *v += s;
                            }
                        });
                    }
                }
                (Op::Relu { x }, Grad::Dense(g)) => {
                    let xv = dense_of(&nodes, *x);
                    let mut dx = g;
                    for (d, &xval) in dx.values_mut().iter_mut().zip(xv.values()) {
                        if xval <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    add_dense(&mut grads, &nodes, *x, |d| {
                        d.add_assign(&dx).expect("shape fixed")
                    });
                }
                (Op::Tanh { x }, Grad::Dense(g)) => {
                    let yv = dense_of(&nodes, id);
                    let mut dx = g;
                    for (d, &y) in dx.values_mut().iter_mut().zip(yv.values()) {
                        *d *= 1.0 - y * y;
                    }
                    add_dense(&mut grads, &nodes, *x, |d| {
                        d.add_assign(&dx).expect("shape fixed")
                    });
                }
                (Op::Dropout { x, mask }, Grad::Dense(g)) => {
                    let mut dx = g;
                    for (d, &m) in dx.values_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    add_dense(&mut grads, &nodes, *x, |d| {
                        d.add_assign(&dx).expect("shape fixed")
                    });
                }
                (Op::Lincomb { a, b, ca, cb }, Grad::Dense(g)) => {
                    if nodes[*a].needs_grad {
                        let da = g.scale(*ca);
                        add_dense(&mut grads, &nodes, *a, |d| {
                            d.add_assign(&da).expect("shape fixed")
                        });
                    }
                    if nodes[*b].needs_grad {
                        let db = g.scale(*cb);
                        add_dense(&mut grads, &nodes, *b, |d| {
                            d.add_assign(&db).expect("shape fixed")
                        });
                    }
                }
                (Op::MeanStack { xs }, Grad::Dense(g)) => {
                    let share = g.scale(1.0 / xs.len() as f64);
                    for &x in xs {
                        add_dense(&mut grads, &nodes, x, |d| {
                            d.add_assign(&share).expect("shape fixed")
                        });
                    }
                }
                (Op::SumStack { xs }, Grad::Dense(g)) => {
                    for &x in xs {
                        add_dense(&mut grads, &nodes, x, |d| {
                            d.add_assign(&g).expect("shape fixed")
                        });
                    }
                }
                (Op::ConcatCols { xs }, Grad::Dense(g)) => {
                    let mut offset = 0;
                    for &x in xs {
                        let w = dense_of(&nodes, x).n_cols();
                        if nodes[x].needs_grad {
                            let rows = g.n_rows();
                            let mut slice = DenseMatrix::zeros(rows, w);
                            for i in 0..rows {
                                slice
                                    .row_mut(i)
                                    .copy_from_slice(&g.row(i)[offset..offset + w]);
                            }
                            add_dense(&mut grads, &nodes, x, |d| {
                                d.add_assign(&slice).expect("shape fixed")
                            });
                        }
                        offset += w;
                    }
                }
                (Op::RowSoftmax { x }, Grad::Dense(g)) => {
                    let yv = dense_of(&nodes, id);
                    let mut dx = DenseMatrix::zeros(yv.n_rows(), yv.n_cols());
                    for i in 0..yv.n_rows() {
                        let yrow = yv.row(i);
                        let grow = g.row(i);
                        let dot: f64 = yrow.iter().zip(grow).map(|(&y, &gg)| y * gg).sum();
                        let drow = dx.row_mut(i);
                        for ((d, &y), &gg) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d = y * (gg - dot);
                        }
                    }
                    add_dense(&mut grads, &nodes, *x, |d| {
                        d.add_assign(&dx).expect("shape fixed")
                    });
                }
                (
                    Op::SelectApply {
                        alpha,
                        channel,
                        z,
                        mats,
                    },
                    Grad::Dense(g),
                ) => {
                    let weights: Vec<f64> =
                        dense_of(&nodes, *alpha).row(*channel).to_vec();
                    let zv = dense_of(&nodes, *z);
                    let want_alpha = nodes[*alpha].needs_grad;
                    let want_z = nodes[*z].needs_grad;
                    let mut dz = want_z.then(|| DenseMatrix::zeros(zv.n_rows(), zv.n_cols()));
                    let mut dalpha = vec![0.0; mats.len()];
                    for (t, &mid) in mats.iter().enumerate() {
                        let m = sparse_of(&nodes, mid);
                        let want_mat = nodes[mid].needs_grad;
                        let mut dm = want_mat.then(|| vec![0.0; m.nnz()]);
                        let w = weights[t];
                        let mut k = 0usize;
                        for i in 0..m.n_rows() {
                            let (cols, vals) = m.row(i);
                            let grow = g.row(i);
                            for (&j, &v) in cols.iter().zip(vals) {
                                if want_alpha || want_mat {
                                    let zrow = zv.row(j);
                                    let mut dot = 0.0;
                                    for (zz, gg) in zrow.iter().zip(grow) {
                                        dot += zz * gg;
                                    }
                                    if want_alpha {
                                        dalpha[t] += v * dot;
                                    }
                                    if let Some(dm) = dm.as_mut() {
                                        dm[k] += w * dot;
                                    }
                                }
                                if let Some(dz) = dz.as_mut() {
                                    if w != 0.0 {
                                        let wv = w * v;
                                        let drow = dz.row_mut(j);
                                        for (d, &gg) in drow.iter_mut().zip(grow) {
                                            *d += wv * gg;
                                        }
                                    }
                                }
                                k += 1;
                            }
                        }
                        if let Some(dm) = dm {
                            add_sparse(&mut grads, &nodes, mid, |vals| {
                                for (v, d) in vals.iter_mut().zip(dm) {
                                    *v += d;
                                }
                            });
                        }
                    }
                    if let Some(dz) = dz {
                        add_dense(&mut grads, &nodes, *z, |d| {
                            d.add_assign(&dz).expect("shape fixed")
                        });
                    }
                    if want_alpha {
                        let ch = *channel;
                        add_dense(&mut grads, &nodes, *alpha, |d| {
                            for (v, delta) in d.row_mut(ch).iter_mut().zip(dalpha) {
                                *v += delta;
                            }
                        });
                    }
                }
                (
                    Op::SelectSparse {
                        alpha,
                        channel,
                        mats,
                    },
                    Grad::SparseVals(g),
                ) => {
                    let out = sparse_of(&nodes, id);
                    let weights: Vec<f64> =
                        dense_of(&nodes, *alpha).row(*channel).to_vec();
                    let want_alpha = nodes[*alpha].needs_grad;
                    let mut dalpha = vec![0.0; mats.len()];
                    for (t, &mid) in mats.iter().enumerate() {
                        let m = sparse_of(&nodes, mid);
                        let want_mat = nodes[mid].needs_grad;
                        let mut dm = want_mat.then(|| vec![0.0; m.nnz()]);
                        let w = weights[t];
                        let mut k = 0usize;
                        for i in 0..m.n_rows() {
                            let (mc, mv) = m.row(i);
                            let (oc, _) = out.row(i);
                            let olo = out.row_offsets()[i];
                            // The output pattern contains every candidate
                            // pattern; walk both sorted column lists.
                            let mut p = 0usize;
                            for (&c, &v) in mc.iter().zip(mv) {
                                while oc[p] < c {
                                    p += 1;
                                }
                                debug_assert_eq!(oc[p], c);
                                let gval = g[olo + p];
                                if want_alpha {
                                    dalpha[t] += v * gval;
                                }
                                if let Some(dm) = dm.as_mut() {
                                    dm[k] += w * gval;
                                }
                                k += 1;
                            }
                        }
                        if let Some(dm) = dm {
                            add_sparse(&mut grads, &nodes, mid, |vals| {
                                for (v, d) in vals.iter_mut().zip(dm) {
                                    *v += d;
                                }
                            });
                        }
                    }
                    if want_alpha {
                        let ch = *channel;
                        add_dense(&mut grads, &nodes, *alpha, |d| {
                            for (v, delta) in d.row_mut(ch).iter_mut().zip(dalpha) {
                                *v += delta;
                            }
                        });
                    }
                }
                (Op::SpMM { a, b }, Grad::SparseVals(g)) => {
                    let av = sparse_of(&nodes, *a);
                    let bv = sparse_of(&nodes, *b);
                    let out = sparse_of(&nodes, id);
                    if nodes[*a].needs_grad {
                        // dA[i,k] = sum_j gC[i,j] B[k,j]: sparse dot of the
                        // output-grad row and the B row.
                        let mut da = vec![0.0; av.nnz()];
                        let mut ka = 0usize;
                        for i in 0..av.n_rows() {
                            let (ac, _) = av.row(i);
                            let (oc, _) = out.row(i);
                            let olo = out.row_offsets()[i];
                            for &k in ac {
                                let (bc, bvals) = bv.row(k);
                                let mut p = 0usize;
                                let mut q = 0usize;
                                let mut acc = 0.0;
                                while p < oc.len() && q < bc.len() {
                                    match oc[p].cmp(&bc[q]) {
                                        core::cmp::Ordering::Less => p += 1,
                                        core::cmp::Ordering::Greater => q += 1,
                                        core::cmp::Ordering::Equal => {
                                            acc += g[olo + p] * bvals[q];
                                            p += 1;
                                            q += 1;
                                        }
                                    }
                                }
                                da[ka] += acc;
                                ka += 1;
                            }
                        }
                        add_sparse(&mut grads, &nodes, *a, |vals| {
                            for (v, d) in vals.iter_mut().zip(da) {
                                *v += d;
                            }
                        });
                    }
                    if nodes[*b].needs_grad {
                        // dB[k,j] = sum_i A[i,k] gC[i,j], restricted to B's
                        // stored pattern.
                        let mut db = vec![0.0; bv.nnz()];
                        for i in 0..av.n_rows() {
                            let (ac, avals) = av.row(i);
                            let (oc, _) = out.row(i);
                            let olo = out.row_offsets()[i];
                            for (&k, &aval) in ac.iter().zip(avals) {
                                let (bc, _) = bv.row(k);
                                let blo = bv.row_offsets()[k];
                                for (p, &j) in oc.iter().enumerate() {
                                    if let Ok(pos) = bc.binary_search(&j) {
                                        db[blo + pos] += aval * g[olo + p];
                                    }
                                }
                            }
                        }
                        add_sparse(&mut grads, &nodes, *b, |vals| {
                            for (v, d) in vals.iter_mut().zip(db) {
                                *v += d;
                            }
                        });
                    }
                }
                (Op::RowNormSp { x }, Grad::SparseVals(g)) => {
                    let xv = sparse_of(&nodes, *x);
                    let yv = sparse_of(&nodes, id);
                    let mut dx = vec![0.0; xv.nnz()];
                    for i in 0..xv.n_rows() {
                        let (_, xr) = xv.row(i);
                        let (_, yr) = yv.row(i);
                        let lo = xv.row_offsets()[i];
                        let s: f64 = xr.iter().sum();
                        if s == 0.0 {
                            for (k, _) in xr.iter().enumerate() {
                                dx[lo + k] += g[lo + k];
                            }
                        } else {
                            let mut dot = 0.0;
                            for (k, &y) in yr.iter().enumerate() {
                                dot += g[lo + k] * y;
                            }
                            for (k, _) in xr.iter().enumerate() {
                                dx[lo + k] += (g[lo + k] - dot) / s;
                            }
                        }
                    }
                    add_sparse(&mut grads, &nodes, *x, |vals| {
                        for (v, d) in vals.iter_mut().zip(dx) {
                            *v += d;
                        }
                    });
                }
                (Op::AddScaledEye { x }, Grad::SparseVals(g)) => {
                    let xv = sparse_of(&nodes, *x);
                    let yv = sparse_of(&nodes, id);
                    let mut dx = vec![0.0; xv.nnz()];
                    for i in 0..xv.n_rows() {
                        let (xc, _) = xv.row(i);
                        let (yc, _) = yv.row(i);
                        let xlo = xv.row_offsets()[i];
                        let ylo = yv.row_offsets()[i];
                        let mut p = 0usize;
                        for (k, &c) in xc.iter().enumerate() {
                            while yc[p] < c {
                                p += 1;
                            }
                            debug_assert_eq!(yc[p], c);
                            dx[xlo + k] += g[ylo + p];
                        }
                    }
                    add_sparse(&mut grads, &nodes, *x, |vals| {
                        for (v, d) in vals.iter_mut().zip(dx) {
                            *v += d;
                        }
                    });
                }
                (Op::SpApply { a, z }, Grad::Dense(g)) => {
                    let av = sparse_of(&nodes, *a);
                    let zv = dense_of(&nodes, *z);
                    let want_a = nodes[*a].needs_grad;
                    let want_z = nodes[*z].needs_grad;
                    let mut da = want_a.then(|| vec![0.0; av.nnz()]);
                    let mut dz = want_z.then(|| DenseMatrix::zeros(zv.n_rows(), zv.n_cols()));
                    let mut k = 0usize;
                    for i in 0..av.n_rows() {
                        let (cols, vals) = av.row(i);
                        let grow = g.row(i);
                        for (&j, &v) in cols.iter().zip(vals) {
                            if let Some(da) = da.as_mut() {
                                let zrow = zv.row(j);
                                let mut dot = 0.0;
                                for (zz, gg) in zrow.iter().zip(grow) {
                                    dot += zz * gg;
                                }
                                da[k] += dot;
                            }
                            if let Some(dz) = dz.as_mut() {
                                let drow = dz.row_mut(j);
                                for (d, &gg) in drow.iter_mut().zip(grow) {
                                    *d += v * gg;
                                }
                            }
                            k += 1;
                        }
                    }
                    if let Some(da) = da {
                        add_sparse(&mut grads, &nodes, *a, |vals| {
                            for (v, d) in vals.iter_mut().zip(da) {
                                *v += d;
                            }
                        });
                    }
                    if let Some(dz) = dz {
                        add_dense(&mut grads, &nodes, *z, |d| {
                            d.add_assign(&dz).expect("shape fixed")
                        });
                    }
                }
                (Op::NonLocalBuild { g: gid }, Grad::SparseVals(grad)) => {
                    let gv = dense_of(&nodes, *gid);
                    let yv = sparse_of(&nodes, id);
                    let mut dg = DenseMatrix::zeros(gv.n_rows(), gv.n_cols());
                    for i in 0..yv.n_rows() {
                        let (cols, probs) = yv.row(i);
                        let lo = yv.row_offsets()[i];
                        let mut dot = 0.0;
                        for (k, &p) in probs.iter().enumerate() {
                            dot += grad[lo + k] * p;
                        }
                        for (k, (&j, &p)) in cols.iter().zip(probs).enumerate() {
                            let dm = p * (grad[lo + k] - dot);
                            if dm == 0.0 {
                                continue;
                            }
                            // M[i,j] = G[i,:] . G[j,:]
                            for col in 0..gv.n_cols() {
                                let gi = gv.get(i, col);
                                let gj = gv.get(j, col);
                                dg.set(i, col, dg.get(i, col) + dm * gj);
                                dg.set(j, col, dg.get(j, col) + dm * gi);
                            }
                        }
                    }
                    add_dense(&mut grads, &nodes, *gid, |d| {
                        d.add_assign(&dg).expect("shape fixed")
                    });
                }
                (
                    Op::CrossEntropy {
                        logits,
                        labels,
                        mask,
                    },
                    Grad::Dense(g),
                ) => {
                    let scale = g.get(0, 0) / mask.len() as f64;
                    let lv = dense_of(&nodes, *logits);
                    let mut dl = DenseMatrix::zeros(lv.n_rows(), lv.n_cols());
                    for &i in mask {
                        let sm = num::softmax(lv.row(i));
                        let label = labels[i] as usize;
                        let drow = dl.row_mut(i);
                        for (c, (d, s)) in drow.iter_mut().zip(sm).enumerate() {
                            let ind = if c == label { 1.0 } else { 0.0 };
                            *d += (s - ind) * scale;
                        }
                    }
                    add_dense(&mut grads, &nodes, *logits, |d| {
                        d.add_assign(&dl).expect("shape fixed")
                    });
                }
                (op, _) => {
                    return Err(Error::InvalidParams(format!(
                        "gradient kind mismatch at node {id}: {op:?}"
                    )))
                }
            }
        }

        let mut map = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if let Op::Param(key) = node.op {
                let grad = match grads[id].take() {
                    Some(Grad::Dense(d)) => d,
                    _ => match &node.value {
                        Value::Dense(d) => DenseMatrix::zeros(d.n_rows(), d.n_cols()),
                        Value::Sparse(_) => unreachable!("params are dense"),
                    },
                };
                map.insert(key, grad);
            }
        }
        Ok(Gradients { map })
    }
}
