use crate::{Error, Result};

use super::tensor::{matmul_into, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(usize, usize),
    /// Per-block left product `(I_B ⊗ P) X` where `P` is an untracked
    /// `n×n` matrix and `X` has `B·n` rows. Used to apply a graph
    /// transition matrix to a batch of stacked node-feature matrices.
    BlockMatmul {
        p: usize,
        x: usize,
        n: usize,
    },
    Add(usize, usize),
    /// Row-broadcast add: `(R×C) + (1×C)`.
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ConcatCols(usize, usize),
    SliceRows {
        x: usize,
        rows: Vec<usize>,
    },
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Mean(usize),
    Sum(usize),
    Scale {
        x: usize,
        c: f64,
    },
    AddScalar(usize),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    needs_grad: bool,
    op: Op,
}

/// Records forward operations and backpropagates a scalar loss.
///
/// Gradients accumulate across repeated [`Tape::backward`] calls; a fresh
/// tape (the usual pattern: one per optimizer step) starts from zero.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Insert a leaf. Tracked leaves receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor, tracked: bool) -> Var {
        self.push(value, tracked, Op::Leaf)
    }

    /// Untracked leaf; shorthand for inputs and constants.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a node, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.cols() != tb.rows() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let value = ta.matmul(tb)?;
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(value, needs, Op::Matmul(a.0, b.0)))
    }

    /// Apply the `n×n` matrix `p` to each `n`-row block of `x`.
    /// `p` must be untracked (graph transition matrices are constants).
    pub fn block_matmul(&mut self, p: Var, x: Var, n: usize) -> Result<Var> {
        let (tp, tx) = (&self.nodes[p.0].value, &self.nodes[x.0].value);
        if tp.rows() != n || tp.cols() != n || tx.rows() % n != 0 {
            return Err(Error::Shape {
                op: "block_matmul",
                lhs: tp.shape().to_vec(),
                rhs: tx.shape().to_vec(),
            });
        }
        if self.nodes[p.0].needs_grad {
            return Err(Error::Contract(
                "block_matmul expects an untracked block matrix".into(),
            ));
        }
        let value = block_apply(tp, tx, n, false);
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(value, needs, Op::BlockMatmul { p: p.0, x: x.0, n }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes("add", a, b)?;
        let value = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(value, needs, Op::Add(a.0, b.0)))
    }

    /// Add a `1×C` row vector to every row of an `R×C` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::Shape {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let mut value = ta.clone();
        let cols = value.cols();
        for i in 0..value.rows() {
            for j in 0..cols {
                let v = value.get(i, j) + tr.get(0, j);
                value.set(i, j, v);
            }
        }
        let needs = self.needs(&[a.0, row.0]);
        Ok(self.push(value, needs, Op::AddRow(a.0, row.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes("sub", a, b)?;
        let value = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(value, needs, Op::Sub(a.0, b.0)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes("mul", a, b)?;
        let value = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(value, needs, Op::Mul(a.0, b.0)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rows() != tb.rows() {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (rows, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut value = Tensor::zeros(rows, ca + cb);
        for i in 0..rows {
            for j in 0..ca {
                value.set(i, j, ta.get(i, j));
            }
            for j in 0..cb {
                value.set(i, ca + j, tb.get(i, j));
            }
        }
        let needs = self.needs(&[a.0, b.0]);
        Ok(self.push(value, needs, Op::ConcatCols(a.0, b.0)))
    }

    /// Select rows by index (repeats allowed); backward scatter-adds.
    pub fn slice_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        if let Some(&bad) = rows.iter().find(|&&r| r >= tx.rows()) {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: tx.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let cols = tx.cols();
        let mut value = Tensor::zeros(rows.len(), cols);
        for (i, &r) in rows.iter().enumerate() {
            for j in 0..cols {
                value.set(i, j, tx.get(r, j));
            }
        }
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(
            value,
            needs,
            Op::SliceRows {
                x: x.0,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.map(sigmoid);
        let needs = self.nodes[x.0].needs_grad;
        self.push(value, needs, Op::Sigmoid(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.map(f64::tanh);
        let needs = self.nodes[x.0].needs_grad;
        self.push(value, needs, Op::Tanh(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.map(|v| v.max(0.0));
        let needs = self.nodes[x.0].needs_grad;
        self.push(value, needs, Op::Relu(x.0))
    }

    /// Arithmetic mean of all entries, as a 1×1 tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let needs = self.nodes[x.0].needs_grad;
        self.push(Tensor::scalar(m), needs, Op::Mean(x.0))
    }

    /// Sum of all entries, as a 1×1 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum::<f64>();
        let needs = self.nodes[x.0].needs_grad;
        self.push(Tensor::scalar(s), needs, Op::Sum(x.0))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.nodes[x.0].value.map(|v| v * c);
        let needs = self.nodes[x.0].needs_grad;
        self.push(value, needs, Op::Scale { x: x.0, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.nodes[x.0].value.map(|v| v + c);
        let needs = self.nodes[x.0].needs_grad;
        self.push(value, needs, Op::AddScalar(x.0))
    }

    /// Backpropagate from a scalar loss. Gradients of tracked leaves (and
    /// every intermediate that feeds them) accumulate into `grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        // Per-pass buffers; persistent grads only collect the final sums so
        // repeated backward calls accumulate rather than compound.
        let mut pass: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        pass[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = pass[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut pass);
            match &mut self.nodes[id].grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Tensor, pass: &mut [Option<Tensor>]) {
        let add_to = |pass: &mut [Option<Tensor>], target: usize, contrib: Tensor| {
            match &mut pass[target] {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(contrib.data()) {
                        *a += b;
                    }
                }
                slot => *slot = Some(contrib),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if self.nodes[*a].needs_grad {
                    // dA = g · Bᵀ
                    let mut da = Tensor::zeros(ta.rows(), ta.cols());
                    matmul_into(g, &tb.transpose(), da.data_mut());
                    add_to(pass, *a, da);
                }
                if self.nodes[*b].needs_grad {
                    // dB = Aᵀ · g
                    let mut db = Tensor::zeros(tb.rows(), tb.cols());
                    matmul_into(&ta.transpose(), g, db.data_mut());
                    add_to(pass, *b, db);
                }
            }
            Op::BlockMatmul { p, x, n } => {
                if self.nodes[*x].needs_grad {
                    let dx = block_apply(&self.nodes[*p].value, g, *n, true);
                    add_to(pass, *x, dx);
                }
            }
            Op::Add(a, b) => {
                if self.nodes[*a].needs_grad {
                    add_to(pass, *a, g.clone());
                }
                if self.nodes[*b].needs_grad {
                    add_to(pass, *b, g.clone());
                }
            }
            Op::AddRow(a, row) => {
                if self.nodes[*a].needs_grad {
                    add_to(pass, *a, g.clone());
                }
                if self.nodes[*row].needs_grad {
                    let mut dr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            let v = dr.get(0, j) + g.get(i, j);
                            dr.set(0, j, v);
                        }
                    }
                    add_to(pass, *row, dr);
                }
            }
            Op::Sub(a, b) => {
                if self.nodes[*a].needs_grad {
                    add_to(pass, *a, g.clone());
                }
                if self.nodes[*b].needs_grad {
                    add_to(pass, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[*a].needs_grad {
                    add_to(pass, *a, zip_map(g, &self.nodes[*b].value, |x, y| x * y));
                }
                if self.nodes[*b].needs_grad {
                    add_to(pass, *b, zip_map(g, &self.nodes[*a].value, |x, y| x * y));
                }
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.nodes[*a].value.cols(), self.nodes[*b].value.cols());
                if self.nodes[*a].needs_grad {
                    let mut da = Tensor::zeros(g.rows(), ca);
                    for i in 0..g.rows() {
                        for j in 0..ca {
                            da.set(i, j, g.get(i, j));
                        }
                    }
                    add_to(pass, *a, da);
                }
                if self.nodes[*b].needs_grad {
                    let mut db = Tensor::zeros(g.rows(), cb);
                    for i in 0..g.rows() {
                        for j in 0..cb {
                            db.set(i, j, g.get(i, ca + j));
                        }
                    }
                    add_to(pass, *b, db);
                }
            }
            Op::SliceRows { x, rows } => {
                let tx = &self.nodes[*x].value;
                let mut dx = Tensor::zeros(tx.rows(), tx.cols());
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..g.cols() {
                        let v = dx.get(r, j) + g.get(i, j);
                        dx.set(r, j, v);
                    }
                }
                add_to(pass, *x, dx);
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[id].value;
                add_to(pass, *x, zip_map(g, y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::Tanh(x) => {
                let y = &self.nodes[id].value;
                add_to(pass, *x, zip_map(g, y, |gv, yv| gv * (1.0 - yv * yv)));
            }
            Op::Relu(x) => {
                let input = &self.nodes[*x].value;
                add_to(pass, *x, zip_map(g, input, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::Mean(x) => {
                let tx = &self.nodes[*x].value;
                let gv = g.get(0, 0) / tx.len() as f64;
                add_to(pass, *x, tx.map(|_| gv));
            }
            Op::Sum(x) => {
                let tx = &self.nodes[*x].value;
                let gv = g.get(0, 0);
                add_to(pass, *x, tx.map(|_| gv));
            }
            Op::Scale { x, c } => {
                add_to(pass, *x, g.map(|v| v * c));
            }
            Op::AddScalar(x) => {
                add_to(pass, *x, g.clone());
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("zip_map shapes verified")
}

/// Apply `p` (or `pᵀ` when `transpose`) to each `n`-row block of `x`.
fn block_apply(p: &Tensor, x: &Tensor, n: usize, transpose: bool) -> Tensor {
    let blocks = x.rows() / n;
    let cols = x.cols();
    let mut out = Tensor::zeros(x.rows(), cols);
    for b in 0..blocks {
        let base = b * n;
        for i in 0..n {
            for k in 0..n {
                let pv = if transpose { p.get(k, i) } else { p.get(i, k) };
                if pv == 0.0 {
                    continue;
                }
                for j in 0..cols {
                    let v = out.get(base + i, j) + pv * x.get(base + k, j);
                    out.set(base + i, j, v);
                }
            }
        }
    }
    out
}
