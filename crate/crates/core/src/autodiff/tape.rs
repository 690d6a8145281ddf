//! Wengert tape over dense matrices.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order: backward walks indices downward and visits each node
//! once. Second-order terms (the gradient penalty) are handled by writing the
//! first-order input gradient out as ordinary tape operations, which the
//! single reverse sweep then differentiates with respect to the weights.

use crate::error::{AfrError, Result};
use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    /// Input or parameter; its value is owned by the tape.
    Leaf,
    /// `a · b`
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    /// `a + b` with `b` a `1 x cols` row broadcast over rows.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Element-wise product.
    Mul(Var, Var),
    Relu(Var),
    /// Horizontal concatenation.
    Concat(Var, Var),
    SliceCols(Var, usize, usize),
    /// Per-row Euclidean norm, `n x 1`.
    RowNorm(Var),
    AddScalar(Var, f64),
    Scale(Var, f64),
    Square(Var),
    /// Mean over all entries, `1 x 1`.
    Mean(Var),
    /// Sum over all entries, `1 x 1`.
    Sum(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match *self {
            Leaf => vec![],
            MatMul(a, b) | MatMulNt(a, b) | AddRow(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b)
            | Concat(a, b) => vec![a, b],
            Relu(a) | SliceCols(a, ..) | RowNorm(a) | AddScalar(a, _) | Scale(a, _) | Square(a)
            | Mean(a) | Sum(a) => vec![a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    degenerate_norms: usize,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; exactly zero when the loss
    /// does not depend on it.
    pub fn wrt(&self, var: Var) -> Matrix {
        match &self.adjoints[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> Matrix {
        match self.adjoints[var.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn eval(op: &Op, nodes: &[Node]) -> Result<(Matrix, bool)> {
    let v = |x: Var| &nodes[x.0].value;
    let mut degenerate = false;
    let out = match *op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => v(a).matmul(v(b))?,
        Op::MatMulNt(a, b) => v(a).matmul_nt(v(b))?,
        Op::AddRow(a, b) => v(a).add_row_broadcast(v(b))?,
        Op::Add(a, b) => v(a).add(v(b))?,
        Op::Sub(a, b) => v(a).sub(v(b))?,
        Op::Mul(a, b) => v(a).hadamard(v(b))?,
        Op::Relu(a) => v(a).map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::Concat(a, b) => v(a).hconcat(v(b))?,
        Op::SliceCols(a, s, e) => v(a).slice_cols(s, e)?,
        Op::RowNorm(a) => {
            let x = v(a);
            let norms: Vec<f64> = x
                .iter_rows()
                .map(|r| r.iter().map(|t| t * t).sum::<f64>().sqrt())
                .collect();
            degenerate = norms.iter().any(|&n| n == 0.0);
            Matrix::from_vec(x.rows(), 1, norms)
        }
        Op::AddScalar(a, s) => v(a).map(|x| x + s),
        Op::Scale(a, s) => v(a).scale(s),
        Op::Square(a) => v(a).map(|x| x * x),
        Op::Mean(a) => Matrix::scalar(v(a).mean()),
        Op::Sum(a) => Matrix::scalar(v(a).sum()),
    };
    Ok((out, degenerate))
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

    /// Count of rows whose norm was exactly zero in a `row_norm` node. Their
    /// derivative is taken as zero.
    pub fn degenerate_norms(&self) -> usize {
        self.degenerate_norms
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let (value, degenerate) = eval(&op, &self.nodes)?;
        if degenerate {
            self.degenerate_norms += value.as_slice().iter().filter(|&&n| n == 0.0).count();
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMulNt(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.push(Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Concat(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.push(Op::SliceCols(a, start, end))
    }

    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        self.push(Op::RowNorm(a))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.push(Op::AddScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.push(Op::Scale(a, s))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Square(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut fresh: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, &fresh)?.0,
            };
            fresh.push(Node {
                op: node.op.clone(),
                value,
            });
        }
        Ok(fresh.into_iter().map(|n| n.value).collect())
    }

    /// True when [`Tape::replay`] reproduces every cached value bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let replayed = self.replay()?;
        Ok(replayed.iter().zip(&self.nodes).all(|(r, n)| {
            r.shape() == n.value.shape()
                && r.as_slice()
                    .iter()
                    .zip(n.value.as_slice())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        }))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.shape() != (1, 1) {
            return Err(AfrError::Contract(format!(
                "backward needs a scalar loss, node {} is {}x{}",
                loss.0,
                loss_value.rows(),
                loss_value.cols()
            )));
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let contributions = self.local_grads(&node.op, &node.value, &g)?;
            for (var, contrib) in node.op.inputs().into_iter().zip(contributions) {
                match &mut adj[var.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            adj[i] = Some(g);
        }

        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    /// Vector-Jacobian products of one node, in the order of `op.inputs()`.
    fn local_grads(&self, op: &Op, out: &Matrix, g: &Matrix) -> Result<Vec<Matrix>> {
        let v = |x: Var| &self.nodes[x.0].value;
        Ok(match *op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => vec![g.matmul_nt(v(b))?, v(a).matmul_tn(g)?],
            Op::MatMulNt(a, b) => vec![g.matmul(v(b))?, g.matmul_tn(v(a))?],
            Op::AddRow(_, _) => vec![g.clone(), g.sum_rows()],
            Op::Add(_, _) => vec![g.clone(), g.clone()],
            Op::Sub(_, _) => vec![g.clone(), g.scale(-1.0)],
            Op::Mul(a, b) => vec![g.hadamard(v(b))?, g.hadamard(v(a))?],
            Op::Relu(a) => vec![g.zip_map(v(a), "relu", |gi, x| if x > 0.0 { gi } else { 0.0 })?],
            Op::Concat(a, _) => {
                let split = v(a).cols();
                vec![g.slice_cols(0, split)?, g.slice_cols(split, g.cols())?]
            }
            Op::SliceCols(a, s, e) => {
                let src = v(a);
                let mut full = Matrix::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    full.row_mut(r)[s..e].copy_from_slice(g.row(r));
                }
                vec![full]
            }
            Op::RowNorm(a) => {
                let x = v(a);
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = out.get(r, 0);
                    if norm == 0.0 {
                        continue;
                    }
                    let coef = g.get(r, 0) / norm;
                    for (d, xi) in dx.row_mut(r).iter_mut().zip(x.row(r)) {
                        *d = coef * xi;
                    }
                }
                vec![dx]
            }
            Op::AddScalar(..) => vec![g.clone()],
            Op::Scale(_, s) => vec![g.scale(s)],
            Op::Square(a) => vec![g.zip_map(v(a), "square", |gi, x| 2.0 * x * gi)?],
            Op::Mean(a) => {
                let x = v(a);
                let gi = g.item()? / (x.rows() * x.cols()) as f64;
                vec![Matrix::filled(x.rows(), x.cols(), gi)]
            }
            Op::Sum(a) => {
                let x = v(a);
                vec![Matrix::filled(x.rows(), x.cols(), g.item()?)]
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_parameter_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(3.0));
        let p = t.leaf(Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = t.square(x).unwrap();
        let loss = t.sum(y).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(p), Matrix::zeros(2, 2));
        assert_eq!(g.wrt(x).item().unwrap(), 6.0);
    }

    #[test]
    fn linear_squared_loss_closed_form() {
        // loss = (w·x - t)^2, dloss/dw = 2(w·x - t) x
        let xs = [0.5, -1.5, 2.0];
        let ws = [0.3, 0.2, -0.7];
        let target = 0.25;
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&xs));
        let w = t.leaf(Matrix::row_vector(&ws));
        let pred = t.matmul_nt(x, w).unwrap();
        let r = t.add_scalar(pred, -target).unwrap();
        let sq = t.square(r).unwrap();
        let loss = t.sum(sq).unwrap();
        let g = t.backward(loss).unwrap().wrt(w);
        let wx: f64 = xs.iter().zip(&ws).map(|(a, b)| a * b).sum();
        for (gi, xi) in g.as_slice().iter().zip(xs) {
            assert!((gi - 2.0 * (wx - target) * xi).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(x), Err(AfrError::Contract(_))));
    }

    #[test]
    fn zero_norm_row_has_zero_subgradient_and_is_flagged() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::new(2, 2, vec![0.0, 0.0, 3.0, 4.0]).unwrap());
        let n = t.row_norm(x).unwrap();
        let loss = t.sum(n).unwrap();
        assert_eq!(t.degenerate_norms(), 1);
        let g = t.backward(loss).unwrap().wrt(x);
        assert_eq!(&g.as_slice()[..2], &[0.0, 0.0]);
        assert!((g.get(1, 0) - 0.6).abs() < 1e-15 && (g.get(1, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn replay_reproduces_values() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::new(2, 3, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap());
        let b = t.leaf(Matrix::new(2, 3, vec![1.0, 2.0, -3.0, 0.5, 0.25, 0.0]).unwrap());
        let c = t.matmul_nt(a, b).unwrap();
        let r = t.relu(c).unwrap();
        let s = t.concat(r, a).unwrap();
        let q = t.slice_cols(s, 1, 4).unwrap();
        let nrm = t.row_norm(q).unwrap();
        let m = t.mean(nrm).unwrap();
        let _ = t.scale(m, 3.0).unwrap();
        assert!(t.replay_matches().unwrap());
    }
}
