//! Reverse-mode gradient tape over matrix-valued operations.
//!
//! Operations are recorded in evaluation order; [`Tape::backward`] walks the
//! record in reverse and accumulates adjoints. A tape is single-use: build a
//! computation, read its value, run backward once.

use super::matrix::{
    dot, gelu, gelu_derivative, l2_normalize_rows_kernel, matmul_kernel, matmul_nt_kernel,
    matmul_tn_kernel, row_norms, softmax_rows_kernel, Matrix,
};
use super::DiffError;

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRowVec(NodeId, NodeId),
    L2NormalizeRows(NodeId),
    SoftmaxRows(NodeId, f64),
    LnClamped(NodeId, f64),
    Gelu(NodeId),
    Sum(NodeId),
    StopGradient(NodeId),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Single-use record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    // Negative-control hook: added to the seed adjoint so the analytic
    // gradient is deliberately wrong. Zero in normal operation.
    adjoint_fault: f64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a differentiable input.
    pub fn input(&mut self, value: &Matrix) -> NodeId {
        self.push(value.clone(), Op::Leaf, true)
    }

    /// Registers a non-differentiable leaf.
    pub fn constant(&mut self, value: &Matrix) -> NodeId {
        self.push(value.clone(), Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Corrupts the backward pass by `delta`; negative-control hook for the
    /// gradient checker.
    pub fn inject_adjoint_fault(&mut self, delta: f64) {
        self.adjoint_fault = delta;
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn push_op(&mut self, value: Matrix, op: Op, parents: &[NodeId]) -> NodeId {
        let requires = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.push(value, op, requires)
    }

    /// A * B.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = matmul_kernel(self.value(a), self.value(b))?;
        Ok(self.push_op(value, Op::MatMul(a, b), &[a, b]))
    }

    /// A * B^T.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = matmul_nt_kernel(self.value(a), self.value(b))?;
        Ok(self.push_op(value, Op::MatMulNT(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = self.elementwise(a, b, "add", |x, y| x + y)?;
        Ok(self.push_op(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = self.elementwise(a, b, "sub", |x, y| x - y)?;
        Ok(self.push_op(value, Op::Sub(a, b), &[a, b]))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = self.elementwise(a, b, "mul", |x, y| x * y)?;
        Ok(self.push_op(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a).map(|v| v * factor);
        self.push_op(value, Op::Scale(a, factor), &[a])
    }

    /// Adds a 1 x n row vector to every row of an m x n matrix.
    pub fn add_row_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId, DiffError> {
        let (m, vec) = (self.value(a), self.value(v));
        if vec.rows() != 1 || vec.cols() != m.cols() {
            return Err(DiffError::ShapeMismatch(format!(
                "add_row_vec {}x{} + {}x{}",
                m.rows(),
                m.cols(),
                vec.rows(),
                vec.cols()
            )));
        }
        let mut value = m.clone();
        for r in 0..value.rows() {
            for (o, &b) in value.row_mut(r).iter_mut().zip(vec.row(0)) {
                *o += b;
            }
        }
        Ok(self.push_op(value, Op::AddRowVec(a, v), &[a, v]))
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = l2_normalize_rows_kernel(self.value(a))?;
        Ok(self.push_op(value, Op::L2NormalizeRows(a), &[a]))
    }

    pub fn softmax_rows(&mut self, a: NodeId, temperature: f64) -> Result<NodeId, DiffError> {
        let value = softmax_rows_kernel(self.value(a), temperature)?;
        Ok(self.push_op(value, Op::SoftmaxRows(a, temperature), &[a]))
    }

    /// Elementwise ln(max(x, floor)).
    pub fn ln_clamped(&mut self, a: NodeId, floor: f64) -> NodeId {
        let value = self.value(a).map(|v| v.max(floor).ln());
        self.push_op(value, Op::LnClamped(a, floor), &[a])
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(gelu);
        self.push_op(value, Op::Gelu(a), &[a])
    }

    /// Sum of all entries, as a 1x1 matrix.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.value(a).data().iter().sum();
        let value = Matrix::from_raw(1, 1, vec![total]);
        self.push_op(value, Op::Sum(a), &[a])
    }

    /// Mean of all entries, as a 1x1 matrix.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).data().len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Passes the value through; gradients do not flow past this node.
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).clone();
        self.push(value, Op::StopGradient(a), false)
    }

    fn elementwise(
        &self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, DiffError> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.shape() != mb.shape() {
            return Err(DiffError::ShapeMismatch(format!(
                "{name} {}x{} vs {}x{}",
                ma.rows(),
                ma.cols(),
                mb.rows(),
                mb.cols()
            )));
        }
        let data = ma
            .data()
            .iter()
            .zip(mb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Matrix::from_raw(ma.rows(), ma.cols(), data))
    }

    /// Recomputes every node value from the recorded operations. Replay of a
    /// well-formed tape is bit-identical to the original forward pass.
    pub fn replay(&self) -> Result<Vec<Matrix>, DiffError> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                Op::MatMul(a, b) => matmul_kernel(&values[a], &values[b])?,
                Op::MatMulNT(a, b) => matmul_nt_kernel(&values[a], &values[b])?,
                Op::Add(a, b) => zip_values(&values[a], &values[b], |x, y| x + y),
                Op::Sub(a, b) => zip_values(&values[a], &values[b], |x, y| x - y),
                Op::Mul(a, b) => zip_values(&values[a], &values[b], |x, y| x * y),
                Op::Scale(a, s) => values[a].map(|v| v * s),
                Op::AddRowVec(a, v) => {
                    let mut out = values[a].clone();
                    for r in 0..out.rows() {
                        for (o, &b) in out.row_mut(r).iter_mut().zip(values[v].row(0)) {
                            *o += b;
                        }
                    }
                    out
                }
                Op::L2NormalizeRows(a) => l2_normalize_rows_kernel(&values[a])?,
                Op::SoftmaxRows(a, t) => softmax_rows_kernel(&values[a], t)?,
                Op::LnClamped(a, f) => values[a].map(|v| v.max(f).ln()),
                Op::Gelu(a) => values[a].map(gelu),
                Op::Sum(a) => Matrix::from_raw(1, 1, vec![values[a].data().iter().sum()]),
                Op::StopGradient(a) => values[a].clone(),
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Runs the reverse pass from a scalar output and returns all adjoints
    /// (zero matrices for nodes the output does not depend on).
    pub fn backward(&self, output: NodeId) -> Result<Vec<Matrix>, DiffError> {
        let out = &self.nodes[output].value;
        if out.shape() != (1, 1) {
            return Err(DiffError::NonScalarOutput {
                rows: out.rows(),
                cols: out.cols(),
            });
        }
        let mut adjoints: Vec<Matrix> = self
            .nodes
            .iter()
            .map(|n| Matrix::zeros(n.value.rows(), n.value.cols()))
            .collect();
        adjoints[output].set(0, 0, 1.0 + self.adjoint_fault);

        for id in (0..=output).rev() {
            if !self.nodes[id].requires_grad && !matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let grad = adjoints[id].clone();
            match self.nodes[id].op {
                Op::Leaf | Op::StopGradient(_) => {}
                Op::MatMul(a, b) => {
                    if self.nodes[a].requires_grad {
                        let da = matmul_nt_kernel(&grad, &self.nodes[b].value)?;
                        accumulate(&mut adjoints[a], &da);
                    }
                    if self.nodes[b].requires_grad {
                        let db = matmul_tn_kernel(&self.nodes[a].value, &grad)?;
                        accumulate(&mut adjoints[b], &db);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.nodes[a].requires_grad {
                        let da = matmul_kernel(&grad, &self.nodes[b].value)?;
                        accumulate(&mut adjoints[a], &da);
                    }
                    if self.nodes[b].requires_grad {
                        let db = matmul_tn_kernel(&grad, &self.nodes[a].value)?;
                        accumulate(&mut adjoints[b], &db);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a].requires_grad {
                        accumulate(&mut adjoints[a], &grad);
                    }
                    if self.nodes[b].requires_grad {
                        accumulate(&mut adjoints[b], &grad);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a].requires_grad {
                        accumulate(&mut adjoints[a], &grad);
                    }
                    if self.nodes[b].requires_grad {
                        subtract(&mut adjoints[b], &grad);
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a].requires_grad {
                        let da = zip_values(&grad, &self.nodes[b].value, |g, y| g * y);
                        accumulate(&mut adjoints[a], &da);
                    }
                    if self.nodes[b].requires_grad {
                        let db = zip_values(&grad, &self.nodes[a].value, |g, x| g * x);
                        accumulate(&mut adjoints[b], &db);
                    }
                }
                Op::Scale(a, s) => {
                    if self.nodes[a].requires_grad {
                        let da = grad.map(|g| g * s);
                        accumulate(&mut adjoints[a], &da);
                    }
                }
                Op::AddRowVec(a, v) => {
                    if self.nodes[a].requires_grad {
                        accumulate(&mut adjoints[a], &grad);
                    }
                    if self.nodes[v].requires_grad {
                        let mut dv = Matrix::zeros(1, grad.cols());
                        for r in 0..grad.rows() {
                            for (o, &g) in dv.row_mut(0).iter_mut().zip(grad.row(r)) {
                                *o += g;
                            }
                        }
                        accumulate(&mut adjoints[v], &dv);
                    }
                }
                Op::L2NormalizeRows(a) => {
                    if self.nodes[a].requires_grad {
                        let x = &self.nodes[a].value;
                        let y = &self.nodes[id].value;
                        let norms = row_norms(x);
                        let mut da = Matrix::zeros(x.rows(), x.cols());
                        for r in 0..x.rows() {
                            let g = grad.row(r);
                            let yr = y.row(r);
                            let gy = dot(g, yr);
                            for ((o, &gj), &yj) in da.row_mut(r).iter_mut().zip(g).zip(yr) {
                                *o = (gj - gy * yj) / norms[r];
                            }
                        }
                        accumulate(&mut adjoints[a], &da);
                    }
                }
                Op::SoftmaxRows(a, t) => {
                    if self.nodes[a].requires_grad {
                        let y = &self.nodes[id].value;
                        let mut da = Matrix::zeros(y.rows(), y.cols());
                        for r in 0..y.rows() {
                            let g = grad.row(r);
                            let yr = y.row(r);
                            let gy = dot(g, yr);
                            for ((o, &gj), &yj) in da.row_mut(r).iter_mut().zip(g).zip(yr) {
                                *o = yj * (gj - gy) / t;
                            }
                        }
                        accumulate(&mut adjoints[a], &da);
                    }
                }
                Op::LnClamped(a, floor) => {
                    if self.nodes[a].requires_grad {
                        let x = &self.nodes[a].value;
                        let da = zip_values(&grad, x, |g, v| if v > floor { g / v } else { 0.0 });
                        accumulate(&mut adjoints[a], &da);
                    }
                }
                Op::Gelu(a) => {
                    if self.nodes[a].requires_grad {
                        let x = &self.nodes[a].value;
                        let da = zip_values(&grad, x, |g, v| g * gelu_derivative(v));
                        accumulate(&mut adjoints[a], &da);
                    }
                }
                Op::Sum(a) => {
                    if self.nodes[a].requires_grad {
                        let g = grad.get(0, 0);
                        for o in adjoints[a].data_mut() {
                            *o += g;
                        }
                    }
                }
            }
        }
        Ok(adjoints)
    }
}

fn zip_values(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_raw(a.rows(), a.cols(), data)
}

fn accumulate(target: &mut Matrix, delta: &Matrix) {
    for (t, &d) in target.data_mut().iter_mut().zip(delta.data()) {
        *t += d;
    }
}

fn subtract(target: &mut Matrix, delta: &Matrix) {
    for (t, &d) in target.data_mut().iter_mut().zip(delta.data()) {
        *t -= d;
    }
}

/// Evaluates a computation over differentiable inputs and returns its scalar
/// value together with one gradient matrix per input.
pub fn value_and_gradient<F>(builder: F, inputs: &[Matrix]) -> Result<(f64, Vec<Matrix>), DiffError>
where
    F: FnOnce(&mut Tape, &[NodeId]) -> Result<NodeId, DiffError>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|m| tape.input(m)).collect();
    let output = builder(&mut tape, &ids)?;
    let out = tape.value(output);
    let value = out.scalar().ok_or(DiffError::NonScalarOutput {
        rows: out.rows(),
        cols: out.cols(),
    })?;
    let adjoints = tape.backward(output)?;
    let grads = ids.iter().map(|&id| adjoints[id].clone()).collect();
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let x = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        let (value, grads) = value_and_gradient(
            |tape, ids| {
                let sq = tape.mul(ids[0], ids[0])?;
                Ok(tape.sum(sq))
            },
            &[x],
        )
        .unwrap();
        assert_eq!(value, 9.0);
        assert_eq!(grads[0].get(0, 0), 6.0);
    }

    #[test]
    fn constant_computation_has_zero_gradient() {
        let x = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Matrix::from_vec(1, 1, vec![42.0]).unwrap();
        let (value, grads) = value_and_gradient(
            |tape, _ids| {
                let k = tape.constant(&c);
                Ok(tape.scale(k, 1.0))
            },
            &[x],
        )
        .unwrap();
        assert_eq!(value, 42.0);
        assert!(grads[0].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Matrix::from_vec(2, 2, vec![1.0; 4]).unwrap();
        let err = value_and_gradient(|_tape, ids| Ok(ids[0]), &[x]).unwrap_err();
        assert!(matches!(err, DiffError::NonScalarOutput { rows: 2, cols: 2 }));
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let x = Matrix::from_vec(1, 2, vec![2.0, -1.5]).unwrap();
        let (_, grads) = value_and_gradient(
            |tape, ids| {
                let blocked = tape.stop_gradient(ids[0]);
                let sq = tape.mul(blocked, blocked)?;
                Ok(tape.sum(sq))
            },
            &[x],
        )
        .unwrap();
        assert!(grads[0].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn replay_reproduces_forward_bit_identically() {
        let x = crate::rng::unit_test_matrix(5, 7, 0xc0de);
        let mut tape = Tape::new();
        let id = tape.input(&x);
        let s = tape.matmul_nt(id, id).unwrap();
        let p = tape.softmax_rows(s, 0.1).unwrap();
        let l = tape.ln_clamped(p, 1e-12);
        let _ = tape.sum(l);
        let replayed = tape.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v.data(), tape.value(i).data(), "node {i} differs");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let x = crate::rng::unit_test_matrix(4, 6, 99);
        let run = || {
            let mut tape = Tape::new();
            let id = tape.input(&x);
            let n = tape.l2_normalize_rows(id).unwrap();
            let s = tape.matmul_nt(n, n).unwrap();
            let p = tape.softmax_rows(s, 0.25).unwrap();
            let sum = tape.sum(p);
            tape.value(sum).get(0, 0)
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
