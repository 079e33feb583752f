use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::ops::{vjp, Backend, NodeView, Op};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Arc<Tensor>,
}

/// Append-only record of tensor operations for reverse-mode differentiation.
///
/// Nodes are stored in creation order, so every node's inputs precede it.
/// [`Tape::backward`] with `record = true` appends the gradient computation as
/// ordinary nodes, which makes the returned gradients differentiable again.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("len", &self.nodes.len())
            .finish()
    }
}

struct Record<'a> {
    tape: &'a mut Tape,
}

impl Backend for Record<'_> {
    type Val = usize;

    fn apply(&mut self, op: Op, inputs: &[&usize]) -> Result<usize> {
        let ids: Vec<usize> = inputs.iter().map(|&&i| i).collect();
        self.tape.push_op(op, ids)
    }

    fn constant(&mut self, value: Tensor) -> usize {
        self.tape.push_leaf(value)
    }

    fn node(&mut self, index: usize) -> usize {
        index
    }
}

struct Eager<'a> {
    tape: &'a Tape,
}

impl Backend for Eager<'_> {
    type Val = Arc<Tensor>;

    fn apply(&mut self, op: Op, inputs: &[&Arc<Tensor>]) -> Result<Arc<Tensor>> {
        let refs: Vec<&Tensor> = inputs.iter().map(|t| t.as_ref()).collect();
        Ok(Arc::new(op.eval(&refs)?))
    }

    fn constant(&mut self, value: Tensor) -> Arc<Tensor> {
        Arc::new(value)
    }

    fn node(&mut self, index: usize) -> Arc<Tensor> {
        self.tape.nodes[index].value.clone()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Handle to the node at `index`, if it exists.
    pub fn node(&self, index: usize) -> Option<Var> {
        (index < self.nodes.len()).then(|| self.var(index))
    }

    fn var(&self, index: usize) -> Var {
        Var { tape: self.id, index }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar { index: v.index });
        }
        Ok(v.index)
    }

    pub fn owns(&self, v: Var) -> bool {
        self.check(v).is_ok()
    }

    fn push_leaf(&mut self, value: Tensor) -> usize {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value: Arc::new(value),
        });
        self.nodes.len() - 1
    }

    fn push_op(&mut self, op: Op, inputs: Vec<usize>) -> Result<usize> {
        let value = {
            let refs: Vec<&Tensor> = inputs.iter().map(|&i| self.nodes[i].value.as_ref()).collect();
            op.eval(&refs)?
        };
        self.nodes.push(Node {
            op,
            inputs,
            value: Arc::new(value),
        });
        Ok(self.nodes.len() - 1)
    }

    /// Adds a parameter or constant.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let i = self.push_leaf(value);
        self.var(i)
    }

    pub fn leaves(&mut self, values: &[Tensor]) -> Vec<Var> {
        values.iter().map(|t| self.leaf(t.clone())).collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index].value
    }

    pub fn values(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.value(v).clone()).collect()
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.index].op
    }

    /// Records `kind` applied to `inputs` and returns the resulting node.
    pub fn apply(&mut self, kind: Op, inputs: &[Var]) -> Result<Var> {
        if kind == Op::Leaf {
            return Err(Error::shape("leaf", "use Tape::leaf for inputs"));
        }
        let ids = inputs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let i = self.push_op(kind, ids)?;
        Ok(self.var(i))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Div, &[a, b])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.apply(Op::Affine { scale: k, shift: 0.0 }, &[a])
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        self.apply(Op::Affine { scale, shift }, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Op::Reshape(shape.to_vec()), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::SumAll, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Op::SumAxis(axis), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self
            .value(a)
            .shape()
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", format!("axis {axis} out of range")))?;
        let s = self.sum_axis(a, axis)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn expand(&mut self, a: Var, axis: usize, n: usize) -> Result<Var> {
        self.apply(Op::Expand { axis, n }, &[a])
    }

    /// Repeats a vector over a leading batch axis of extent `batch`.
    pub fn broadcast_rows(&mut self, v: Var, batch: usize) -> Result<Var> {
        if self.value(v).rank() != 1 {
            return Err(Error::shape("broadcast_rows", "expected a vector"));
        }
        self.expand(v, 0, batch)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Exp, &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Ln, &[a])
    }

    pub fn max_const(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Op::MaxConst(c), &[a])
    }

    pub fn sigmoid(&mut self, a: Var, beta: f64) -> Result<Var> {
        self.apply(Op::Sigmoid { beta }, &[a])
    }

    pub fn softplus(&mut self, a: Var, beta: f64) -> Result<Var> {
        self.apply(Op::Softplus { beta }, &[a])
    }

    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Op::LogSumExp(axis), &[a])
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let n = *self
            .value(a)
            .shape()
            .get(1)
            .ok_or_else(|| Error::shape("softmax", "expected a matrix"))?;
        let lse = self.logsumexp(a, 1)?;
        let lse = self.expand(lse, 1, n)?;
        let shifted = self.sub(a, lse)?;
        self.exp(shifted)
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Op::ConcatLast, parts)
    }

    /// Reverse-mode gradient of scalar `output` with respect to each of `wrt`.
    ///
    /// With `record` set, every step of the backward pass is appended to this
    /// tape and the returned vars can be differentiated again. Otherwise the
    /// gradients are computed off-tape and appended as leaves.
    pub fn backward(&mut self, output: Var, wrt: &[Var], record: bool) -> Result<Vec<Var>> {
        if record {
            let (out, wrt) = self.prepare(output, wrt)?;
            let grads = {
                let mut b = Record { tape: self };
                run_backward(&mut b, out, &wrt)?
            };
            Ok(grads.into_iter().map(|i| self.var(i)).collect())
        } else {
            let grads = self.grad(output, wrt)?;
            Ok(grads.into_iter().map(|g| self.leaf(g)).collect())
        }
    }

    /// Gradient values of scalar `output` with respect to `wrt`, leaving the tape untouched.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let (out, wrt) = self.prepare(output, wrt)?;
        let mut b = Eager { tape: self };
        let grads = run_backward(&mut b, out, &wrt)?;
        Ok(grads
            .into_iter()
            .map(|g| Arc::try_unwrap(g).unwrap_or_else(|a| (*a).clone()))
            .collect())
    }

    fn prepare(&self, output: Var, wrt: &[Var]) -> Result<(usize, Vec<usize>)> {
        let out = self.check(output)?;
        let shape = self.nodes[out].value.shape();
        if !shape.is_empty() {
            return Err(Error::NonScalarOutput(shape.to_vec()));
        }
        let wrt = wrt.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        Ok((out, wrt))
    }
}

impl Tape {
    fn node_parts(&self, i: usize) -> (Op, Vec<usize>, Vec<Arc<Tensor>>) {
        let n = &self.nodes[i];
        let vals = n.inputs.iter().map(|&j| self.nodes[j].value.clone()).collect();
        (n.op.clone(), n.inputs.clone(), vals)
    }

    fn shape_of(&self, i: usize) -> Vec<usize> {
        self.nodes[i].value.shape().to_vec()
    }
}

trait TapeAccess {
    fn source(&self) -> &Tape;
}

impl TapeAccess for Record<'_> {
    fn source(&self) -> &Tape {
        self.tape
    }
}

impl TapeAccess for Eager<'_> {
    fn source(&self) -> &Tape {
        self.tape
    }
}

fn run_backward<B: Backend + TapeAccess>(b: &mut B, out: usize, wrt: &[usize]) -> Result<Vec<B::Val>> {
    // Only nodes that depend on some `wrt` node need a gradient.
    let mut needs = vec![false; out + 1];
    {
        let tape = b.source();
        for &w in wrt {
            if w <= out {
                needs[w] = true;
            }
        }
        for i in 0..=out {
            if !needs[i] {
                needs[i] = tape.nodes[i].inputs.iter().any(|&j| needs[j]);
            }
        }
    }

    let mut grads: Vec<Option<B::Val>> = vec![None; out + 1];
    if needs[out] {
        grads[out] = Some(b.constant(Tensor::scalar(1.0)));
    }
    for i in (0..=out).rev() {
        let Some(g) = grads[i].take() else { continue };
        let (op, inputs, values) = b.source().node_parts(i);
        if op == Op::Leaf {
            grads[i] = Some(g);
            continue;
        }
        let input_needs: Vec<bool> = inputs.iter().map(|&j| needs[j]).collect();
        let value_refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let view = NodeView {
            op: &op,
            inputs: &inputs,
            input_values: &value_refs,
            index: i,
        };
        let contributions = vjp(b, &view, &g, &input_needs)?;
        for (&j, c) in inputs.iter().zip(contributions) {
            let Some(c) = c else { continue };
            grads[j] = Some(match grads[j].take() {
                None => c,
                Some(prev) => b.apply(Op::Add, &[&prev, &c])?,
            });
        }
        // Interior gradients that are also requested must survive.
        if wrt.contains(&i) {
            grads[i] = Some(g);
        }
    }

    let mut result = Vec::with_capacity(wrt.len());
    for &w in wrt {
        let g = match grads.get(w).cloned().flatten() {
            Some(g) => g,
            None => {
                let shape = b.source().shape_of(w);
                b.constant(Tensor::zeros(&shape))
            }
        };
        result.push(g);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.grad(y, &[x]).unwrap();
        assert_eq!(g[0].item(), 6.0);
    }

    #[test]
    fn second_derivative_of_cube() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let x2 = t.mul(x, x).unwrap();
        let x3 = t.mul(x2, x).unwrap();
        let dx = t.backward(x3, &[x], true).unwrap()[0];
        assert_eq!(t.value(dx).item(), 12.0);
        let ddx = t.grad(dx, &[x]).unwrap();
        assert_eq!(ddx[0].item(), 12.0);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, -2.0, 5.0, 0.5]));
        let m = t.mean(x).unwrap();
        let g = t.grad(m, &[x]).unwrap();
        assert!(g[0].data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.grad(x, &[x]), Err(Error::NonScalarOutput(_))));
    }

    #[test]
    fn foreign_var_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0));
        let y = b.leaf(Tensor::scalar(1.0));
        assert!(matches!(b.grad(y, &[x]), Err(Error::ForeignVar { .. })));
        assert!(b.add(x, y).is_err());
    }

    #[test]
    fn unreachable_wrt_gets_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.0));
        let w = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = t.mul(x, x).unwrap();
        let g = t.grad(y, &[w]).unwrap();
        assert_eq!(g[0], Tensor::zeros(&[2]));
    }

    #[test]
    fn interior_node_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let h = t.scale(x, 3.0).unwrap();
        let y = t.mul(h, h).unwrap();
        let g = t.grad(y, &[h, x]).unwrap();
        assert_eq!(g[0].item(), 12.0);
        assert_eq!(g[1].item(), 36.0);
    }

    #[test]
    fn recording_appends_only() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.7));
        let y = t.exp(x).unwrap();
        let before = t.len();
        let snapshot = t.value(y).clone();
        let _ = t.backward(y, &[x], true).unwrap();
        assert!(t.len() > before);
        assert_eq!(t.value(y), &snapshot);
        assert_eq!(t.op(y), &Op::Exp);
    }
}
