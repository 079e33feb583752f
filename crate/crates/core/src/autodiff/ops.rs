use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Operation kinds a tape node can record.
///
/// Every kind's vector-Jacobian product is expressed in terms of other kinds
/// (see [`vjp`]), so a recorded backward pass can itself be differentiated.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Parameter or constant input.
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    /// `scale * x + shift`
    Affine {
        scale: f64,
        shift: f64,
    },
    MatMul,
    Transpose,
    Reshape(Vec<usize>),
    /// Broadcast a scalar to a full shape.
    Fill(Vec<usize>),
    SumAll,
    SumAxis(usize),
    /// Insert an axis of extent `n` at `axis`, repeating values along it.
    Expand {
        axis: usize,
        n: usize,
    },
    Exp,
    Ln,
    /// `max(x, c)`
    MaxConst(f64),
    /// `1 / (1 + exp(-beta * x))`
    Sigmoid {
        beta: f64,
    },
    /// `ln(1 + exp(beta * x)) / beta`
    Softplus {
        beta: f64,
    },
    LogSumExp(usize),
    ConcatLast,
    SliceLast {
        start: usize,
        len: usize,
    },
    PadLast {
        start: usize,
        total: usize,
    },
}

/// Stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Stable `ln(1 + e^z)`.
pub fn log1p_exp(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `ln(1 + e^{beta x}) / beta`; the large-argument branch adds to `x` directly so
/// the result never rounds below `x`.
pub fn softplus(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    if z > 30.0 {
        x + (-z).exp().ln_1p() / beta
    } else {
        z.exp().ln_1p() / beta
    }
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Affine { .. } => "affine",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Fill(_) => "fill",
            Op::SumAll => "sum",
            Op::SumAxis(_) => "sum_axis",
            Op::Expand { .. } => "expand",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::MaxConst(_) => "max_const",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Softplus { .. } => "softplus",
            Op::LogSumExp(_) => "logsumexp",
            Op::ConcatLast => "concat",
            Op::SliceLast { .. } => "slice",
            Op::PadLast { .. } => "pad",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Leaf => Some(0),
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::MatMul => Some(2),
            Op::ConcatLast => None,
            _ => Some(1),
        }
    }

    /// Evaluates the operation on concrete inputs. Non-finite results are errors.
    pub fn eval(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let name = self.name();
        match self.arity() {
            Some(n) if n != inputs.len() => {
                return Err(Error::shape(
                    name,
                    format!("expected {} inputs, got {}", n, inputs.len()),
                ))
            }
            None if inputs.is_empty() => return Err(Error::shape(name, "no inputs")),
            _ => {}
        }
        let out = match self {
            Op::Leaf => return Err(Error::shape("leaf", "leaves are not evaluated")),
            Op::Add => inputs[0].add(inputs[1])?,
            Op::Sub => inputs[0].sub(inputs[1])?,
            Op::Mul => inputs[0].mul(inputs[1])?,
            Op::Div => inputs[0].div(inputs[1])?,
            &Op::Affine { scale, shift } => inputs[0].map(|v| scale * v + shift),
            Op::MatMul => inputs[0].matmul(inputs[1])?,
            Op::Transpose => inputs[0].transpose()?,
            Op::Reshape(shape) => inputs[0].reshape(shape)?,
            Op::Fill(shape) => {
                if !inputs[0].is_scalar() {
                    return Err(Error::shape("fill", "input must be a scalar"));
                }
                Tensor::full(shape, inputs[0].item())
            }
            Op::SumAll => inputs[0].sum_all(),
            &Op::SumAxis(axis) => inputs[0].sum_axis(axis)?,
            &Op::Expand { axis, n } => inputs[0].expand(axis, n)?,
            Op::Exp => inputs[0].map(f64::exp),
            Op::Ln => {
                if inputs[0].data().iter().any(|&v| v <= 0.0) {
                    return Err(Error::NonFinite { op: "ln" });
                }
                inputs[0].map(f64::ln)
            }
            &Op::MaxConst(c) => inputs[0].map(|v| v.max(c)),
            &Op::Sigmoid { beta } => inputs[0].map(|v| sigmoid(beta * v)),
            &Op::Softplus { beta } => inputs[0].map(|v| softplus(v, beta)),
            &Op::LogSumExp(axis) => inputs[0].logsumexp(axis)?,
            Op::ConcatLast => Tensor::concat_last(inputs)?,
            &Op::SliceLast { start, len } => inputs[0].slice_last(start, len)?,
            &Op::PadLast { start, total } => inputs[0].pad_last(start, total)?,
        };
        out.check_finite(name)
    }
}

/// Where the arithmetic of a backward pass goes: onto the tape, or straight
/// into tensors.
pub(crate) trait Backend {
    type Val: Clone;
    fn apply(&mut self, op: Op, inputs: &[&Self::Val]) -> Result<Self::Val>;
    fn constant(&mut self, value: Tensor) -> Self::Val;
    /// The forward value of an existing tape node.
    fn node(&mut self, index: usize) -> Self::Val;
}

/// Inputs of the node being differentiated.
pub(crate) struct NodeView<'a> {
    pub op: &'a Op,
    pub inputs: &'a [usize],
    pub input_values: &'a [&'a Tensor],
    pub index: usize,
}

/// Vector-Jacobian product of one node: gradient contributions for each input
/// whose `needs` flag is set.
pub(crate) fn vjp<B: Backend>(
    b: &mut B,
    node: &NodeView<'_>,
    g: &B::Val,
    needs: &[bool],
) -> Result<Vec<Option<B::Val>>> {
    let mut out: Vec<Option<B::Val>> = vec![None; node.inputs.len()];
    let want = |i: usize| needs[i];
    match node.op {
        Op::Leaf => {}
        Op::Add => {
            for (i, slot) in out.iter_mut().enumerate() {
                if want(i) {
                    *slot = Some(g.clone());
                }
            }
        }
        Op::Sub => {
            if want(0) {
                out[0] = Some(g.clone());
            }
            if want(1) {
                out[1] = Some(b.apply(
                    Op::Affine {
                        scale: -1.0,
                        shift: 0.0,
                    },
                    &[g],
                )?);
            }
        }
        Op::Mul => {
            if want(0) {
                let rhs = b.node(node.inputs[1]);
                out[0] = Some(b.apply(Op::Mul, &[g, &rhs])?);
            }
            if want(1) {
                let lhs = b.node(node.inputs[0]);
                out[1] = Some(b.apply(Op::Mul, &[g, &lhs])?);
            }
        }
        Op::Div => {
            let den = b.node(node.inputs[1]);
            if want(0) {
                out[0] = Some(b.apply(Op::Div, &[g, &den])?);
            }
            if want(1) {
                let res = b.node(node.index);
                let t = b.apply(Op::Mul, &[g, &res])?;
                let t = b.apply(Op::Div, &[&t, &den])?;
                out[1] = Some(b.apply(
                    Op::Affine {
                        scale: -1.0,
                        shift: 0.0,
                    },
                    &[&t],
                )?);
            }
        }
        &Op::Affine { scale, .. } => {
            if want(0) {
                out[0] = Some(b.apply(Op::Affine { scale, shift: 0.0 }, &[g])?);
            }
        }
        Op::MatMul => {
            if want(0) {
                let rhs = b.node(node.inputs[1]);
                let rt = b.apply(Op::Transpose, &[&rhs])?;
                out[0] = Some(b.apply(Op::MatMul, &[g, &rt])?);
            }
            if want(1) {
                let lhs = b.node(node.inputs[0]);
                let lt = b.apply(Op::Transpose, &[&lhs])?;
                out[1] = Some(b.apply(Op::MatMul, &[&lt, g])?);
            }
        }
        Op::Transpose => {
            if want(0) {
                out[0] = Some(b.apply(Op::Transpose, &[g])?);
            }
        }
        Op::Reshape(_) => {
            if want(0) {
                let shape = node.input_values[0].shape().to_vec();
                out[0] = Some(b.apply(Op::Reshape(shape), &[g])?);
            }
        }
        Op::Fill(_) => {
            if want(0) {
                out[0] = Some(b.apply(Op::SumAll, &[g])?);
            }
        }
        Op::SumAll => {
            if want(0) {
                let shape = node.input_values[0].shape().to_vec();
                out[0] = Some(b.apply(Op::Fill(shape), &[g])?);
            }
        }
        &Op::SumAxis(axis) => {
            if want(0) {
                let n = node.input_values[0].shape()[axis];
                out[0] = Some(b.apply(Op::Expand { axis, n }, &[g])?);
            }
        }
        &Op::Expand { axis, .. } => {
            if want(0) {
                out[0] = Some(b.apply(Op::SumAxis(axis), &[g])?);
            }
        }
        Op::Exp => {
            if want(0) {
                let res = b.node(node.index);
                out[0] = Some(b.apply(Op::Mul, &[g, &res])?);
            }
        }
        Op::Ln => {
            if want(0) {
                let x = b.node(node.inputs[0]);
                out[0] = Some(b.apply(Op::Div, &[g, &x])?);
            }
        }
        &Op::MaxConst(c) => {
            if want(0) {
                // The mask is piecewise constant, so it carries no derivative of its own.
                let mask = b.constant(node.input_values[0].map(|v| if v > c { 1.0 } else { 0.0 }));
                out[0] = Some(b.apply(Op::Mul, &[g, &mask])?);
            }
        }
        &Op::Sigmoid { beta } => {
            if want(0) {
                let s = b.node(node.index);
                let one_minus = b.apply(
                    Op::Affine {
                        scale: -1.0,
                        shift: 1.0,
                    },
                    &[&s],
                )?;
                let bs = b.apply(
                    Op::Affine {
                        scale: beta,
                        shift: 0.0,
                    },
                    &[&s],
                )?;
                let d = b.apply(Op::Mul, &[&bs, &one_minus])?;
                out[0] = Some(b.apply(Op::Mul, &[g, &d])?);
            }
        }
        &Op::Softplus { beta } => {
            if want(0) {
                let x = b.node(node.inputs[0]);
                let s = b.apply(Op::Sigmoid { beta }, &[&x])?;
                out[0] = Some(b.apply(Op::Mul, &[g, &s])?);
            }
        }
        &Op::LogSumExp(axis) => {
            if want(0) {
                let n = node.input_values[0].shape()[axis];
                let x = b.node(node.inputs[0]);
                let lse = b.node(node.index);
                let lse_e = b.apply(Op::Expand { axis, n }, &[&lse])?;
                let shifted = b.apply(Op::Sub, &[&x, &lse_e])?;
                let soft = b.apply(Op::Exp, &[&shifted])?;
                let g_e = b.apply(Op::Expand { axis, n }, &[g])?;
                out[0] = Some(b.apply(Op::Mul, &[&g_e, &soft])?);
            }
        }
        Op::ConcatLast => {
            let mut start = 0;
            for (i, v) in node.input_values.iter().enumerate() {
                let len = *v.shape().last().unwrap();
                if want(i) {
                    out[i] = Some(b.apply(Op::SliceLast { start, len }, &[g])?);
                }
                start += len;
            }
        }
        &Op::SliceLast { start, .. } => {
            if want(0) {
                let total = *node.input_values[0].shape().last().unwrap();
                out[0] = Some(b.apply(Op::PadLast { start, total }, &[g])?);
            }
        }
        &Op::PadLast { start, .. } => {
            if want(0) {
                let len = *node.input_values[0].shape().last().unwrap();
                out[0] = Some(b.apply(Op::SliceLast { start, len }, &[g])?);
            }
        }
    }
    Ok(out)
}
