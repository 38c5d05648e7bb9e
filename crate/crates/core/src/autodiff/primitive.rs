use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Tensor};

/// The primitive operations a [`Tape`](super::Tape) can record.
///
/// Shape rules:
/// - `MatMul`: `[m,k] x [k,n] -> [m,n]`.
/// - `Add`, `Sub`: equal shapes, or `[r,c]` with a `[c]` right operand broadcast
///   over the leading (batch) axis.
/// - `Mul`, `Div`: equal shapes.
/// - `Sum`: any shape to a scalar.
/// - `SumRows`: `[r,c] -> [c]`. `SumLast`, `MaxLast`: `[r,c] -> [r]`.
/// - `BroadcastRows(r)`: `[c] -> [r,c]`. `BroadcastLast(c)`: `[r] -> [r,c]`.
/// - `Expand(shape)`: scalar `[]` to `shape`.
/// - everything else is elementwise.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar(f64),
    Relu,
    /// Heaviside step: 1 where the input is positive, else 0.
    Step,
    Tanh,
    Exp,
    Log,
    Abs,
    /// Sign with `sign(0) = 0`.
    Sign,
    Sum,
    SumRows,
    SumLast,
    /// Max over the last axis; ties resolve to the lowest index.
    MaxLast,
    BroadcastRows(usize),
    BroadcastLast(usize),
    Expand(Vec<usize>),
    Transpose,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::Relu => "relu",
            Primitive::Step => "step",
            Primitive::Tanh => "tanh",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Abs => "abs",
            Primitive::Sign => "sign",
            Primitive::Sum => "sum",
            Primitive::SumRows => "sum_rows",
            Primitive::SumLast => "sum_last",
            Primitive::MaxLast => "max_last",
            Primitive::BroadcastRows(_) => "broadcast_rows",
            Primitive::BroadcastLast(_) => "broadcast_last",
            Primitive::Expand(_) => "expand",
            Primitive::Transpose => "transpose",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => 2,
            _ => 1,
        }
    }

    /// Piecewise-constant primitives have a zero derivative wherever it exists.
    pub fn is_locally_constant(&self) -> bool {
        matches!(self, Primitive::Step | Primitive::Sign)
    }
}

fn rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| Error::Rank {
        op,
        expected: 2,
        shape: t.shape().to_vec(),
    })
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite(op))
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked")
}

fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return Ok(zip_with(a, b, f));
    }
    match (a.dims2(), b.shape()) {
        (Some((r, c)), [bc]) if *bc == c => {
            let bd = b.data();
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                data.extend(a.row(i).iter().zip(bd).map(|(&x, &y)| f(x, y)));
            }
            Tensor::matrix(r, c, data)
        }
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }),
    }
}

/// Index of the maximum of `row`, lowest index on ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Evaluates a primitive eagerly, without recording anything.
pub fn apply_primitive(kind: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    let op = kind.name();
    if inputs.len() != kind.arity() {
        return Err(Error::Arity {
            op,
            expected: kind.arity(),
            got: inputs.len(),
        });
    }
    let a = inputs[0];
    match kind {
        Primitive::MatMul => {
            let b = inputs[1];
            let (m, k) = rank2(op, a)?;
            let (k2, n) = rank2(op, b)?;
            if k != k2 {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut out = vec![0.0; m * n];
            matmul_into(a.data(), b.data(), &mut out, m, k, n);
            Tensor::matrix(m, n, out)
        }
        Primitive::Add => broadcast_binary(op, a, inputs[1], |x, y| x + y),
        Primitive::Sub => broadcast_binary(op, a, inputs[1], |x, y| x - y),
        Primitive::Mul => {
            same_shape(op, a, inputs[1])?;
            Ok(zip_with(a, inputs[1], |x, y| x * y))
        }
        Primitive::Div => {
            same_shape(op, a, inputs[1])?;
            finite(op, zip_with(a, inputs[1], |x, y| x / y))
        }
        Primitive::Scale(c) => Ok(a.map(|x| c * x)),
        Primitive::AddScalar(c) => Ok(a.map(|x| x + c)),
        Primitive::Relu => Ok(a.map(|x| if x > 0.0 { x } else { 0.0 })),
        Primitive::Step => Ok(a.map(|x| if x > 0.0 { 1.0 } else { 0.0 })),
        Primitive::Tanh => Ok(a.map(libm::tanh)),
        Primitive::Exp => finite(op, a.map(libm::exp)),
        Primitive::Log => finite(op, a.map(libm::log)),
        Primitive::Abs => Ok(a.map(libm::fabs)),
        Primitive::Sign => Ok(a.map(sign)),
        Primitive::Sum => Ok(Tensor::scalar(a.data().iter().sum())),
        Primitive::SumRows => {
            let (r, c) = rank2(op, a)?;
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, &x) in out.iter_mut().zip(a.row(i)) {
                    *o += x;
                }
            }
            Ok(Tensor::vector(out))
        }
        Primitive::SumLast => {
            let (r, _) = rank2(op, a)?;
            Ok(Tensor::vector((0..r).map(|i| a.row(i).iter().sum()).collect()))
        }
        Primitive::MaxLast => {
            let (r, c) = rank2(op, a)?;
            if c == 0 {
                return Err(Error::Rank {
                    op,
                    expected: 2,
                    shape: a.shape().to_vec(),
                });
            }
            Ok(Tensor::vector(
                (0..r).map(|i| a.row(i)[argmax(a.row(i))]).collect(),
            ))
        }
        Primitive::BroadcastRows(rows) => {
            if a.rank() != 1 {
                return Err(Error::Rank {
                    op,
                    expected: 1,
                    shape: a.shape().to_vec(),
                });
            }
            let mut data = Vec::with_capacity(rows * a.len());
            for _ in 0..*rows {
                data.extend_from_slice(a.data());
            }
            Tensor::matrix(*rows, a.len(), data)
        }
        Primitive::BroadcastLast(cols) => {
            if a.rank() != 1 {
                return Err(Error::Rank {
                    op,
                    expected: 1,
                    shape: a.shape().to_vec(),
                });
            }
            let mut data = Vec::with_capacity(a.len() * cols);
            for &x in a.data() {
                data.extend(core::iter::repeat_n(x, *cols));
            }
            Tensor::matrix(a.len(), *cols, data)
        }
        Primitive::Expand(shape) => {
            if a.rank() != 0 {
                return Err(Error::Rank {
                    op,
                    expected: 0,
                    shape: a.shape().to_vec(),
                });
            }
            Ok(Tensor::full(shape, a.data()[0]))
        }
        Primitive::Transpose => a.transpose(),
    }
}
