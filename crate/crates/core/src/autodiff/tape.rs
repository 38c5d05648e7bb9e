use alloc::vec;
use alloc::vec::Vec;

use super::primitive::{apply_primitive, argmax, Primitive};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum NodeKind {
    Param,
    Constant,
    Op(Primitive),
}

#[derive(Clone, Debug)]
struct Node {
    kind: NodeKind,
    inputs: Vec<Var>,
    value: Tensor,
}

/// A Wengert list of primitive applications.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it. [`Tape::grad`] records the backward pass on the same tape using the
/// same primitives, which makes gradients differentiable in turn.
#[derive(Clone, Debug, Default)]
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

    fn push(&mut self, kind: NodeKind, inputs: Vec<Var>, value: Tensor) -> Var {
        self.nodes.push(Node {
            kind,
            inputs,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(NodeKind::Param, Vec::new(), value)
    }

    /// Records a leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(NodeKind::Constant, Vec::new(), value)
    }

    pub fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes.get(v.0).map(|n| &n.kind), Some(NodeKind::Param))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::NotOnTape(v.0))
        }
    }

    /// Applies `kind` to recorded inputs and records the result.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = apply_primitive(&kind, &values)?;
        Ok(self.push(NodeKind::Op(kind), inputs.to_vec(), out))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Div, &[a, b])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::AddScalar(c), &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }
    pub fn step(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Step, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Abs, &[a])
    }
    pub fn sign(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sign, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SumRows, &[a])
    }
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SumLast, &[a])
    }
    pub fn max_last(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::MaxLast, &[a])
    }
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        self.apply(Primitive::BroadcastRows(rows), &[a])
    }
    pub fn broadcast_last(&mut self, a: Var, cols: usize) -> Result<Var> {
        self.apply(Primitive::BroadcastLast(cols), &[a])
    }
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Expand(shape.to_vec()), &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }

    /// `<a, b>` for equally shaped `a` and `b`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Gradients of the one-element `objective` with respect to each of `wrt`.
    ///
    /// The backward pass is recorded on this tape, so the returned variables
    /// can appear in further computations and be differentiated again.
    /// Variables the objective does not depend on get zero gradients.
    pub fn grad(&mut self, objective: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.check(objective)?;
        for &w in wrt {
            self.check(w)?;
        }
        let obj_value = &self.nodes[objective.0].value;
        if obj_value.len() != 1 {
            return Err(Error::NonScalarObjective(obj_value.shape().to_vec()));
        }
        let obj_shape = obj_value.shape().to_vec();
        let top = objective.0;

        let Some(lo) = wrt.iter().map(|w| w.0).filter(|&w| w <= top).min() else {
            return Ok(wrt
                .iter()
                .map(|&w| {
                    let z = Tensor::zeros(self.value(w).shape());
                    self.constant(z)
                })
                .collect());
        };

        // Nodes between a wrt variable and the objective.
        let mut relevant = vec![false; top + 1 - lo];
        for &w in wrt {
            if w.0 <= top {
                relevant[w.0 - lo] = true;
            }
        }
        for id in lo..=top {
            if relevant[id - lo] {
                continue;
            }
            let node = &self.nodes[id];
            if let NodeKind::Op(op) = &node.kind {
                if !op.is_locally_constant()
                    && node.inputs.iter().any(|i| i.0 >= lo && relevant[i.0 - lo])
                {
                    relevant[id - lo] = true;
                }
            }
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; top + 1 - lo];
        if relevant[top - lo] {
            let seed = self.constant(Tensor::full(&obj_shape, 1.0));
            adjoint[top - lo] = Some(seed);
        }
        for id in (lo..=top).rev() {
            if !relevant[id - lo] {
                continue;
            }
            let Some(g) = adjoint[id - lo] else { continue };
            let NodeKind::Op(op) = self.nodes[id].kind.clone() else {
                continue;
            };
            let inputs = self.nodes[id].inputs.clone();
            for (k, &input) in inputs.iter().enumerate() {
                if input.0 < lo || !relevant[input.0 - lo] {
                    continue;
                }
                let contrib = self.vjp(&op, &inputs, Var(id), k, g)?;
                let slot = &mut adjoint[input.0 - lo];
                *slot = Some(match *slot {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match adjoint.get(w.0.wrapping_sub(lo)).copied().flatten() {
                Some(g) if w.0 >= lo => g,
                _ => {
                    let z = Tensor::zeros(self.value(w).shape());
                    self.constant(z)
                }
            })
            .collect())
    }

    /// Adjoint contribution to input `k` of `out = op(inputs)` given the
    /// output adjoint `g`, expressed in taped primitives.
    fn vjp(&mut self, op: &Primitive, inputs: &[Var], out: Var, k: usize, g: Var) -> Result<Var> {
        let a = inputs[0];
        match op {
            Primitive::MatMul => {
                if k == 0 {
                    let bt = self.transpose(inputs[1])?;
                    self.matmul(g, bt)
                } else {
                    let at = self.transpose(a)?;
                    self.matmul(at, g)
                }
            }
            Primitive::Add | Primitive::Sub => {
                let reduced = if k == 1 && self.value(inputs[1]).shape() != self.value(g).shape() {
                    self.sum_rows(g)?
                } else {
                    g
                };
                if k == 1 && *op == Primitive::Sub {
                    self.scale(reduced, -1.0)
                } else {
                    Ok(reduced)
                }
            }
            Primitive::Mul => self.mul(g, inputs[1 - k]),
            Primitive::Div => {
                let b = inputs[1];
                if k == 0 {
                    self.div(g, b)
                } else {
                    let gy = self.mul(g, out)?;
                    let q = self.div(gy, b)?;
                    self.scale(q, -1.0)
                }
            }
            Primitive::Scale(c) => self.scale(g, *c),
            Primitive::AddScalar(_) => Ok(g),
            Primitive::Relu => {
                let mask = self.step(a)?;
                self.mul(g, mask)
            }
            Primitive::Step | Primitive::Sign => {
                let z = Tensor::zeros(self.value(a).shape());
                Ok(self.constant(z))
            }
            Primitive::Tanh => {
                let y2 = self.mul(out, out)?;
                let neg = self.scale(y2, -1.0)?;
                let d = self.add_scalar(neg, 1.0)?;
                self.mul(g, d)
            }
            Primitive::Exp => self.mul(g, out),
            Primitive::Log => self.div(g, a),
            Primitive::Abs => {
                let s = self.sign(a)?;
                self.mul(g, s)
            }
            Primitive::Sum => {
                let shape = self.value(a).shape().to_vec();
                self.expand(g, &shape)
            }
            Primitive::SumRows => {
                let rows = self.value(a).shape()[0];
                self.broadcast_rows(g, rows)
            }
            Primitive::SumLast => {
                let cols = self.value(a).shape()[1];
                self.broadcast_last(g, cols)
            }
            Primitive::MaxLast => {
                let x = self.value(a);
                let (r, c) = x.dims2().expect("recorded rank-2 input");
                let mut mask = vec![0.0; r * c];
                for i in 0..r {
                    mask[i * c + argmax(x.row(i))] = 1.0;
                }
                let mask = self.constant(Tensor::matrix(r, c, mask)?);
                let gb = self.broadcast_last(g, c)?;
                self.mul(mask, gb)
            }
            Primitive::BroadcastRows(_) => self.sum_rows(g),
            Primitive::BroadcastLast(_) => self.sum_last(g),
            Primitive::Expand(_) => self.sum(g),
            Primitive::Transpose => self.transpose(g),
        }
    }

    /// Re-executes every recorded primitive from the recorded leaves and
    /// returns the recomputed values in node order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.kind {
                NodeKind::Param | NodeKind::Constant => node.value.clone(),
                NodeKind::Op(op) => {
                    let ins: Vec<&Tensor> = node.inputs.iter().map(|i| &values[i.0]).collect();
                    apply_primitive(op, &ins)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when [`Tape::replay`] reproduces every recorded value bit for bit.
    pub fn replays_exactly(&self) -> Result<bool> {
        let values = self.replay()?;
        Ok(values
            .iter()
            .zip(&self.nodes)
            .all(|(v, n)| v.bit_eq(&n.value)))
    }

    /// Inputs of every node precede it.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(id, n)| n.inputs.iter().all(|i| i.0 < id))
    }

    pub(crate) fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }
}
