use alloc::vec::Vec;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamSet;

/// How [`hessian_vector_product`] evaluates `H v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HvpMode {
    /// Double backward through `<grad f, v>`.
    Exact,
    /// `[grad f(p + eps v) - grad f(p - eps v)] / (2 eps)`.
    FiniteDiff { eps: f64 },
}

/// Value and gradient of the scalar built by `objective` at `at`.
///
/// `objective` receives one tape variable per entry of `at`, in order.
pub fn gradient<F>(at: &ParamSet, mut objective: F) -> Result<(f64, ParamSet)>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = at.to_tape(&mut tape);
    let f = objective(&mut tape, &vars)?;
    let value = tape
        .value(f)
        .item()
        .ok_or_else(|| Error::NonScalarObjective(tape.value(f).shape().to_vec()))?;
    let grads = tape.grad(f, &vars)?;
    Ok((value, at.from_tape(&tape, &grads)?))
}

/// Hessian of `objective` at `at` applied to `v`.
pub fn hessian_vector_product<F>(
    at: &ParamSet,
    v: &ParamSet,
    mode: HvpMode,
    mut objective: F,
) -> Result<ParamSet>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !at.same_layout(v) {
        return Err(Error::ParamMismatch("direction layout differs from parameters".into()));
    }
    if at.is_empty() {
        return Ok(at.clone());
    }
    match mode {
        HvpMode::Exact => {
            let mut tape = Tape::new();
            let vars = at.to_tape(&mut tape);
            let f = objective(&mut tape, &vars)?;
            let grads = tape.grad(f, &vars)?;
            let dirs = v.to_tape_constant(&mut tape);
            let mut terms = Vec::with_capacity(grads.len());
            for (&g, &d) in grads.iter().zip(&dirs) {
                terms.push(tape.dot(g, d)?);
            }
            let mut inner = terms[0];
            for &t in &terms[1..] {
                inner = tape.add(inner, t)?;
            }
            let hv = tape.grad(inner, &vars)?;
            at.from_tape(&tape, &hv)
        }
        HvpMode::FiniteDiff { eps } => {
            let (_, plus) = gradient(&at.axpy(eps, v)?, &mut objective)?;
            let (_, minus) = gradient(&at.axpy(-eps, v)?, &mut objective)?;
            plus.zip_map(&minus, |a, b| (a - b) / (2.0 * eps))
        }
    }
}
