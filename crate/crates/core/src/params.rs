//! Named parameter collections with a stable flat-vector view.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered set of named tensors.
///
/// Names are fixed at construction. The flat view concatenates tensors in
/// construction order, each in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, Tensor)>) -> Result<Self> {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, t) in entries {
            let name = name.into();
            if names.contains(&name) {
                return Err(Error::ParamMismatch(format!("duplicate name {name}")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    /// Replaces the value of an existing entry; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::ParamMismatch(format!("unknown name {name}")))?;
        if self.tensors[i].shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "param_set",
                lhs: self.tensors[i].shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.tensors[i] = value;
        Ok(())
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// A set with this set's names and shapes, filled from `flat`.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_scalars() {
            return Err(Error::ParamMismatch(format!(
                "flat length {} != {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let n = t.len();
            tensors.push(Tensor::new(t.shape().to_vec(), flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok(Self {
            names: self.names.clone(),
            tensors,
        })
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| 0.0)
    }

    /// Applies `f` entry by entry, tensors in order.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.map(&mut f)).collect(),
        }
    }

    /// True when both sets carry the same names with the same shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    fn check_layout(&self, other: &ParamSet, op: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::ParamMismatch(format!("{op}: layouts differ")))
        }
    }

    /// Elementwise combination of two sets with identical layout.
    pub fn zip_map(&self, other: &ParamSet, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_layout(other, "zip_map")?;
        let tensors = self
            .tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| {
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), data).expect("same layout")
            })
            .collect();
        Ok(Self {
            names: self.names.clone(),
            tensors,
        })
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &ParamSet) -> Result<Self> {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn dot(&self, other: &ParamSet) -> Result<f64> {
        self.check_layout(other, "dot")?;
        Ok(self
            .tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>())
            .sum())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.tensors.iter().flat_map(|t| t.data()).map(|x| x * x).sum())
    }

    /// Subset with the given names, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let mut entries = Vec::with_capacity(names.len());
        for &n in names {
            let t = self
                .get(n)
                .ok_or_else(|| Error::ParamMismatch(format!("unknown name {n}")))?;
            entries.push((String::from(n), t.clone()));
        }
        Self::new(entries)
    }

    /// Copies every entry of `other` into the matching entry of `self`.
    pub fn update_from(&mut self, other: &ParamSet) -> Result<()> {
        for (name, t) in other.iter() {
            self.set(name, t.clone())?;
        }
        Ok(())
    }

    /// Bit-level equality of every entry.
    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.bit_eq(b))
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.rank() as u64).to_le_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            h.update(t.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Records every tensor as a differentiable leaf.
    pub fn to_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Records every tensor as a constant leaf.
    pub fn to_tape_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// A set with this layout whose values are read from `vars` on `tape`.
    pub fn from_tape(&self, tape: &Tape, vars: &[Var]) -> Result<Self> {
        if vars.len() != self.tensors.len() {
            return Err(Error::ParamMismatch(format!(
                "{} variables for {} parameters",
                vars.len(),
                self.tensors.len()
            )));
        }
        let tensors: Vec<Tensor> = vars.iter().map(|&v| tape.value(v).clone()).collect();
        for (a, b) in self.tensors.iter().zip(&tensors) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: "from_tape",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            names: self.names.clone(),
            tensors,
        })
    }
}
