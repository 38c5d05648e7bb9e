//! Labelled examples partitioned into named domains.

mod generator;
mod scenario;

pub use generator::{generate_synthetic, prototype_mask, GeneratorConfig, Style, CLASS_NAMES};
pub use scenario::{make_scenario, sample_batch, split_meta, stack, Batch, MetaMode, MetaSplit, ScenarioSplit};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Flattened image or feature vector.
    pub features: Tensor,
    pub label: usize,
    /// Index into [`MultiDomainDataset::domains`].
    pub domain: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub id: String,
    pub examples: Vec<Example>,
}

/// Examples grouped by domain over a class list shared by all domains.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiDomainDataset {
    classes: Vec<String>,
    domains: Vec<Domain>,
    dim: usize,
}

impl MultiDomainDataset {
    /// Validates labels, dimensionality and finiteness. Each example's
    /// `domain` field is overwritten with its domain's index.
    pub fn new(classes: Vec<String>, domains: Vec<(String, Vec<Example>)>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Data("no classes".into()));
        }
        if domains.is_empty() {
            return Err(Error::Data("no domains".into()));
        }
        let mut dim = None;
        let mut out = Vec::with_capacity(domains.len());
        for (d, (id, mut examples)) in domains.into_iter().enumerate() {
            if out.iter().any(|x: &Domain| x.id == id) {
                return Err(Error::Data(format!("duplicate domain {id}")));
            }
            for (i, ex) in examples.iter_mut().enumerate() {
                if ex.label >= classes.len() {
                    return Err(Error::Data(format!(
                        "domain {id} example {i}: label {} outside {} classes",
                        ex.label,
                        classes.len()
                    )));
                }
                if ex.features.rank() != 1 {
                    return Err(Error::Data(format!("domain {id} example {i}: features must be a vector")));
                }
                let n = ex.features.len();
                match dim {
                    None => dim = Some(n),
                    Some(k) if k != n => {
                        return Err(Error::Data(format!(
                            "domain {id} example {i}: dimension {n}, expected {k}"
                        )))
                    }
                    _ => {}
                }
                if !ex.features.all_finite() {
                    return Err(Error::Data(format!("domain {id} example {i}: non-finite feature")));
                }
                ex.domain = d;
            }
            out.push(Domain { id, examples });
        }
        Ok(Self {
            classes,
            domains: out,
            dim: dim.ok_or_else(|| Error::Data("dataset has no examples".into()))?,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_index(&self, id: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.id == id)
    }

    pub fn domain_ids(&self) -> Vec<&str> {
        self.domains.iter().map(|d| d.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.domains.iter().map(|d| d.examples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.domains.iter().flat_map(|d| d.examples.iter())
    }

    /// `(domain, class)` pairs with no examples.
    pub fn missing_classes(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for d in &self.domains {
            for (c, name) in self.classes.iter().enumerate() {
                if !d.examples.iter().any(|e| e.label == c) {
                    out.push((d.id.clone(), name.clone()));
                }
            }
        }
        out
    }

    /// Per-domain, per-class example counts.
    pub fn counts(&self) -> Vec<Vec<usize>> {
        self.domains
            .iter()
            .map(|d| {
                let mut c = alloc::vec![0; self.classes.len()];
                for e in &d.examples {
                    c[e.label] += 1;
                }
                c
            })
            .collect()
    }

    /// SHA-256 over class names, domain ids, labels and feature bytes.
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for c in &self.classes {
            h.update((c.len() as u64).to_le_bytes());
            h.update(c.as_bytes());
        }
        for d in &self.domains {
            h.update((d.id.len() as u64).to_le_bytes());
            h.update(d.id.as_bytes());
            h.update((d.examples.len() as u64).to_le_bytes());
            for e in &d.examples {
                h.update((e.label as u64).to_le_bytes());
                for x in e.features.data() {
                    h.update(x.to_le_bytes());
                }
            }
        }
        h.finalize().into()
    }
}
