//! Leave-one-domain-out splits and batch sampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{Example, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// A stacked batch of examples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `n_b x dim`.
    pub features: Tensor,
    pub labels: Vec<usize>,
}

/// Uniform sample of `n_b` examples with replacement.
pub fn sample_batch(pool: &[&Example], n_b: usize, r: &mut Rng) -> Result<Batch> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if n_b == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let picks: Vec<&Example> = (0..n_b).map(|_| pool[r.random_range(0..pool.len())]).collect();
    stack(&picks)
}

/// Stacks examples into one batch in the given order.
pub fn stack(examples: &[&Example]) -> Result<Batch> {
    let dim = examples.first().map_or(0, |e| e.features.len());
    let mut data = Vec::with_capacity(examples.len() * dim);
    let mut labels = Vec::with_capacity(examples.len());
    for e in examples {
        data.extend_from_slice(e.features.data());
        labels.push(e.label);
    }
    Ok(Batch {
        features: Tensor::matrix(examples.len(), dim, data)?,
        labels,
    })
}

/// How [`split_meta`] partitions the training domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaMode {
    /// One domain, chosen uniformly, is meta-test; the rest are meta-train.
    Mldg,
    /// An ordered pair `(a, b)`, `a != b`, uniform over ordered pairs.
    MetaReg,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaSplit {
    pub meta_train: Vec<usize>,
    pub meta_test: Vec<usize>,
}

pub fn split_meta(domains: &[usize], mode: MetaMode, r: &mut Rng) -> Result<MetaSplit> {
    let p = domains.len();
    if p < 2 {
        return Err(Error::Config(format!(
            "meta split needs at least 2 training domains, got {p}"
        )));
    }
    match mode {
        MetaMode::Mldg => {
            let b = r.random_range(0..p);
            Ok(MetaSplit {
                meta_train: domains.iter().enumerate().filter(|&(i, _)| i != b).map(|(_, &d)| d).collect(),
                meta_test: vec![domains[b]],
            })
        }
        MetaMode::MetaReg => {
            let a = r.random_range(0..p);
            let mut b = r.random_range(0..p - 1);
            if b >= a {
                b += 1;
            }
            Ok(MetaSplit {
                meta_train: vec![domains[a]],
                meta_test: vec![domains[b]],
            })
        }
    }
}

/// One leave-one-domain-out scenario: every non-held-out domain is split 9:1
/// into train and validation; the held-out domain is the test set.
///
/// All sampling for training goes through [`ScenarioSplit::sample`], which
/// refuses the held-out domain and counts any attempt.
#[derive(Debug)]
pub struct ScenarioSplit<'a> {
    dataset: &'a MultiDomainDataset,
    held_out: usize,
    train_domains: Vec<usize>,
    train: Vec<Vec<usize>>,
    validation: Vec<Vec<usize>>,
    held_out_requests: AtomicU64,
    draws: AtomicU64,
}

pub fn make_scenario<'a>(
    dataset: &'a MultiDomainDataset,
    held_out: &str,
    seed: u64,
) -> Result<ScenarioSplit<'a>> {
    let held = dataset
        .domain_index(held_out)
        .ok_or_else(|| Error::Config(format!("unknown held-out domain {held_out}")))?;
    let train_domains: Vec<usize> = (0..dataset.domains().len()).filter(|&d| d != held).collect();
    if train_domains.len() < 2 {
        return Err(Error::Config(format!(
            "scenario needs at least 2 training domains, got {}",
            train_domains.len()
        )));
    }
    let classes = dataset.num_classes();
    let mut train = Vec::with_capacity(train_domains.len());
    let mut validation = Vec::with_capacity(train_domains.len());
    for &d in &train_domains {
        let domain = &dataset.domains()[d];
        let mut order: Vec<usize> = (0..domain.examples.len()).collect();
        order.shuffle(&mut rng::stream(seed, &format!("split/{}", domain.id)));
        let n_val = order.len() / 10;
        let mut is_val = vec![false; order.len()];
        let mut taken = 0;
        // one per class first, then in shuffled order
        for c in 0..classes {
            if taken == n_val {
                break;
            }
            if let Some(&k) = order.iter().find(|&&k| domain.examples[k].label == c) {
                is_val[k] = true;
                taken += 1;
            }
        }
        for &k in &order {
            if taken == n_val {
                break;
            }
            if !is_val[k] {
                is_val[k] = true;
                taken += 1;
            }
        }
        let (mut val, mut tr) = (Vec::new(), Vec::new());
        for &k in &order {
            if is_val[k] {
                val.push(k);
            } else {
                tr.push(k);
            }
        }
        train.push(tr);
        validation.push(val);
    }
    Ok(ScenarioSplit {
        dataset,
        held_out: held,
        train_domains,
        train,
        validation,
        held_out_requests: AtomicU64::new(0),
        draws: AtomicU64::new(0),
    })
}

impl<'a> ScenarioSplit<'a> {
    pub fn dataset(&self) -> &'a MultiDomainDataset {
        self.dataset
    }

    pub fn held_out(&self) -> usize {
        self.held_out
    }

    pub fn held_out_id(&self) -> &'a str {
        &self.dataset.domains()[self.held_out].id
    }

    /// Dataset indices of the training domains, in dataset order.
    pub fn train_domains(&self) -> &[usize] {
        &self.train_domains
    }

    fn position(&self, domain: usize) -> Option<usize> {
        self.train_domains.iter().position(|&d| d == domain)
    }

    fn examples_of(&self, domain: usize, idx: &[usize]) -> Vec<&'a Example> {
        let d = &self.dataset.domains()[domain];
        idx.iter().map(|&k| &d.examples[k]).collect()
    }

    /// Training portion of one training domain.
    pub fn train_examples(&self, domain: usize) -> Result<Vec<&'a Example>> {
        let p = self.guard(domain)?;
        Ok(self.examples_of(domain, &self.train[p]))
    }

    pub fn validation_examples(&self, domain: usize) -> Result<Vec<&'a Example>> {
        let p = self.guard(domain)?;
        Ok(self.examples_of(domain, &self.validation[p]))
    }

    /// Validation portions of all training domains.
    pub fn all_validation(&self) -> Vec<&'a Example> {
        self.train_domains
            .iter()
            .zip(&self.validation)
            .flat_map(|(&d, v)| self.examples_of(d, v))
            .collect()
    }

    /// Every example of the held-out domain.
    pub fn test_examples(&self) -> Vec<&'a Example> {
        self.dataset.domains()[self.held_out].examples.iter().collect()
    }

    fn guard(&self, domain: usize) -> Result<usize> {
        if domain == self.held_out {
            self.held_out_requests.fetch_add(1, Ordering::Relaxed);
            return Err(Error::Audit(format!(
                "held-out domain {} requested for training",
                self.held_out_id()
            )));
        }
        self.position(domain)
            .ok_or_else(|| Error::Config(format!("domain index {domain} is not a training domain")))
    }

    /// Samples `n_b` training examples uniformly with replacement from the
    /// union of the training portions of `domains`.
    pub fn sample(&self, domains: &[usize], n_b: usize, r: &mut Rng) -> Result<Batch> {
        let mut pools = Vec::with_capacity(domains.len());
        for &d in domains {
            pools.push((d, &self.train[self.guard(d)?]));
        }
        let total: usize = pools.iter().map(|(_, p)| p.len()).sum();
        if total == 0 {
            return Err(Error::EmptyPool);
        }
        if n_b == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut picks = Vec::with_capacity(n_b);
        for _ in 0..n_b {
            let mut k = r.random_range(0..total);
            for &(d, pool) in &pools {
                if k < pool.len() {
                    let ex = &self.dataset.domains()[d].examples[pool[k]];
                    if ex.domain == self.held_out {
                        self.held_out_requests.fetch_add(1, Ordering::Relaxed);
                    }
                    picks.push(ex);
                    break;
                }
                k -= pool.len();
            }
        }
        self.draws.fetch_add(n_b as u64, Ordering::Relaxed);
        stack(&picks)
    }

    /// Samples from the aggregate of all training domains.
    pub fn sample_aggregate(&self, n_b: usize, r: &mut Rng) -> Result<Batch> {
        let domains = self.train_domains.clone();
        self.sample(&domains, n_b, r)
    }

    /// Number of sampling requests that touched the held-out domain.
    pub fn held_out_requests(&self) -> u64 {
        self.held_out_requests.load(Ordering::Relaxed)
    }

    /// Total examples drawn through [`ScenarioSplit::sample`].
    pub fn draws(&self) -> u64 {
        self.draws.load(Ordering::Relaxed)
    }

    /// Fails when any sampling request touched the held-out domain.
    pub fn audit(&self) -> Result<()> {
        match self.held_out_requests() {
            0 => Ok(()),
            n => Err(Error::Audit(format!(
                "{n} sampling requests touched held-out domain {}",
                self.held_out_id()
            ))),
        }
    }
}
