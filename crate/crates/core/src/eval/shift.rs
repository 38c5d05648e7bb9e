//! Domain shift measured as KL divergence between per-domain histograms of a
//! scalar statistic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Example, MultiDomainDataset};
use crate::error::{Error, Result};

/// Bin count used when none is configured. On the default synthetic data
/// the sketch domain is the most shifted from 32 bins up; 64 gives the
/// widest margin.
pub const DEFAULT_KL_BINS: usize = 64;

/// `sum p_i ln(p_i / q_i)` over normalized distributions; terms with
/// `p_i == 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "kl_divergence",
            lhs: vec![p.len()],
            rhs: vec![q.len()],
        });
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi < 0.0 || qi < 0.0 {
            return Err(Error::Data("probabilities must be non-negative".into()));
        }
        if pi > 0.0 {
            if qi == 0.0 {
                return Err(Error::Data("q has zero mass where p does not".into()));
            }
            kl += pi * libm::log(pi / qi);
        }
    }
    Ok(kl)
}

/// Bin counts plus one, normalized.
pub fn smoothed_histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut counts = vec![1.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
        counts[b.min(bins - 1)] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainShiftReport {
    pub bins: usize,
    /// Shared histogram range over all domains.
    pub lo: f64,
    pub hi: f64,
    pub domains: Vec<String>,
    pub histograms: Vec<Vec<f64>>,
    /// `kl[i][j] = KL(P_i || P_j)`.
    pub kl: Vec<Vec<f64>>,
}

impl DomainShiftReport {
    /// Per domain, the mean over other domains of both KL directions.
    pub fn mean_to_others(&self) -> Vec<f64> {
        let n = self.domains.len();
        (0..n)
            .map(|i| {
                let sum: f64 = (0..n).filter(|&j| j != i).map(|j| self.kl[i][j] + self.kl[j][i]).sum();
                sum / (2 * (n - 1)) as f64
            })
            .collect()
    }

    /// Tab-separated `from, to, kl` rows at full precision.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# bins {} range {} {}\nfrom\tto\tkl\n", self.bins, self.lo, self.hi);
        for (i, a) in self.domains.iter().enumerate() {
            for (j, b) in self.domains.iter().enumerate() {
                s.push_str(&format!("{a}\t{b}\t{}\n", self.kl[i][j]));
            }
        }
        s
    }
}

/// Mean feature value of an example; the default statistic.
pub fn mean_intensity(e: &Example) -> f64 {
    let d = e.features.data();
    d.iter().sum::<f64>() / d.len() as f64
}

pub fn kl_domain_shift(dataset: &MultiDomainDataset, bins: usize) -> Result<DomainShiftReport> {
    kl_domain_shift_with(dataset, bins, mean_intensity)
}

/// Pairwise KL between add-one-smoothed histograms of `statistic` over each
/// domain, binned on the range shared by all domains.
pub fn kl_domain_shift_with(
    dataset: &MultiDomainDataset,
    bins: usize,
    mut statistic: impl FnMut(&Example) -> f64,
) -> Result<DomainShiftReport> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
    }
    if dataset.domains().len() < 2 {
        return Err(Error::Config("need at least 2 domains".into()));
    }
    let mut values = Vec::with_capacity(dataset.domains().len());
    for d in dataset.domains() {
        if d.examples.is_empty() {
            return Err(Error::Data(format!("domain {} is empty", d.id)));
        }
        let v: Vec<f64> = d.examples.iter().map(&mut statistic).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("domain statistic"));
        }
        values.push(v);
    }
    let all = values.iter().flatten();
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let histograms: Vec<Vec<f64>> = values.iter().map(|v| smoothed_histogram(v, bins, lo, hi)).collect();
    let kl = histograms
        .iter()
        .map(|p| histograms.iter().map(|q| kl_divergence(p, q)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(DomainShiftReport {
        bins,
        lo,
        hi,
        domains: dataset.domains().iter().map(|d| d.id.clone()).collect(),
        histograms,
        kl,
    })
}
