//! Class centres per domain projected onto the top two principal directions
//! of the example space.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::MultiDomainDataset;
use crate::error::{Error, Result};
use crate::linalg::right_singular;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedCentre {
    pub class: String,
    pub domain: String,
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenProjection {
    pub mean: Vec<f64>,
    /// Unit principal directions. Each is signed so that its largest
    /// magnitude entry is positive.
    pub axes: [Vec<f64>; 2],
    /// Fraction of total variance along the two axes.
    pub explained: f64,
    /// One entry per (class, domain) pair with examples, class-major.
    pub centres: Vec<ProjectedCentre>,
}

impl EigenProjection {
    pub fn project(&self, x: &[f64]) -> (f64, f64) {
        let dot = |axis: &[f64]| x.iter().zip(&self.mean).zip(axis).map(|((a, m), w)| (a - m) * w).sum();
        (dot(&self.axes[0]), dot(&self.axes[1]))
    }

    /// Tab-separated `class, domain, u, v` rows at full precision.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# explained {}\nclass\tdomain\tu\tv\n", self.explained);
        for c in &self.centres {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", c.class, c.domain, c.u, c.v));
        }
        s
    }
}

fn orient(mut axis: Vec<f64>) -> Vec<f64> {
    let mut pivot = 0;
    for (i, x) in axis.iter().enumerate() {
        if libm::fabs(*x) > libm::fabs(axis[pivot]) {
            pivot = i;
        }
    }
    if axis[pivot] < 0.0 {
        axis.iter_mut().for_each(|x| *x = -*x);
    }
    axis
}

/// Principal directions come from the singular structure of the mean-centred
/// example matrix.
pub fn eigen_projection(dataset: &MultiDomainDataset) -> Result<EigenProjection> {
    let dim = dataset.dim();
    let n = dataset.len();
    if dim < 2 {
        return Err(Error::Data(format!("projection needs at least 2 feature dimensions, got {dim}")));
    }
    if n < 2 {
        return Err(Error::Data(format!("projection needs at least 2 examples, got {n}")));
    }
    let mut mean = vec![0.0; dim];
    for e in dataset.examples() {
        for (m, x) in mean.iter_mut().zip(e.features.data()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centred = Vec::with_capacity(n * dim);
    for e in dataset.examples() {
        centred.extend(e.features.data().iter().zip(&mean).map(|(x, m)| x - m));
    }
    let total: f64 = centred.iter().map(|x| x * x).sum();
    let scale = mean.iter().map(|m| m * m).sum::<f64>().max(1.0);
    if total <= 1e-24 * scale * n as f64 {
        return Err(Error::Data("all examples are identical".into()));
    }
    let (s, v) = right_singular(&centred, n, dim);
    let column = |j: usize| orient((0..dim).map(|i| v[i * dim + j]).collect());
    let axes = [column(0), column(1)];
    let explained = (s[0] * s[0] + s[1] * s[1]) / total;

    let mut out = EigenProjection {
        mean,
        axes,
        explained,
        centres: Vec::new(),
    };
    for (c, class) in dataset.classes().iter().enumerate() {
        for d in dataset.domains() {
            let members: Vec<&[f64]> = d.examples.iter().filter(|e| e.label == c).map(|e| e.features.data()).collect();
            if members.is_empty() {
                continue;
            }
            let mut centre = vec![0.0; dim];
            for m in &members {
                for (a, x) in centre.iter_mut().zip(*m) {
                    *a += x;
                }
            }
            centre.iter_mut().for_each(|a| *a /= members.len() as f64);
            let (u, v) = out.project(&centre);
            out.centres.push(ProjectedCentre {
                class: class.clone(),
                domain: d.id.clone(),
                u,
                v,
            });
        }
    }
    Ok(out)
}
