#![allow(dead_code)]

use crossdepict_core::autodiff::{softmax_cross_entropy, Tape, Var};
use crossdepict_core::data::{Example, MultiDomainDataset};
use crossdepict_core::{ParamSet, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences of a scalar function of a flat parameter vector.
pub fn central_diff(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Parameters of a two-layer tanh network `widths[0] -> widths[1] -> widths[2]`.
pub fn tanh_net_params(rng: &mut ChaCha8Rng, widths: [usize; 3]) -> ParamSet {
    ParamSet::new([
        ("w1", random_tensor(rng, &[widths[0], widths[1]], 0.6)),
        ("b1", random_tensor(rng, &[widths[1]], 0.2)),
        ("w2", random_tensor(rng, &[widths[1], widths[2]], 0.6)),
        ("b2", random_tensor(rng, &[widths[2]], 0.2)),
    ])
    .unwrap()
}

pub fn tanh_net_logits(tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
    let h = tape.matmul(x, p[0])?;
    let h = tape.add(h, p[1])?;
    let h = tape.tanh(h)?;
    let y = tape.matmul(h, p[2])?;
    tape.add(y, p[3])
}

pub fn tanh_net_loss(tape: &mut Tape, p: &[Var], x: &Tensor, labels: &[usize]) -> Result<Var> {
    let xv = tape.constant(x.clone());
    let logits = tanh_net_logits(tape, p, xv)?;
    softmax_cross_entropy(tape, logits, labels)
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Loss and gradient of the two-layer tanh network, by hand-written
/// backpropagation over nalgebra matrices.
pub fn tanh_net_manual(p: &ParamSet, x: &Tensor, labels: &[usize]) -> (f64, ParamSet) {
    use nalgebra::{DMatrix, DVector};
    let mat = |t: &Tensor| {
        let (r, c) = t.dims2().unwrap();
        DMatrix::from_row_slice(r, c, t.data())
    };
    let w1 = mat(p.get("w1").unwrap());
    let w2 = mat(p.get("w2").unwrap());
    let b1 = DVector::from_column_slice(p.get("b1").unwrap().data());
    let b2 = DVector::from_column_slice(p.get("b2").unwrap().data());
    let xm = mat(x);
    let n = xm.nrows();
    let mut z = &xm * &w1;
    for mut row in z.row_iter_mut() {
        row += b1.transpose();
    }
    let h = z.map(f64::tanh);
    let mut y = &h * &w2;
    for mut row in y.row_iter_mut() {
        row += b2.transpose();
    }
    let mut loss = 0.0;
    let mut dy = y.clone();
    for i in 0..n {
        let m = y.row(i).max();
        let lse = m + y.row(i).iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - y[(i, labels[i])];
        for j in 0..y.ncols() {
            dy[(i, j)] = ((y[(i, j)] - lse).exp() - if j == labels[i] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    let dw2 = h.transpose() * &dy;
    let db2: Vec<f64> = (0..dy.ncols()).map(|j| dy.column(j).sum()).collect();
    let dh = &dy * w2.transpose();
    let dz = dh.zip_map(&h, |g, hv| g * (1.0 - hv * hv));
    let dw1 = xm.transpose() * &dz;
    let db1: Vec<f64> = (0..dz.ncols()).map(|j| dz.column(j).sum()).collect();
    let tensor = |m: &DMatrix<f64>| {
        let data = (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect();
        Tensor::matrix(m.nrows(), m.ncols(), data).unwrap()
    };
    let grads = ParamSet::new([
        ("w1", tensor(&dw1)),
        ("b1", Tensor::vector(db1)),
        ("w2", tensor(&dw2)),
        ("b2", Tensor::vector(db2)),
    ])
    .unwrap();
    (loss / n as f64, grads)
}

/// Uniform blobs: class `c` sits at 1.5 along axis `c`, domain `d`
/// adds a constant offset `0.3 d` to every coordinate.
pub fn blobs(domains: usize, per_class: usize, classes: usize, dim: usize, seed: u64) -> MultiDomainDataset {
    let mut r = rng(seed);
    let names = (0..classes).map(|c| format!("c{c}")).collect();
    let doms = (0..domains)
        .map(|d| {
            let mut ex = Vec::new();
            for c in 0..classes {
                for _ in 0..per_class {
                    let v = (0..dim)
                        .map(|j| {
                            let centre = if j == c { 1.5 } else { 0.0 };
                            centre + 0.3 * d as f64 + r.random_range(-0.4..0.4)
                        })
                        .collect();
                    ex.push(Example {
                        features: Tensor::vector(v),
                        label: c,
                        domain: 0,
                    });
                }
            }
            (format!("d{d}"), ex)
        })
        .collect();
    MultiDomainDataset::new(names, doms).unwrap()
}
