//! Small dense linear algebra: one-sided Jacobi SVD and Householder QR.
//!
//! Matrices are row-major slices with explicit dimensions.

use alloc::vec;
use alloc::vec::Vec;

/// Thin singular value decomposition `A = U diag(s) V^T` of a `rows x cols`
/// matrix with `rows >= cols`. Singular values are sorted descending.
#[derive(Clone, Debug)]
pub struct Svd {
    pub rows: usize,
    pub cols: usize,
    /// `rows x cols`, row-major. Columns for zero singular values are zero.
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    /// `cols x cols`, row-major; column `j` is the `j`-th right singular vector.
    pub v: Vec<f64>,
}

const MAX_SWEEPS: usize = 60;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &[f64], rows: usize, cols: usize) -> Svd {
    assert!(rows >= cols, "svd expects rows >= cols");
    assert_eq!(a.len(), rows * cols);
    // column-major working copy
    let mut w: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| a[i * cols + j]).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&w[p], &w[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || libm::fabs(gamma) <= 1e-15 * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = w
        .iter()
        .map(|c| libm::sqrt(c.iter().map(|x| x * x).sum()))
        .collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut u = vec![0.0; rows * cols];
    let mut vout = vec![0.0; cols * cols];
    let mut s = Vec::with_capacity(cols);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..rows {
                u[i * cols + k] = w[j][i] / sigma;
            }
        }
        for i in 0..cols {
            vout[i * cols + k] = v[j][i];
        }
    }
    Svd {
        rows,
        cols,
        u,
        s,
        v: vout,
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// The `cols x cols` upper-triangular factor `R` of `A = QR` (Householder).
pub fn qr_r(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert!(rows >= cols);
    assert_eq!(a.len(), rows * cols);
    let mut m: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| a[i * cols + j]).collect())
        .collect();
    for k in 0..cols {
        let norm = libm::sqrt(m[k][k..].iter().map(|x| x * x).sum());
        if norm == 0.0 {
            continue;
        }
        let alpha = if m[k][k] > 0.0 { -norm } else { norm };
        let mut hv: Vec<f64> = m[k][k..].to_vec();
        hv[0] -= alpha;
        let hv_norm2: f64 = hv.iter().map(|x| x * x).sum();
        if hv_norm2 == 0.0 {
            continue;
        }
        for col in m.iter_mut().skip(k) {
            let dot: f64 = col[k..].iter().zip(&hv).map(|(x, h)| x * h).sum();
            let f = 2.0 * dot / hv_norm2;
            for (x, h) in col[k..].iter_mut().zip(&hv) {
                *x -= f * h;
            }
        }
    }
    let mut r = vec![0.0; cols * cols];
    for (j, col) in m.iter().enumerate() {
        for i in 0..=j {
            r[i * cols + j] = col[i];
        }
    }
    r
}

/// Right singular vectors and singular values of a tall matrix, computed from
/// the SVD of its triangular QR factor.
pub fn right_singular(a: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    if rows >= cols {
        let r = qr_r(a, rows, cols);
        let d = svd(&r, cols, cols);
        (d.s, d.v)
    } else {
        // pad with zero rows; right singular structure is unchanged
        let mut padded = a.to_vec();
        padded.resize(cols * cols, 0.0);
        let d = svd(&padded, cols, cols);
        (d.s, d.v)
    }
}
