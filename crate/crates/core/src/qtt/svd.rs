//! Thin SVD for the small unfoldings that appear in rounding.
//!
//! The work is done by faer's divide-and-conquer SVD, which is reliable on
//! the exactly rank-deficient input produced by analytic QTT constructions.
//! A one-sided Jacobi SVD (Householder QR followed by Hestenes rotations) is
//! kept as a fallback should faer fail to converge.

use nalgebra::DMatrix;

pub(crate) struct Svd {
    /// `m × k` with orthonormal columns, `k = min(m, n)`
    pub u: DMatrix<f64>,
    /// length `k`, non-increasing
    pub s: Vec<f64>,
    /// `k × n` with orthonormal rows
    pub vt: DMatrix<f64>,
}

pub(crate) fn svd(a: &DMatrix<f64>) -> Svd {
    let (m, n) = a.shape();
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    match fa.thin_svd() {
        Ok(d) => {
            let k = m.min(n);
            let (u, v, s) = (d.U(), d.V(), d.S().column_vector());
            Svd {
                u: DMatrix::from_fn(m, k, |i, j| u[(i, j)]),
                s: (0..k).map(|i| s[i]).collect(),
                vt: DMatrix::from_fn(k, n, |i, j| v[(j, i)]),
            }
        }
        Err(_) => svd_jacobi(a),
    }
}

fn svd_jacobi(a: &DMatrix<f64>) -> Svd {
    let (m, n) = a.shape();
    if m < n {
        let t = svd_jacobi(&a.transpose());
        return Svd { u: t.vt.transpose(), s: t.s, vt: t.u.transpose() };
    }
    if m > n {
        let qr = a.clone().qr();
        let inner = jacobi(&qr.r());
        return Svd { u: qr.q() * inner.u, s: inner.s, vt: inner.vt };
    }
    jacobi(a)
}

/// One-sided Jacobi on a square or tall matrix.
fn jacobi(a: &DMatrix<f64>) -> Svd {
    let (m, n) = a.shape();
    let mut b = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let eps = f64::EPSILON;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (b[(i, p)], b[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (b[(i, p)], b[(i, q)]);
                    b[(i, p)] = c * x - s * y;
                    b[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| b.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut u = DMatrix::<f64>::zeros(m, n);
    let mut vt = DMatrix::<f64>::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        for i in 0..n {
            vt[(k, i)] = v[(i, j)];
        }
        if sigma > scale * 1e-300 && sigma > 0.0 {
            for i in 0..m {
                u[(i, k)] = b[(i, j)] / sigma;
            }
        }
    }
    complete_columns(&mut u, &s);
    Svd { u, s, vt }
}

/// Replaces the columns of `u` belonging to vanishing singular values with
/// an orthonormal completion, so `u` always has orthonormal columns.
fn complete_columns(u: &mut DMatrix<f64>, s: &[f64]) {
    let (m, n) = u.shape();
    let mut basis = 0usize;
    for k in 0..n {
        if s[k] > 0.0 && (u.column(k).norm() - 1.0).abs() < 1e-6 {
            continue;
        }
        loop {
            let mut cand = nalgebra::DVector::<f64>::zeros(m);
            cand[basis % m] = 1.0;
            basis += 1;
            // two passes of Gram-Schmidt against every other column
            for _ in 0..2 {
                for j in 0..n {
                    if j == k {
                        continue;
                    }
                    let col = u.column(j).clone_owned();
                    let d = col.dot(&cand);
                    cand -= col * d;
                }
            }
            let nrm = cand.norm();
            if nrm > 1e-8 {
                u.set_column(k, &(cand / nrm));
                break;
            }
            if basis > 2 * m + n {
                break;
            }
        }
    }
}
