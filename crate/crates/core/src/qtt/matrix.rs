use nalgebra::DMatrix;

use super::guard;
use super::train::{zip_up, Core, Train};
use super::vector::{tt_svd, QttVector, Tolerance, ZIP_THRESHOLD};
use crate::{Error, Result};

/// Largest level of a matrix that may be materialized densely.
pub const DENSE_MATRIX_LIMIT: usize = 12;

/// A `2^L × 2^L` operator in QTT format.
///
/// Core `k` has physical index `2 * row_bit + col_bit` for bit `k` of the
/// zero-based row and column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct QttMatrix {
    pub(crate) train: Train,
}

impl QttMatrix {
    /// TT-SVD of a dense row-major `n × n` matrix, `n = 2^L`.
    pub fn fold(dense: &[f64], n: usize, tol: Tolerance) -> Result<Self> {
        let level = super::vector::level_of(n)?;
        if dense.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries for a {n}×{n} matrix, got {}",
                n * n,
                dense.len()
            )));
        }
        guard::note(dense.len());
        // interleave bits so that digit k is (row_k, col_k)
        let mut inter = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let mut idx = 0usize;
                for k in 0..level {
                    let d = 2 * ((r >> k) & 1) + ((c >> k) & 1);
                    idx |= d << (2 * k);
                }
                inter[idx] = dense[r * n + c];
            }
        }
        Ok(QttMatrix { train: tt_svd(&inter, level, 4, tol) })
    }

    /// Dense row-major matrix, refused above [`DENSE_MATRIX_LIMIT`].
    pub fn unfold(&self) -> Result<Vec<f64>> {
        let level = self.level();
        if level > DENSE_MATRIX_LIMIT {
            return Err(Error::TooLarge { level, limit: DENSE_MATRIX_LIMIT });
        }
        let n = 1usize << level;
        guard::note(n * n);
        let inter = self.train.full();
        let mut out = vec![0.0; n * n];
        for (idx, v) in inter.into_iter().enumerate() {
            let (mut r, mut c) = (0usize, 0usize);
            for k in 0..level {
                let d = (idx >> (2 * k)) & 3;
                r |= (d >> 1) << k;
                c |= (d & 1) << k;
            }
            out[r * n + c] = v;
        }
        Ok(out)
    }

    /// Builds a matrix from `(left, right, data)` cores with
    /// `data[(a * 4 + 2 * row_bit + col_bit) * right + b]`.
    pub fn from_cores(cores: Vec<(usize, usize, Vec<f64>)>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidArgument("a QTT matrix needs at least one core".into()));
        }
        let mut prev = 1usize;
        let mut out = Vec::with_capacity(cores.len());
        for (k, (left, right, data)) in cores.into_iter().enumerate() {
            if left != prev || data.len() != left * 4 * right || left == 0 || right == 0 {
                return Err(Error::Format(format!("core {k} has inconsistent shape")));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("core {k} has non-finite entries")));
            }
            prev = right;
            out.push(Core { left, mode: 4, right, data });
        }
        if prev != 1 {
            return Err(Error::Format("last rank must be 1".into()));
        }
        Ok(QttMatrix { train: Train { cores: out } })
    }

    pub fn cores(&self) -> Vec<(usize, usize, &[f64])> {
        self.train.cores.iter().map(|c| (c.left, c.right, c.data.as_slice())).collect()
    }

    pub fn level(&self) -> usize {
        self.train.level()
    }

    pub fn rank_profile(&self) -> Vec<usize> {
        self.train.ranks()
    }

    pub fn max_rank(&self) -> usize {
        self.train.max_rank()
    }

    pub fn average_rank(&self) -> f64 {
        self.train.average_rank()
    }

    /// Entry `(row, col)`, zero-based.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.train
            .entry((0..self.level()).map(|k| 2 * ((row >> k) & 1) + ((col >> k) & 1)))
    }

    pub fn round(&self, tol: Tolerance) -> Self {
        QttMatrix { train: self.train.round(tol.delta(), tol.max_rank()) }
    }

    pub fn add(&self, other: &QttMatrix) -> Result<Self> {
        self.train.check_same_level(&other.train)?;
        Ok(QttMatrix { train: self.train.add(&other.train) })
    }

    pub fn sub(&self, other: &QttMatrix) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, alpha: f64) -> Self {
        QttMatrix { train: self.train.scaled(alpha) }
    }

    /// Entrywise product.
    pub fn hadamard(&self, other: &QttMatrix) -> Result<Self> {
        self.train.check_same_level(&other.train)?;
        Ok(QttMatrix { train: self.train.hadamard(&other.train) })
    }

    /// Frobenius norm.
    pub fn norm_fro(&self) -> f64 {
        self.train.norm()
    }

    pub fn transpose(&self) -> Self {
        let cores = self
            .train
            .cores
            .iter()
            .map(|c| Core::from_fn(c.left, 4, c.right, |a, m, b| c.get(a, 2 * (m & 1) + (m >> 1), b)))
            .collect();
        QttMatrix { train: Train { cores } }
    }

    /// Diagonal matrix with the entries of `x`; the rank profile is unchanged.
    pub fn diag(x: &QttVector) -> Self {
        let cores = x
            .train
            .cores
            .iter()
            .map(|c| {
                Core::from_fn(c.left, 4, c.right, |a, m, b| {
                    let (i, j) = (m >> 1, m & 1);
                    if i == j {
                        c.get(a, i, b)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        QttMatrix { train: Train { cores } }
    }

    /// The diagonal as a vector.
    pub fn diagonal(&self) -> QttVector {
        let cores = self
            .train
            .cores
            .iter()
            .map(|c| Core::from_fn(c.left, 2, c.right, |a, i, b| c.get(a, 3 * i, b)))
            .collect();
        QttVector { train: Train { cores } }
    }

    /// Rank-one matrix `u wᵀ`.
    pub fn outer(u: &QttVector, w: &QttVector) -> Result<Self> {
        u.train.check_same_level(&w.train)?;
        let cores = u
            .train
            .cores
            .iter()
            .zip(&w.train.cores)
            .map(|(x, y)| {
                Core::from_fn(x.left * y.left, 4, x.right * y.right, |a, m, b| {
                    x.get(a / y.left, m >> 1, b / y.right) * y.get(a % y.left, m & 1, b % y.right)
                })
            })
            .collect();
        Ok(QttMatrix { train: Train { cores } })
    }

    /// Exact product `A x`; ranks multiply.
    pub fn matvec_exact(&self, x: &QttVector) -> Result<QttVector> {
        self.train.check_same_level(&x.train)?;
        let cores = self
            .train
            .cores
            .iter()
            .zip(&x.train.cores)
            .map(|(a, v)| {
                let mut c = Core::zeros(a.left * v.left, 2, a.right * v.right);
                for p in 0..a.left {
                    for i in 0..2 {
                        for p2 in 0..a.right {
                            for j in 0..2 {
                                let av = a.get(p, 2 * i + j, p2);
                                if av == 0.0 {
                                    continue;
                                }
                                for q in 0..v.left {
                                    for q2 in 0..v.right {
                                        let idx = c.idx(p * v.left + q, i, p2 * v.right + q2);
                                        c.data[idx] += av * v.get(q, j, q2);
                                    }
                                }
                            }
                        }
                    }
                }
                c
            })
            .collect();
        Ok(QttVector { train: Train { cores } })
    }

    /// `A x` rounded to `tol`. Large rank products are compressed core by
    /// core instead of being formed explicitly.
    pub fn matvec(&self, x: &QttVector, tol: Tolerance) -> Result<QttVector> {
        self.train.check_same_level(&x.train)?;
        if self.max_rank() * x.max_rank() <= ZIP_THRESHOLD {
            return Ok(self.matvec_exact(x)?.round(tol));
        }
        let (at, xt) = (&self.train, &x.train);
        let t = zip_up(self.level(), 2, tol.delta(), tol.max_rank(), |k, carry| {
            let (a, v) = (&at.cores[k], &xt.cores[k]);
            let o = carry.nrows();
            // w[(r, p, j), q2] = Σ_q carry[r, (p, q)] v[q, j, q2]
            let mut w = vec![0.0; o * a.left * 2 * v.right];
            for r in 0..o {
                for p in 0..a.left {
                    for q in 0..v.left {
                        let cv = carry[(r, p * v.left + q)];
                        if cv == 0.0 {
                            continue;
                        }
                        for j in 0..2 {
                            for q2 in 0..v.right {
                                w[((r * a.left + p) * 2 + j) * v.right + q2] += cv * v.get(q, j, q2);
                            }
                        }
                    }
                }
            }
            let mut out = DMatrix::zeros(o * 2, a.right * v.right);
            for r in 0..o {
                for p in 0..a.left {
                    for i in 0..2 {
                        for j in 0..2 {
                            let base = ((r * a.left + p) * 2 + j) * v.right;
                            for p2 in 0..a.right {
                                let av = a.get(p, 2 * i + j, p2);
                                if av == 0.0 {
                                    continue;
                                }
                                for q2 in 0..v.right {
                                    out[(r * 2 + i, p2 * v.right + q2)] += av * w[base + q2];
                                }
                            }
                        }
                    }
                }
            }
            out
        });
        Ok(QttVector { train: t })
    }

    /// Exact product `A B`; ranks multiply.
    pub fn matmul(&self, other: &QttMatrix) -> Result<Self> {
        self.train.check_same_level(&other.train)?;
        let cores = self
            .train
            .cores
            .iter()
            .zip(&other.train.cores)
            .map(|(a, b)| {
                let mut c = Core::zeros(a.left * b.left, 4, a.right * b.right);
                for p in 0..a.left {
                    for p2 in 0..a.right {
                        for i in 0..2 {
                            for j in 0..2 {
                                let av = a.get(p, 2 * i + j, p2);
                                if av == 0.0 {
                                    continue;
                                }
                                for q in 0..b.left {
                                    for q2 in 0..b.right {
                                        for k in 0..2 {
                                            let idx = c.idx(p * b.left + q, 2 * i + k, p2 * b.right + q2);
                                            c.data[idx] += av * b.get(q, 2 * j + k, q2);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                c
            })
            .collect();
        Ok(QttMatrix { train: Train { cores } })
    }
}
