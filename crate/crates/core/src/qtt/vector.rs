use nalgebra::DMatrix;
use serde::Serialize;

use super::guard;
use super::svd::svd;
use super::train::{truncation_rank, zip_up, Core, Train};
use crate::{Error, Result};

/// Largest level that may be materialized densely.
pub const DENSE_LIMIT: usize = 24;

/// Relative accuracy `δ` of a rounding plus an optional hard rank cap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerance {
    delta: f64,
    max_rank: Option<usize>,
}

impl Tolerance {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidTolerance(format!("delta = {delta}")));
        }
        Ok(Tolerance { delta, max_rank: None })
    }

    /// `δ = 0`: only exactly redundant directions are removed.
    pub fn exact() -> Self {
        Tolerance { delta: 0.0, max_rank: None }
    }

    pub fn with_max_rank(self, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidTolerance("rank cap must be at least 1".into()));
        }
        Ok(Tolerance { max_rank: Some(r), ..self })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn max_rank(&self) -> Option<usize> {
        self.max_rank
    }

    /// Same cap, `δ` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Tolerance { delta: self.delta * factor, max_rank: self.max_rank }
    }
}

/// A grid vector of length `2^L` in binary QTT format.
///
/// Core `k` carries bit `k` of the zero-based index (least significant first).
#[derive(Clone, Debug, PartialEq)]
pub struct QttVector {
    pub(crate) train: Train,
}

pub(crate) fn level_of(len: usize) -> Result<usize> {
    if len < 2 || !len.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(len));
    }
    Ok(len.trailing_zeros() as usize)
}

/// Rank-revealing left-to-right TT-SVD of a dense array whose index is
/// split into `level` digits of size `mode`, least significant first.
pub(crate) fn tt_svd(data: &[f64], level: usize, mode: usize, tol: Tolerance) -> Train {
    let norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eps = if level > 1 {
        tol.delta * norm / ((level - 1) as f64).sqrt()
    } else {
        0.0
    };
    // rows: (rank, digit), columns: remaining (more significant) digits
    let mut cols = data.len() / mode;
    let mut cur = DMatrix::from_fn(mode, cols, |j, m| data[j + mode * m]);
    let mut cores = Vec::with_capacity(level);
    for k in 0..level {
        if k + 1 == level {
            cores.push(Core::from_left_unfolding(&cur, mode));
            break;
        }
        let d = svd(&cur);
        let s = d.s.as_slice();
        let r = truncation_rank(s, eps, tol.max_rank);
        let u = d.u.columns(0, r).into_owned();
        let vt = d.vt.rows(0, r).into_owned();
        cores.push(Core::from_left_unfolding(&u, mode));
        // remainder r × cols, regrouped so the next digit joins the rows
        let next_cols = cols / mode;
        let mut next = DMatrix::zeros(r * mode, next_cols);
        for a in 0..r {
            let sa = s[a];
            for m in 0..cols {
                next[(a * mode + m % mode, m / mode)] = sa * vt[(a, m)];
            }
        }
        cur = next;
        cols = next_cols;
    }
    Train { cores }
}

impl QttVector {
    /// TT-SVD of a dense vector whose length is a power of two.
    pub fn fold(dense: &[f64], tol: Tolerance) -> Result<Self> {
        let level = level_of(dense.len())?;
        guard::note(dense.len());
        Ok(QttVector { train: tt_svd(dense, level, 2, tol) })
    }

    /// Dense vector of length `2^L`, refused above [`DENSE_LIMIT`].
    pub fn unfold(&self) -> Result<Vec<f64>> {
        let level = self.level();
        if level > DENSE_LIMIT {
            return Err(Error::TooLarge { level, limit: DENSE_LIMIT });
        }
        guard::note(1 << level);
        Ok(self.train.full())
    }

    /// Builds a vector from explicit cores given as `(left, right, data)`
    /// with `data[(a * 2 + j) * right + b]`.
    pub fn from_cores(cores: Vec<(usize, usize, Vec<f64>)>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidArgument("a QTT vector needs at least one core".into()));
        }
        let mut prev = 1usize;
        let mut out = Vec::with_capacity(cores.len());
        for (k, (left, right, data)) in cores.into_iter().enumerate() {
            if left != prev || data.len() != left * 2 * right || left == 0 || right == 0 {
                return Err(Error::Format(format!("core {k} has inconsistent shape")));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("core {k} has non-finite entries")));
            }
            prev = right;
            out.push(Core { left, mode: 2, right, data });
        }
        if prev != 1 {
            return Err(Error::Format("last rank must be 1".into()));
        }
        Ok(QttVector { train: Train { cores: out } })
    }

    /// Cores as `(left, right, data)` triples, inverse of [`Self::from_cores`].
    pub fn cores(&self) -> Vec<(usize, usize, &[f64])> {
        self.train.cores.iter().map(|c| (c.left, c.right, c.data.as_slice())).collect()
    }

    pub fn level(&self) -> usize {
        self.train.level()
    }

    pub fn len(&self) -> usize {
        1 << self.level()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(r_0 = 1, r_1, …, r_L = 1)`
    pub fn rank_profile(&self) -> Vec<usize> {
        self.train.ranks()
    }

    pub fn max_rank(&self) -> usize {
        self.train.max_rank()
    }

    /// Arithmetic mean of the internal ranks `r_1 … r_{L-1}`.
    pub fn average_rank(&self) -> f64 {
        self.train.average_rank()
    }

    /// Number of stored scalars.
    pub fn storage(&self) -> usize {
        self.train.cores.iter().map(|c| c.data.len()).sum()
    }

    /// Entry at zero-based index `i`.
    pub fn get(&self, i: usize) -> f64 {
        self.train.entry((0..self.level()).map(|k| (i >> k) & 1))
    }

    pub fn round(&self, tol: Tolerance) -> Self {
        QttVector { train: self.train.round(tol.delta, tol.max_rank) }
    }

    pub fn add(&self, other: &QttVector) -> Result<Self> {
        self.train.check_same_level(&other.train)?;
        Ok(QttVector { train: self.train.add(&other.train) })
    }

    pub fn sub(&self, other: &QttVector) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    /// `self + alpha * other`, rounded.
    pub fn axpy(&self, alpha: f64, other: &QttVector, tol: Tolerance) -> Result<Self> {
        Ok(self.add(&other.scale(alpha))?.round(tol))
    }

    pub fn scale(&self, alpha: f64) -> Self {
        QttVector { train: self.train.scaled(alpha) }
    }

    /// Exact entrywise product.
    pub fn hadamard(&self, other: &QttVector) -> Result<Self> {
        self.train.check_same_level(&other.train)?;
        Ok(QttVector { train: self.train.hadamard(&other.train) })
    }

    /// Entrywise product rounded to `tol`, without forming the full-rank
    /// product when the rank product is large.
    pub fn hadamard_round(&self, other: &QttVector, tol: Tolerance) -> Result<Self> {
        self.train.check_same_level(&other.train)?;
        let (x, y) = (&self.train, &other.train);
        if x.max_rank() * y.max_rank() <= ZIP_THRESHOLD {
            return Ok(QttVector { train: x.hadamard(y).round(tol.delta, tol.max_rank) });
        }
        let t = zip_up(self.level(), 2, tol.delta, tol.max_rank, |k, carry| {
            let (xc, yc) = (&x.cores[k], &y.cores[k]);
            let o = carry.nrows();
            let mut out = DMatrix::zeros(o * 2, xc.right * yc.right);
            for j in 0..2 {
                for a in 0..xc.left {
                    for b in 0..yc.left {
                        let col = a * yc.left + b;
                        for a2 in 0..xc.right {
                            let xv = xc.get(a, j, a2);
                            if xv == 0.0 {
                                continue;
                            }
                            for b2 in 0..yc.right {
                                let w = xv * yc.get(b, j, b2);
                                if w == 0.0 {
                                    continue;
                                }
                                for r in 0..o {
                                    out[(r * 2 + j, a2 * yc.right + b2)] += carry[(r, col)] * w;
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

    pub fn dot(&self, other: &QttVector) -> Result<f64> {
        self.train.check_same_level(&other.train)?;
        Ok(self.train.dot(&other.train))
    }

    /// `Σ_i w_i x_i y_i` by a three-train contraction.
    pub fn weighted_dot(&self, x: &QttVector, y: &QttVector) -> Result<f64> {
        self.train.check_same_level(&x.train)?;
        self.train.check_same_level(&y.train)?;
        Ok(self.train.dot3(&x.train, &y.train))
    }

    /// Euclidean norm, computed through orthogonalization so that it stays
    /// accurate for nearly cancelling sums.
    pub fn norm2(&self) -> f64 {
        self.train.norm()
    }

    /// Sum of all entries.
    pub fn sum(&self) -> f64 {
        self.train.dot(&QttVector::constant(self.level(), 1.0).train)
    }

    /// Entrywise reciprocal of a vector with entries in `[lo, hi]`,
    /// `0 < lo ≤ hi`, by the Newton iteration `x ← x (2 − a x)`.
    ///
    /// Starting from `2 / (lo + hi)` the residual `1 − a x` contracts
    /// quadratically from `(hi − lo) / (hi + lo)`. Stops when its RMS value
    /// falls below `tol`.
    pub fn reciprocal(&self, lo: f64, hi: f64, tol: Tolerance) -> Result<Self> {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("reciprocal needs 0 < lo ≤ hi, got [{lo}, {hi}]")));
        }
        let l = self.level();
        let one = QttVector::constant(l, 1.0);
        let inner = tol.scaled(1e-2);
        let target = tol.delta().max(1e-15);
        let rms = (self.len() as f64).sqrt();
        let mut x = QttVector::constant(l, 2.0 / (lo + hi));
        for _ in 0..64 {
            let e = one.sub(&self.hadamard_round(&x, inner)?)?.round(inner);
            if e.norm2() / rms <= target {
                return Ok(x.round(tol));
            }
            x = x.add(&x.hadamard_round(&e, inner)?)?.round(inner);
        }
        Err(Error::InvalidArgument("reciprocal iteration did not converge".into()))
    }
}

/// Above this rank product, products are compressed on the fly.
pub(crate) const ZIP_THRESHOLD: usize = 160;
