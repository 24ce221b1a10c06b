//! Mode-generic tensor-train storage shared by [`QttVector`](super::QttVector)
//! (mode 2) and [`QttMatrix`](super::QttMatrix) (mode 4, row and column bit
//! fused as `2 * row + col`).

use nalgebra::DMatrix;

use super::svd::svd;
use crate::{Error, Result};

/// One TT core of shape `left × mode × right`, stored row-major so that
/// entry `(a, j, b)` lives at `(a * mode + j) * right + b`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Core {
    pub left: usize,
    pub mode: usize,
    pub right: usize,
    pub data: Vec<f64>,
}

pub(crate) fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl Core {
    pub fn zeros(left: usize, mode: usize, right: usize) -> Self {
        Core {
            left,
            mode,
            right,
            data: vec![0.0; left * mode * right],
        }
    }

    pub fn from_fn(
        left: usize,
        mode: usize,
        right: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut c = Core::zeros(left, mode, right);
        for a in 0..left {
            for j in 0..mode {
                for b in 0..right {
                    let i = c.idx(a, j, b);
                    c.data[i] = f(a, j, b);
                }
            }
        }
        c
    }

    #[inline]
    pub fn idx(&self, a: usize, j: usize, b: usize) -> usize {
        (a * self.mode + j) * self.right + b
    }

    #[inline]
    pub fn get(&self, a: usize, j: usize, b: usize) -> f64 {
        self.data[self.idx(a, j, b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, j: usize, b: usize, v: f64) {
        let i = self.idx(a, j, b);
        self.data[i] = v;
    }

    /// `(left * mode) × right`
    pub fn left_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.left * self.mode, self.right, &self.data)
    }

    /// `left × (mode * right)`
    pub fn right_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.left, self.mode * self.right, &self.data)
    }

    pub fn from_left_unfolding(m: &DMatrix<f64>, mode: usize) -> Self {
        debug_assert_eq!(m.nrows() % mode, 0);
        Core {
            left: m.nrows() / mode,
            mode,
            right: m.ncols(),
            data: to_row_major(m),
        }
    }

    pub fn from_right_unfolding(m: &DMatrix<f64>, mode: usize) -> Self {
        debug_assert_eq!(m.ncols() % mode, 0);
        Core {
            left: m.nrows(),
            mode,
            right: m.ncols() / mode,
            data: to_row_major(m),
        }
    }

    /// The `left × right` matrix for a fixed physical index.
    pub fn slice(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.left, self.right, |a, b| self.get(a, j, b))
    }

    /// `self · m` over the right rank index.
    pub fn mul_right(&self, m: &DMatrix<f64>) -> Core {
        Core::from_left_unfolding(&(self.left_unfolding() * m), self.mode)
    }

    /// `m · self` over the left rank index.
    pub fn mul_left(&self, m: &DMatrix<f64>) -> Core {
        Core::from_right_unfolding(&(m * self.right_unfolding()), self.mode)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Number of singular values to keep so that the discarded tail has
/// Euclidean norm at most `eps`.
pub(crate) fn truncation_rank(s: &[f64], eps: f64, cap: Option<usize>) -> usize {
    let mut tail = 0.0;
    let mut rank = s.len();
    while rank > 1 {
        let next = tail + s[rank - 1] * s[rank - 1];
        if next.sqrt() > eps {
            break;
        }
        tail = next;
        rank -= 1;
    }
    match cap {
        Some(c) => rank.min(c.max(1)),
        None => rank,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Train {
    pub cores: Vec<Core>,
}

impl Train {
    pub fn level(&self) -> usize {
        self.cores.len()
    }

    pub fn mode(&self) -> usize {
        self.cores[0].mode
    }

    /// `(r_0, r_1, …, r_L)`
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = Vec::with_capacity(self.cores.len() + 1);
        r.push(self.cores[0].left);
        r.extend(self.cores.iter().map(|c| c.right));
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    pub fn average_rank(&self) -> f64 {
        let l = self.level();
        if l <= 1 {
            return 1.0;
        }
        let r = self.ranks();
        r[1..l].iter().sum::<usize>() as f64 / (l - 1) as f64
    }

    pub fn check_same_level(&self, other: &Train) -> Result<()> {
        if self.level() != other.level() {
            return Err(Error::LevelMismatch {
                left: self.level(),
                right: other.level(),
            });
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> Train {
        let mut t = self.clone();
        for v in t.cores[0].data.iter_mut() {
            *v *= alpha;
        }
        t
    }

    /// Exact sum; ranks add.
    pub fn add(&self, other: &Train) -> Train {
        let l = self.level();
        let m = self.mode();
        if l == 1 {
            let mut c = self.cores[0].clone();
            for (a, b) in c.data.iter_mut().zip(&other.cores[0].data) {
                *a += b;
            }
            return Train { cores: vec![c] };
        }
        let mut cores = Vec::with_capacity(l);
        for k in 0..l {
            let x = &self.cores[k];
            let y = &other.cores[k];
            let core = if k == 0 {
                let mut c = Core::zeros(1, m, x.right + y.right);
                for j in 0..m {
                    for b in 0..x.right {
                        c.set(0, j, b, x.get(0, j, b));
                    }
                    for b in 0..y.right {
                        c.set(0, j, x.right + b, y.get(0, j, b));
                    }
                }
                c
            } else if k == l - 1 {
                let mut c = Core::zeros(x.left + y.left, m, 1);
                for j in 0..m {
                    for a in 0..x.left {
                        c.set(a, j, 0, x.get(a, j, 0));
                    }
                    for a in 0..y.left {
                        c.set(x.left + a, j, 0, y.get(a, j, 0));
                    }
                }
                c
            } else {
                let mut c = Core::zeros(x.left + y.left, m, x.right + y.right);
                for j in 0..m {
                    for a in 0..x.left {
                        for b in 0..x.right {
                            c.set(a, j, b, x.get(a, j, b));
                        }
                    }
                    for a in 0..y.left {
                        for b in 0..y.right {
                            c.set(x.left + a, j, x.right + b, y.get(a, j, b));
                        }
                    }
                }
                c
            };
            cores.push(core);
        }
        Train { cores }
    }

    /// Exact entrywise product; ranks multiply.
    pub fn hadamard(&self, other: &Train) -> Train {
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .map(|(x, y)| {
                let mut c = Core::zeros(x.left * y.left, x.mode, x.right * y.right);
                for a in 0..x.left {
                    for b in 0..y.left {
                        for j in 0..x.mode {
                            for a2 in 0..x.right {
                                let xv = x.get(a, j, a2);
                                if xv == 0.0 {
                                    continue;
                                }
                                for b2 in 0..y.right {
                                    c.set(a * y.left + b, j, a2 * y.right + b2, xv * y.get(b, j, b2));
                                }
                            }
                        }
                    }
                }
                c
            })
            .collect();
        Train { cores }
    }

    /// Sum over all entries of the entrywise product.
    pub fn dot(&self, other: &Train) -> f64 {
        let mut p = DMatrix::from_element(1, 1, 1.0);
        for (x, y) in self.cores.iter().zip(&other.cores) {
            let mut next = DMatrix::zeros(x.right, y.right);
            for j in 0..x.mode {
                next += x.slice(j).transpose() * &p * y.slice(j);
            }
            p = next;
        }
        p[(0, 0)]
    }

    /// `Σ_i w_i x_i y_i` without forming the product train.
    pub fn dot3(&self, x: &Train, y: &Train) -> f64 {
        // state p[(a, b, c)] with a over self, b over x, c over y
        let mut p = vec![1.0];
        let (mut ra, mut rb, mut rc) = (1usize, 1usize, 1usize);
        for k in 0..self.level() {
            let (w, xc, yc) = (&self.cores[k], &x.cores[k], &y.cores[k]);
            let (na, nb, nc) = (w.right, xc.right, yc.right);
            let mut next = vec![0.0; na * nb * nc];
            for j in 0..w.mode {
                // t1[(b, c, a')] = Σ_a p[a,b,c] w[a,j,a']
                let mut t1 = vec![0.0; rb * rc * na];
                for a in 0..ra {
                    for a2 in 0..na {
                        let wv = w.get(a, j, a2);
                        if wv == 0.0 {
                            continue;
                        }
                        for bc in 0..rb * rc {
                            t1[bc * na + a2] += p[a * rb * rc + bc] * wv;
                        }
                    }
                }
                // t2[(c, a', b')] = Σ_b t1[b,c,a'] x[b,j,b']
                let mut t2 = vec![0.0; rc * na * nb];
                for b in 0..rb {
                    for b2 in 0..nb {
                        let xv = xc.get(b, j, b2);
                        if xv == 0.0 {
                            continue;
                        }
                        for c in 0..rc {
                            for a2 in 0..na {
                                t2[(c * na + a2) * nb + b2] += t1[(b * rc + c) * na + a2] * xv;
                            }
                        }
                    }
                }
                // next[(a', b', c')] += Σ_c t2[c,a',b'] y[c,j,c']
                for c in 0..rc {
                    for c2 in 0..nc {
                        let yv = yc.get(c, j, c2);
                        if yv == 0.0 {
                            continue;
                        }
                        for ab in 0..na * nb {
                            next[ab * nc + c2] += t2[c * na * nb + ab] * yv;
                        }
                    }
                }
            }
            p = next;
            ra = na;
            rb = nb;
            rc = nc;
        }
        p[0]
    }

    /// Makes cores `1..L` right-orthonormal; the norm ends up in core 0.
    pub fn right_orthonormalize(&mut self) {
        let m = self.mode();
        for k in (1..self.level()).rev() {
            let unf = self.cores[k].right_unfolding().transpose();
            let qr = unf.qr();
            let q = qr.q();
            let r = qr.r();
            self.cores[k] = Core::from_right_unfolding(&q.transpose(), m);
            self.cores[k - 1] = self.cores[k - 1].mul_right(&r.transpose());
        }
    }

    pub fn norm(&self) -> f64 {
        let mut t = self.clone();
        t.right_orthonormalize();
        t.cores[0].frobenius()
    }

    /// TT-rounding: right-to-left orthogonalization followed by a left-to-right
    /// truncated SVD sweep with per-step threshold `delta · ‖x‖ / √(L-1)`.
    pub fn round(&self, delta: f64, max_rank: Option<usize>) -> Train {
        let mut t = self.clone();
        let l = t.level();
        if l == 1 {
            return t;
        }
        let m = t.mode();
        t.right_orthonormalize();
        let eps = delta * t.cores[0].frobenius() / ((l - 1) as f64).sqrt();
        for k in 0..l - 1 {
            let d = svd(&t.cores[k].left_unfolding());
            let s = d.s.as_slice();
            let rank = truncation_rank(s, eps, max_rank);
            let u = d.u.columns(0, rank).into_owned();
            let vt = d.vt.rows(0, rank).into_owned();
            let sv = DMatrix::from_fn(rank, vt.ncols(), |i, j| s[i] * vt[(i, j)]);
            t.cores[k] = Core::from_left_unfolding(&u, m);
            t.cores[k + 1] = t.cores[k + 1].mul_left(&sv);
        }
        t
    }

    /// Dense materialization, little-endian in the physical index.
    pub fn full(&self) -> Vec<f64> {
        let m = self.mode();
        // rows: accumulated index, cols: current rank
        let mut w: Vec<f64> = vec![1.0];
        let mut rows = 1usize;
        let mut rank = 1usize;
        for c in &self.cores {
            let mut next = vec![0.0; rows * m * c.right];
            for j in 0..m {
                for i in 0..rows {
                    let out_row = i + j * rows;
                    for a in 0..rank {
                        let wv = w[i * rank + a];
                        if wv == 0.0 {
                            continue;
                        }
                        for b in 0..c.right {
                            next[out_row * c.right + b] += wv * c.get(a, j, b);
                        }
                    }
                }
            }
            w = next;
            rows *= m;
            rank = c.right;
        }
        w
    }

    /// Single entry; `digits[k]` is the physical index of core `k`.
    pub fn entry(&self, digits: impl Iterator<Item = usize>) -> f64 {
        let mut row = vec![1.0];
        for (c, j) in self.cores.iter().zip(digits) {
            let mut next = vec![0.0; c.right];
            for (a, rv) in row.iter().enumerate() {
                if *rv == 0.0 {
                    continue;
                }
                for (b, nv) in next.iter_mut().enumerate() {
                    *nv += rv * c.get(a, j, b);
                }
            }
            row = next;
        }
        row[0]
    }
}

/// Left-to-right compressed contraction ("zip-up") of two trains.
///
/// `step` receives the carried matrix `R` (rows: output rank, cols: fused
/// input ranks) and the core index, and must return the matrix with rows
/// `(out_rank, out_mode)` and columns the fused right ranks of the inputs.
/// Each intermediate SVD drops a tail of relative size `local_delta`.
/// Product computed core by core with local SVD truncation at
/// `max(delta / 100, 1e-14)` relative to each partial contraction, then rounded to
/// `delta`. Cheaper than forming the product, but the sweep is not
/// orthogonal, so floating-point error grows with any cancellation in the
/// product; callers reserve it for rank products too large to form.
pub(crate) fn zip_up(
    level: usize,
    out_mode: usize,
    delta: f64,
    max_rank: Option<usize>,
    step: impl Fn(usize, &DMatrix<f64>) -> DMatrix<f64>,
) -> Train {
    // below ~1e-14 the local SVDs only keep rounding noise
    let local = (delta * 1e-2).max(1e-14);
    let mut carry = DMatrix::from_element(1, 1, 1.0);
    let mut cores = Vec::with_capacity(level);
    for k in 0..level {
        let t = step(k, &carry);
        if k + 1 == level {
            cores.push(Core::from_left_unfolding(&t, out_mode));
            break;
        }
        let fro = t.norm();
        let d = svd(&t);
        let s = d.s.as_slice();
        let rank = truncation_rank(s, local * fro, None);
        let u = d.u.columns(0, rank).into_owned();
        let vt = d.vt.rows(0, rank).into_owned();
        carry = DMatrix::from_fn(rank, vt.ncols(), |i, j| s[i] * vt[(i, j)]);
        cores.push(Core::from_left_unfolding(&u, out_mode));
    }
    Train { cores }.round(delta, max_rank)
}
