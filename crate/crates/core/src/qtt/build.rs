//! Explicit low-rank QTT constructions that never touch a dense grid object.
//!
//! Most builders are small finite automata read off bit by bit, least
//! significant bit first: the TT rank equals the number of automaton states.

use super::matrix::QttMatrix;
use super::train::{Core, Train};
use super::vector::QttVector;

fn vec_from(cores: Vec<Core>) -> QttVector {
    QttVector { train: Train { cores } }
}

fn mat_from(cores: Vec<Core>) -> QttMatrix {
    QttMatrix { train: Train { cores } }
}

/// Runs a two-state automaton over `level` digits of size `mode`.
///
/// `trans(k, s, d)` returns the weight of moving from state `s` to each of
/// the two states at digit `k`; `start` and `accept` weight the initial and
/// final states.
fn automaton(
    level: usize,
    mode: usize,
    start: [f64; 2],
    accept: [f64; 2],
    trans: impl Fn(usize, usize, usize) -> [f64; 2],
) -> Train {
    let mut cores = Vec::with_capacity(level);
    for k in 0..level {
        let full = Core::from_fn(2, mode, 2, |s, d, t| trans(k, s, d)[t]);
        let mut c = full;
        if k == 0 {
            c = Core::from_fn(1, mode, c.right, |_, d, t| {
                start[0] * c.get(0, d, t) + start[1] * c.get(1, d, t)
            });
        }
        if k + 1 == level {
            c = Core::from_fn(c.left, mode, 1, |s, d, _| {
                accept[0] * c.get(s, d, 0) + accept[1] * c.get(s, d, 1)
            });
        }
        cores.push(c);
    }
    Train { cores }
}

impl QttVector {
    /// All entries equal to `c`.
    pub fn constant(level: usize, c: f64) -> Self {
        let mut cores: Vec<Core> = (0..level).map(|_| Core::from_fn(1, 2, 1, |_, _, _| 1.0)).collect();
        for v in cores[0].data.iter_mut() {
            *v = c;
        }
        vec_from(cores)
    }

    /// Canonical basis vector with a one at zero-based index `i`.
    pub fn unit(level: usize, i: usize) -> Self {
        vec_from(
            (0..level)
                .map(|k| Core::from_fn(1, 2, 1, |_, j, _| if (i >> k) & 1 == j { 1.0 } else { 0.0 }))
                .collect(),
        )
    }

    /// Entries `cos(θ₀ + t·p)` for `p = 0 … 2^L − 1`; rank 2.
    pub fn cos_affine(level: usize, theta0: f64, t: f64) -> Self {
        let phase = |k: usize, j: usize| t * (j as f64) * (1u64 << k) as f64;
        if level == 1 {
            return vec_from(vec![Core::from_fn(1, 2, 1, |_, j, _| (theta0 + phase(0, j)).cos())]);
        }
        let mut cores = Vec::with_capacity(level);
        cores.push(Core::from_fn(1, 2, 2, |_, j, b| {
            let a = theta0 + phase(0, j);
            if b == 0 {
                a.cos()
            } else {
                a.sin()
            }
        }));
        for k in 1..level - 1 {
            cores.push(Core::from_fn(2, 2, 2, |a, j, b| {
                let (c, s) = (phase(k, j).cos(), phase(k, j).sin());
                match (a, b) {
                    (0, 0) | (1, 1) => c,
                    (0, 1) => s,
                    _ => -s,
                }
            }));
        }
        let k = level - 1;
        cores.push(Core::from_fn(2, 2, 1, |a, j, _| {
            if a == 0 {
                phase(k, j).cos()
            } else {
                -phase(k, j).sin()
            }
        }));
        vec_from(cores)
    }

    /// Entries `sin(θ₀ + t·p)`; rank 2.
    pub fn sin_affine(level: usize, theta0: f64, t: f64) -> Self {
        Self::cos_affine(level, theta0 - std::f64::consts::FRAC_PI_2, t)
    }

    /// Entries `Σ_n coeffs[n]·(x₀ + dx·p)^n`; rank at most `deg + 1`.
    pub fn polynomial_affine(level: usize, coeffs: &[f64], x0: f64, dx: f64) -> Self {
        let deg = coeffs.len().saturating_sub(1);
        let m = deg + 1;
        let binom = |n: usize, l: usize| -> f64 {
            (0..l).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        };
        // transfer M[l, n] = C(n, l) t^(n-l): powers of s ↦ powers of s + t
        let transfer = |t: f64, l: usize, n: usize| {
            if l > n {
                0.0
            } else {
                binom(n, l) * t.powi((n - l) as i32)
            }
        };
        let step = |k: usize, j: usize| dx * (j as f64) * (1u64 << k) as f64;
        let final_row = |t: f64, l: usize| -> f64 { (l..m).map(|n| coeffs[n] * transfer(t, l, n)).sum() };
        if coeffs.is_empty() {
            return Self::constant(level, 0.0);
        }
        if level == 1 {
            return vec_from(vec![Core::from_fn(1, 2, 1, |_, j, _| {
                let x = x0 + step(0, j);
                coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
            })]);
        }
        let mut cores = Vec::with_capacity(level);
        cores.push(Core::from_fn(1, 2, m, |_, j, n| (x0 + step(0, j)).powi(n as i32)));
        for k in 1..level - 1 {
            cores.push(Core::from_fn(m, 2, m, |l, j, n| transfer(step(k, j), l, n)));
        }
        let k = level - 1;
        cores.push(Core::from_fn(m, 2, 1, |l, j, _| final_row(step(k, j), l)));
        vec_from(cores)
    }

    /// Indicator of `p ≥ k0`; rank at most 2.
    pub fn step_indicator(level: usize, k0: usize) -> Self {
        if k0 == 0 {
            return Self::constant(level, 1.0);
        }
        if k0 >= 1 << level {
            return Self::constant(level, 0.0);
        }
        // state 1: the low bits of p compare ≥ the low bits of k0
        let t = automaton(level, 2, [0.0, 1.0], [0.0, 1.0], |k, s, b| {
            let c = (k0 >> k) & 1;
            let next = if b > c {
                1
            } else if b < c {
                0
            } else {
                s
            };
            if next == 1 {
                [0.0, 1.0]
            } else {
                [1.0, 0.0]
            }
        });
        vec_from(t.cores)
    }

    /// Piecewise constant in the index: `values[m]` on `[starts[m], starts[m+1])`,
    /// with `starts[0] = 0` implied. Rank at most `values.len()` before rounding.
    pub fn piecewise_constant(level: usize, starts: &[usize], values: &[f64]) -> Self {
        assert_eq!(starts.len() + 1, values.len(), "one value per segment");
        let mut acc = Self::constant(level, values[0]);
        for (m, &s) in starts.iter().enumerate() {
            let jump = values[m + 1] - values[m];
            if jump != 0.0 {
                acc = acc
                    .add(&Self::step_indicator(level, s).scale(jump))
                    .expect("same level");
            }
        }
        acc
    }
}

impl QttMatrix {
    pub fn identity(level: usize) -> Self {
        mat_from(
            (0..level)
                .map(|_| Core::from_fn(1, 4, 1, |_, m, _| if m == 0 || m == 3 { 1.0 } else { 0.0 }))
                .collect(),
        )
    }

    /// Shift automaton: `col = row + carry_in` bitwise with `start` weights on
    /// the initial carry.
    fn carry_shift(level: usize, start: [f64; 2]) -> Self {
        let t = automaton(level, 4, start, [1.0, 0.0], |_, c, m| {
            let (i, j) = (m >> 1, m & 1);
            let sum = i + c;
            if j == sum % 2 {
                if sum / 2 == 1 {
                    [0.0, 1.0]
                } else {
                    [1.0, 0.0]
                }
            } else {
                [0.0, 0.0]
            }
        });
        mat_from(t.cores)
    }

    /// Upper shift `S` with ones at `(p, p + 1)`; rank 2.
    pub fn shift(level: usize) -> Self {
        Self::carry_shift(level, [0.0, 1.0])
    }

    /// `I + S`; rank 2.
    pub fn identity_plus_shift(level: usize) -> Self {
        Self::carry_shift(level, [1.0, 1.0])
    }

    /// Comparison mask with ones where `row ≤ col` (`upper = true`) or where
    /// `row > col` (`upper = false`); rank 2.
    pub fn triangular_mask(level: usize, upper: bool) -> Self {
        // state 1: low bits of row ≤ low bits of col
        let accept = if upper { [0.0, 1.0] } else { [1.0, 0.0] };
        let t = automaton(level, 4, [0.0, 1.0], accept, |_, s, m| {
            let (i, j) = (m >> 1, m & 1);
            let next = if i < j {
                1
            } else if i > j {
                0
            } else {
                s
            };
            if next == 1 {
                [0.0, 1.0]
            } else {
                [1.0, 0.0]
            }
        });
        mat_from(t.cores)
    }
}
