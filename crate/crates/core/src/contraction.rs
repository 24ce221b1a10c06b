//! Step size, contraction factor and choice of the simplified coefficient.
//!
//! For scalar coefficients the iteration `A₀ u_{k+1} = A₀ u_k − ρ (A_ε u_k − f)`
//! contracts in the `A₀` energy norm with factor `max_x |1 − ρ h(x)|`, where
//! `h = a_ε / a₀`. Everything here reduces to the extrema of `h`.

use serde::Serialize;

use crate::fem::{CoefficientSpec, Grid, Modulator, Preconditioner, SCAN_LIMIT};
use crate::{Error, Result};

/// Constants of the spectral equivalence `λ₁ A₀ ≤ A_ε ≤ λ₂ A₀`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralBounds {
    pub lambda1: f64,
    pub lambda2: f64,
    /// range of `a₀`
    pub zero_lo: f64,
    pub zero_hi: f64,
    /// range of `a_ε`
    pub eps_lo: f64,
    pub eps_hi: f64,
    /// smallest `c` with `a_ε² / a₀ ≤ c a₀`
    pub c_plus: f64,
    pub h_lo: f64,
    pub h_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionReport {
    pub rho_star: f64,
    pub q: f64,
    pub q_coarse: f64,
    pub a0: Preconditioner,
    /// bound on the condition number of `A₀⁻¹ A_ε`
    pub cond_bound: f64,
    pub bounds: SpectralBounds,
}

/// Piecewise-constant simplified coefficient built from step envelopes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AveragedCoefficient {
    pub a0: Preconditioner,
    /// `(a⁺ − ã₀) / ã₀` on each segment of `a0`
    pub q: Vec<f64>,
    pub cond_bound: f64,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Merged segments of two step functions: `(start, end, left, right)`.
fn merge_steps(a: &Preconditioner, b: &Preconditioner) -> Vec<(f64, f64, f64, f64)> {
    let steps = |p: &Preconditioner| match p {
        Preconditioner::Constant(c) => Modulator { breakpoints: vec![], values: vec![*c] },
        Preconditioner::Piecewise { breakpoints, values } => {
            Modulator { breakpoints: breakpoints.clone(), values: values.clone() }
        }
    };
    let (ma, mb) = (steps(a), steps(b));
    let mut edges: Vec<f64> = ma.breakpoints.iter().chain(&mb.breakpoints).cloned().collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let mut all = vec![0.0];
    all.extend(edges);
    all.push(1.0);
    all.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            (w[0], w[1], ma.value(mid), mb.value(mid))
        })
        .collect()
}

/// Smallest and largest `a_ε / a₀` over the midpoints of `grid`.
///
/// Small grids are scanned exactly. Larger grids use the analytic range of
/// `a_ε` on each plateau of `a₀`, which encloses every midpoint sample.
pub fn ratio_bounds(spec: &CoefficientSpec, a0: &Preconditioner, grid: &Grid) -> Result<(f64, f64)> {
    spec.validate()?;
    a0.validate()?;
    if grid.level() <= SCAN_LIMIT {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for e in 1..=grid.n() {
            let r = spec.element_value(grid, e) / a0.element_value(grid, e);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        return Ok((lo, hi));
    }
    Ok(analytic_ratio_bounds(spec, a0))
}

/// Extrema of `a_ε / a₀` over `[0, 1]`.
pub fn analytic_ratio_bounds(spec: &CoefficientSpec, a0: &Preconditioner) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (s0, s1, v, _) in merge_steps(a0, a0) {
        let (a, b) = spec.range_on(s0, s1);
        lo = lo.min(a / v);
        hi = hi.max(b / v);
    }
    (lo, hi)
}

/// Minimax step `ρ* = 2 / (h_lo + h_hi)` and factor `q = (h_hi − h_lo) / (h_hi + h_lo)`.
pub fn rho_star_and_q(h_lo: f64, h_hi: f64) -> Result<(f64, f64)> {
    check_positive("h_lo", h_lo)?;
    check_positive("h_hi", h_hi)?;
    if h_lo > h_hi {
        return Err(Error::InvalidArgument(format!("h_lo = {h_lo} exceeds h_hi = {h_hi}")));
    }
    Ok((2.0 / (h_lo + h_hi), (h_hi - h_lo) / (h_hi + h_lo)))
}

/// `max |1 − ρ h|` over `h ∈ [h_lo, h_hi]`.
pub fn contraction_at(rho: f64, h_lo: f64, h_hi: f64) -> f64 {
    (1.0 - rho * h_lo).abs().max((1.0 - rho * h_hi).abs())
}

/// Coarse factor from the coefficient bounds alone,
/// `sqrt(1 − (λ^ε_⊖ λ⁰_⊖ / (λ^ε_⊕ λ⁰_⊕))²)`.
pub fn coarse_q_bound(eps_lo: f64, eps_hi: f64, zero_lo: f64, zero_hi: f64) -> Result<f64> {
    for (name, v) in [("eps_lo", eps_lo), ("eps_hi", eps_hi), ("zero_lo", zero_lo), ("zero_hi", zero_hi)] {
        check_positive(name, v)?;
    }
    if eps_lo > eps_hi || zero_lo > zero_hi {
        return Err(Error::InvalidArgument("lower bounds must not exceed upper bounds".into()));
    }
    let r = (eps_lo * zero_lo) / (eps_hi * zero_hi);
    Ok((1.0 - r * r).max(0.0).sqrt())
}

/// Spectral constants of `a_ε` against `a₀`.
pub fn spectral_bounds(spec: &CoefficientSpec, a0: &Preconditioner, grid: &Grid) -> Result<SpectralBounds> {
    let (h_lo, h_hi) = ratio_bounds(spec, a0, grid)?;
    let (eps_lo, eps_hi) = if grid.level() <= SCAN_LIMIT {
        (1..=grid.n())
            .map(|e| spec.element_value(grid, e))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), v| (l.min(v), u.max(v)))
    } else {
        spec.range()
    };
    Ok(SpectralBounds {
        lambda1: h_lo,
        lambda2: h_hi,
        zero_lo: a0.min(),
        zero_hi: a0.max(),
        eps_lo,
        eps_hi,
        c_plus: h_hi * h_hi,
        h_lo,
        h_hi,
    })
}

impl SpectralBounds {
    /// Upper end `2 λ₁ / c_⊕` of the step window guaranteed by the energy
    /// estimate. The minimax step can lie beyond it and still contract.
    pub fn rho_window(&self) -> f64 {
        2.0 * self.lambda1 / self.c_plus
    }

    /// Factor `sqrt(1 − λ₁² / c_⊕)` of the energy estimate at `ρ = λ₁ / c_⊕`.
    pub fn energy_q(&self) -> f64 {
        (1.0 - self.lambda1 * self.lambda1 / self.c_plus).max(0.0).sqrt()
    }
}

/// Full contraction analysis for a given simplified coefficient.
pub fn analyze(spec: &CoefficientSpec, a0: &Preconditioner, grid: &Grid) -> Result<ContractionReport> {
    let bounds = spectral_bounds(spec, a0, grid)?;
    let (rho_star, q) = rho_star_and_q(bounds.h_lo, bounds.h_hi)?;
    let q_coarse = coarse_q_bound(bounds.eps_lo, bounds.eps_hi, bounds.zero_lo, bounds.zero_hi)?;
    Ok(ContractionReport {
        rho_star,
        q,
        q_coarse,
        a0: a0.clone(),
        cond_bound: bounds.h_hi / bounds.h_lo,
        bounds,
    })
}

/// Picks the constant `a₀` with the smallest contraction factor.
///
/// `q` is invariant under scaling `a₀`, so near-ties (relative `1e-12`) are
/// broken toward the candidate whose `ρ*` is closest to 1, then toward the
/// smaller `a₀`.
pub fn optimize_a0_constant(spec: &CoefficientSpec, candidates: &[f64], grid: &Grid) -> Result<(f64, f64, f64)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("candidate set is empty".into()));
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for &c in candidates {
        check_positive("candidate a0", c)?;
        let (lo, hi) = ratio_bounds(spec, &Preconditioner::Constant(c), grid)?;
        let (rho, q) = rho_star_and_q(lo, hi)?;
        best = Some(match best {
            None => (c, rho, q),
            Some(b) => {
                let tie = (q - b.2).abs() <= 1e-12 * q.max(b.2).max(1e-300);
                let better = if tie {
                    let (d_new, d_old) = (rho.ln().abs(), b.1.ln().abs());
                    if (d_new - d_old).abs() > 1e-12 {
                        d_new < d_old
                    } else {
                        c < b.0
                    }
                } else {
                    q < b.2
                };
                if better {
                    (c, rho, q)
                } else {
                    b
                }
            }
        });
    }
    Ok(best.expect("non-empty"))
}

/// Stepwise majorant and minorant of `a_ε` on the given breakpoints.
pub fn step_envelopes(spec: &CoefficientSpec, breakpoints: &[f64]) -> Result<(Preconditioner, Preconditioner)> {
    spec.validate()?;
    let m = Modulator { breakpoints: breakpoints.to_vec(), values: vec![1.0; breakpoints.len() + 1] };
    m.validate()?;
    let (mut upper, mut lower) = (vec![], vec![]);
    for (s0, s1, _) in m.segments() {
        let (lo, hi) = spec.range_on(s0, s1);
        upper.push(hi);
        lower.push(lo);
    }
    let wrap = |values: Vec<f64>| Preconditioner::Piecewise { breakpoints: breakpoints.to_vec(), values };
    Ok((wrap(upper), wrap(lower)))
}

/// `ã₀ = (a⁺ + a⁻) / 2` for step envelopes `a⁻ ≤ a_ε ≤ a⁺`, with the
/// pointwise `q = (a⁺ − ã₀) / ã₀` and the bound `max (1 + q) / (1 − q)`.
///
/// The envelope condition is checked at every midpoint of `grid` when it
/// is small, and analytically on the open plateaus otherwise.
pub fn averaged_coefficient(
    spec: &CoefficientSpec,
    upper: &Preconditioner,
    lower: &Preconditioner,
    grid: &Grid,
) -> Result<AveragedCoefficient> {
    spec.validate()?;
    upper.validate()?;
    lower.validate()?;
    let segments = merge_steps(upper, lower);
    if grid.level() <= SCAN_LIMIT {
        for e in 1..=grid.n() {
            let x = grid.midpoint(e);
            let v = spec.element_value(grid, e);
            let (up, lo) = (upper.as_spec().value(x), lower.as_spec().value(x));
            if v > up * (1.0 + 1e-14) || v < lo * (1.0 - 1e-14) {
                return Err(Error::InvalidArgument(format!("envelope violated at x = {x}: {lo} ≤ {v} ≤ {up} fails")));
            }
        }
    } else {
        for &(s0, s1, up, lo) in &segments {
            let shrink = 1e-12 * (s1 - s0);
            let (a, b) = spec.range_on(s0 + shrink, s1 - shrink);
            if b > up * (1.0 + 1e-14) || a < lo * (1.0 - 1e-14) {
                return Err(Error::InvalidArgument(format!("envelope violated on [{s0}, {s1}]")));
            }
        }
    }
    let mut breakpoints = vec![];
    let mut values = vec![];
    let mut q = vec![];
    for (k, &(s0, _, up, lo)) in segments.iter().enumerate() {
        if lo > up {
            return Err(Error::InvalidArgument(format!("minorant {lo} exceeds majorant {up}")));
        }
        if k > 0 {
            breakpoints.push(s0);
        }
        let avg = 0.5 * (up + lo);
        values.push(avg);
        q.push((up - avg) / avg);
    }
    let cond_bound = q.iter().map(|q| (1.0 + q) / (1.0 - q)).fold(1.0, f64::max);
    let a0 = if values.len() == 1 {
        Preconditioner::Constant(values[0])
    } else {
        Preconditioner::Piecewise { breakpoints, values }
    };
    Ok(AveragedCoefficient { a0, q, cond_bound })
}

/// `a₀ = ∫₀¹ a_ε`.
pub fn mean_coefficient(spec: &CoefficientSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec.mean())
}
