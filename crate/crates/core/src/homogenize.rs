//! 1D homogenization baseline.
//!
//! In 1D the periodic cell problem has the closed-form solution
//! `a_hom = ⟨a⁻¹⟩⁻¹`, the harmonic mean over one period. The homogenized
//! solution is compared against the oscillatory one in the L² norm, in the
//! `a_hom`-weighted H¹ seminorm and through the residual it leaves in the
//! original discrete system.

use std::f64::consts::PI;

use serde::Serialize;

use crate::fem::{oscillatory_integral, CoefficientClass, CoefficientSpec, Grid, LoadSpec, Tridiagonal};
use crate::quadrature::adaptive_simpson;
use crate::{Error, Result};

/// Averaging rule for the effective coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Harmonic,
    Arithmetic,
}

/// `(x1 − x0) / ∫_{x0}^{x1} a⁻¹`.
pub fn harmonic_mean_on(spec: &CoefficientSpec, x0: f64, x1: f64) -> Result<f64> {
    spec.validate()?;
    if !(0.0 <= x0 && x0 < x1 && x1 <= 1.0) {
        return Err(Error::InvalidArgument(format!("bad averaging window [{x0}, {x1}]")));
    }
    let integral = match spec {
        CoefficientSpec::Constant { c } => (x1 - x0) / c,
        CoefficientSpec::Oscillating { c, omega, m, modulator } => modulator
            .segments()
            .into_iter()
            .filter_map(|(s0, s1, g)| {
                let (a, b) = (s0.max(x0), s1.min(x1));
                (a < b).then(|| {
                    oscillatory_integral(|x| 1.0 / (c + g * (omega * x.powi(*m as i32)).sin()), a, b, *omega, *m)
                })
            })
            .sum(),
        CoefficientSpec::PiecewiseConstant { breakpoints, values } => {
            let mut edges = vec![0.0];
            edges.extend(breakpoints);
            edges.push(1.0);
            edges.windows(2).zip(values).map(|(w, v)| (w[1].min(x1) - w[0].max(x0)).max(0.0) / v).sum()
        }
        CoefficientSpec::Custom { samples } => {
            let n = samples.len();
            let h = 1.0 / (n as f64 + 1.0);
            (1..=n + 1)
                .map(|e| {
                    let (s0, s1) = ((e - 1) as f64 * h, e as f64 * h);
                    (s1.min(x1) - s0.max(x0)).max(0.0) / samples[(e - 1).min(n - 1)]
                })
                .sum()
        }
    };
    Ok((x1 - x0) / integral)
}

/// Effective constant coefficient of the homogenized problem.
///
/// Periodic coefficients use the harmonic mean over one period. Modulated
/// and piecewise-constant coefficients are averaged over the whole interval
/// taken as a single cell. Exotic and sampled coefficients have no period
/// and are refused.
pub fn effective_coefficient_1d(spec: &CoefficientSpec, rule: Averaging) -> Result<f64> {
    spec.validate()?;
    match spec.class() {
        CoefficientClass::Exotic | CoefficientClass::Custom => {
            return Err(Error::InvalidSpec(
                "coefficient has no period; use a windowed average (harmonic_mean_on) as the simplified coefficient instead"
                    .into(),
            ))
        }
        _ => {}
    }
    if rule == Averaging::Arithmetic {
        return Ok(spec.mean());
    }
    match spec {
        CoefficientSpec::Oscillating { c, omega, .. } if spec.class() == CoefficientClass::Periodic && *omega > 0.0 => {
            // cell average of 1/(C + sin t) over t ∈ [0, 2π]
            let inv = adaptive_simpson(|t| 1.0 / (c + t.sin()), 0.0, 2.0 * PI, 1e-13) / (2.0 * PI);
            Ok(1.0 / inv)
        }
        _ => harmonic_mean_on(spec, 0.0, 1.0),
    }
}

/// Dense solution of the constant-coefficient system `A₀ u₀ = f`.
pub fn homogenized_solve(a0: f64, load: &LoadSpec, grid: &Grid) -> Result<Vec<f64>> {
    if !(a0.is_finite() && a0 > 0.0) {
        return Err(Error::InvalidArgument(format!("a0 must be positive, got {a0}")));
    }
    let n = grid.n();
    let h = grid.h();
    let k = Tridiagonal { diag: vec![2.0 * a0 / h; n], off: vec![-a0 / h; n - 1] };
    Ok(k.solve(&load.assemble_dense(grid)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Comparison {
    /// `‖u_ε − u₀‖_{L²}` of the P1 interpolants
    pub l2_diff: f64,
    /// `(∫ a₀ |(u_ε − u₀)'|²)^{1/2}`
    pub h1_diff: f64,
    /// `‖f − A_ε u₀‖₂`
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HomogenizedModel {
    pub a0_hom: f64,
    pub u0: Vec<f64>,
    pub comparison: Comparison,
}

/// Compares nodal `u_eps` with the homogenized `u0` (coefficient `a0`) on
/// the same grid; `a` holds the element samples of the oscillatory
/// coefficient.
pub fn compare(u_eps: &[f64], u0: &[f64], a0: f64, a: &[f64], load: &LoadSpec, grid: &Grid) -> Result<Comparison> {
    let n = grid.n();
    if u_eps.len() != n || u0.len() != n || a.len() != n {
        return Err(Error::InvalidArgument("vectors must have N entries".into()));
    }
    let h = grid.h();
    let d = |i: usize| if i == 0 || i == n + 1 { 0.0 } else { u_eps[i - 1] - u0[i - 1] };
    let (mut l2, mut h1) = (0.0, 0.0);
    for e in 1..=n + 1 {
        let (l, r) = (d(e - 1), d(e));
        l2 += h * (l * l + l * r + r * r) / 3.0;
        h1 += a0 * (r - l) * (r - l) / h;
    }
    let k = crate::fem::assemble_stiffness_dense(a, h);
    let f = load.assemble_dense(grid)?;
    let residual = f.iter().zip(k.matvec(u0)).map(|(f, au)| (f - au).powi(2)).sum::<f64>().sqrt();
    Ok(Comparison { l2_diff: l2.sqrt(), h1_diff: h1.sqrt(), residual })
}

/// Homogenizes `spec`, solves the homogenized problem and compares it with
/// the dense solution of the oscillatory one.
pub fn homogenize(spec: &CoefficientSpec, rule: Averaging, load: &LoadSpec, grid: &Grid) -> Result<HomogenizedModel> {
    let a0_hom = effective_coefficient_1d(spec, rule)?;
    let u0 = homogenized_solve(a0_hom, load, grid)?;
    let a = crate::fem::sample_coefficient_dense(spec, grid)?;
    let k = crate::fem::assemble_stiffness_dense(&a, grid.h());
    let u_eps = k.solve(&load.assemble_dense(grid)?);
    let comparison = compare(&u_eps, &u0, a0_hom, &a, load, grid)?;
    Ok(HomogenizedModel { a0_hom, u0, comparison })
}
