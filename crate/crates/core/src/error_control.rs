//! Guaranteed a posteriori error bounds in 1D.
//!
//! All integrals are exact on the element-wise constant coefficients
//! `a` (problem) and `a₀` (preconditioner): the coefficient vectors cover
//! elements `1..=N` and element `N + 1` reuses the value of element `N`.
//! Fluxes have the reconstructed form `y = ρ (c − g)` with `g(x) = ∫₀ˣ f`,
//! so on element `e` the slope of a P1 function is constant and `g` only
//! contributes its element mean `ḡ_e` and its element variance
//! `V_e = ∫_e (g − ḡ_e)²`.

use std::cell::OnceCell;
use std::f64::consts::PI;

use serde::Serialize;

use crate::fem::{Grid, LoadSpec, Preconditioner};
use crate::qtt::{QttMatrix, QttVector, Tolerance};
use crate::{Error, Result};

/// Friedrichs constant `1/(κπ)`, `κ² = Σ 1/l_s²`, of a box with edge
/// lengths `l`.
pub fn friedrichs_constant(lengths: &[f64]) -> Result<f64> {
    if lengths.is_empty() || lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidArgument(format!("edge lengths must be positive, got {lengths:?}")));
    }
    let kappa = lengths.iter().map(|l| 1.0 / (l * l)).sum::<f64>().sqrt();
    Ok(1.0 / (kappa * PI))
}

/// `‖v‖_{L²}` of the P1 function with nodal values `v` and zero boundary
/// values: `(h/3) (2 v·v + v·S v)`.
pub fn l2_norm_p1(v: &QttVector, h: f64) -> Result<f64> {
    let sv = QttMatrix::shift(v.level()).matvec_exact(v)?;
    Ok((h / 3.0 * (2.0 * v.dot(v)? + v.dot(&sv)?)).max(0.0).sqrt())
}

/// Flux `y(x) = ρ (c − g(x))`, so that `y' = −ρ f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FluxField1D {
    pub rho: f64,
    pub c: f64,
}

impl FluxField1D {
    pub fn value(&self, load: &LoadSpec, x: f64) -> f64 {
        self.rho * (self.c - load.antiderivative(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MajorantReport {
    pub value: f64,
    /// flux consistency term
    pub flux_term: f64,
    /// equilibrium term, zero for a reconstructed flux of matching `ρ`
    pub equilibrium_term: f64,
    pub friedrichs: f64,
    /// set when rounding drove the squared flux term below zero
    pub clamped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoSidedBounds {
    pub lower: f64,
    pub upper: f64,
    pub q: f64,
    pub eta_norm: f64,
    pub majorant: f64,
}

/// Bracket of `‖v − u‖₀` from the increment norm `‖η‖₀`, the step
/// majorant `𝓜` and the contraction factor `q`.
pub fn two_sided(eta_norm: f64, majorant: f64, q: f64) -> Result<TwoSidedBounds> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("contraction factor must lie in [0, 1), got {q}")));
    }
    if !(eta_norm >= 0.0 && majorant >= 0.0) {
        return Err(Error::InvalidArgument("norms must be non-negative".into()));
    }
    Ok(TwoSidedBounds {
        lower: ((eta_norm - majorant) / (1.0 + q)).max(0.0),
        upper: (eta_norm + majorant) / (1.0 - q),
        q,
        eta_norm,
        majorant,
    })
}

/// Element slopes of a nodal vector: elements `1..=N` as a QTT vector and
/// the last element separately.
#[derive(Clone, Debug)]
pub struct Slopes {
    pub interior: QttVector,
    pub last: f64,
}

/// Evaluates majorants for one problem `-(a u')' = f` with preconditioner `a₀`.
pub struct Certifier {
    grid: Grid,
    load: LoadSpec,
    a: QttVector,
    a_last: f64,
    a0: QttVector,
    a0_last: f64,
    inv_a0: QttVector,
    gbar: QttVector,
    gbar_last: f64,
    var: QttVector,
    var_last: f64,
    backward: QttMatrix,
    inv_a: OnceCell<QttVector>,
    a_range: (f64, f64),
    friedrichs: f64,
    lambda0: f64,
    inner: Tolerance,
}

impl Certifier {
    /// `a` holds the element values of the problem coefficient, `a_range`
    /// encloses them (used by the reciprocal).
    pub fn new(grid: Grid, a: QttVector, a_range: (f64, f64), a0: &Preconditioner, load: LoadSpec) -> Result<Self> {
        a0.validate()?;
        load.validate(&grid)?;
        let l = grid.level();
        if a.level() != l {
            return Err(Error::LevelMismatch { left: a.level(), right: l });
        }
        let n = grid.n();
        let inner = Tolerance::new(1e-14)?;
        let id = QttMatrix::identity(l);
        let backward = id.sub(&QttMatrix::shift(l).transpose())?.round(Tolerance::exact());
        Ok(Certifier {
            a_last: a.get(n - 1),
            a,
            a0: a0.sample(&grid),
            a0_last: a0.element_value(&grid, n + 1),
            inv_a0: a0.sample_inverse(&grid),
            gbar: load.element_mean_g_qtt(&grid, inner)?,
            gbar_last: load.element_mean_g(&grid, n + 1),
            var: load.element_var_g_qtt(&grid, inner)?,
            var_last: load.element_var_g(&grid, n + 1),
            backward,
            inv_a: OnceCell::new(),
            a_range,
            friedrichs: friedrichs_constant(&[1.0])?,
            lambda0: a0.min(),
            inner,
            grid,
            load,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn slopes(&self, v: &QttVector) -> Result<Slopes> {
        let h = self.grid.h();
        let d = self.backward.matvec_exact(v)?.scale(1.0 / h).round(Tolerance::exact());
        Ok(Slopes { interior: d, last: -v.get(v.len() - 1) / h })
    }

    /// `(Σ_e w_e s_e² h)^{1/2}` with element weights `w` on `1..=N` and
    /// `w_last` on element `N + 1`.
    pub fn weighted_norm(&self, v: &QttVector, w: &QttVector, w_last: f64) -> Result<f64> {
        let s = self.slopes(v)?;
        let h = self.grid.h();
        let sq = w.weighted_dot(&s.interior, &s.interior)? + w_last * s.last * s.last;
        Ok((h * sq).max(0.0).sqrt())
    }

    /// `‖v‖₀`, the energy norm of the preconditioner.
    pub fn energy_norm_a0(&self, v: &QttVector) -> Result<f64> {
        self.weighted_norm(v, &self.a0, self.a0_last)
    }

    /// `‖v‖_ε`, the energy norm of the problem.
    pub fn energy_norm_a(&self, v: &QttVector) -> Result<f64> {
        self.weighted_norm(v, &self.a, self.a_last)
    }

    /// `Σ_e h ω_e (ḡ_e + a_e s_e)` for weights `ω`.
    fn weighted_flux_mean(&self, s: &Slopes, w: &QttVector, w_last: f64) -> Result<f64> {
        let h = self.grid.h();
        let mid = self.gbar.add(&self.a.hadamard_round(&s.interior, self.inner)?)?;
        let last = self.gbar_last + self.a_last * s.last;
        Ok(h * (w.dot(&mid)? + w_last * last))
    }

    /// Optimal step flux `y = ρ (c_k − g)` for the iterate `v`:
    /// `c_k = ∫ a₀⁻¹ (g + a v') / ∫ a₀⁻¹`.
    pub fn reconstruct(&self, v: &QttVector, rho: f64) -> Result<FluxField1D> {
        let s = self.slopes(v)?;
        let inv_last = 1.0 / self.a0_last;
        let num = self.weighted_flux_mean(&s, &self.inv_a0, inv_last)?;
        let den = self.grid.h() * (self.inv_a0.sum() + inv_last);
        Ok(FluxField1D { rho, c: num / den })
    }

    /// Step majorant `𝓜 ≥ ‖T v − ũ‖₀`, where `T` is the exact fixed-point
    /// map with step `ρ`, evaluated with the flux `y`.
    pub fn majorant_step(
        &self,
        u_tilde: &QttVector,
        v: &QttVector,
        y: &FluxField1D,
        rho: f64,
    ) -> Result<MajorantReport> {
        let eta = u_tilde.sub(v)?.round(Tolerance::exact());
        let t = self.slopes(&eta)?;
        let s = self.slopes(v)?;
        // D_e = a0 t + ρ a s − y_rho (c − ḡ): mean of a0 η' − τ on element e
        let d = self
            .a0
            .hadamard_round(&t.interior, self.inner)?
            .add(&self.a.hadamard_round(&s.interior, self.inner)?.scale(rho))?
            .add(&self.gbar.scale(y.rho))?
            .add(&QttVector::constant(self.grid.level(), -y.rho * y.c))?
            .round(self.inner);
        let d_last = self.a0_last * t.last + rho * self.a_last * s.last - y.rho * (y.c - self.gbar_last);
        let h = self.grid.h();
        let inv_last = 1.0 / self.a0_last;
        let sq = h * (self.inv_a0.weighted_dot(&d, &d)? + inv_last * d_last * d_last)
            + y.rho * y.rho * (self.inv_a0.dot(&self.var)? + inv_last * self.var_last);
        let equilibrium =
            self.friedrichs / self.lambda0 * (rho - y.rho).abs() * self.load.l2_norm();
        Ok(self.report(sq, equilibrium))
    }

    /// Optimal global flux `y = c − g` for `v`: `c = ∫ a⁻¹ (g + a v') / ∫ a⁻¹`.
    pub fn reconstruct_global(&self, v: &QttVector) -> Result<FluxField1D> {
        let s = self.slopes(v)?;
        let inv_a = self.inverse_coefficient()?;
        let inv_last = 1.0 / self.a_last;
        let num = self.weighted_flux_mean(&s, inv_a, inv_last)?;
        let den = self.grid.h() * (inv_a.sum() + inv_last);
        Ok(FluxField1D { rho: 1.0, c: num / den })
    }

    /// Global majorant `‖a v' − y‖_{a⁻¹} + C_Ω ‖y' + f‖ ≥ ‖u − v‖_ε`.
    pub fn majorant_global(&self, v: &QttVector, y: &FluxField1D) -> Result<MajorantReport> {
        let s = self.slopes(v)?;
        let inv_a = self.inverse_coefficient()?;
        let w = self
            .a
            .hadamard_round(&s.interior, self.inner)?
            .add(&self.gbar.scale(y.rho))?
            .add(&QttVector::constant(self.grid.level(), -y.rho * y.c))?
            .round(self.inner);
        let w_last = self.a_last * s.last - y.rho * (y.c - self.gbar_last);
        let h = self.grid.h();
        let inv_last = 1.0 / self.a_last;
        let sq = h * (inv_a.weighted_dot(&w, &w)? + inv_last * w_last * w_last)
            + y.rho * y.rho * (inv_a.dot(&self.var)? + inv_last * self.var_last);
        let equilibrium = self.friedrichs * (1.0 - y.rho).abs() * self.load.l2_norm();
        Ok(self.report(sq, equilibrium))
    }

    /// `(∫ a⁻¹ ((a − a₀) v')²)^{1/2}`: the global majorant at the flux
    /// `a₀ v'`, a bound on the error of replacing `a` by `a₀` when `v`
    /// solves the simplified problem.
    pub fn modeling_error_bound(&self, v: &QttVector) -> Result<f64> {
        let s = self.slopes(v)?;
        let inv_a = self.inverse_coefficient()?;
        let diff = self.a.sub(&self.a0)?.round(self.inner);
        let w = diff.hadamard_round(&s.interior, self.inner)?;
        let w_last = (self.a_last - self.a0_last) * s.last;
        let sq = self.grid.h() * (inv_a.weighted_dot(&w, &w)? + w_last * w_last / self.a_last);
        Ok(sq.max(0.0).sqrt())
    }

    /// Step majorant with the reconstructed flux and the resulting bracket
    /// of `‖v − u‖₀` for the iterate `v` entering the step `ũ = v + ρ z`.
    pub fn bracket(&self, v: &QttVector, u_tilde: &QttVector, rho: f64, q: f64) -> Result<(MajorantReport, TwoSidedBounds)> {
        let y = self.reconstruct(v, rho)?;
        let m = self.majorant_step(u_tilde, v, &y, rho)?;
        let eta = self.energy_norm_a0(&u_tilde.sub(v)?)?;
        Ok((m, two_sided(eta, m.value, q)?))
    }

    fn inverse_coefficient(&self) -> Result<&QttVector> {
        if let Some(v) = self.inv_a.get() {
            return Ok(v);
        }
        let (lo, hi) = self.a_range;
        let v = self.a.reciprocal(lo, hi, Tolerance::new(1e-13)?)?;
        Ok(self.inv_a.get_or_init(|| v))
    }

    fn report(&self, sq: f64, equilibrium: f64) -> MajorantReport {
        let clamped = sq < 0.0;
        let flux_term = sq.max(0.0).sqrt();
        MajorantReport {
            value: flux_term + equilibrium,
            flux_term,
            equilibrium_term: equilibrium,
            friedrichs: self.friedrichs,
            clamped,
        }
    }
}
