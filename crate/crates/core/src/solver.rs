//! Rank-truncated preconditioned iterations for `A_ε v = f`.
//!
//! Both methods update `v ← v + α A₀⁻¹ (f − A_ε v)`: the fixed-point
//! iteration with a fixed step `α = ρ`, steepest descent (PSD) with the
//! exact line search `α = (z, r) / (A_ε z, z)`. Intermediate products are
//! rounded at `δ/4` and the update itself at `δ`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::contraction::{analyze, averaged_coefficient, step_envelopes, ContractionReport};
use crate::error_control::{Certifier, TwoSidedBounds};
use crate::fem::{
    assemble_load, inverse_preconditioner_general, sample_coefficient, CoefficientSpec, Grid, LoadSpec,
    Preconditioner, StiffnessOperator,
};
use crate::homogenize::harmonic_mean_on;
use crate::qtt::{QttMatrix, QttVector, Tolerance};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedPoint,
    Psd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rho {
    /// the minimax step `ρ*` of the contraction analysis
    Auto,
    Fixed(f64),
}

/// How the simplified coefficient `a₀` is obtained from `a_ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerChoice {
    /// `∫₀¹ a_ε`
    Mean,
    /// `(∫₀¹ a_ε⁻¹)⁻¹`
    HarmonicMean,
    /// `(a⁺ + a⁻)/2` of step envelopes; the steps follow the modulator of
    /// the coefficient unless given
    EnvelopeAverage { breakpoints: Option<Vec<f64>> },
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// `‖v_{k+1} − v_k‖₀ ≤ tol ‖v_{k+1}‖₀`
    Increment,
    /// `‖f − A_ε v_k‖₂ ≤ tol ‖f‖₂`
    Residual,
}

/// Why the iteration ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    /// the increments stopped contracting: the iterate sits at the
    /// truncation floor of `δ`
    Stagnation,
    MaxIter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub level: usize,
    pub delta: f64,
    pub max_rank: Option<usize>,
    pub method: Method,
    pub rho: Rho,
    pub preconditioner: PreconditionerChoice,
    pub stop_rule: StopRule,
    pub stop_tol: f64,
    pub max_iter: usize,
    /// evaluate the step majorant and two-sided bounds at every iterate
    pub certify: bool,
    pub record_timing: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            level: 10,
            delta: 1e-7,
            max_rank: None,
            method: Method::Psd,
            rho: Rho::Auto,
            preconditioner: PreconditionerChoice::Mean,
            stop_rule: StopRule::Increment,
            stop_tol: 1e-6,
            max_iter: 100,
            certify: false,
            record_timing: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.stop_tol.is_finite() && self.stop_tol > 0.0) {
            return bad(format!("stop_tol must be positive, got {}", self.stop_tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if self.max_rank == Some(0) {
            return bad("max_rank must be at least 1".into());
        }
        if let Rho::Fixed(r) = self.rho {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("rho must be positive, got {r}"));
            }
        }
        if let PreconditionerChoice::Constant(c) = self.preconditioner {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("a0 must be positive, got {c}"));
            }
        }
        Grid::new(self.level).map(|_| ())
    }

    fn tol(&self, factor: f64) -> Result<Tolerance> {
        let t = Tolerance::new(self.delta * factor)?;
        match self.max_rank {
            Some(r) => t.with_max_rank(r),
            None => Ok(t),
        }
    }
}

/// State of iterate `v_k` and the step that leaves it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub k: usize,
    /// `‖f − A_ε v_k‖₂`
    pub residual_norm: f64,
    /// `‖v_{k+1} − v_k‖₀`
    pub increment_energy: f64,
    pub avg_rank: f64,
    pub max_rank: usize,
    pub step: f64,
    pub wall_ms: f64,
    pub majorant: Option<f64>,
    pub bounds: Option<TwoSidedBounds>,
}

#[derive(Clone, Debug)]
pub struct SolutionReport {
    pub solution: QttVector,
    pub history: Vec<ConvergenceRecord>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub rho_used: f64,
    pub q_used: f64,
    pub contraction: ContractionReport,
    pub a0: Preconditioner,
    pub coefficient_avg_rank: f64,
    pub final_residual: f64,
    pub load_norm: f64,
    pub warnings: Vec<String>,
}

impl SolutionReport {
    /// Number of steps taken.
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// Median per-step wall time in milliseconds.
    pub fn median_step_ms(&self) -> f64 {
        let mut t: Vec<f64> = self.history.iter().map(|r| r.wall_ms).collect();
        t.sort_by(f64::total_cmp);
        if t.is_empty() {
            return 0.0;
        }
        let m = t.len() / 2;
        if t.len() % 2 == 1 {
            t[m]
        } else {
            0.5 * (t[m - 1] + t[m])
        }
    }
}

/// Simplified coefficient for a choice.
pub fn choose_preconditioner(spec: &CoefficientSpec, choice: &PreconditionerChoice, grid: &Grid) -> Result<Preconditioner> {
    spec.validate()?;
    Ok(match choice {
        PreconditionerChoice::Mean => Preconditioner::Constant(spec.mean()),
        PreconditionerChoice::HarmonicMean => Preconditioner::Constant(harmonic_mean_on(spec, 0.0, 1.0)?),
        PreconditionerChoice::Constant(c) => Preconditioner::Constant(*c),
        PreconditionerChoice::EnvelopeAverage { breakpoints } => {
            let steps = match (breakpoints, spec) {
                (Some(b), _) => b.clone(),
                (None, CoefficientSpec::Oscillating { modulator, .. }) => modulator.breakpoints.clone(),
                (None, CoefficientSpec::PiecewiseConstant { breakpoints, .. }) => breakpoints.clone(),
                (None, _) => vec![],
            };
            let (upper, lower) = step_envelopes(spec, &steps)?;
            let avg = averaged_coefficient(spec, &upper, &lower, grid)?.a0;
            collapse(avg)
        }
    })
}

/// A piecewise coefficient with equal values is a constant.
fn collapse(p: Preconditioner) -> Preconditioner {
    match &p {
        Preconditioner::Piecewise { values, .. } if values.windows(2).all(|w| w[0] == w[1]) => {
            Preconditioner::Constant(values[0])
        }
        _ => p,
    }
}

/// `v₀ = A₀⁻¹ f` rounded at `tol`.
pub fn initial_guess(a0_inv: &QttMatrix, f: &QttVector, tol: Tolerance) -> Result<QttVector> {
    a0_inv.matvec(f, tol)
}

/// `A₀⁻¹ (f − A_ε v)` with intermediates rounded at `tol`, and `‖f − A_ε v‖₂`.
pub fn preconditioned_residual(
    v: &QttVector,
    f: &QttVector,
    op: &StiffnessOperator,
    a0_inv: &QttMatrix,
    tol: Tolerance,
) -> Result<(QttVector, QttVector, f64)> {
    let r = f.sub(&op.apply(v, tol)?)?.round(tol);
    let norm = r.norm2();
    let z = a0_inv.matvec(&r, tol)?;
    Ok((r, z, norm))
}

/// `v − ρ A₀⁻¹ (A_ε v − f)` rounded at `tol`.
pub fn fixed_point_step(
    v: &QttVector,
    f: &QttVector,
    op: &StiffnessOperator,
    a0_inv: &QttMatrix,
    rho: f64,
    tol: Tolerance,
) -> Result<QttVector> {
    let (_, z, _) = preconditioned_residual(v, f, op, a0_inv, tol.scaled(0.25))?;
    v.axpy(rho, &z, tol)
}

/// One steepest descent step; returns the new iterate and the step length.
pub fn psd_step(
    v: &QttVector,
    f: &QttVector,
    op: &StiffnessOperator,
    a0_inv: &QttMatrix,
    tol: Tolerance,
) -> Result<(QttVector, f64)> {
    let inner = tol.scaled(0.25);
    let (r, z, _) = preconditioned_residual(v, f, op, a0_inv, inner)?;
    let alpha = line_search(&z, &r, op, inner)?;
    Ok((v.axpy(alpha, &z, tol)?, alpha))
}

fn line_search(z: &QttVector, r: &QttVector, op: &StiffnessOperator, tol: Tolerance) -> Result<f64> {
    let num = z.dot(r)?;
    if num == 0.0 {
        return Ok(0.0);
    }
    let den = op.energy(z, tol)?;
    if !(den > 0.0) {
        return Err(Error::LostPositivity(den));
    }
    Ok(num / den)
}

/// Increments above `STALL_WINDOW · δ · ‖v‖₀` are never attributed to
/// rounding noise.
const STALL_WINDOW: f64 = 1e4;

/// QTT data of one discrete problem.
pub struct Problem {
    pub grid: Grid,
    pub a: QttVector,
    pub a0: Preconditioner,
    pub op: StiffnessOperator,
    pub op0: StiffnessOperator,
    pub a0_inv: QttMatrix,
    pub f: QttVector,
    pub contraction: ContractionReport,
}

impl Problem {
    pub fn new(config: &SolverConfig, spec: &CoefficientSpec, load: &LoadSpec) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let grid = Grid::new(config.level)?;
        load.validate(&grid)?;
        let tol = config.tol(1.0)?;
        let a = sample_coefficient(spec, &grid, tol)?;
        let a0 = choose_preconditioner(spec, &config.preconditioner, &grid)?;
        let contraction = analyze(spec, &a0, &grid)?;
        let a0_inv = inverse_preconditioner_general(&a0, &grid, Tolerance::new(1e-14)?)?;
        let f = assemble_load(load, &grid, tol)?;
        let h = grid.h();
        Ok(Problem {
            op: StiffnessOperator::new(a.clone(), h),
            op0: StiffnessOperator::new(a0.sample(&grid), h),
            a,
            a0,
            a0_inv,
            f,
            contraction,
            grid,
        })
    }

    pub fn energy_a0(&self, x: &QttVector) -> Result<f64> {
        Ok(self.op0.energy(x, Tolerance::new(1e-14)?)?.max(0.0).sqrt())
    }
}

/// Runs the configured iteration from `v₀ = A₀⁻¹ f`.
pub fn solve(config: &SolverConfig, spec: &CoefficientSpec, load: &LoadSpec) -> Result<SolutionReport> {
    let problem = Problem::new(config, spec, load)?;
    solve_problem(config, &problem, spec, load)
}

pub fn solve_problem(
    config: &SolverConfig,
    problem: &Problem,
    spec: &CoefficientSpec,
    load: &LoadSpec,
) -> Result<SolutionReport> {
    let tol = config.tol(1.0)?;
    let inner = config.tol(0.25)?;
    let report = &problem.contraction;
    let (rho_star, q) = (report.rho_star, report.q);
    let mut warnings = vec![];
    let rho = match config.rho {
        Rho::Auto => rho_star,
        Rho::Fixed(r) => {
            let limit = 2.0 / report.bounds.h_hi;
            if r >= limit {
                warnings.push(format!("rho = {r} is outside the contraction window (0, {limit})"));
            }
            r
        }
    };
    let certifier = if config.certify {
        Some(Certifier::new(problem.grid.clone(), problem.a.clone(), spec.range(), &problem.a0, load.clone())?)
    } else {
        None
    };
    let load_norm = problem.f.norm2();
    let mut v = initial_guess(&problem.a0_inv, &problem.f, tol)?;
    let mut history = vec![];
    let mut stop_reason = StopReason::MaxIter;
    let mut final_residual = None;
    // increments contract by at most q in exact arithmetic; two ratios in a
    // row above the midpoint of [q, 1] mean rounding noise dominates
    let stall_ratio = 0.5 * (1.0 + q);
    let mut stalls = 0;
    for k in 0..config.max_iter {
        // no clock on wasm32-unknown-unknown; callers there disable timing
        let start = config.record_timing.then(Instant::now);
        let (r, z, residual_norm) = preconditioned_residual(&v, &problem.f, &problem.op, &problem.a0_inv, inner)?;
        if config.stop_rule == StopRule::Residual && residual_norm <= config.stop_tol * load_norm {
            stop_reason = StopReason::Tolerance;
            final_residual = Some(residual_norm);
            break;
        }
        let step = match config.method {
            Method::FixedPoint => rho,
            Method::Psd => line_search(&z, &r, &problem.op, inner)?,
        };
        let next = v.axpy(step, &z, tol)?;
        let increment = problem.energy_a0(&next.sub(&v)?)?;
        let wall_ms = start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3);
        let (majorant, bounds) = match &certifier {
            Some(c) => {
                let image = v.axpy(rho_star, &z, tol)?;
                let (m, b) = c.bracket(&v, &image, rho_star, q)?;
                (Some(m.value), Some(b))
            }
            None => (None, None),
        };
        history.push(ConvergenceRecord {
            k,
            residual_norm,
            increment_energy: increment,
            avg_rank: v.average_rank(),
            max_rank: v.max_rank(),
            step,
            wall_ms,
            majorant,
            bounds,
        });
        let norm = problem.energy_a0(&next)?;
        if let Some(prev) = history.iter().rev().nth(1).map(|r: &ConvergenceRecord| r.increment_energy) {
            let noisy = increment > stall_ratio * prev && increment <= STALL_WINDOW * config.delta * norm;
            stalls = if noisy { stalls + 1 } else { 0 };
        }
        let reached = config.stop_rule == StopRule::Increment && increment <= config.stop_tol * norm;
        v = next;
        if reached {
            stop_reason = StopReason::Tolerance;
            break;
        }
        if stalls >= 2 {
            stop_reason = StopReason::Stagnation;
            break;
        }
    }
    let final_residual = match final_residual {
        Some(r) => r,
        None => problem.f.sub(&problem.op.apply(&v, inner)?)?.norm2(),
    };
    Ok(SolutionReport {
        solution: v,
        history,
        converged: stop_reason != StopReason::MaxIter,
        stop_reason,
        rho_used: rho,
        q_used: q,
        contraction: report.clone(),
        a0: problem.a0.clone(),
        coefficient_avg_rank: problem.a.average_rank(),
        final_residual,
        load_norm,
        warnings,
    })
}
