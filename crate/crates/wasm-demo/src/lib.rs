//! Browser bindings: solve a problem, sweep coefficient ranks over levels
//! and inspect the contraction analysis. Every export returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use qtt_elliptic::contraction::ContractionReport;
use qtt_elliptic::fem::{sample_coefficient, CoefficientSpec, Grid, LoadSpec, Modulator};
use qtt_elliptic::qtt::Tolerance;
use qtt_elliptic::solver::{solve, Method, Problem, SolverConfig};

/// Largest level the page may request; keeps a single call interactive.
pub const MAX_LEVEL: usize = 16;
const PLOT_POINTS: usize = 257;

fn spec(class: &str, c: f64, k: f64, m: u32) -> Result<CoefficientSpec, String> {
    let spec = match class {
        "constant" => CoefficientSpec::constant(c),
        "sine" => CoefficientSpec::periodic(c, k),
        "modulated" => CoefficientSpec::modulated(c, k, Modulator::four_step()),
        "exotic" => CoefficientSpec::exotic(c, k, m),
        other => return Err(format!("unknown class `{other}`")),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn check_level(level: usize) -> Result<(), String> {
    if (2..=MAX_LEVEL).contains(&level) {
        Ok(())
    } else {
        Err(format!("level must lie in 2..={MAX_LEVEL}"))
    }
}

fn config(level: usize, delta: f64, method: &str) -> Result<SolverConfig, String> {
    let method = match method {
        "psd" => Method::Psd,
        "fixed-point" => Method::FixedPoint,
        other => return Err(format!("unknown method `{other}`")),
    };
    Ok(SolverConfig { level, delta, method, max_iter: 60, record_timing: false, ..SolverConfig::default() })
}

#[derive(Serialize)]
struct Step {
    k: usize,
    residual: f64,
    increment: f64,
    avg_rank: f64,
}

#[derive(Serialize)]
struct SolveView {
    iterations: usize,
    converged: bool,
    stop_reason: String,
    q: f64,
    solution_avg_rank: f64,
    solution_ranks: Vec<usize>,
    coefficient_avg_rank: f64,
    storage: usize,
    dense_len: usize,
    history: Vec<Step>,
    x: Vec<f64>,
    u: Vec<f64>,
    a: Vec<f64>,
}

pub fn solve_json(class: &str, c: f64, k: f64, m: u32, level: usize, delta: f64, method: &str) -> Result<String, String> {
    check_level(level)?;
    let spec = spec(class, c, k, m)?;
    let rep = solve(&config(level, delta, method)?, &spec, &LoadSpec::Constant(1.0)).map_err(|e| e.to_string())?;
    let grid = Grid::new(level).map_err(|e| e.to_string())?;
    let n = grid.n();
    let idx: Vec<usize> = (0..PLOT_POINTS).map(|j| j * (n - 1) / (PLOT_POINTS - 1)).collect();
    let view = SolveView {
        iterations: rep.iterations(),
        converged: rep.converged,
        stop_reason: format!("{:?}", rep.stop_reason),
        q: rep.q_used,
        solution_avg_rank: rep.solution.average_rank(),
        solution_ranks: rep.solution.rank_profile(),
        coefficient_avg_rank: rep.coefficient_avg_rank,
        storage: rep.solution.storage(),
        dense_len: n,
        history: rep
            .history
            .iter()
            .map(|r| Step { k: r.k, residual: r.residual_norm, increment: r.increment_energy, avg_rank: r.avg_rank })
            .collect(),
        x: idx.iter().map(|&i| grid.node(i + 1)).collect(),
        u: idx.iter().map(|&i| rep.solution.get(i)).collect(),
        a: idx.iter().map(|&i| spec.value(grid.node(i + 1))).collect(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RankRow {
    level: usize,
    avg_rank: f64,
    max_rank: usize,
    storage: usize,
}

pub fn rank_sweep_json(class: &str, c: f64, k: f64, m: u32, max_level: usize, delta: f64) -> Result<String, String> {
    check_level(max_level)?;
    let spec = spec(class, c, k, m)?;
    let tol = Tolerance::new(delta).map_err(|e| e.to_string())?;
    let rows = (2..=max_level)
        .map(|level| {
            let grid = Grid::new(level).map_err(|e| e.to_string())?;
            let a = sample_coefficient(&spec, &grid, tol).map_err(|e| e.to_string())?;
            Ok(RankRow { level, avg_rank: a.average_rank(), max_rank: a.max_rank(), storage: a.storage() })
        })
        .collect::<Result<Vec<_>, String>>()?;
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

pub fn contraction_json(class: &str, c: f64, k: f64, m: u32, level: usize) -> Result<String, String> {
    check_level(level)?;
    let spec = spec(class, c, k, m)?;
    let problem = Problem::new(&config(level, 1e-7, "psd")?, &spec, &LoadSpec::Constant(1.0)).map_err(|e| e.to_string())?;
    let report: &ContractionReport = &problem.contraction;
    serde_json::to_string(report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn solve_problem(class: &str, c: f64, k: f64, m: u32, level: usize, delta: f64, method: &str) -> Result<String, JsValue> {
    solve_json(class, c, k, m, level, delta, method).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn rank_sweep(class: &str, c: f64, k: f64, m: u32, max_level: usize, delta: f64) -> Result<String, JsValue> {
    rank_sweep_json(class, c, k, m, max_level, delta).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn contraction(class: &str, c: f64, k: f64, m: u32, level: usize) -> Result<String, JsValue> {
    contraction_json(class, c, k, m, level).map_err(|e| JsValue::from_str(&e))
}
