//! Subcommand drivers.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use qtt_elliptic::contraction::ContractionReport;
use qtt_elliptic::error_control::{Certifier, MajorantReport};
use qtt_elliptic::fem::{assemble_load, assemble_stiffness_qtt, sample_coefficient, CoefficientSpec, Grid, LoadSpec};
use qtt_elliptic::homogenize::{compare, effective_coefficient_1d, homogenized_solve, Averaging, Comparison};
use qtt_elliptic::qtt::{QttMatrix, QttVector, Tolerance};
use qtt_elliptic::solver::{solve, solve_problem, ConvergenceRecord, Problem, SolutionReport, SolverConfig, StopReason};

use crate::args::{AveragingArg, BenchmarkArgs, ClassArg, CompareArgs, RanksArgs, SolveArgs};
use crate::config::{build_spec, RunConfig};
use crate::CliError;

pub const CSV_HEADER: &str = "# qtt-elliptic csv v1";

/// Outcome of a driver: whether the iteration hit `max_iter`.
pub enum Outcome {
    Done,
    MaxIter,
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn fmt_ms(x: f64) -> String {
    format!("{x:.3}")
}

/// CSV writer on `--output` or stdout, starting with the version line.
fn csv_sink(out: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>, CliError> {
    let mut w: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    writeln!(w, "{CSV_HEADER}")?;
    Ok(csv::Writer::from_writer(w))
}

/// Writes `rows` as CSV unless JSON replaces it on stdout.
fn emit_csv(run: &RunConfig, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    if run.json && run.output.is_none() {
        return Ok(());
    }
    let mut w = csv_sink(run.output.as_deref())?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn emit_json<T: Serialize>(run: &RunConfig, value: &T) -> Result<(), CliError> {
    if run.json {
        let mut out = io::stdout().lock();
        serde_json::to_writer_pretty(&mut out, value)?;
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    coefficient: &'a CoefficientSpec,
    load: &'a LoadSpec,
    config: &'a SolverConfig,
    seed: u64,
    threads: usize,
    converged: bool,
    stop_reason: StopReason,
    iterations: usize,
    rho_used: f64,
    q_used: f64,
    contraction: &'a ContractionReport,
    coefficient_avg_rank: f64,
    solution_avg_rank: f64,
    solution_max_rank: usize,
    solution_rank_profile: Vec<usize>,
    final_residual: f64,
    load_norm: f64,
    warnings: &'a [String],
    global_majorant: Option<MajorantReport>,
    history: &'a [ConvergenceRecord],
}

fn summary<'a>(run: &'a RunConfig, rep: &'a SolutionReport, global: Option<MajorantReport>) -> SolveSummary<'a> {
    SolveSummary {
        coefficient: &run.spec,
        load: &run.load,
        config: &run.solver,
        seed: run.seed,
        threads: run.threads,
        converged: rep.converged,
        stop_reason: rep.stop_reason,
        iterations: rep.iterations(),
        rho_used: rep.rho_used,
        q_used: rep.q_used,
        contraction: &rep.contraction,
        coefficient_avg_rank: rep.coefficient_avg_rank,
        solution_avg_rank: rep.solution.average_rank(),
        solution_max_rank: rep.solution.max_rank(),
        solution_rank_profile: rep.solution.rank_profile(),
        final_residual: rep.final_residual,
        load_norm: rep.load_norm,
        warnings: &rep.warnings,
        global_majorant: global,
        history: &rep.history,
    }
}

fn report_to_stderr(rep: &SolutionReport) {
    eprintln!(
        "{} after {} iterations ({:?}), avg rank {:.2}, residual {:.3e}",
        if rep.converged { "converged" } else { "not converged" },
        rep.iterations(),
        rep.stop_reason,
        rep.solution.average_rank(),
        rep.final_residual
    );
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
}

fn outcome(rep: &SolutionReport) -> Outcome {
    if rep.stop_reason == StopReason::MaxIter {
        Outcome::MaxIter
    } else {
        Outcome::Done
    }
}

pub fn run_solve(args: &SolveArgs) -> Result<Outcome, CliError> {
    let run = RunConfig::resolve(&args.problem)?;
    let rep = solve(&run.solver, &run.spec, &run.load)?;
    let rows: Vec<Vec<String>> = rep
        .history
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                fmt(r.residual_norm),
                fmt(r.increment_energy),
                fmt(r.avg_rank),
                r.max_rank.to_string(),
                fmt(r.step),
                fmt_opt(r.majorant),
                fmt_opt(r.bounds.map(|b| b.lower)),
                fmt_opt(r.bounds.map(|b| b.upper)),
                fmt_ms(r.wall_ms),
            ]
        })
        .collect();
    emit_csv(
        &run,
        &[
            "iter",
            "residual",
            "increment_energy",
            "avg_rank_u",
            "max_rank_u",
            "step",
            "majorant",
            "err_lower",
            "err_upper",
            "wall_ms",
        ],
        &rows,
    )?;
    emit_json(&run, &summary(&run, &rep, None))?;
    if let Some(p) = &args.save_solution {
        let mut w = BufWriter::new(File::create(p)?);
        rep.solution.write_to(&mut w)?;
        w.flush()?;
    }
    report_to_stderr(&rep);
    Ok(outcome(&rep))
}

pub fn run_certify(args: &SolveArgs) -> Result<Outcome, CliError> {
    let mut run = RunConfig::resolve(&args.problem)?;
    run.solver.certify = true;
    let problem = Problem::new(&run.solver, &run.spec, &run.load)?;
    let rep = solve_problem(&run.solver, &problem, &run.spec, &run.load)?;
    let certifier = Certifier::new(problem.grid, problem.a.clone(), run.spec.range(), &problem.a0, run.load.clone())?;
    let y = certifier.reconstruct_global(&rep.solution)?;
    let global = certifier.majorant_global(&rep.solution, &y)?;
    let rows: Vec<Vec<String>> = rep
        .history
        .iter()
        .filter_map(|r| r.bounds.map(|b| (r, b)))
        .map(|(r, b)| {
            vec![
                r.k.to_string(),
                fmt(b.eta_norm),
                fmt(b.majorant),
                fmt(b.lower),
                fmt(b.upper),
                fmt(b.q),
                fmt_ms(r.wall_ms),
            ]
        })
        .collect();
    emit_csv(&run, &["iter", "eta_norm", "majorant", "lower", "upper", "q", "wall_ms"], &rows)?;
    emit_json(&run, &summary(&run, &rep, Some(global)))?;
    if let Some(p) = &args.save_solution {
        let mut w = BufWriter::new(File::create(p)?);
        rep.solution.write_to(&mut w)?;
        w.flush()?;
    }
    report_to_stderr(&rep);
    eprintln!("global energy-norm majorant of the final iterate: {:.3e}", global.value);
    Ok(outcome(&rep))
}

pub fn run_contraction(args: &crate::args::ProblemArgs) -> Result<Outcome, CliError> {
    let run = RunConfig::resolve(args)?;
    let problem = Problem::new(&run.solver, &run.spec, &run.load)?;
    let c = &problem.contraction;
    emit_csv(
        &run,
        &["rho_star", "q", "q_coarse", "cond_bound"],
        &[vec![fmt(c.rho_star), fmt(c.q), fmt(c.q_coarse), fmt(c.cond_bound)]],
    )?;
    emit_json(&run, c)?;
    Ok(Outcome::Done)
}

fn parse_levels(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = |m: String| CliError::Config(format!("levels `{s}`: {m}"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| bad(e.to_string()));
    let levels: Vec<usize> = if let Some((a, b)) = s.split_once("..").or_else(|| s.split_once('-')) {
        (num(a)?..=num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if levels.is_empty() {
        return Err(bad("empty range".into()));
    }
    if let Some(l) = levels.iter().find(|l| !(1..=40).contains(*l)) {
        return Err(bad(format!("level {l} out of range")));
    }
    Ok(levels)
}

fn parse_classes(s: &str) -> Result<Vec<ClassArg>, CliError> {
    use clap::ValueEnum;
    s.split(',')
        .map(|t| ClassArg::from_str(t.trim(), true).map_err(|e| CliError::Config(format!("class `{t}`: {e}"))))
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn class_name(c: ClassArg) -> String {
    use clap::ValueEnum;
    c.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
}

pub fn run_benchmark(args: &BenchmarkArgs) -> Result<Outcome, CliError> {
    let levels = parse_levels(&args.levels)?;
    let classes = parse_classes(&args.classes)?;
    if args.repeats == 0 {
        return Err(CliError::Config("repeats must be at least 1".into()));
    }
    let base = RunConfig::resolve(&args.problem)?;
    let mut jobs = Vec::new();
    for &class in &classes {
        for &level in &levels {
            let mut p = args.problem.clone();
            p.level = level;
            let mut run = base.clone();
            run.spec = build_spec(&p, class, p.k)?;
            run.solver.level = level;
            run.solver.validate()?;
            run.load.validate(&Grid::new(level)?)?;
            jobs.push((class, level, run));
        }
    }

    #[derive(Serialize)]
    struct Row {
        class: String,
        level: usize,
        iterations: usize,
        converged: bool,
        median_total_ms: f64,
        median_step_ms: f64,
        avg_rank_u: f64,
        avg_rank_a: f64,
    }
    let mut rows = Vec::new();
    let mut all_converged = true;
    for (class, level, run) in jobs {
        let mut totals = Vec::new();
        let mut steps = Vec::new();
        let mut last = None;
        for _ in 0..args.repeats {
            let rep = solve(&run.solver, &run.spec, &run.load)?;
            totals.push(rep.history.iter().map(|r| r.wall_ms).sum());
            steps.push(rep.median_step_ms());
            last = Some(rep);
        }
        let rep = last.expect("at least one repeat");
        all_converged &= rep.converged;
        eprintln!("{} L={level}: {} iterations", class_name(class), rep.iterations());
        rows.push(Row {
            class: class_name(class),
            level,
            iterations: rep.iterations(),
            converged: rep.converged,
            median_total_ms: median(totals),
            median_step_ms: median(steps),
            avg_rank_u: rep.solution.average_rank(),
            avg_rank_a: rep.coefficient_avg_rank,
        });
    }
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.class.clone(),
                r.level.to_string(),
                r.iterations.to_string(),
                r.converged.to_string(),
                fmt(r.avg_rank_u),
                fmt(r.avg_rank_a),
                fmt_ms(r.median_total_ms),
                fmt_ms(r.median_step_ms),
            ]
        })
        .collect();
    emit_csv(
        &base,
        &["class", "L", "iterations", "converged", "avg_rank_u", "avg_rank_a", "median_total_ms", "median_step_ms"],
        &csv_rows,
    )?;
    emit_json(&base, &rows)?;
    Ok(if all_converged { Outcome::Done } else { Outcome::MaxIter })
}

pub fn run_compare(args: &CompareArgs) -> Result<Outcome, CliError> {
    let run = RunConfig::resolve(&args.problem)?;
    let ks: Vec<f64> = args
        .ks
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| CliError::Config(format!("ks `{t}`: {e}"))))
        .collect::<Result<_, _>>()?;
    if args.problem.omega.is_some() {
        return Err(CliError::Config("compare-hom sweeps K; drop --omega".into()));
    }
    if run.solver.level > 22 {
        return Err(CliError::Config("compare-hom unfolds the solution; use L ≤ 22".into()));
    }
    let rule = match args.averaging {
        AveragingArg::Harmonic => Averaging::Harmonic,
        AveragingArg::Arithmetic => Averaging::Arithmetic,
    };
    let grid = Grid::new(run.solver.level)?;

    #[derive(Serialize)]
    struct Row {
        k: f64,
        a_hom: f64,
        iterations: usize,
        #[serde(flatten)]
        comparison: Comparison,
    }
    let mut rows = Vec::new();
    let mut all_converged = true;
    for &k in &ks {
        let spec = build_spec(&args.problem, args.problem.class, k)?;
        let a_hom = effective_coefficient_1d(&spec, rule)?;
        let problem = Problem::new(&run.solver, &spec, &run.load)?;
        let rep = solve_problem(&run.solver, &problem, &spec, &run.load)?;
        all_converged &= rep.converged;
        let u_eps = rep.solution.unfold()?;
        let a = problem.a.unfold()?;
        let u0 = homogenized_solve(a_hom, &run.load, &grid)?;
        let comparison = compare(&u_eps, &u0, a_hom, &a, &run.load, &grid)?;
        rows.push(Row { k, a_hom, iterations: rep.iterations(), comparison });
    }
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![fmt(r.k), fmt(r.comparison.l2_diff), fmt(r.comparison.h1_diff), fmt(r.comparison.residual)]
        })
        .collect();
    emit_csv(&run, &["K", "l2_diff", "h1_diff", "residual"], &csv_rows)?;
    emit_json(&run, &rows)?;
    Ok(if all_converged { Outcome::Done } else { Outcome::MaxIter })
}

#[derive(Serialize)]
struct RankRow {
    object: String,
    level: usize,
    avg_rank: f64,
    max_rank: usize,
    profile: Vec<usize>,
}

impl RankRow {
    fn vector(object: &str, v: &QttVector) -> Self {
        RankRow {
            object: object.into(),
            level: v.level(),
            avg_rank: v.average_rank(),
            max_rank: v.max_rank(),
            profile: v.rank_profile(),
        }
    }

    fn matrix(object: &str, m: &QttMatrix) -> Self {
        RankRow {
            object: object.into(),
            level: m.level(),
            avg_rank: m.average_rank(),
            max_rank: m.max_rank(),
            profile: m.rank_profile(),
        }
    }
}

fn read_container(path: &Path) -> Result<RankRow, CliError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let name = path.display().to_string();
    match bytes.get(..4) {
        Some(b"QTTV") => Ok(RankRow::vector(&name, &QttVector::read_from(&mut bytes.as_slice())?)),
        Some(b"QTTM") => Ok(RankRow::matrix(&name, &QttMatrix::read_from(&mut bytes.as_slice())?)),
        _ => Err(CliError::Config(format!("{name} is not a QTT container"))),
    }
}

pub fn run_ranks(args: &RanksArgs) -> Result<Outcome, CliError> {
    let run = RunConfig::resolve(&args.problem)?;
    let rows = match &args.input {
        Some(p) => vec![read_container(p)?],
        None => {
            let grid = Grid::new(run.solver.level)?;
            let mut tol = Tolerance::new(run.solver.delta)?;
            if let Some(r) = run.solver.max_rank {
                tol = tol.with_max_rank(r)?;
            }
            let a = sample_coefficient(&run.spec, &grid, tol)?;
            let k = assemble_stiffness_qtt(&a, grid.h(), tol)?;
            let f = assemble_load(&run.load, &grid, tol)?;
            if let Some(p) = &args.save {
                let mut w = BufWriter::new(File::create(p)?);
                a.write_to(&mut w)?;
                w.flush()?;
            }
            vec![RankRow::vector("coefficient", &a), RankRow::matrix("stiffness", &k), RankRow::vector("load", &f)]
        }
    };
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let profile: Vec<String> = r.profile.iter().map(|x| x.to_string()).collect();
            vec![r.object.clone(), r.level.to_string(), fmt(r.avg_rank), r.max_rank.to_string(), profile.join(" ")]
        })
        .collect();
    emit_csv(&run, &["object", "L", "avg_rank", "max_rank", "rank_profile"], &csv_rows)?;
    emit_json(&run, &rows)?;
    Ok(Outcome::Done)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_ranges() {
        assert_eq!(parse_levels("13..15").unwrap(), [13, 14, 15]);
        assert_eq!(parse_levels("3-4").unwrap(), [3, 4]);
        assert_eq!(parse_levels("5, 7").unwrap(), [5, 7]);
        assert!(parse_levels("9..8").is_err());
        assert!(parse_levels("0").is_err());
        assert!(parse_levels("a..b").is_err());
    }

    #[test]
    fn class_lists() {
        assert_eq!(parse_classes("sine, periodic,exotic").unwrap(), [ClassArg::Sine, ClassArg::Sine, ClassArg::Exotic]);
        assert!(parse_classes("sine,wave").is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 2.5);
    }
}
