//! Resolution of parsed flags into validated problem data.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use qtt_elliptic::fem::{CoefficientSpec, Grid, LoadSpec, Modulator};
use qtt_elliptic::solver::{Method, PreconditionerChoice, Rho, SolverConfig, StopRule};

use crate::args::{ClassArg, MethodArg, ProblemArgs, StopRuleArg};
use crate::CliError;

/// Everything a pipeline needs, checked before any compute starts.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub spec: CoefficientSpec,
    pub load: LoadSpec,
    pub solver: SolverConfig,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub json: bool,
    pub threads: usize,
}

fn read_numbers(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .map(|(n, l)| (n, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            l.split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Plateaus from lines `x_start value`; the first must start at 0.
fn read_steps(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let rows = read_numbers(path)?;
    if rows.iter().any(|r| r.len() != 2) {
        return Err(CliError::Config(format!("{}: each line needs `x value`", path.display())));
    }
    match rows.first() {
        Some(r) if r[0] == 0.0 => {}
        _ => return Err(CliError::Config(format!("{}: the first plateau must start at x = 0", path.display()))),
    }
    Ok((rows[1..].iter().map(|r| r[0]).collect(), rows.iter().map(|r| r[1]).collect()))
}

fn read_column(path: &Path) -> Result<Vec<f64>, CliError> {
    let rows = read_numbers(path)?;
    if rows.iter().any(|r| r.len() != 1) {
        return Err(CliError::Config(format!("{}: expected one value per line", path.display())));
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

fn numbers(list: &str, what: &str) -> Result<Vec<f64>, CliError> {
    list.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| CliError::Config(format!("{what}: `{t}`: {e}"))))
        .collect()
}

pub fn parse_load(s: &str) -> Result<LoadSpec, CliError> {
    let bad = |m: &str| CliError::Config(format!("load `{s}`: {m}"));
    let (kind, rest) = s.split_once(':').unwrap_or(("const", s));
    match kind.trim() {
        "const" | "constant" => Ok(LoadSpec::Constant(numbers(rest, "load")?.into_iter().next().unwrap_or(1.0))),
        "poly" => Ok(LoadSpec::Polynomial(numbers(rest, "load")?)),
        "sine" => match numbers(rest, "load")?[..] {
            [amplitude, omega, phase] => Ok(LoadSpec::Sine { amplitude, omega, phase }),
            [amplitude, omega] => Ok(LoadSpec::Sine { amplitude, omega, phase: 0.0 }),
            _ => Err(bad("sine takes A,OMEGA[,PHASE]")),
        },
        "file" => Ok(LoadSpec::Custom(read_column(Path::new(rest.trim()))?)),
        _ => Err(bad("unknown kind; use const, poly, sine or file")),
    }
}

pub fn build_spec(p: &ProblemArgs, class: ClassArg, k: f64) -> Result<CoefficientSpec, CliError> {
    let omega = p.omega.unwrap_or(2.0 * PI * k);
    let steps = || {
        p.steps_file
            .as_deref()
            .map(read_steps)
            .transpose()
    };
    let spec = match class {
        ClassArg::Constant => CoefficientSpec::constant(p.c),
        ClassArg::Sine => CoefficientSpec::Oscillating { c: p.c, omega, m: 1, modulator: Modulator::unit() },
        ClassArg::Exotic => CoefficientSpec::Oscillating { c: p.c, omega, m: p.m, modulator: Modulator::unit() },
        ClassArg::Modulated => {
            let modulator = match steps()? {
                Some((breakpoints, values)) => Modulator { breakpoints, values },
                None => Modulator::four_step(),
            };
            CoefficientSpec::Oscillating { c: p.c, omega, m: 1, modulator }
        }
        ClassArg::Piecewise => {
            let (breakpoints, values) =
                steps()?.ok_or_else(|| CliError::Config("class piecewise needs --steps-file".into()))?;
            CoefficientSpec::PiecewiseConstant { breakpoints, values }
        }
        ClassArg::Custom => {
            let path = p.samples_file.as_deref().ok_or_else(|| CliError::Config("class custom needs --samples-file".into()))?;
            let samples = read_column(path)?;
            let n = 1usize.checked_shl(p.level as u32).unwrap_or(0);
            if samples.len() != n {
                return Err(CliError::Config(format!(
                    "{} holds {} samples, level {} needs {n}",
                    path.display(),
                    samples.len(),
                    p.level
                )));
            }
            CoefficientSpec::Custom { samples }
        }
    };
    spec.validate()?;
    Ok(spec)
}

pub fn solver_config(p: &ProblemArgs) -> Result<SolverConfig, CliError> {
    let rho = match p.rho.trim() {
        "auto" => Rho::Auto,
        r => Rho::Fixed(r.parse().map_err(|e| CliError::Config(format!("rho `{r}`: {e}")))?),
    };
    let preconditioner = match p.preconditioner.trim() {
        "mean" => PreconditionerChoice::Mean,
        "harmonic" => PreconditionerChoice::HarmonicMean,
        "envelope" => PreconditionerChoice::EnvelopeAverage { breakpoints: None },
        c => PreconditionerChoice::Constant(
            c.parse().map_err(|e| CliError::Config(format!("preconditioner `{c}`: {e}")))?,
        ),
    };
    let config = SolverConfig {
        level: p.level,
        delta: p.delta,
        max_rank: p.max_rank,
        method: match p.method {
            MethodArg::Psd => Method::Psd,
            MethodArg::FixedPoint => Method::FixedPoint,
        },
        rho,
        preconditioner,
        stop_rule: match p.stop_rule {
            StopRuleArg::Increment => StopRule::Increment,
            StopRuleArg::Residual => StopRule::Residual,
        },
        stop_tol: p.stop_tol,
        max_iter: p.max_iter,
        certify: false,
        record_timing: true,
    };
    config.validate()?;
    Ok(config)
}

fn threads() -> Result<usize, CliError> {
    match std::env::var("QTT_ELLIPTIC_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| CliError::Config(format!("QTT_ELLIPTIC_THREADS must be a positive integer, got `{v}`"))),
    }
}

impl RunConfig {
    pub fn resolve(p: &ProblemArgs) -> Result<Self, CliError> {
        let solver = solver_config(p)?;
        let spec = build_spec(p, p.class, p.k)?;
        let load = parse_load(&p.load)?;
        load.validate(&Grid::new(p.level)?)?;
        Ok(RunConfig { spec, load, solver, seed: p.seed, output: p.output.clone(), json: p.json, threads: threads()? })
    }
}
