//! Command-line surface and config-file merging.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "qtt-elliptic", version, about = "QTT solver for 1D elliptic problems with oscillating coefficients")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve one problem and write the convergence history.
    Solve(SolveArgs),
    /// Solve a range of levels per coefficient class and tabulate cost.
    Benchmark(BenchmarkArgs),
    /// Solve with two-sided error bounds at every iterate.
    Certify(SolveArgs),
    /// Print the step parameter and contraction factor.
    Contraction(ProblemArgs),
    /// Compare the oscillatory solution with the homogenized one over a range of K.
    CompareHom(CompareArgs),
    /// Report QTT ranks of the problem data or of a saved container.
    Ranks(RanksArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    Constant,
    #[value(alias = "periodic")]
    Sine,
    Modulated,
    Exotic,
    Piecewise,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Psd,
    #[value(alias = "fp")]
    FixedPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StopRuleArg {
    Increment,
    Residual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    Harmonic,
    Arithmetic,
}

/// Flags shared by every subcommand. Each has a config-file key equal to
/// its long name (`stop-tol` and `stop_tol` are both accepted).
#[derive(Args, Clone, Debug)]
pub struct ProblemArgs {
    /// `key = value` file; flags on the command line take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sine")]
    pub class: ClassArg,
    /// mean level of the coefficient
    #[arg(long = "C", default_value_t = 2.0, allow_negative_numbers = true)]
    pub c: f64,
    /// number of periods on (0, 1): ω = 2πK
    #[arg(long = "K", default_value_t = 64.0)]
    pub k: f64,
    /// angular frequency; overrides K
    #[arg(long, allow_negative_numbers = true)]
    pub omega: Option<f64>,
    /// phase exponent of the exotic class
    #[arg(long = "m", default_value_t = 3)]
    pub m: u32,
    /// lines `x value`: plateaus of the modulator or of the piecewise coefficient
    #[arg(long)]
    pub steps_file: Option<PathBuf>,
    /// N newline-separated midpoint samples for the custom class
    #[arg(long)]
    pub samples_file: Option<PathBuf>,
    /// `const:V`, `poly:c0,c1,..`, `sine:A,OMEGA,PHASE` or `file:PATH`
    #[arg(long, default_value = "const:1")]
    pub load: String,
    /// grid level, N = 2^L interior nodes
    #[arg(long = "L", default_value_t = 10)]
    pub level: usize,
    #[arg(long, default_value_t = 1e-7, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long)]
    pub max_rank: Option<usize>,
    /// `auto` or a positive step
    #[arg(long, default_value = "auto", allow_negative_numbers = true)]
    pub rho: String,
    #[arg(long, value_enum, default_value = "psd")]
    pub method: MethodArg,
    /// `mean`, `harmonic`, `envelope` or a positive constant
    #[arg(long, default_value = "mean", allow_negative_numbers = true)]
    pub preconditioner: String,
    #[arg(long, value_enum, default_value = "increment")]
    pub stop_rule: StopRuleArg,
    #[arg(long, default_value_t = 1e-6, allow_negative_numbers = true)]
    pub stop_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// recorded in the summary; the pipeline itself is deterministic
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination (stdout when absent)
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// print a JSON summary on stdout instead of CSV
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Clone, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// write the final iterate as a binary QTT container
    #[arg(long)]
    pub save_solution: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// `13..17`, `13-17` or a comma list
    #[arg(long, default_value = "10..14")]
    pub levels: String,
    /// comma list of classes
    #[arg(long, default_value = "sine,modulated,exotic")]
    pub classes: String,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

#[derive(Args, Clone, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// comma list of K values
    #[arg(long, default_value = "16,32,64,128")]
    pub ks: String,
    #[arg(long, value_enum, default_value = "harmonic")]
    pub averaging: AveragingArg,
}

#[derive(Args, Clone, Debug)]
pub struct RanksArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// report a saved container instead of the problem data
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// save the sampled coefficient as a binary QTT container
    #[arg(long)]
    pub save: Option<PathBuf>,
}

/// Keys whose flag takes no value.
const SWITCHES: &[&str] = &["json"];

/// Parses a flat `key = value` file into flag tokens.
pub fn config_tokens(text: &str, origin: &Path) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected `key = value`, got `{raw}`", origin.display(), n + 1))
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(CliError::Config(format!("{}:{}: invalid key `{key}`", origin.display(), n + 1)));
        }
        if SWITCHES.contains(&key.as_str()) {
            match value {
                "true" => out.push(format!("--{key}")),
                "false" => {}
                _ => {
                    return Err(CliError::Config(format!(
                        "{}:{}: `{key}` takes true or false",
                        origin.display(),
                        n + 1
                    )))
                }
            }
        } else {
            out.push(format!("--{key}"));
            out.push(value.to_string());
        }
    }
    Ok(out)
}

/// Splices the tokens of a `--config` file in front of the command-line
/// flags, so that later command-line occurrences override them.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>, CliError> {
    let path = args.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            args.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else { return Ok(args) };
    if args.len() < 2 || args[1].starts_with('-') {
        return Err(CliError::Config("the subcommand must come first when --config is used".into()));
    }
    let path = PathBuf::from(path);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut merged = args[..2].to_vec();
    merged.extend(config_tokens(&text, &path)?);
    merged.extend_from_slice(&args[2..]);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_switches() {
        let t = "# run\nclass = exotic  # inline\n\nstop_tol = 1e-8\njson = true\nK=32\n";
        let tok = config_tokens(t, Path::new("x")).unwrap();
        assert_eq!(tok, ["--class", "exotic", "--stop-tol", "1e-8", "--json", "--K", "32"]);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(config_tokens("class exotic", Path::new("x")).is_err());
        assert!(config_tokens("json = yes", Path::new("x")).is_err());
        assert!(config_tokens("config = other", Path::new("x")).is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "L = 8\ndelta = 1e-6\n").unwrap();
        let args: Vec<String> =
            ["qtt-elliptic", "solve", "--config", p.to_str().unwrap(), "--L", "9"].iter().map(|s| s.to_string()).collect();
        let cli = Cli::try_parse_from(expand_config(args).unwrap()).unwrap();
        let Command::Solve(s) = cli.command else { panic!() };
        assert_eq!(s.problem.level, 9);
        assert_eq!(s.problem.delta, 1e-6);
    }
}
