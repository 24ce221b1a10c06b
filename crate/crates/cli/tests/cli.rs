use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qtt-elliptic"));
    c.env_remove("QTT_ELLIPTIC_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// CSV body without the version line and header, split into fields.
fn rows(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# qtt-elliptic csv v1"));
    lines.next().expect("header");
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn without_timing(text: &str) -> Vec<Vec<String>> {
    rows(text).into_iter().map(|mut r| {
        r.pop();
        r
    }).collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn constant_coefficient_converges_in_one_step() {
    let o = run(&["solve", "--class", "constant", "--C", "1", "--L", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.lines().nth(1).unwrap().starts_with("iter,residual,increment_energy,avg_rank_u"));
    assert_eq!(rows(&text).len(), 1);
}

#[test]
fn output_is_deterministic_apart_from_timing() {
    let args = ["solve", "--class", "modulated", "--K", "16", "--L", "9"];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(without_timing(&stdout(&a)), without_timing(&stdout(&b)));
}

#[test]
fn max_iter_exits_with_two() {
    let o = run(&["solve", "--L", "8", "--max-iter", "2", "--stop-tol", "1e-12"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(rows(&stdout(&o)).len(), 2);
}

#[test]
fn configuration_errors_exit_with_one() {
    for args in [
        &["solve", "--delta", "-1"][..],
        &["solve", "--class", "wave"],
        &["solve", "--class", "piecewise"],
        &["solve", "--C", "0.5"],
        &["solve", "--load", "sine:1"],
        &["solve", "--rho", "fast"],
        &["benchmark", "--levels", "x..y"],
        &["solve", "--config", "/nonexistent/run.cfg"],
    ] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(o.stdout.is_empty(), "{args:?}");
    }
    let o = bin().args(["solve", "--L", "6"]).env("QTT_ELLIPTIC_THREADS", "0").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_matches_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# exotic run\nclass = exotic\nm = 2\nK = 8\nL = 9\nstop_tol = 1e-5\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let from_file = run(&["solve", "--config", cfg]);
    let from_flags = run(&["solve", "--class", "exotic", "--m", "2", "--K", "8", "--L", "9", "--stop-tol", "1e-5"]);
    assert_eq!(from_file.status.code(), Some(0));
    assert_eq!(without_timing(&stdout(&from_file)), without_timing(&stdout(&from_flags)));

    let overridden = run(&["solve", "--config", cfg, "--K", "4"]);
    let direct = run(&["solve", "--class", "exotic", "--m", "2", "--K", "4", "--L", "9", "--stop-tol", "1e-5"]);
    assert_eq!(without_timing(&stdout(&overridden)), without_timing(&stdout(&direct)));
}

#[test]
fn json_summary_mirrors_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("history.csv");
    let o = run(&["solve", "--L", "8", "--K", "8", "--json", "--output", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["converged"], true);
    let iterations = v["iterations"].as_u64().unwrap() as usize;
    assert_eq!(v["history"].as_array().unwrap().len(), iterations);
    assert_eq!(v["solution_rank_profile"].as_array().unwrap().len(), 9);
    assert!(v["contraction"]["q"].as_f64().unwrap() < 1.0);
    assert_eq!(rows(&std::fs::read_to_string(&csv).unwrap()).len(), iterations);
}

#[test]
fn certify_rows_are_ordered_bounds() {
    let o = run(&["certify", "--class", "sine", "--K", "8", "--L", "9", "--stop-tol", "1e-7"]);
    assert_eq!(o.status.code(), Some(0));
    let r = rows(&stdout(&o));
    assert!(r.len() >= 2);
    for row in &r {
        let (lower, upper, q) = (num(&row[3]), num(&row[4]), num(&row[5]));
        assert!(0.0 <= lower && lower <= upper, "{row:?}");
        assert!(q < 1.0);
    }
    // the bounds tighten as the iteration converges
    assert!(num(&r.last().unwrap()[4]) < num(&r[0][4]));
}

#[test]
fn contraction_prints_one_row() {
    let o = run(&["contraction", "--class", "sine", "--C", "2", "--L", "8"]);
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].len(), 4);
    let (rho, q) = (num(&r[0][0]), num(&r[0][1]));
    assert!(rho > 0.0 && q > 0.0 && q < 1.0);
}

#[test]
fn compare_hom_rows_per_k() {
    let o = run(&["compare-hom", "--class", "sine", "--L", "11", "--ks", "8,32", "--delta", "1e-9"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 2);
    assert_eq!(num(&r[0][0]), 8.0);
    assert!(num(&r[1][1]) < num(&r[0][1]), "{r:?}");
    let o = run(&["compare-hom", "--class", "exotic", "--L", "8"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ranks_round_trip_through_the_container() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.qtt");
    let p = path.to_str().unwrap();
    let o = run(&["ranks", "--class", "modulated", "--L", "10", "--save", p]);
    assert_eq!(o.status.code(), Some(0));
    let live = rows(&stdout(&o));
    assert_eq!(live.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["coefficient", "stiffness", "load"]);
    let saved = rows(&stdout(&run(&["ranks", "--input", p])));
    assert_eq!(saved[0][1..], live[0][1..]);

    std::fs::write(&path, b"nonsense").unwrap();
    assert_eq!(run(&["ranks", "--input", p]).status.code(), Some(1));
}

#[test]
fn benchmark_rows_per_class_and_level() {
    let o = run(&["benchmark", "--levels", "6..7", "--classes", "sine,exotic", "--repeats", "1", "--K", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let r = rows(&stdout(&o));
    let keys: Vec<(&str, &str)> = r.iter().map(|r| (r[0].as_str(), r[1].as_str())).collect();
    assert_eq!(keys, [("sine", "6"), ("sine", "7"), ("exotic", "6"), ("exotic", "7")]);
}

fn write_lines(path: &Path, values: impl Iterator<Item = f64>) {
    let text: String = values.map(|v| format!("{v}\n")).collect();
    std::fs::write(path, text).unwrap();
}

#[test]
fn custom_coefficient_and_load_files() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("a.txt");
    let load = dir.path().join("f.txt");
    write_lines(&samples, (0..256).map(|i| 2.0 + (i as f64 * 0.3).sin()));
    write_lines(&load, (1..=256).map(|i| i as f64 / 257.0));
    let load_arg = format!("file:{}", load.display());
    let o = run(&["solve", "--class", "custom", "--samples-file", samples.to_str().unwrap(), "--L", "8", "--load", &load_arg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // the sample count must match the level
    let o = run(&["solve", "--class", "custom", "--samples-file", samples.to_str().unwrap(), "--L", "9"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn piecewise_steps_file() {
    let dir = tempfile::tempdir().unwrap();
    let steps = dir.path().join("steps.txt");
    std::fs::write(&steps, "0 1.0\n0.5 4.0\n").unwrap();
    let o = run(&["solve", "--class", "piecewise", "--steps-file", steps.to_str().unwrap(), "--L", "8", "--preconditioner", "envelope"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}
