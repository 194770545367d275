use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use densopt::arch::{validate_config, DenseNetConfig};
use densopt::report::{parse_entropy_csv, RunConfig};
use tempfile::TempDir;

const TOY: &str = include_str!("../../../configs/toy.json");
const STANDARD: &str = include_str!("../../../configs/standard.json");

fn densopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densopt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn search_writes_all_outputs() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "toy.json", TOY);
    let out = dir.path().join("run");
    let run = densopt(&["search", "--config", s(&config), "--out", s(&out), "--log-stride", "5"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let text = stdout(&run);
    for key in ["final objective:", "params:", "flops:", "evaluations:"] {
        assert!(text.contains(key), "missing `{key}` in {text}");
    }

    let best = fs::read_to_string(out.join("best_architecture.json")).unwrap();
    let parsed = DenseNetConfig::from_json(&best).unwrap();
    let run_config = RunConfig::from_json(TOY).unwrap();
    assert!(validate_config(&parsed, &run_config.space).is_empty());
    assert_eq!(parsed.to_json(), best);

    let trajectory = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(trajectory.starts_with("iteration,best_objective,population_size,prunes_applied\n"));
    assert_eq!(trajectory.lines().count(), 1 + 50 / 5);

    let entropy = parse_entropy_csv(&fs::read_to_string(out.join("entropy_report.csv")).unwrap()).unwrap();
    assert_eq!(entropy.len(), 2);
    let fits = fs::read_to_string(out.join("fit_report.csv")).unwrap();
    assert!(fits.lines().nth(1).unwrap().starts_with("power,"));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "standard.json", STANDARD);
    let mut outputs = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out = dir.path().join(name);
        let run = densopt(&[
            "search", "--config", s(&config), "--out", s(&out), "--seed", "11", "--workers", workers,
        ]);
        assert_eq!(code(&run), 0, "{}", stderr(&run));
        let files: Vec<Vec<u8>> = ["best_architecture.json", "trajectory.csv", "entropy_report.csv", "fit_report.csv"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn search_refuses_to_overwrite() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "toy.json", TOY);
    let out = dir.path().join("run");
    assert_eq!(code(&densopt(&["search", "--config", s(&config), "--out", s(&out)])), 0);
    let again = densopt(&["search", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(code(&again), 5);
    assert!(stderr(&again).contains("--force"));
    assert_eq!(code(&densopt(&["search", "--config", s(&config), "--out", s(&out), "--force"])), 0);
}

#[test]
fn unknown_config_key_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let text = TOY.replacen("\"space\": {", "\"space\": {\n    \"kernel_sizes\": [3],", 1);
    let config = write(dir.path(), "bad.json", &text);
    let run = densopt(&["search", "--config", s(&config), "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&run), 2);
    let err = stderr(&run);
    assert!(err.contains("kernel_sizes") && err.contains("line 3"), "{err}");
}

#[test]
fn malformed_json_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "bad.json", "{\"space\": ");
    let run = densopt(&["search", "--config", s(&config), "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&run), 2);
    let missing = densopt(&["search", "--config", s(&dir.path().join("nope.json")), "--out", "x"]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn infeasible_initial_exits_3() {
    let dir = TempDir::new().unwrap();
    let tight = TOY.replace("\"params_budget\": 1000000", "\"params_budget\": 10");
    let config = write(dir.path(), "tight.json", &tight);
    let run = densopt(&["search", "--config", s(&config), "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&run), 3);
    assert!(stderr(&run).contains("params"), "{}", stderr(&run));
    assert!(!dir.path().join("run").exists());

    let outside = TOY.replacen("\"kernel_choices\": [3]", "\"kernel_choices\": [5]", 1);
    let config = write(dir.path(), "outside.json", &outside);
    let run = densopt(&["search", "--config", s(&config), "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&run), 3);
    assert!(stderr(&run).contains("kernel 3"), "{}", stderr(&run));
}

#[test]
fn score_reports_feasibility() {
    let dir = TempDir::new().unwrap();
    let arch = dir.path().join("d121.json");
    assert_eq!(code(&densopt(&["export", "--preset", "densenet121", "--out", s(&arch)])), 0);

    let run = densopt(&["score", "--arch", s(&arch)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let text = stdout(&run);
    assert!(text.contains("params: 7048548"), "{text}");
    assert!(text.contains("H_4:") && text.contains("feasible: yes"));

    let objective = write(
        dir.path(),
        "objective.json",
        r#"{"beta": 0.1, "rho_max": 20, "flops_budget": 1000, "params_budget": 40000000}"#,
    );
    let run = densopt(&["score", "--arch", s(&arch), "--objective", s(&objective)]);
    assert_eq!(code(&run), 1);
    assert!(stdout(&run).contains("feasible: no"));

    let broken = write(dir.path(), "broken.json", "{\"schema_version\": 1}");
    assert_eq!(code(&densopt(&["score", "--arch", s(&broken)])), 2);
}

#[test]
fn fit_report_then_compare_fits() {
    let dir = TempDir::new().unwrap();
    let arch = dir.path().join("d121.json");
    assert_eq!(code(&densopt(&["export", "--preset", "densenet121", "--out", s(&arch)])), 0);
    let out = dir.path().join("report");
    let run = densopt(&["fit-report", "--arch", s(&arch), "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let entropy = out.join("entropy_report.csv");
    assert_eq!(parse_entropy_csv(&fs::read_to_string(&entropy).unwrap()).unwrap().len(), 4);

    let compare = dir.path().join("compare");
    let run = densopt(&["compare-fits", "--entropy", s(&entropy), "--out", s(&compare)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let fits = fs::read_to_string(compare.join("fit_report.csv")).unwrap();
    assert_eq!(fits.lines().count(), 5);
    let text = stdout(&run);
    for family in ["power", "linear", "quadratic", "exponential"] {
        assert!(text.contains(family), "{text}");
    }
}

#[test]
fn compare_fits_input_errors() {
    let dir = TempDir::new().unwrap();
    let header = "stage_index,num_layers,in_width,growth_rate,kernel,entropy_nats,effectiveness\n";
    let short = write(dir.path(), "short.csv", &format!("{header}1,6,64,32,3,10.0,0.1\n2,6,64,32,3,20.0,0.1\n"));
    assert_eq!(code(&densopt(&["compare-fits", "--entropy", s(&short)])), 4);
    let garbage = write(dir.path(), "garbage.csv", "not,a,report\n1,2,3\n");
    assert_eq!(code(&densopt(&["compare-fits", "--entropy", s(&garbage)])), 2);
}

#[test]
fn export_round_trips_bytes() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("a.json");
    let second = dir.path().join("b.json");
    assert_eq!(code(&densopt(&["export", "--preset", "minimal", "--out", s(&first)])), 0);
    assert_eq!(code(&densopt(&["export", "--arch", s(&first), "--out", s(&second)])), 0);
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    assert_eq!(code(&densopt(&["export", "--preset", "minimal", "--out", s(&first)])), 5);
    assert_eq!(code(&densopt(&["export", "--preset", "resnet", "--out", s(&second), "--force"])), 2);
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(code(&densopt(&["search"])), 2);
    assert_eq!(code(&densopt(&["frobnicate"])), 2);
    assert_eq!(code(&densopt(&["--help"])), 0);
}
