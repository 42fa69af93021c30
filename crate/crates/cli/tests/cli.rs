use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hpgee2::{ModeKind, PenaltyKind};
use hpgee2_cli::{parse_config_file, CommandKind, Flags, ModeArg, RunConfig};

fn hpgee2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpgee2")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hpgee2(args);
    assert!(
        out.status.success(),
        "hpgee2 {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates a dataset just large enough to identify the default design.
fn simulated(dir: &Path) -> (PathBuf, PathBuf) {
    let base = dir.join("sim");
    ok(&["simulate", "--clusters", "300", "--seed", "5", "--out", s(&base)]);
    (dir.join("sim.units.csv"), dir.join("sim.pairs.csv"))
}

#[test]
fn config_file_keys_and_errors() {
    let text = "# comment\n\nmode = joint\ncluster_size = 4\nseed=12\n";
    let map = parse_config_file(text, "run.cfg").unwrap();
    assert_eq!(map["mode"], "joint");
    assert_eq!(map["cluster-size"], "4");
    assert_eq!(map["seed"], "12");

    let err = parse_config_file("mode = joint\nlambada = 1\n", "run.cfg")
        .unwrap_err()
        .to_string();
    assert!(err.contains("run.cfg:2") && err.contains("lambada"), "{err}");
    let err = parse_config_file("mode joint\n", "run.cfg").unwrap_err().to_string();
    assert!(err.contains("run.cfg:1"), "{err}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(&cfg_path, "mode = assoc\nseed = 3\nreplicates = 7\npenalty = lasso\n").unwrap();
    let flags = Flags {
        config: Some(cfg_path),
        mode: Some(ModeArg::Joint),
        seed: Some(9),
        ..Flags::default()
    };
    let cfg = RunConfig::resolve(CommandKind::Replicate, &flags).unwrap();
    assert_eq!(cfg.mode, ModeKind::Joint);
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.replicates, 7);
    assert_eq!(cfg.penalty, Some(PenaltyKind::Lasso));

    let defaults = RunConfig::resolve(CommandKind::Replicate, &Flags::default()).unwrap();
    assert_eq!(defaults.penalty, None);
    assert_eq!(defaults.mode, ModeKind::MeanOnly);
}

#[test]
fn simulate_then_fit_reports_every_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let (units, pairs) = simulated(dir.path());
    let head = fs::read_to_string(&units).unwrap();
    assert!(head.starts_with("# hpgee2"));
    assert!(head.contains("# seed=5"));

    let report = ok(&[
        "fit",
        "--units",
        s(&units),
        "--pairs",
        s(&pairs),
        "--penalty",
        "none",
        "--mode",
        "joint",
    ]);
    assert!(report.contains("# clusters=300"), "{report}");
    assert!(report.contains("(Intercept)"), "{report}");
    for name in ["x1", "x5", "z5", "w1", "v5"] {
        assert!(report.contains(name), "{name} missing from\n{report}");
    }
}

/// The fit section follows the `# clusters=` line of `fit` output.
fn fit_section(report: &str) -> &str {
    let at = report.find("# clusters=").unwrap();
    let rest = &report[at..];
    &rest[rest.find('\n').unwrap() + 1..]
}

#[test]
fn tune_on_one_point_matches_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (units, pairs) = simulated(dir.path());
    let common = ["--units", s(&units), "--pairs", s(&pairs), "--penalty", "scad"];
    let fit = ok(&[&["fit"], &common[..], &["--lambda", "0.05"]].concat());
    let tune = ok(&[&["tune"], &common[..], &["--grid", "0.05:0.05:1"]].concat());
    assert!(tune.contains("# chosen_lambda=0.05"), "{tune}");
    assert!(tune.ends_with(fit_section(&fit)), "tune:\n{tune}\nfit:\n{fit}");
}

#[test]
fn failures_exit_nonzero_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let (units, pairs) = simulated(dir.path());
    let out = dir.path().join("report.txt");

    let missing_lambda = hpgee2(&["fit", "--units", s(&units), "--pairs", s(&pairs), "--out", s(&out)]);
    assert!(!missing_lambda.status.success());
    assert!(String::from_utf8_lossy(&missing_lambda.stderr).contains("--lambda"));

    let absent = dir.path().join("absent.csv");
    let no_file = hpgee2(&[
        "fit",
        "--units",
        s(&absent),
        "--pairs",
        s(&pairs),
        "--lambda",
        "0.1",
        "--out",
        s(&out),
    ]);
    assert!(!no_file.status.success());

    let bad_grid = hpgee2(&[
        "tune",
        "--units",
        s(&units),
        "--pairs",
        s(&pairs),
        "--grid",
        "1:0.1:5",
        "--out",
        s(&out),
    ]);
    assert!(!bad_grid.status.success());

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "colour = red\n").unwrap();
    let bad_cfg = hpgee2(&["replicate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(!bad_cfg.status.success());
    assert!(String::from_utf8_lossy(&bad_cfg.stderr).contains("colour"));

    assert!(!out.exists());
}
