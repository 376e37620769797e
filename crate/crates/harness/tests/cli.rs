use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"))
}

fn fwaccel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fwaccel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn summary_value(dir: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_owned))
        .unwrap_or_else(|| panic!("{key} missing"))
}

#[test]
fn track_writes_all_outputs_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = fwaccel(&[
        "track",
        "--config",
        path(&scenario("flight2")),
        "--out",
        path(&out),
        "--quiet",
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    for f in ["log.csv", "summary.txt", "plot.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let saturation: f64 = summary_value(&out, "thrust_saturation.first_time")
        .parse()
        .unwrap();
    assert!(saturation.is_finite() && saturation > 0.0);
    let header = std::fs::read_to_string(out.join("plot.csv")).unwrap();
    assert!(header.lines().next().unwrap().contains("ameas_by_ma10"));

    let replay = fwaccel(&["replay", path(&out)]);
    assert!(
        replay.status.success(),
        "{}",
        String::from_utf8_lossy(&replay.stderr)
    );
}

#[test]
fn calibrate_writes_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let res = fwaccel(&[
        "calibrate",
        "--config",
        path(&scenario("flight1")),
        "--out",
        path(dir.path()),
        "--quiet",
    ]);
    assert!(res.status.success());
    let model = std::fs::read_to_string(dir.path().join("model.toml")).unwrap();
    assert!(model.contains("schema_version = 1"));
    assert!(model.contains("provenance"));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let res = fwaccel(&[
            "intercept",
            "--config",
            path(&scenario("flight3_noisy")),
            "--seed",
            seed,
            "--out",
            path(&out),
            "--quiet",
        ]);
        assert!(res.status.success());
        std::fs::read(out.join("log.csv")).unwrap()
    };
    assert_eq!(run("a", "11"), run("b", "11"));
    assert_ne!(run("a", "11"), run("c", "12"));
}

#[test]
fn seed_batch_writes_one_directory_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let res = fwaccel(&[
        "calibrate",
        "--config",
        path(&scenario("flight1_noisy")),
        "--seeds",
        "3..6",
        "--out",
        path(dir.path()),
        "--quiet",
    ]);
    assert!(res.status.success());
    for seed in 3..6 {
        let sub = dir.path().join(format!("seed-{seed}"));
        assert_eq!(summary_value(&sub, "seed"), seed.to_string());
    }
}

#[test]
fn bad_config_reports_category_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "schema_version = 1\n[noise]\naccel = 0.2\n[scenario]\nkind = \"pn_intercept\"\ntarget = [600.0, 0.0, -130.0]\n").unwrap();
    let res = fwaccel(&["intercept", "--config", path(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("error: category=config"), "{err}");
    assert!(err.contains("seed"));
    assert!(err.contains("schema_version = 1"));
}

#[test]
fn wrong_subcommand_for_scenario_is_usage_error() {
    let res = fwaccel(&["track", "--config", path(&scenario("flight3"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("category=usage"));
}

#[test]
fn aborted_run_exits_nonzero_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("stall.toml");
    let text = std::fs::read_to_string(scenario("flight1")).unwrap().replace(
        "query_airspeed = 20.0",
        "query_airspeed = 20.0\nplan = { dwell = 12.0, transient_trim = 0.5, pitch_bias_deg = 25.0 }",
    );
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("run");
    let res = fwaccel(&[
        "calibrate",
        "--config",
        path(&cfg),
        "--out",
        path(&out),
        "--quiet",
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("category=envelope"));
    assert_eq!(summary_value(&out, "status"), "aborted");
    assert!(out.join("log.csv").is_file());
}

#[test]
fn replay_detects_tampered_summary() {
    let dir = tempfile::tempdir().unwrap();
    let res = fwaccel(&[
        "intercept",
        "--config",
        path(&scenario("flight3")),
        "--out",
        path(dir.path()),
        "--quiet",
    ]);
    assert!(res.status.success());
    let summary = dir.path().join("summary.txt");
    let text = std::fs::read_to_string(&summary).unwrap();
    let tampered: String = text
        .lines()
        .map(|l| {
            if l.starts_with("intercept.miss_distance") {
                "intercept.miss_distance = 9".to_owned()
            } else {
                l.to_owned()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&summary, tampered).unwrap();
    let replay = fwaccel(&["replay", path(dir.path())]);
    assert_eq!(replay.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&replay.stderr).contains("intercept.miss_distance"));
}

#[test]
fn tune_prints_airframe_and_sweeps() {
    let res = fwaccel(&["tune"]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    for needle in ["drag_coeff", "k_roll", "k_pitch", "N miss_m"] {
        assert!(text.contains(needle), "{needle}");
    }
}
