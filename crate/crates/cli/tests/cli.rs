use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn specrf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specrf"))
        .current_dir(dir)
        .args(args)
        .env_remove("SPECRF_SEED")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL_GEN: &str = r#"{"n_train": 20, "n_test": 10}"#;

#[test]
fn malformed_config_exits_3() {
    let tmp = TempDir::new().unwrap();
    for (i, json) in [
        r#"{"seed": "#,
        r#"{"sed": 1}"#,
        r#"{"grids": {"m": []}}"#,
        r#"{"step_size": 2.0}"#,
    ]
    .iter()
    .enumerate()
    {
        let cfg = write_config(tmp.path(), &format!("bad{i}.json"), json);
        let out = specrf(tmp.path(), &["fit", "--config", cfg.to_str().unwrap()]);
        assert_eq!(
            code(&out),
            3,
            "{json}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn usage_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&specrf(tmp.path(), &["no-such-command"])), 3);
    assert_eq!(code(&specrf(tmp.path(), &["gen", "--jobs", "0"])), 3);
    assert_eq!(code(&specrf(tmp.path(), &["--help"])), 0);
}

#[test]
fn missing_files_exit_4() {
    let tmp = TempDir::new().unwrap();
    let out = specrf(tmp.path(), &["gen", "--config", "absent.json"]);
    assert_eq!(code(&out), 4);

    let cfg = write_config(
        tmp.path(),
        "csv.json",
        r#"{"problem": {"kind": "csv", "path": "absent.csv"}}"#,
    );
    let out = specrf(tmp.path(), &["gen", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
}

#[test]
fn unparsable_csv_exits_4() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("data.csv"), "1,2,3\n0,abc,4\n").unwrap();
    let cfg = write_config(
        tmp.path(),
        "csv.json",
        r#"{"problem": {"kind": "csv", "path": "data.csv", "feature_columns": [1, 2]}}"#,
    );
    let out = specrf(tmp.path(), &["gen", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn csv_problem_fits_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::new();
    for i in 0..60 {
        let x = i as f64 / 60.0;
        text.push_str(&format!("{},{x},{}\n", (x > 0.5) as u8, (3.0 * x).sin()));
    }
    std::fs::write(tmp.path().join("data.csv"), text).unwrap();
    let cfg = write_config(
        tmp.path(),
        "csv.json",
        r#"{"problem": {"kind": "csv", "path": "data.csv", "feature_columns": [1, 2]},
            "n_train": 40, "n_test": 20, "grids": {"m": [8], "lambda": [0.1]}}"#,
    );
    let out = specrf(
        tmp.path(),
        &["fit", "--config", cfg.to_str().unwrap(), "--out", "o"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("o/fit.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(manifest(&tmp.path().join("o"))["inputs"]["data"].is_string());
}

#[test]
fn broken_filter_exits_2_and_is_flagged() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "verify.json",
        r#"{"problem": {"kind": "synthetic", "d_max": 16},
            "verify": {"filters": [{"name": "tikhonov", "declared": {"e": 0.5}}],
                       "events": [{"id": "E7", "lambda": 0.1, "n": 50, "m": 50}], "trials": 50}}"#,
    );
    let out = specrf(
        tmp.path(),
        &["verify", "--config", cfg.to_str().unwrap(), "--out", "o"],
    );
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let filters = std::fs::read_to_string(tmp.path().join("o/filters.csv")).unwrap();
    let flags: Vec<_> = filters
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert!(flags.iter().all(|f| f.is_empty() || *f == "E"), "{filters}");
    assert!(flags.contains(&"E"));
}

#[test]
fn default_verify_exits_0() {
    let tmp = TempDir::new().unwrap();
    let out = specrf(tmp.path(), &["verify"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let filters =
        std::fs::read_to_string(tmp.path().join("specrf-out/verify/filters.csv")).unwrap();
    assert_eq!(filters.lines().count(), 1 + 3 * 100);
}

#[test]
fn seed_precedence_flag_env_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "gen.json",
        r#"{"seed": 1, "n_train": 20, "n_test": 10}"#,
    );
    let cfg = cfg.to_str().unwrap();
    let run = |out: &str, env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_specrf"));
        cmd.current_dir(tmp.path())
            .args(["gen", "--config", cfg, "--out", out]);
        cmd.env_remove("SPECRF_SEED");
        if let Some(e) = env {
            cmd.env("SPECRF_SEED", e);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.output().unwrap().status.success());
        let dir = tmp.path().join(out);
        (
            manifest(&dir)["seed"].as_u64().unwrap(),
            std::fs::read(dir.join("train.csv")).unwrap(),
        )
    };
    let (s_cfg, d_cfg) = run("a", None, None);
    let (s_env, d_env) = run("b", Some("7"), None);
    let (s_flag, d_flag) = run("c", Some("7"), Some("9"));
    let (_, d_seven) = run("d", None, Some("7"));
    assert_eq!((s_cfg, s_env, s_flag), (1, 7, 9));
    assert_ne!(d_cfg, d_env);
    assert_ne!(d_env, d_flag);
    assert_eq!(d_env, d_seven);

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_specrf"));
    cmd.current_dir(tmp.path())
        .args(["gen", "--config", cfg])
        .env("SPECRF_SEED", "seven");
    assert_eq!(cmd.output().unwrap().status.code(), Some(3));
}

fn git_blob_hash(path: &Path) -> Option<String> {
    let out = Command::new("git")
        .args(["hash-object", "--no-filters"])
        .arg(path)
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8(out.stdout).unwrap().trim().to_owned())
}

#[test]
fn manifest_hashes_match_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "gen.json", SMALL_GEN);
    assert_eq!(
        code(&specrf(
            tmp.path(),
            &["gen", "--config", cfg.to_str().unwrap(), "--out", "o"]
        )),
        0
    );
    let dir = tmp.path().join("o");
    let m = manifest(&dir);
    let outputs = m["outputs"].as_object().unwrap();
    assert_eq!(outputs.len(), 3);
    for (name, hash) in outputs {
        let hash = hash.as_str().unwrap();
        assert_eq!(hash.len(), 40);
        assert_eq!(hash, specrf::dataio::file_hash(&dir.join(name)).unwrap());
        if let Some(git) = git_blob_hash(&dir.join(name)) {
            assert_eq!(hash, git, "{name}");
        }
    }
}

#[test]
fn manifest_replays_as_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "gen.json", SMALL_GEN);
    let first = specrf(
        tmp.path(),
        &[
            "gen",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            "a",
        ],
    );
    assert_eq!(code(&first), 0);
    let replay = specrf(
        tmp.path(),
        &["gen", "--config", "a/manifest.json", "--out", "b"],
    );
    assert_eq!(
        code(&replay),
        0,
        "{}",
        String::from_utf8_lossy(&replay.stderr)
    );
    for f in ["train.csv", "test.csv", "spectrum.csv"] {
        assert_eq!(
            std::fs::read(tmp.path().join("a").join(f)).unwrap(),
            std::fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    // a manifest is tied to the subcommand that wrote it
    assert_eq!(
        code(&specrf(
            tmp.path(),
            &["fit", "--config", "a/manifest.json", "--out", "c"]
        )),
        3
    );
}

#[test]
fn singleton_heatmap_grid_gives_one_row() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "h.json",
        r#"{"n_train": 40, "n_test": 20, "repetitions": 2, "grids": {"m": [8], "t": [4]}}"#,
    );
    let out = specrf(
        tmp.path(),
        &[
            "sweep-heatmap",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "o",
            "--svg",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("o/heatmap.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "m,t,mean_error,std_error");
    assert!(lines[1].starts_with("8,4,"));
    assert!(tmp.path().join("o/heatmap.svg").exists());
}

#[test]
fn paper_scale_sets_presets() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(
        code(&specrf(tmp.path(), &["gen", "--paper-scale", "--out", "p"])),
        0
    );
    let m = manifest(&tmp.path().join("p"));
    assert_eq!(m["config"]["n_train"], 5000);
    assert_eq!(m["config"]["repetitions"], 50);
    let train = std::fs::read_to_string(tmp.path().join("p/train.csv")).unwrap();
    assert_eq!(train.lines().count(), 5001);
}

#[test]
fn unwritable_output_exits_4() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("file"), "x").unwrap();
    let cfg = write_config(tmp.path(), "gen.json", SMALL_GEN);
    let out = specrf(
        tmp.path(),
        &[
            "gen",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "file/sub",
        ],
    );
    assert_eq!(code(&out), 4);
}
