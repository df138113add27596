use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn textsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textsense")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let cfg = dir.join("config.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"modality": "rfid", "seeds": [0, 1], "training": {{"epochs": 3}},
                "dataset": {{"train": 12, "test": 6}}, "embedding_dim": 8{extra}}}"#
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn gen_run_report_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let data = dir.path().join("data");
    let out = textsense(&["gen", "--config", path(&cfg), "--out", path(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.json").exists());

    let cfg = small_config(dir.path(), &format!(r#", "dataset_dir": {:?}"#, path(&data)));
    let run = dir.path().join("run");
    let out = textsense(&[
        "run", "--config", path(&cfg), "--out", path(&run), "--seed", "4", "--seed", "5", "--strategy", "TDE",
        "--pooling", "mean",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("seed=4") && stdout.contains("seed=5"));

    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["strategy"], "TDE");
    assert_eq!(resolved["fusion"]["pooling"], "mean");
    assert_eq!(resolved["seeds"], serde_json::json!([4, 5]));

    let out = textsense(&["report", path(&run.join("report.csv"))]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), fs::read_to_string(run.join("report.txt")).unwrap());
}

#[test]
fn embed_then_run_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let emb = dir.path().join("emb");
    let out = textsense(&["embed", "--config", path(&cfg), "--out", path(&emb), "--strategy", "TLE"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cache = emb.join("embeddings_TLE.json");
    assert!(cache.exists());
    let cfg = small_config(
        dir.path(),
        &format!(r#", "embedding_source": {{"cache": {:?}}}"#, path(&emb.join("embeddings_{strategy}.json"))),
    );
    let out = textsense(&["run", "--config", path(&cfg), "--out", path(&dir.path().join("r")), "--strategy", "TLE"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = textsense(&["run", "--config", path(&cfg), "--out", path(&dir.path().join("r2")), "--strategy", "TCE"]);
    assert!(!out.status.success());
}

#[test]
fn failures_print_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &str); 3] = [
        (&["run", "--text-weight", "1.5"], "invalid_argument"),
        (&["run", "--config", "/nonexistent/config.json"], "io"),
        (&["report", "/nonexistent/report.csv"], "io"),
    ];
    for (args, kind) in cases {
        let out = textsense(args);
        assert!(!out.status.success(), "{args:?}");
        let stderr = String::from_utf8(out.stderr).unwrap();
        let line = stderr.lines().last().unwrap();
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["error"], kind, "{args:?}: {line}");
        assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"sedds": [1]}"#).unwrap();
    let out = textsense(&["run", "--config", path(&bad)]);
    let v: serde_json::Value = serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(v["error"], "json");
}
