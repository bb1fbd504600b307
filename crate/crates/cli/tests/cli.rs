use std::process::Command;

fn cgf() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cgf"));
    c.env("RUST_LOG", "error");
    c
}

#[test]
fn gen_demos_then_skip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let data = dir.path().join("data");
    let args = ["gen-demos", "--out", out.to_str().unwrap(), "--data-dir", data.to_str().unwrap(), "--seed", "5"];
    let first = cgf().args(args).output().unwrap();
    assert!(first.status.success(), "{first:?}");
    assert!(String::from_utf8_lossy(&first.stdout).contains("gen-demos  ran"));
    let files = std::fs::read_dir(&data).unwrap().count();
    assert_eq!(files, 8 + 1, "8 training demos and the held-out directory");
    let second = cgf().args(args).output().unwrap();
    assert!(String::from_utf8_lossy(&second.stdout).contains("skipped"));
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"format": "cgf-pipeline-config", "version": 2}"#).unwrap();
    let status = cgf().args(["run", "--config", cfg.to_str().unwrap()]).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let bad_flag = cgf().args(["report", "--metric-frames", "2", "--out", dir.path().to_str().unwrap()]).status().unwrap();
    assert_eq!(bad_flag.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(out.join("checkpoint")).unwrap();
    std::fs::create_dir_all(out.join("retargeted/train")).unwrap();
    std::fs::write(out.join("checkpoint/final.ckpt"), b"not a checkpoint").unwrap();
    let o = cgf()
        .args(["sample", "--out", out.to_str().unwrap(), "--data-dir", dir.path().join("d").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{o:?}");
}

#[test]
fn dump_config_writes_effective_settings() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    let status = cgf()
        .args(["run", "--full-scale", "--seed", "9", "--rrt-plans", "7", "--dump-config", path.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"seed\": 9"));
    assert!(text.contains("\"plans\": 7"));
    assert!(text.contains("\"codes_per_object\": 5000"));
}
