use std::path::Path;
use std::process::Command;

fn wplab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wplab")).args(args).output().expect("run wplab")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SWEEP: &str = "n = 2\nalpha = 2\nr_list = 8,16\ntrials_per_r = 2\ntime_strata = 8\n";

#[test]
fn sweep_csv_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SWEEP);
    let mut outs = Vec::new();
    for t in ["1", "3"] {
        let out = dir.path().join(format!("t{t}"));
        let o = wplab(&["sweep", "--config", &cfg, "--seed", "11", "--threads", t, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(std::fs::read(out.join("sweep.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let text = String::from_utf8(outs.remove(0)).unwrap();
    assert!(text.starts_with("kind,r,trial,value,norm_u,norm_g,predicted_exponent,note\n"));
    let last = text.lines().last().unwrap();
    assert_eq!(last, format!("# wplab-version={} seed=11", env!("CARGO_PKG_VERSION")));
}

#[test]
fn json_format_and_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SWEEP);
    let o = wplab(&["sweep", "--config", &cfg, "--format", "json"]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["seed"], 0);
    assert_eq!(doc["rows"].as_array().unwrap().len(), 4 + 2 + 1);
    assert_eq!(doc["rows"][6]["kind"], "slope");
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "alpha = 2\nbogus = 1\n");
    let o = wplab(&["propagate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `bogus`"));
}

#[test]
fn propagate_writes_table_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "n = 2\nr = 16\ntimes = 4\n");
    let out = dir.path().join("o");
    let o = wplab(&["propagate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bin = std::fs::read(out.join("propagate.bin")).unwrap();
    assert_eq!(&bin[..6], b"WPLAB1");
    let csv = std::fs::read_to_string(out.join("propagate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 1);
}

#[test]
fn accept_exit_status() {
    let o = wplab(&["accept", "exponents"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("criterion  1 exponents"));
    let o = wplab(&["accept", "nonexistent"]);
    assert_eq!(o.status.code(), Some(2));
}
