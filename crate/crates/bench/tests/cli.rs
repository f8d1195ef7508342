//! The `treechain` binary end to end: exit codes, outputs, round trips.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const NETWORK: &str = r#"
scenario = "network"
seed = 5

[sim]
nodes = 12
validators = 4
epochs = 1

[sim.workload]
rate = 0.5
"#;

const RETRIEVAL: &str = r#"
scenario = "retrieval"
seed = 3

[retrieval]
transactions = 4000
queries = 500
j = 12
"#;

fn treechain(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_treechain"));
    for a in args {
        cmd.arg(a);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn bad_configs_exit_2_with_file_and_line() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write(tmp.path(), "bad.toml", "seed = 1\n\n[sim]\nnodez = 3\n");
    let o = treechain(&[&"run", &cfg, &"--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.toml:4: "), "{}", stderr(&o));

    let o = treechain(&[&"run", &tmp.path().join("missing.toml"), &"--out", &out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let cfg = write(tmp.path(), "odd.toml", "scenario = \"overhead\"\n");
    let o = treechain(&[&"export", &cfg, &"--out", &out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn a_run_writes_identical_outputs_for_the_same_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "net.toml", NETWORK);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = treechain(&[&"run", &cfg, &"--out", out]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["metrics.csv", "trace.txt", "manifest.toml"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let csv = String::from_utf8(read(a.join("metrics.csv"))).unwrap();
    assert!(csv.lines().count() >= 2, "{csv}");
    let manifest = String::from_utf8(read(a.join("manifest.toml"))).unwrap();
    assert!(manifest.contains("seed = 5"), "{manifest}");

    let other = write(tmp.path(), "net6.toml", &NETWORK.replace("seed = 5", "seed = 6"));
    let c = tmp.path().join("c");
    assert_eq!(treechain(&[&"run", &other, &"--out", &c]).status.code(), Some(0));
    assert_ne!(read(a.join("trace.txt")), read(c.join("trace.txt")));
}

#[test]
fn export_import_round_trips_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    for (name, text) in [("net.toml", NETWORK), ("ret.toml", RETRIEVAL)] {
        let cfg = write(tmp.path(), name, text);
        let (ex, im) = (tmp.path().join(format!("{name}.ex")), tmp.path().join(format!("{name}.im")));
        let o = treechain(&[&"export", &cfg, &"--out", &ex]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let forest = ex.join("forest.tcf");
        let o = treechain(&[&"import", &forest, &"--out", &im]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert_eq!(read(&forest), read(im.join("forest.tcf")), "{name}");
        let o = treechain(&[&"verify", &forest, &"--out", &im]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
}

#[test]
fn import_reproduces_the_exported_scan_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "ret.toml", RETRIEVAL);
    let (ex, im) = (tmp.path().join("ex"), tmp.path().join("im"));
    assert_eq!(treechain(&[&"export", &cfg, &"--out", &ex]).status.code(), Some(0));
    let o = treechain(&[&"import", &ex.join("forest.tcf"), &"--out", &im, &"--queries", &"500"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read(ex.join("metrics.csv")), read(im.join("metrics.csv")));
}

#[test]
fn damaged_forest_files_exit_2_and_name_the_offset() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "ret.toml", RETRIEVAL);
    let ex = tmp.path().join("ex");
    assert_eq!(treechain(&[&"export", &cfg, &"--out", &ex]).status.code(), Some(0));
    let good = read(ex.join("forest.tcf"));
    let out = tmp.path().join("o");

    let cut = good.len() / 2;
    let truncated = tmp.path().join("cut.tcf");
    std::fs::write(&truncated, &good[..cut]).unwrap();
    for verb in ["import", "verify"] {
        let o = treechain(&[&verb, &truncated, &"--out", &out]);
        assert_eq!(o.status.code(), Some(2), "{verb}: {}", stderr(&o));
        assert!(stderr(&o).contains(&format!("byte {cut}")), "{}", stderr(&o));
    }

    let text = String::from_utf8(good).unwrap();
    let old = tmp.path().join("old.tcf");
    std::fs::write(&old, text.replacen("forest v1", "forest v0", 1)).unwrap();
    let o = treechain(&[&"import", &old, &"--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("v0"), "{}", stderr(&o));
}
