use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kvlad(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kvlad"))
        .args(args)
        .current_dir(dir)
        .env("KVLAD_LOG", "error")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = kvlad(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn spd_fixture(dir: &Path) {
    ok(
        dir,
        &[
            "gen",
            "--geometry",
            "spd",
            "--classes",
            "2",
            "--sets-per-class",
            "3",
            "--per-set",
            "20",
            "--d",
            "3",
            "--out",
            "spd",
        ],
    );
}

#[test]
fn fvlad_on_spd_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    spd_fixture(p);
    ok(
        p,
        &[
            "codebook",
            "--in",
            "spd.train.kvld",
            "--encoder",
            "le-vlad",
            "--m",
            "3",
            "--out",
            "cb.kvlc",
        ],
    );
    let out = kvlad(
        p,
        &[
            "encode",
            "--in",
            "spd.train.kvld",
            "--codebook",
            "cb.kvlc",
            "--encoder",
            "fvlad",
            "--out",
            "x.kvle",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("fvlad") && msg.contains("SPD"), "{msg}");
    assert!(!p.join("x.kvle").exists());
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(kvlad(p, &["--help"]).status.code(), Some(0));
    assert_eq!(kvlad(p, &["gen", "--nope"]).status.code(), Some(1));
    assert_eq!(
        kvlad(p, &["export", "--in", "missing.kvlg", "--csv", "o.csv"])
            .status
            .code(),
        Some(2)
    );
    fs::write(p.join("junk.kvlg"), b"KVLGxx").unwrap();
    assert_eq!(
        kvlad(p, &["export", "--in", "junk.kvlg", "--csv", "o.csv"])
            .status
            .code(),
        Some(2)
    );
    assert!(!p.join("o.csv").exists());
    assert_eq!(
        kvlad(p, &["bench", "--config", "absent.conf"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("gen.conf"),
        "geometry = grassmann\nclasses = 2\nsets_per_class = 2\nper-set = 5\nd = 6\np = 2\nseed = 3\nout = a\n",
    )
    .unwrap();
    let s = ok(p, &["gen", "--config", "gen.conf", "--out", "b"]);
    assert_eq!(s["geometry"], "G(2,6)");
    assert!(p.join("b.train.kvld").exists() && !p.join("a.train.kvld").exists());
}

#[test]
fn kernel_pipeline_classifies_from_grams() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    spd_fixture(p);
    ok(
        p,
        &[
            "codebook",
            "--in",
            "spd.train.kvld",
            "--method",
            "kernel-kmeans",
            "--kernel",
            "stein",
            "--sigma",
            "1",
            "--m",
            "4",
            "--out",
            "k.kvlc",
        ],
    );
    let g = ok(
        p,
        &[
            "gram",
            "--in",
            "spd.train.kvld",
            "--codebook",
            "k.kvlc",
            "--normalized",
            "--out",
            "g.kvlg",
        ],
    );
    assert_eq!(g["rows"], g["cols"]);
    ok(
        p,
        &[
            "gram",
            "--in",
            "spd.test.kvld",
            "--against",
            "spd.train.kvld",
            "--codebook",
            "k.kvlc",
            "--out",
            "x.kvlg",
        ],
    );
    ok(
        p,
        &[
            "classify",
            "--gram",
            "g.kvlg",
            "--labels",
            "spd.train.kvld",
            "--model-out",
            "m.kvlr",
        ],
    );
    let e = ok(
        p,
        &[
            "eval",
            "--model",
            "m.kvlr",
            "--gram",
            "x.kvlg",
            "--labels",
            "spd.test.kvld",
        ],
    );
    let acc = e["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let out = kvlad(
        p,
        &[
            "eval",
            "--model",
            "m.kvlr",
            "--gram",
            "g.kvlg",
            "--labels",
            "spd.train.kvld",
        ],
    );
    assert!(out.status.success());
    let wrong = kvlad(p, &["eval", "--model", "m.kvlr", "--codes", "g.kvlg"]);
    assert_eq!(wrong.status.code(), Some(1));

    ok(p, &["export", "--in", "g.kvlg", "--csv", "g.csv"]);
    let csv = fs::read_to_string(p.join("g.csv")).unwrap();
    assert_eq!(csv.lines().count(), g["rows"].as_u64().unwrap() as usize);
}
