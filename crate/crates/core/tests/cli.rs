use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
[scenario]
n = 6

[train]
batch_size = 4
total_updates = 6
checkpoint_every = 2
fd_probes = 2
validation_size = 4
layers = 2
learning_rate = 1e-3

[train.curriculum]
warmup = 0.3
ramp = 0.4
"#;

fn pnpnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnpnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to launch pnpnet")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = pnpnet(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

fn setup() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_path_buf();
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    (tmp, dir)
}

#[test]
fn generate_is_reproducible() {
    let (_tmp, dir) = setup();
    for out in ["a.jsonl", "b.jsonl"] {
        ok(&dir, &["generate", "--n", "9", "--trials", "40", "--outliers", "on", "--seed", "7", "--out", out]);
    }
    assert_eq!(read(&dir, "a.jsonl"), read(&dir, "b.jsonl"));
    let text = String::from_utf8(read(&dir, "a.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 41);
    ok(&dir, &["generate", "--n", "9", "--trials", "40", "--seed", "8", "--out", "c.jsonl"]);
    assert_ne!(read(&dir, "a.jsonl"), read(&dir, "c.jsonl"));
}

#[test]
fn zero_noise_records_hold_exact_projections() {
    let (_tmp, dir) = setup();
    ok(&dir, &["generate", "--trials", "20", "--outliers", "off", "--sigma2d", "0", "--sigma3d", "0", "--out", "d.jsonl"]);
    let instances = pnpnet::io::load_dataset(&dir.join("d.jsonl")).unwrap();
    for inst in instances {
        let pose = inst.truth.unwrap();
        for c in &inst.corrs {
            let b = pnpnet::geometry::project(&pose, &inst.intrinsics, &c.a).unwrap();
            assert!((b - c.b).norm() < 1e-9);
        }
    }
}

#[test]
fn training_is_reproducible_and_resumable() {
    let (_tmp, dir) = setup();
    let full = ["--config", "tiny.toml", "train", "--out", "full.bin", "--log", "full.jsonl"];
    ok(&dir, &full);
    ok(&dir, &["--config", "tiny.toml", "train", "--out", "again.bin", "--log", "again.jsonl"]);
    assert_eq!(read(&dir, "full.bin"), read(&dir, "again.bin"));
    assert_eq!(read(&dir, "full.jsonl"), read(&dir, "again.jsonl"));

    ok(&dir, &["--config", "tiny.toml", "train", "--stop-at", "4", "--out", "half.bin", "--log", "half.jsonl"]);
    ok(
        &dir,
        &["--config", "tiny.toml", "train", "--resume", "half.bin", "--out", "resumed.bin", "--log", "half.jsonl"],
    );
    assert_eq!(read(&dir, "full.bin"), read(&dir, "resumed.bin"));
    assert_eq!(read(&dir, "full.jsonl"), read(&dir, "half.jsonl"));

    let log = String::from_utf8(read(&dir, "full.jsonl")).unwrap();
    let updates: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["update"].as_u64().unwrap())
        .collect();
    assert_eq!(updates, vec![0, 2, 4, 6]);
    assert!(!log.contains("wall"));
}

#[test]
fn solve_and_eval_are_reproducible() {
    let (_tmp, dir) = setup();
    ok(&dir, &["--config", "tiny.toml", "train", "--out", "w.bin"]);
    ok(&dir, &["generate", "--n", "6", "--trials", "15", "--seed", "3", "--out", "d.jsonl"]);
    for method in ["net", "pnp-net", "epnp", "epnp-lm", "ransac"] {
        let args = ["solve", "--method", method, "--weights", "w.bin", "--input", "d.jsonl"];
        let a = ok(&dir, &args).stdout;
        let b = ok(&dir, &args).stdout;
        assert_eq!(a, b, "{method}");
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 16, "{method}");
    }
    let eval = [
        "eval", "--n", "6", "--methods", "net,pnp-net,epnp-lm,ransac", "--weights", "w.bin", "--trials", "10",
        "--sweep", "0,1", "--out", "r.csv", "--records", "r.jsonl",
    ];
    ok(&dir, &eval);
    let (csv, records) = (read(&dir, "r.csv"), read(&dir, "r.jsonl"));
    ok(&dir, &eval);
    assert_eq!(csv, read(&dir, "r.csv"));
    assert_eq!(records, read(&dir, "r.jsonl"));
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.starts_with(
        "outliers,method,trials,rotation_success,translation_success,joint_success,failures,ops_total\n"
    ));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    assert_eq!(String::from_utf8(records).unwrap().lines().count(), 2 * 10 * 4);

    let on_file = ["eval", "--methods", "epnp,oracle", "--input", "d.jsonl"];
    assert_eq!(ok(&dir, &on_file).stdout, ok(&dir, &on_file).stdout);
}

#[test]
fn truth_free_records_leave_error_columns_empty() {
    let (_tmp, dir) = setup();
    ok(&dir, &["generate", "--trials", "3", "--outliers", "off", "--out", "d.jsonl"]);
    let mut instances = pnpnet::io::load_dataset(&dir.join("d.jsonl")).unwrap();
    for inst in &mut instances {
        inst.truth = None;
        inst.outlier_mask = None;
    }
    pnpnet::io::save_dataset(&dir.join("blind.jsonl"), &instances).unwrap();
    let out = String::from_utf8(ok(&dir, &["solve", "--method", "epnp", "--input", "blind.jsonl"]).stdout).unwrap();
    for line in out.lines().skip(1) {
        assert!(line.contains(",ok,") && line.ends_with(",,,"), "{line}");
    }
}

#[test]
fn bench_ops_and_import_are_reproducible() {
    let (_tmp, dir) = setup();
    let bench = ["bench-ops", "--n-range", "6..20"];
    let a = ok(&dir, &bench).stdout;
    assert_eq!(a, ok(&dir, &bench).stdout);
    let text = String::from_utf8(a).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("6,net,fixed,"));

    let mut table = String::from("image_id,point_id,x,y,z,u,v,f,tx,ty,tz,wx,wy,wz\n");
    for img in 0..3 {
        for p in 0..12 {
            let (x, y, z) = ((p % 4) as f64, (p / 4) as f64, ((p * 5) % 7) as f64);
            let (px, py, pz) = (x + 0.1 * img as f64, y, z + 20.0);
            table += &format!(
                "im{img},{p},{x},{y},{z},{},{},900,{},0,20,0,0,0\n",
                900.0 * px / pz,
                900.0 * py / pz,
                0.1 * img as f64
            );
        }
    }
    fs::write(dir.join("table.csv"), table).unwrap();
    for out in ["i1.jsonl", "i2.jsonl"] {
        ok(&dir, &["import", "--table", "table.csv", "--trials", "25", "--outliers", "--seed", "4", "--out", out]);
    }
    assert_eq!(read(&dir, "i1.jsonl"), read(&dir, "i2.jsonl"));
    let instances = pnpnet::io::load_dataset(&dir.join("i1.jsonl")).unwrap();
    assert_eq!(instances.len(), 25);
    assert!(instances.iter().all(|i| i.n() == 9 && i.outlier_count() == 2));
}

#[test]
fn exit_codes_follow_error_classes() {
    let (_tmp, dir) = setup();
    let code = |args: &[&str]| pnpnet(&dir, args).status.code().unwrap();
    assert_eq!(code(&["eval", "--methods", ""]), 1);
    assert_eq!(code(&["eval", "--methods", "p3p"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--config", "missing.toml", "train", "--out", "x.bin"]), 2);
    fs::write(dir.join("bad.toml"), "[scenario]\nsize = 3\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "generate", "--out", "x.jsonl"]), 1);
    assert_eq!(code(&["solve", "--method", "epnp", "--input", "missing.jsonl"]), 2);
    assert_eq!(code(&["solve", "--method", "pnp-net", "--input", "missing.jsonl"]), 1);
    fs::write(dir.join("junk.jsonl"), "not json\n").unwrap();
    assert_eq!(code(&["solve", "--method", "epnp", "--input", "junk.jsonl"]), 1);
    assert_eq!(code(&["--help"]), 0);
}
