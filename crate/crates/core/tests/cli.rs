use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_sph3d");

const TINY: &str = "\
run.seed = 3
network.task = classification
network.classes = 2
pyramid.level_sizes = 64, 16
pyramid.radii = 0.5, 1.0
pyramid.cap = 16
layer.mlp1 = MLP(3, 8)
layer.conv1 = SPH3D(8, 8, 2)
layer.pool1 = POOL_MAX
layer.conv2 = SPH3D(8, 16, 1)
layer.glob = GSPH3D(16, 16)
layer.out = FC(16, 2)
data.source = shapes
data.classes = sphere, cube
data.points = 64
data.train_count = 6
data.test_count = 3
train.epochs = 2
train.batch_size = 4
bench.sizes = 64, 96
bench.runs = 5
bench.warmup = 0
";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SPH3D_THREADS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["train"])), 2);
    assert_eq!(code(&run(&["train", "--config", "/no/such/file.cfg"])), 2);
    let bad = write(dir.path(), "bad.cfg", &format!("{TINY}train.momentum = 0.9\n"));
    let o = run(&["train", "--config", &bad]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.momentum"));
    let bad = write(dir.path(), "bad2.cfg", &TINY.replace("FC(16, 2)", "FC(16, 3)"));
    let o = run(&["train", "--config", &bad]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("layer.out"));
    let bad = write(dir.path(), "bad3.cfg", &TINY.replace("train.epochs = 2", "train.epochs = 0"));
    assert_eq!(code(&run(&["train", "--config", &bad])), 2);
    let cfg = write(dir.path(), "ok.cfg", TINY);
    assert_eq!(code(&run(&["train", "--config", &cfg, "--threads", "0"])), 2);
    assert_eq!(code(&run(&["bench", "--config", &cfg, "--runs", "2"])), 2);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["train", "--help"])), 0);
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    assert_eq!(code(&run(&["inspect-kernel", "--checkpoint", s(&missing), "--layer", "x"])), 1);
    let junk = write(dir.path(), "junk.ckpt", "not a checkpoint");
    assert_eq!(code(&run(&["inspect-kernel", "--checkpoint", &junk, "--layer", "x"])), 1);
    let missing_xyz = dir.path().join("none.xyz");
    assert_eq!(code(&run(&["build-pyramid", "--input", s(&missing_xyz)])), 1);
}

fn train_into(cfg: &str, out: &Path) -> Output {
    let o = run(&["train", "--config", cfg, "--out", s(out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn train_eval_inspect_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.cfg", TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    train_into(&cfg, &a);
    train_into(&cfg, &b);
    for f in ["model.ckpt", "metrics.csv", "train.log", "summary.txt"] {
        assert!(a.join(f).exists(), "{f}");
    }
    for f in ["model.ckpt", "metrics.csv", "train.log"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("epoch,loss,oa,macc,miou"));

    let c = dir.path().join("c");
    let o = run(&["train", "--config", &cfg, "--out", s(&c), "--seed", "99"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(c.join("model.ckpt")).unwrap());

    let ckpt = a.join("model.ckpt");
    let ev = dir.path().join("ev");
    let o = run(&["eval", "--config", &cfg, "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("mIoU") && stdout.contains("class"));
    let report = fs::read_to_string(ev.join("eval.txt")).unwrap();
    assert!(report.contains("miou = ") && report.contains("class.1.iou = "));

    let other = write(dir.path(), "other.cfg", &TINY.replace("SPH3D(8, 16, 1)", "SPH3D(8, 16, 2)"));
    assert_eq!(code(&run(&["eval", "--config", &other, "--checkpoint", s(&ckpt)])), 2);

    let pts: String = (0..80)
        .map(|i| {
            let t = i as f64 * 0.7;
            format!("{} {} {}\n", t.cos(), t.sin(), (i as f64 / 80.0) - 0.5)
        })
        .collect();
    let xyz = write(dir.path(), "cloud.xyz", &pts);
    let o = run(&["eval", "--checkpoint", s(&ckpt), "--input", &format!("{xyz}:1")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run(&["eval", "--checkpoint", s(&ckpt), "--input", &xyz])), 2);

    let k = dir.path().join("k");
    let o = run(&["inspect-kernel", "--checkpoint", s(&ckpt), "--layer", "conv1", "--out", s(&k)]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("bins 33"));
    assert_eq!(text.lines().filter(|l| l.starts_with("w ")).count(), 33);
    assert!(k.join("conv1_kernel.ply").exists());
    assert_eq!(code(&run(&["inspect-kernel", "--checkpoint", s(&ckpt), "--layer", "nope"])), 2);
    assert_eq!(code(&run(&["inspect-kernel", "--checkpoint", s(&ckpt), "--layer", "pool1"])), 2);

    let bench = dir.path().join("bench");
    let o = run(&["bench", "--config", &cfg, "--out", s(&bench)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(bench.join("bench.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(fs::read_to_string(bench.join("bench_layers.csv")).unwrap().contains("conv1"));
}

#[test]
fn build_pyramid_checks_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let pts: String = (0..100)
        .map(|i| {
            let t = i as f64 * 0.37;
            format!("{} {} {}\n", t.cos(), (1.3 * t).sin(), (i as f64 / 100.0) - 0.5)
        })
        .collect();
    let xyz = write(dir.path(), "c.xyz", &pts);
    let out = dir.path().join("p");
    let o = run(&[
        "build-pyramid", "--input", &xyz, "--levels", "100,25,6", "--radii", "0.3,0.6,1.2", "--kernel", "8x2x2",
        "--cap", "16", "--out", s(&out), "--ply",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dump = fs::read_to_string(out.join("pyramid.txt")).unwrap();
    assert!(dump.starts_with("pyramid levels 3"));
    for l in 0..3 {
        assert!(out.join(format!("level_{l}.ply")).exists());
    }
    assert_eq!(code(&run(&["build-pyramid", "--input", &xyz, "--levels", "50,10"])), 2);
    assert_eq!(code(&run(&["build-pyramid", "--input", &xyz, "--levels", "100,200"])), 2);
    assert_eq!(code(&run(&["build-pyramid", "--input", &xyz, "--kernel", "8x2"])), 2);
    assert_eq!(code(&run(&["build-pyramid", "--input", &xyz, "--kernel", "2x2x2"])), 2);
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let pts: String = (0..20).map(|i| format!("{} {} 0\n", i, i * i)).collect();
    let xyz = write(dir.path(), "c.xyz", &pts);
    let o = Command::new(BIN)
        .args(["build-pyramid", "--input", &xyz])
        .env("SPH3D_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    let o = Command::new(BIN)
        .args(["build-pyramid", "--input", &xyz])
        .env("SPH3D_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
