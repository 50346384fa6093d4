use std::path::Path;
use std::process::{Command, Output};

fn hsurf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsurf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hsurf(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &str = "version = 1
shapes = sphere,box
mode = auto-decoder
tessellation = 16
surface_samples = 300
occupancy_pool = 300
input_points = 50
charts = 2
atlas_width = 8
atlas_depth = 2
occ_width = 8
occ_depth = 2
latent_dim = 4
samples_per_chart = 10
occupancy_samples = 50
gt_points = 50
render_resolution = 8
render_sigma = 0.125
views_per_step = 1
steps = 3
";

#[test]
fn train_then_inspect_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.txt");
    std::fs::write(&cfg, TINY).unwrap();
    let run = d.join("run");
    let p = |x: &Path| x.to_str().unwrap().to_string();

    let stdout = ok(&["train", "--config", &p(&cfg), "--variant", "no-norm", "--set", "seed=4", "--out", &p(&run)]);
    assert!(stdout.contains("final loss"));
    let written = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(written.contains("seed = 4") && written.contains("use_normal = false"), "{written}");
    assert_eq!(std::fs::read_to_string(run.join("losses.csv")).unwrap().lines().count(), 4);

    let csv = ok(&["evaluate", "--run", &p(&run), "--grid", "4", "--mc", "8", "--samples", "200"]);
    assert!(csv.starts_with("shape,branch,chamfer_l1"));
    assert_eq!(csv.lines().count(), 1 + 4 + 2);

    let obj = d.join("m.obj");
    ok(&["extract", "--run", &p(&run), "--shape", "1", "--resolution", "4", "--out", &p(&obj)]);
    let text = std::fs::read_to_string(&obj).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 2 * 16);

    let bench = d.join("bench.csv");
    ok(&["bench-extract", "--run", &p(&run), "--grid", "4", "--repetitions", "5", "--out", &p(&bench)]);
    assert_eq!(std::fs::read_to_string(&bench).unwrap().lines().count(), 3);

    let renders = d.join("renders");
    ok(&["render", "--run", &p(&run), "--shape", "0", "--grid", "4", "--mc", "8", "--out", &p(&renders)]);
    assert_eq!(std::fs::read_dir(renders.join("000-sphere")).unwrap().count(), 76);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("missing");
    let out = hsurf(&["evaluate", "--run", run.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading run"));

    let out = hsurf(&["train", "--set", "stepz=3", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let out = hsurf(&["bench-extract", "--run", run.to_str().unwrap(), "--repetitions", "2"]);
    assert!(!out.status.success());
}

#[test]
fn gradcheck_passes() {
    let stdout = ok(&["gradcheck"]);
    assert!(stdout.contains("gradient checks passed"));
    assert!(!stdout.contains("FAIL"));
}
