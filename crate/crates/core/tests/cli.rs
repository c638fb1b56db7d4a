use std::path::Path;
use std::process::{Command, Output};

use egs_core::io::ply::encode_ply;

const SMALL_SPEC: &str = r#"
seed = 3
num_primitives = 4
camera_count = 8
width = 32
height = 32
supersample = 1
points_per_primitive = 40
tint = 0.2
"#;

fn egs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egs"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn egs")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "status {:?}, stderr: {}", o.status, String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn synth_small(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.toml");
    std::fs::write(&spec, SMALL_SPEC).unwrap();
    let data = dir.join("data");
    ok(egs(&["synth", "--spec", &s(&spec), "--out", &s(&data)]));
    data
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(egs(&["--help"]).status.code(), Some(0));
    for sub in ["synth", "train", "render", "evaluate", "prune", "info", "bench"] {
        let o = egs(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("--"), "{sub} help lists no flags");
    }
    let o = egs(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    assert_eq!(egs(&["info", "--model", "x.ply", "--bogus"]).status.code(), Some(1));
    assert_eq!(egs(&["train"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    assert_eq!(egs(&["info", "--model", &s(&missing.join("m.ply"))]).status.code(), Some(2));
    let o = egs(&["train", "--data", &s(&missing), "--out", &s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    let junk = tmp.path().join("junk.ply");
    std::fs::write(&junk, b"ply\nformat ascii 1.0\nend_header\n").unwrap();
    assert_eq!(egs(&["info", "--model", &s(&junk)]).status.code(), Some(2));
}

#[test]
fn info_on_empty_model() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("empty.ply");
    std::fs::write(&p, encode_ply(&[])).unwrap();
    let out = ok(egs(&["info", "--model", &s(&p)]));
    assert!(out.lines().any(|l| l == "count 0"), "{out}");
}

#[test]
fn outputs_are_never_overwritten_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_small(tmp.path());
    let spec = s(&tmp.path().join("spec.toml"));
    assert_eq!(egs(&["synth", "--spec", &spec, "--out", &s(&data)]).status.code(), Some(1));
    ok(egs(&["synth", "--spec", &spec, "--out", &s(&data), "--force"]));
}

#[test]
fn pipeline_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_small(tmp.path());
    let runs: Vec<_> = ["a", "b"].iter().map(|r| tmp.path().join(r)).collect();
    for out in &runs {
        let o = ok(egs(&["--threads", "1", "train", "--data", &s(&data), "--iters", "200", "--seed", "5", "--out", &s(out)]));
        assert!(o.starts_with("iter 200 "), "{o}");
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&runs[0].join("model.ply")), read(&runs[1].join("model.ply")));
    assert_eq!(read(&runs[0].join("config.toml")), read(&runs[1].join("config.toml")));
    let ckpts: Vec<_> = std::fs::read_dir(runs[0].join("checkpoints")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(ckpts.len() >= 4, "{ckpts:?}");
    for c in &ckpts {
        assert_eq!(read(&runs[0].join("checkpoints").join(c)), read(&runs[1].join("checkpoints").join(c)));
    }
    let metrics = std::fs::read_to_string(runs[0].join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("iter,count,loss,psnr_holdout,wall_ms,peak_rss_bytes"));

    let again = egs(&["train", "--data", &s(&data), "--iters", "200", "--out", &s(&runs[0])]);
    assert_eq!(again.status.code(), Some(1));

    let model = runs[0].join("model.ply");
    let info = ok(egs(&["info", "--model", &s(&model)]));
    assert!(info.contains("sh_order_0") && info.contains("file_bytes") && info.contains("scene_extent"), "{info}");

    let renders = tmp.path().join("renders");
    ok(egs(&["render", "--model", &s(&model), "--camera", &s(&data.join("images.txt")), "--out", &s(&renders)]));
    assert_eq!(std::fs::read_dir(&renders).unwrap().count(), 8);

    let csv = tmp.path().join("eval.csv");
    let eval = ok(egs(&["evaluate", "--model", &s(&model), "--data", &s(&data), "--csv", &s(&csv)]));
    assert!(eval.starts_with("views 1 psnr "), "{eval}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 2);

    let pruned = tmp.path().join("pruned.ply");
    let kept = ok(egs(&["prune", "--model", &s(&runs[0].join("checkpoints/ckpt_000200.egs")), "--data", &s(&data), "--k", "1", "--out", &s(&pruned)]));
    assert!(kept.starts_with("kept "), "{kept}");

    let bench = ok(egs(&["bench", "--model", &s(&pruned), "--data", &s(&data), "--repeats", "3"]));
    assert!(bench.starts_with("view,mean_ms,min_ms,blend_ops"), "{bench}");
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_small(tmp.path());
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "max_loss = 1e-9\n").unwrap();
    let o = egs(&["train", "--data", &s(&data), "--config", &s(&cfg), "--iters", "50", "--out", &s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
