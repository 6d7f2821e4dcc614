//! End-to-end subcommand tests over the compiled binary: exit-code
//! contract, golden-file determinism, and the train/eval round trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cs3d")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .env("CS3D_THREADS", "2")
        .args(args)
        .output()
        .expect("spawn cs3d")
}

fn assert_exit(out: &Output, code: i32, ctx: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{ctx}: expected exit {code}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_static_frames_csv(path: &Path) {
    // 4 identical 8x8 frames: no intensity change, so no events
    let mut text = String::from("8,8,4\n");
    for _ in 0..4 {
        let row: Vec<String> = (0..64).map(|_| "0.5".to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn write_moving_frames_csv(path: &Path) {
    // a bright column stepping right each frame
    let mut text = String::from("8,8,6\n");
    for k in 0..6 {
        let mut vals = Vec::with_capacity(64);
        for r in 0..8 {
            for c in 0..8 {
                let _ = r;
                vals.push(if c == k { "0.9" } else { "0.1" }.to_string());
            }
        }
        text.push_str(&vals.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn missing_required_argument_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["convert"]);
    assert_exit(&out, 2, "convert without --input");
}

#[test]
fn nonexistent_input_exits_2_with_usage_text() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["convert", "--input", "missing-dir", "--out", "o"]);
    assert_exit(&out, 2, "convert with bad input");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("usage"), "stderr: {stderr}");
}

#[test]
fn static_frames_convert_to_zero_events() {
    let dir = tempfile::tempdir().unwrap();
    write_static_frames_csv(&dir.path().join("frames.csv"));
    let out = run(
        dir.path(),
        &["convert", "--input", "frames.csv", "--out", "o"],
    );
    assert_exit(&out, 0, "convert static frames");
    let events = std::fs::read_to_string(dir.path().join("o/events.csv")).unwrap();
    assert_eq!(events.trim(), "t_us,x,y,p", "expected only the header");
    assert!(dir.path().join("o/run_manifest.toml").exists());
}

#[test]
fn convert_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_moving_frames_csv(&dir.path().join("frames.csv"));
    for sub in ["a", "b"] {
        let out = run(
            dir.path(),
            &["convert", "--input", "frames.csv", "--threshold", "0.3", "--out", sub],
        );
        assert_exit(&out, 0, "convert");
    }
    let a = std::fs::read(dir.path().join("a/events.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/events.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "golden event CSV must be byte-identical");
}

#[test]
fn synth_same_seed_produces_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "synth".to_string(),
            "--kind".into(),
            "moving-bar-4dir".into(),
            "--n-per-class".into(),
            "2".into(),
            "--geometry".into(),
            "16x16".into(),
            "--frames".into(),
            "8".into(),
            "--seed".into(),
            "3".into(),
            "--out".into(),
            out.to_string(),
        ]
    };
    for sub in ["a", "b"] {
        let argv = args(sub);
        let argv: Vec<&str> = argv.iter().map(|s| s.as_str()).collect();
        assert_exit(&run(dir.path(), &argv), 0, "synth");
    }
    for i in 0..8 {
        let name = format!("sample_{i:04}.bin");
        let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b, "{name} differs between same-seed runs");
    }
    assert_eq!(
        std::fs::read(dir.path().join("a/dataset_manifest.csv")).unwrap(),
        std::fs::read(dir.path().join("b/dataset_manifest.csv")).unwrap()
    );
}

fn synth_small_dataset(dir: &Path) -> PathBuf {
    let out = run(
        dir,
        &[
            "synth",
            "--kind",
            "moving-bar-4dir",
            "--n-per-class",
            "3",
            "--geometry",
            "32x32",
            "--frames",
            "10",
            "--seed",
            "5",
            "--out",
            "ds",
        ],
    );
    assert_exit(&out, 0, "synth dataset");
    dir.join("ds/dataset_manifest.csv")
}

#[test]
fn train_zero_epochs_writes_empty_history() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_small_dataset(dir.path());
    let out = run(
        dir.path(),
        &[
            "train",
            "--data",
            manifest.to_str().unwrap(),
            "--geometry",
            "32x32",
            "--epochs",
            "0",
            "--seed",
            "5",
            "--out",
            "run",
        ],
    );
    assert_exit(&out, 0, "train zero epochs");
    let history = std::fs::read_to_string(dir.path().join("run/history.csv")).unwrap();
    assert_eq!(history.trim(), "epoch,train_loss,eval_accuracy");
    assert!(dir.path().join("run/model.ckpt").exists());
}

#[test]
fn untrained_model_evaluates_near_chance_on_balanced_data() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_small_dataset(dir.path());
    // train 0 epochs to get an untrained checkpoint
    let out = run(
        dir.path(),
        &[
            "train",
            "--data",
            manifest.to_str().unwrap(),
            "--geometry",
            "32x32",
            "--epochs",
            "0",
            "--holdout",
            "0",
            "--seed",
            "5",
            "--out",
            "run0",
        ],
    );
    assert_exit(&out, 0, "train 0 epochs");
    let out = run(
        dir.path(),
        &[
            "eval",
            "--data",
            manifest.to_str().unwrap(),
            "--geometry",
            "32x32",
            "--checkpoint",
            "run0/model.ckpt",
            "--seed",
            "5",
            "--out",
            "eval0",
        ],
    );
    assert_exit(&out, 0, "eval untrained");
    let metrics = std::fs::read_to_string(dir.path().join("eval0/metrics.csv")).unwrap();
    let accuracy: f64 = metrics
        .lines()
        .find(|l| l.starts_with("accuracy,"))
        .and_then(|l| l.split(',').nth(1))
        .unwrap()
        .parse()
        .unwrap();
    // K=4 balanced data: chance is 0.25; allow generous binomial noise
    assert!(
        (0.0..=0.7).contains(&accuracy),
        "untrained accuracy {accuracy} is implausibly far from chance"
    );
}

#[test]
fn train_and_eval_round_trip_through_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_small_dataset(dir.path());
    let out = run(
        dir.path(),
        &[
            "train",
            "--data",
            manifest.to_str().unwrap(),
            "--geometry",
            "32x32",
            "--epochs",
            "1",
            "--batch-size",
            "4",
            "--seed",
            "5",
            "--out",
            "run1",
        ],
    );
    assert_exit(&out, 0, "train 1 epoch");
    let out = run(
        dir.path(),
        &[
            "eval",
            "--data",
            manifest.to_str().unwrap(),
            "--geometry",
            "32x32",
            "--checkpoint",
            "run1/model.ckpt",
            "--seed",
            "5",
            "--out",
            "eval1",
        ],
    );
    assert_exit(&out, 0, "eval checkpoint");
    assert!(dir.path().join("eval1/confusion.csv").exists());
}

#[test]
fn ablation_flags_are_accepted_by_train() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_small_dataset(dir.path());
    let out = run(
        dir.path(),
        &[
            "train",
            "--data",
            manifest.to_str().unwrap(),
            "--geometry",
            "32x32",
            "--epochs",
            "0",
            "--no-ssn",
            "--no-factorized",
            "--no-temporal-attn",
            "--no-spatial-attn",
            "--seed",
            "5",
            "--out",
            "ablate",
        ],
    );
    assert_exit(&out, 0, "train with all ablation flags");
}

#[test]
fn profile_emits_report_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["profile", "--input-shape", "2x16x32x32", "--out", "p1"],
    );
    assert_exit(&out, 0, "profile");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FLOPs (G):"), "stdout: {stdout}");
    assert!(stdout.contains("params"));
    let report = std::fs::read_to_string(dir.path().join("p1/report.csv")).unwrap();
    assert!(report.starts_with("layer,kind,out_shape,params,flops"));

    let out = run(
        dir.path(),
        &[
            "profile",
            "--compare",
            "c3d,cs3d",
            "--input-shape",
            "2x16x32x32",
            "--out",
            "p2",
        ],
    );
    assert_exit(&out, 0, "profile compare");
    let csv = std::fs::read_to_string(dir.path().join("p2/comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header plus two rows: {csv}");
}

#[test]
fn profile_with_power_trace_reports_energy() {
    let dir = tempfile::tempdir().unwrap();
    let mut trace = String::from("t_s,watts\n");
    for i in 0..=10 {
        trace.push_str(&format!("{},18.2\n", i as f64 * 0.1));
    }
    std::fs::write(dir.path().join("trace.csv"), trace).unwrap();
    let out = run(
        dir.path(),
        &[
            "profile",
            "--input-shape",
            "2x16x32x32",
            "--trace",
            "trace.csv",
            "--out",
            "p3",
        ],
    );
    assert_exit(&out, 0, "profile with trace");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Energy"), "stdout: {stdout}");
    assert!(stdout.contains("18.2 x 10^3"), "stdout: {stdout}");
}

#[test]
fn model_config_file_drives_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cs3d_core::network::ModelConfig::cs3d((2, 16, 32, 32), 4, 9);
    std::fs::write(dir.path().join("model.toml"), cfg.to_toml().unwrap()).unwrap();
    let out = run(
        dir.path(),
        &[
            "profile",
            "--config",
            "model.toml",
            "--input-shape",
            "2x16x32x32",
            "--out",
            "p",
        ],
    );
    assert_exit(&out, 0, "profile with config file");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("factorized"), "stdout: {stdout}");
}

#[test]
fn convert_reads_png_frame_directories_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let frames_dir = dir.path().join("frames");
    std::fs::create_dir(&frames_dir).unwrap();
    for k in 0..5u32 {
        let img = image::GrayImage::from_fn(8, 8, |x, _y| {
            image::Luma([if x == k { 230u8 } else { 25u8 }])
        });
        img.save(frames_dir.join(format!("frame_{k:03}.png"))).unwrap();
    }
    for sub in ["pa", "pb"] {
        let out = run(
            dir.path(),
            &["convert", "--input", "frames", "--threshold", "0.3", "--out", sub],
        );
        assert_exit(&out, 0, "convert png dir");
    }
    let a = std::fs::read(dir.path().join("pa/events.csv")).unwrap();
    let b = std::fs::read(dir.path().join("pb/events.csv")).unwrap();
    assert!(a.len() > 20, "expected events from the moving column");
    assert_eq!(a, b);
}

#[test]
fn gradcheck_exits_zero_and_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gradcheck", "--out", "gc"]);
    assert_exit(&out, 0, "gradcheck");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"));
    assert!(!stdout.contains("FAIL\n"));
    assert!(dir.path().join("gc/gradcheck.csv").exists());
}
