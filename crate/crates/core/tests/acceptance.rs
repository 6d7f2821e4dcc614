//! Acceptance suite: one test per criterion, each asserting its stated
//! tolerance and printing a PASS line (run with `--nocapture` to see them).
//! Training-based runs are shared between the accuracy criterion and the
//! determinism criterion through lazily initialized state.

mod common;

use std::io::Write as _;
use std::time::Instant;

use common::{conv3d_oracle, random_tensor, rng, SpatialAttentionOracle, TemporalAttentionOracle};
use cs3d_core::attention::{AttentionConfig, SpatialAttentionParams, TemporalAttentionParams};
use cs3d_core::check::run_gradient_suite;
use cs3d_core::events::io::{
    parse_events_binary, parse_events_csv, write_events_binary, write_events_csv,
};
use cs3d_core::events::sim::{frames_to_events, Frame};
use cs3d_core::events::synth::{synth_dataset, SynthConfig, SynthKind};
use cs3d_core::events::{voxelize, Event, EventStream, VoxelPolicy};
use cs3d_core::network::{variant_config, LayerSpec, Model, ModelConfig, VARIANT_NAMES};
use cs3d_core::profiler::{
    count_flops, format_mj, integrate_energy, linear_macs, PowerTrace,
};
use cs3d_core::trainer::{train, TrainConfig};
use cs3d_core::Graph;
use once_cell::sync::Lazy;
use rand::Rng;

// ── criterion 1 ─────────────────────────────────────────────────────

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let entries = run_gradient_suite(1e-4, 1e-4).expect("suite runs");
    let elapsed = start.elapsed();
    for e in &entries {
        assert!(e.passed, "{} failed: max rel err {}", e.name, e.max_rel_err);
    }
    assert!(
        entries.iter().any(|e| e.name.contains("ssn surrogate")),
        "ssn must be checked analytically against its surrogate"
    );
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "gradient suite took {elapsed:?}, budget is 2 minutes"
    );
    println!(
        "ACCEPTANCE 1 gradient suite: PASS ({} checks in {elapsed:?})",
        entries.len()
    );
}

// ── criterion 2 ─────────────────────────────────────────────────────

#[test]
fn criterion_2_oracle_equivalence() {
    const TOL: f64 = 1e-10;
    let mut r = rng(0xACC_2);
    let cases = 20;

    // dense / depthwise / pointwise convolutions
    for case in 0..cases {
        let b = r.gen_range(1..3);
        let c_in = r.gen_range(1..4);
        let c_out = r.gen_range(1..4);
        let k = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
        let t = r.gen_range(k.0..k.0 + 3);
        let h = r.gen_range(k.1..k.1 + 3);
        let w = r.gen_range(k.2..k.2 + 3);
        let stride = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..3));
        let pad = (r.gen_range(0..2), r.gen_range(0..2), r.gen_range(0..2));

        let x = random_tensor(&mut r, &[b, c_in, t, h, w]);
        let wd = random_tensor(&mut r, &[c_out, c_in, k.0, k.1, k.2]);
        let want = conv3d_oracle(&x, &wd, None, stride, pad, 1);
        let mut g = Graph::new(false);
        let xv = g.leaf(x.clone(), false);
        let wv = g.leaf(wd, false);
        let y = g.dense_conv3d(xv, wv, None, stride, pad).unwrap();
        assert!(
            common::max_abs_diff(g.value(y).data(), &want.data) < TOL,
            "dense case {case}"
        );

        let wdw = random_tensor(&mut r, &[c_in, 1, k.0, k.1, k.2]);
        let want = conv3d_oracle(&x, &wdw, None, stride, pad, c_in);
        let wv = g.leaf(wdw, false);
        let y = g.dwconv3d(xv, wv, None, stride, pad).unwrap();
        assert!(
            common::max_abs_diff(g.value(y).data(), &want.data) < TOL,
            "depthwise case {case}"
        );

        let wpw = random_tensor(&mut r, &[c_out, c_in, 1, 1, 1]);
        let want = conv3d_oracle(&x, &wpw, None, (1, 1, 1), (0, 0, 0), 1);
        let wv = g.leaf(wpw, false);
        let y = g.pwconv3d(xv, wv, None).unwrap();
        assert!(
            common::max_abs_diff(g.value(y).data(), &want.data) < TOL,
            "pointwise case {case}"
        );
    }

    // pooling
    for case in 0..cases {
        let win = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..3));
        let stride = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..3));
        let dims = [
            r.gen_range(1..3),
            r.gen_range(1..3),
            r.gen_range(win.0..win.0 + 3),
            r.gen_range(win.1..win.1 + 3),
            r.gen_range(win.2..win.2 + 3),
        ];
        let x = random_tensor(&mut r, &dims);
        let (_, want) = common::maxpool_oracle(&x, win, stride);
        let mut g = Graph::new(false);
        let xv = g.leaf(x, false);
        let y = g.maxpool3d(xv, win, stride).unwrap();
        assert!(
            common::max_abs_diff(g.value(y).data(), &want) < TOL,
            "pool case {case}"
        );
    }

    // temporal attention (pseudocode transcription)
    let cfg = AttentionConfig::default();
    for case in 0..cases {
        let c = 2 * r.gen_range(1..4);
        let dims = [r.gen_range(1..3), c, r.gen_range(2..6), r.gen_range(1..4), r.gen_range(1..4)];
        let x = random_tensor(&mut r, &dims);
        let mut p = TemporalAttentionParams::zeros(c, &cfg).unwrap();
        p.conv1_weight = random_tensor(&mut r, &[c / 2, c, 3, 1, 1]);
        p.conv1_bias = random_tensor(&mut r, &[c / 2]);
        p.conv2_weight = random_tensor(&mut r, &[c, c / 2, 3, 1, 1]);
        p.conv2_bias = random_tensor(&mut r, &[c]);
        let want = TemporalAttentionOracle {
            conv1_w: &p.conv1_weight,
            conv1_b: &p.conv1_bias,
            conv2_w: &p.conv2_weight,
            conv2_b: &p.conv2_bias,
        }
        .run(&x);
        let mut g = Graph::new(false);
        let xv = g.leaf(x, false);
        let vars = g.bind_temporal_attention(&p);
        let y = g.temporal_attention(xv, &vars).unwrap();
        assert!(
            common::max_abs_diff(g.value(y).data(), &want) < TOL,
            "temporal attention case {case}"
        );
    }

    // spatial attention (pseudocode transcription)
    for case in 0..cases {
        let dims = [
            r.gen_range(1..3),
            r.gen_range(1..5),
            r.gen_range(1..4),
            r.gen_range(1..6),
            r.gen_range(1..6),
        ];
        let x = random_tensor(&mut r, &dims);
        let mut p = SpatialAttentionParams::zeros(&cfg);
        p.conv_weight = random_tensor(&mut r, &[1, 2, 1, 7, 7]);
        p.conv_bias = random_tensor(&mut r, &[1]);
        let want = SpatialAttentionOracle {
            conv_w: &p.conv_weight,
            conv_b: &p.conv_bias,
        }
        .run(&x);
        let mut g = Graph::new(false);
        let xv = g.leaf(x, false);
        let vars = g.bind_spatial_attention(&p);
        let y = g.spatial_attention(xv, &vars).unwrap();
        assert!(
            common::max_abs_diff(g.value(y).data(), &want) < TOL,
            "spatial attention case {case}"
        );
    }

    println!("ACCEPTANCE 2 oracle equivalence: PASS ({cases} cases per operation)");
}

// ── criterion 3 ─────────────────────────────────────────────────────

#[test]
fn criterion_3_zero_parameter_attention_closed_form() {
    const TOL: f64 = 1e-12;
    let cfg = AttentionConfig::default();
    let mut r = rng(0xACC_3);
    let x = random_tensor(&mut r, &[2, 4, 6, 5, 5]);
    let tp = TemporalAttentionParams::zeros(4, &cfg).unwrap();
    let sp = SpatialAttentionParams::zeros(&cfg);

    let mut g = Graph::new(false);
    let xv = g.leaf(x.clone(), false);
    let tv = g.bind_temporal_attention(&tp);
    let sv = g.bind_spatial_attention(&sp);

    let ta = g.temporal_attention(xv, &tv).unwrap();
    let sa = g.spatial_attention(xv, &sv).unwrap();
    let joint = g.joint_attention(xv, &tv, &sv).unwrap();
    for ((tav, sav), (jv, xv)) in g
        .value(ta)
        .data()
        .iter()
        .zip(g.value(sa).data())
        .zip(g.value(joint).data().iter().zip(x.data()))
    {
        assert!((tav - 1.5 * xv).abs() < TOL, "temporal 1.5x");
        assert!((sav - 1.5 * xv).abs() < TOL, "spatial 1.5x");
        assert!((jv - 3.25 * xv).abs() < TOL, "joint 3.25x");
    }
    println!("ACCEPTANCE 3 zero-parameter attention closed form: PASS (1.5x / 1.5x / 3.25x)");
}

// ── criterion 4 ─────────────────────────────────────────────────────

/// Re-derives the conv/linear work of a config independently, runs the
/// instrumented padded-loop oracle on real tensors of each shape, and
/// returns per-layer multiply counts keyed by profiler row order.
fn instrumented_macs(cfg: &ModelConfig) -> Vec<Option<u64>> {
    let mut r = rng(0xACC_4);
    let (c0, t0, h0, w0) = cfg.input_shape;
    let mut shape = (c0, t0, h0, w0);
    let mut out = Vec::new();
    let pool = |s: (usize, usize, usize, usize), win: (usize, usize, usize), st: (usize, usize, usize)| {
        (
            s.0,
            (s.1 - win.0) / st.0 + 1,
            (s.2 - win.1) / st.1 + 1,
            (s.3 - win.2) / st.2 + 1,
        )
    };
    fn count_conv(
        r: &mut rand_chacha::ChaCha8Rng,
        x_shape: &[usize],
        w_shape: &[usize],
        pad: (usize, usize, usize),
        groups: usize,
    ) -> u64 {
        let x = random_tensor(r, x_shape);
        let w = random_tensor(r, w_shape);
        conv3d_oracle(&x, &w, None, (1, 1, 1), pad, groups).mults
    }
    for spec in &cfg.blocks {
        match *spec {
            LayerSpec::FactorizedBlock { out_channels } => {
                let (c, t, h, w) = shape;
                let mut mults = count_conv(&mut r, &[1, c, t, h, w], &[c, 1, 3, 1, 1], (1, 0, 0), c);
                mults +=
                    count_conv(&mut r, &[1, c, t, h, w], &[out_channels, c, 1, 1, 1], (0, 0, 0), 1);
                mults += count_conv(
                    &mut r,
                    &[1, out_channels, t, h, w],
                    &[out_channels, 1, 1, 3, 3],
                    (0, 1, 1),
                    out_channels,
                );
                mults += count_conv(
                    &mut r,
                    &[1, out_channels, t, h, w],
                    &[out_channels, out_channels, 1, 1, 1],
                    (0, 0, 0),
                    1,
                );
                if c != out_channels {
                    mults += count_conv(
                        &mut r,
                        &[1, c, t, h, w],
                        &[out_channels, c, 1, 1, 1],
                        (0, 0, 0),
                        1,
                    );
                }
                out.push(Some(mults));
                shape.0 = out_channels;
            }
            LayerSpec::DenseConv { out_channels, kernel } => {
                let (c, t, h, w) = shape;
                let pad = ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2, (kernel.2 - 1) / 2);
                let mults = count_conv(
                    &mut r,
                    &[1, c, t, h, w],
                    &[out_channels, c, kernel.0, kernel.1, kernel.2],
                    pad,
                    1,
                );
                out.push(Some(mults));
                shape.0 = out_channels;
            }
            LayerSpec::MaxPool { window, stride } => {
                shape = pool(shape, window, stride);
                out.push(None);
            }
            LayerSpec::MultiPool { window, stride, max_only } => {
                shape = pool(shape, window, stride);
                if !max_only {
                    shape.0 *= 2;
                }
                out.push(None);
            }
            LayerSpec::Attention { .. } => out.push(None),
            LayerSpec::Flatten => {
                shape = (shape.0 * shape.1 * shape.2 * shape.3, 1, 1, 1);
                out.push(None);
            }
            LayerSpec::Linear { out_features, .. } => {
                let in_features = shape.0;
                // instrumented triple loop, counting each multiply
                let mut mults = 0u64;
                let x = random_tensor(&mut r, &[1, in_features]);
                let w = random_tensor(&mut r, &[in_features, out_features]);
                let mut sink = 0.0;
                for kk in 0..out_features {
                    for p in 0..in_features {
                        sink += x.data()[p] * w.data()[p * out_features + kk];
                        mults += 1;
                    }
                }
                assert!(sink.is_finite());
                out.push(Some(mults));
                shape = (out_features, 1, 1, 1);
            }
        }
    }
    out
}

#[test]
fn criterion_4_flops_accounting() {
    // Part A: analytic MACs equal instrumented multiply counts exactly,
    // for every conv and linear layer of both default models.
    for cfg in [
        ModelConfig::cs3d((2, 16, 32, 32), 4, 1),
        ModelConfig::c3d((2, 16, 32, 32), 4, 1),
    ] {
        let m = Model::build(&cfg).unwrap();
        let report = count_flops(&m, cfg.input_shape).unwrap();
        let counted = instrumented_macs(&cfg);
        assert_eq!(report.rows.len(), counted.len());
        for (row, mults) in report.rows.iter().zip(&counted) {
            if let Some(mults) = mults {
                assert_eq!(
                    row.macs, *mults,
                    "layer {} ({}): analytic {} != instrumented {}",
                    row.name, row.kind, row.macs, mults
                );
            }
        }
    }
    assert_eq!(linear_macs(1, 10, 5), 50);

    // Part B: the default-model FLOPs ratio at the full input resolution
    // lands in the band around the published ratio. Absolute G values are
    // not reproducible (the published layer table is unavailable), so only
    // the ratio is pinned.
    let shape = (2, 16, 112, 112);
    let cs3d = Model::build(&ModelConfig::cs3d(shape, 7, 1)).unwrap();
    let c3d = Model::build(&ModelConfig::c3d(shape, 7, 1)).unwrap();
    let r_cs3d = count_flops(&cs3d, shape).unwrap();
    let r_c3d = count_flops(&c3d, shape).unwrap();
    let ratio = r_cs3d.total_flops as f64 / r_c3d.total_flops as f64;
    assert!(
        (0.15..=0.35).contains(&ratio),
        "FLOPs ratio {ratio:.4} outside [0.15, 0.35]"
    );
    assert!(r_cs3d.total_flops < r_c3d.total_flops);
    assert!(cs3d.params.element_count() < c3d.params.element_count());
    println!(
        "ACCEPTANCE 4 FLOPs accounting: PASS (instrumented == analytic; ratio {ratio:.4} in [0.15, 0.35])"
    );
}

// ── criterion 5 ─────────────────────────────────────────────────────

#[test]
fn criterion_5_energy_integration() {
    // constant power: exact to machine precision
    let constant = PowerTrace::new((0..6).map(|i| (i as f64 * 0.1, 10.0)).collect(), "c").unwrap();
    let e = integrate_energy(&constant).unwrap();
    assert_eq!(e, 5.0, "constant-power rectangle rule must be exact");

    // linear ramp: left-Riemann closed form to 1e-12
    let ramp = PowerTrace::new(
        (0..=100)
            .map(|i| {
                let t = i as f64 * 0.01;
                (t, 10.0 * t)
            })
            .collect(),
        "ramp",
    )
    .unwrap();
    let e = integrate_energy(&ramp).unwrap();
    assert!((e - 4.95).abs() < 1e-12, "ramp {e}");

    // synthetic reference trace integrating to 18.2 J renders as the
    // published "18.2 x 10^3 mJ" figure
    let titan = PowerTrace::new((0..=1000).map(|i| (i as f64 * 0.001, 18.2)).collect(), "titan-x")
        .unwrap();
    let joules = integrate_energy(&titan).unwrap();
    assert!((joules - 18.2).abs() < 1e-9);
    let rendered = format_mj(joules * 1000.0);
    assert_eq!(rendered, "18.2 x 10^3");
    println!("ACCEPTANCE 5 energy integration: PASS (constant exact, ramp 4.95 J, {rendered} mJ)");
}

// ── criterion 6 ─────────────────────────────────────────────────────

fn random_stream(r: &mut rand_chacha::ChaCha8Rng) -> EventStream {
    let w = r.gen_range(4..40u16);
    let h = r.gen_range(4..40u16);
    let n = r.gen_range(0..600usize);
    let mut s = EventStream::new(w, h);
    for _ in 0..n {
        s.events.push(Event {
            t_us: r.gen_range(0..1_000_000),
            x: r.gen_range(0..w),
            y: r.gen_range(0..h),
            polarity: if r.gen_bool(0.5) { 1 } else { -1 },
        });
    }
    s.sort();
    s
}

#[test]
fn criterion_6_event_pipeline_conservation() {
    let mut r = rng(0xACC_6);
    let dir = tempfile::tempdir().unwrap();
    // count-policy conservation over 100 random streams
    for i in 0..100 {
        let s = random_stream(&mut r);
        let t_bins = r.gen_range(1..20);
        let grid = voxelize(&s, t_bins, 16, 16, VoxelPolicy::Count).unwrap();
        assert_eq!(grid.sum(), s.len() as f64, "stream {i}");
    }
    // parse/write round-trip identity (both formats)
    for i in 0..10 {
        let s = random_stream(&mut r);
        let csv = dir.path().join(format!("s{i}.csv"));
        write_events_csv(&csv, &s).unwrap();
        let back = parse_events_csv(&csv, s.width, s.height).unwrap();
        assert_eq!(back.stream.events, s.events);
        let bin = dir.path().join(format!("s{i}.bin"));
        write_events_binary(&bin, &s).unwrap();
        let back = parse_events_binary(&bin, s.width, s.height).unwrap();
        assert_eq!(back.stream.events, s.events);
    }
    // static frame sequences emit zero events
    let f = Frame::constant(16, 16, 0.4);
    let stream = frames_to_events(&vec![f; 8], 0.1, 1000).unwrap();
    assert!(stream.is_empty(), "static frames must emit no events");
    println!("ACCEPTANCE 6 event pipeline conservation: PASS (100 streams, round-trips, static)");
}

// ── criteria 7 and 9: shared training runs ──────────────────────────

struct TrainOutcome {
    history_csv: String,
    best_accuracy: f64,
    epochs_run: usize,
    seconds: f64,
    state_bytes: Vec<u8>,
    dataset_bytes: Vec<u8>,
}

fn run_criterion7_training() -> TrainOutcome {
    let synth = SynthConfig::new(SynthKind::MovingBar4Dir, 50, 32, 32, 7);
    let dataset = synth_dataset(&synth).expect("dataset");
    let mut dataset_bytes = Vec::new();
    for s in &dataset.samples {
        s.input.write_to(&mut dataset_bytes).unwrap();
        dataset_bytes.write_all(&(s.label as u64).to_le_bytes()).unwrap();
    }
    let (train_set, holdout) = dataset.split(0.25, 7);

    let cfg = ModelConfig::cs3d((2, 16, 32, 32), 4, 7);
    let mut model = Model::build(&cfg).expect("build");
    let tc = TrainConfig {
        epochs: 30,
        seed: 7,
        target_accuracy: Some(0.9),
        ..Default::default()
    };
    let start = Instant::now();
    let history = train(&mut model, &train_set, Some(&holdout), &tc).expect("train");
    let seconds = start.elapsed().as_secs_f64();

    let mut state_bytes = Vec::new();
    for (_, t) in model.params.iter() {
        t.write_to(&mut state_bytes).unwrap();
    }
    for (_, t) in model.named_buffers() {
        t.write_to(&mut state_bytes).unwrap();
    }
    TrainOutcome {
        history_csv: history.to_csv(),
        best_accuracy: history.best_accuracy.unwrap_or(0.0),
        epochs_run: history.epochs.len(),
        seconds,
        state_bytes,
        dataset_bytes,
    }
}

static TRAIN_RUN: Lazy<TrainOutcome> = Lazy::new(run_criterion7_training);

#[test]
fn criterion_7_desk_scale_learning() {
    let run = &*TRAIN_RUN;
    assert!(run.epochs_run <= 30, "used {} epochs", run.epochs_run);
    assert!(
        run.best_accuracy >= 0.9,
        "held-out accuracy {} < 0.9",
        run.best_accuracy
    );
    assert!(
        run.seconds <= 600.0,
        "training took {:.1}s, budget 600s",
        run.seconds
    );
    println!(
        "ACCEPTANCE 7 desk-scale learning: PASS (accuracy {:.3} in {} epochs, {:.1}s)",
        run.best_accuracy, run.epochs_run, run.seconds
    );
}

// ── criterion 8: ablation scaffolding ───────────────────────────────

struct AblationOutcome {
    comparison_csv: String,
    histories: Vec<String>,
}

fn run_ablation() -> AblationOutcome {
    let shape = (2, 16, 32, 32);
    let mut synth = SynthConfig::new(SynthKind::MovingBar4Dir, 8, 32, 32, 11);
    synth.frames = 16;
    let dataset = synth_dataset(&synth).expect("dataset");

    let mut comparison_csv = String::from("method,params,flops,flops_g,one_epoch_loss\n");
    let mut histories = Vec::new();
    for name in VARIANT_NAMES {
        let cfg = variant_config(name, shape, 4, 11).expect("variant config");
        let mut model = Model::build(&cfg).expect("variant builds");
        let report = count_flops(&model, shape).expect("profile");
        let tc = TrainConfig {
            epochs: 1,
            seed: 11,
            ..Default::default()
        };
        let history = train(&mut model, &dataset, None, &tc).expect("one epoch trains");
        assert_eq!(history.epochs.len(), 1);
        let loss = history.epochs[0].train_loss;
        assert!(loss.is_finite());
        comparison_csv.push_str(&format!(
            "{name},{},{},{:.17e},{loss:.17e}\n",
            report.total_params, report.total_flops, report.flops_g
        ));
        histories.push(history.to_csv());
    }
    AblationOutcome {
        comparison_csv,
        histories,
    }
}

static ABLATION_RUN: Lazy<AblationOutcome> = Lazy::new(run_ablation);

#[test]
fn criterion_8_ablation_scaffolding() {
    let run = &*ABLATION_RUN;
    let lines: Vec<&str> = run.comparison_csv.lines().collect();
    assert_eq!(lines.len(), 6, "header plus five variant rows");

    // monotone FLOPs bookkeeping: factorized variants strictly below dense
    let mut flops = std::collections::HashMap::new();
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        flops.insert(fields[0].to_string(), fields[2].parse::<u64>().unwrap());
    }
    for factorized in ["c3d+factorized", "cs3d"] {
        for dense in ["c3d", "c3d+ssn", "c3d+attention"] {
            assert!(
                flops[factorized] < flops[dense],
                "{factorized} ({}) must be below {dense} ({})",
                flops[factorized],
                flops[dense]
            );
        }
    }
    let out = std::env::temp_dir().join("cs3d_ablation_comparison.csv");
    std::fs::write(&out, &run.comparison_csv).unwrap();
    println!(
        "ACCEPTANCE 8 ablation scaffolding: PASS (5 variants trained; CSV at {})",
        out.display()
    );
}

// ── criterion 9: determinism ────────────────────────────────────────

#[test]
fn criterion_9_determinism() {
    // criterion 6 artifacts: event files and voxel grids
    let mut r1 = rng(0xACC_9);
    let mut r2 = rng(0xACC_9);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..5 {
        let s1 = random_stream(&mut r1);
        let s2 = random_stream(&mut r2);
        let p1 = dir.path().join(format!("a{i}.csv"));
        let p2 = dir.path().join(format!("b{i}.csv"));
        write_events_csv(&p1, &s1).unwrap();
        write_events_csv(&p2, &s2).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap(),
            "event files differ across identical runs"
        );
        let g1 = voxelize(&s1, 8, 16, 16, VoxelPolicy::Count).unwrap();
        let g2 = voxelize(&s2, 8, 16, 16, VoxelPolicy::Count).unwrap();
        for (a, b) in g1.tensor.data().iter().zip(g2.tensor.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    // criterion 7 artifacts: dataset, loss curve, and final state bitwise
    let first = &*TRAIN_RUN;
    let second = run_criterion7_training();
    assert_eq!(first.dataset_bytes, second.dataset_bytes, "datasets differ");
    assert_eq!(first.history_csv, second.history_csv, "histories differ");
    assert_eq!(first.state_bytes, second.state_bytes, "final states differ");

    // criterion 8 artifacts: the comparison CSV and per-variant histories
    let first_ablation = &*ABLATION_RUN;
    let second_ablation = run_ablation();
    assert_eq!(first_ablation.comparison_csv, second_ablation.comparison_csv);
    assert_eq!(first_ablation.histories, second_ablation.histories);

    println!("ACCEPTANCE 9 determinism: PASS (criteria 6-8 artifacts bitwise identical)");
}
