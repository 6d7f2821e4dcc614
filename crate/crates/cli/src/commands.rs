use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use cs3d_core::check::run_gradient_suite;
use cs3d_core::data::Dataset;
use cs3d_core::events::io::{
    parse_events, write_events_binary, write_events_csv, write_manifest,
};
use cs3d_core::events::sim::{frames_to_events, preprocess_frames, CropBox, Frame, RawFrame};
use cs3d_core::events::synth::{synth_event_streams, SynthConfig, SynthKind};
use cs3d_core::events::{normalize_max, voxelize, VoxelPolicy};
use cs3d_core::network::{
    variant_config, write_checkpoint_entries, AblationFlags, Model, ModelConfig,
};
use cs3d_core::profiler::{count_params, format_mj, profile as profile_model, PowerTrace};
use cs3d_core::trainer::{evaluate, train as train_model, TrainConfig};

use crate::manifest::ManifestBuilder;
use crate::{
    usage, Cli, ConvertArgs, EvalArgs, Failure, GradcheckArgs, ModelFlags, ProfileArgs, SynthArgs,
    TrainArgs,
};

type CmdResult = Result<(), Failure>;

fn ensure_out_dir(cli: &Cli) -> Result<(), Failure> {
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("create output dir {}", cli.out.display()))?;
    Ok(())
}

fn parse_pair(text: &str, what: &str) -> Result<(usize, usize), Failure> {
    let parts: Vec<&str> = text.split('x').collect();
    if parts.len() != 2 {
        return Err(usage(format!("{what} must look like `32x32`, got `{text}`")));
    }
    let a = parts[0].parse().map_err(|e| usage(format!("{what}: {e}")))?;
    let b = parts[1].parse().map_err(|e| usage(format!("{what}: {e}")))?;
    Ok((a, b))
}

fn parse_shape4(text: &str) -> Result<(usize, usize, usize, usize), Failure> {
    let parts: Vec<usize> = text
        .split('x')
        .map(|p| p.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| usage(format!("input shape `{text}`: {e}")))?;
    if parts.len() != 4 {
        return Err(usage(format!(
            "input shape must be CxTxHxW, got `{text}`"
        )));
    }
    Ok((parts[0], parts[1], parts[2], parts[3]))
}

fn parse_policy(text: &str) -> Result<VoxelPolicy, Failure> {
    text.parse::<VoxelPolicy>().map_err(usage)
}

/// Resolves the model config: the config file when given, else the
/// architecture (or named variant) defaults; then flag overrides.
fn resolve_model_config(
    cli: &Cli,
    flags: &ModelFlags,
    input_shape: (usize, usize, usize, usize),
    class_count: usize,
) -> Result<ModelConfig, Failure> {
    let mut cfg = if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("read config {}", path.display()))?;
        let mut cfg = ModelConfig::from_toml(&text)?;
        cfg.input_shape = input_shape;
        cfg.class_count = class_count;
        cfg.seed = cli.seed;
        cfg
    } else if let Some(variant) = &flags.variant {
        variant_config(variant, input_shape, class_count, cli.seed)?
    } else {
        match flags.arch.as_str() {
            "cs3d" => ModelConfig::cs3d(input_shape, class_count, cli.seed),
            "c3d" => ModelConfig::c3d(input_shape, class_count, cli.seed),
            other => return Err(usage(format!("unknown arch `{other}` (cs3d, c3d)"))),
        }
    };
    if let Some(theta) = flags.ssn_theta {
        cfg.ssn.theta = theta;
    }
    if let Some(beta) = flags.ssn_beta {
        cfg.ssn.beta = beta;
    }
    cfg.apply_ablation(AblationFlags {
        no_ssn: flags.no_ssn,
        no_factorized: flags.no_factorized,
        no_temporal_attn: flags.no_temporal_attn,
        no_spatial_attn: flags.no_spatial_attn,
    });
    Ok(cfg)
}

// ── convert ─────────────────────────────────────────────────────────

#[derive(Serialize)]
struct ConvertSnapshot {
    input: String,
    threshold: f64,
    frame_interval_us: u64,
    crop: Option<String>,
    target: Option<String>,
    format: String,
    t_bins: usize,
    policy: String,
}

pub fn convert(cli: &Cli, args: &ConvertArgs) -> CmdResult {
    if !args.input.exists() {
        return Err(usage(format!("input {} does not exist", args.input.display())));
    }
    let policy = parse_policy(&args.policy)?;
    let raw = load_raw_frames(&args.input)?;
    if raw.is_empty() {
        return Err(usage(format!("no frames found in {}", args.input.display())));
    }

    let crop = match &args.crop {
        Some(text) => {
            let parts: Vec<usize> = text
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| usage(format!("crop `{text}`: {e}")))?;
            if parts.len() != 4 {
                return Err(usage("crop must be `top,left,height,width`"));
            }
            CropBox {
                top: parts[0],
                left: parts[1],
                height: parts[2],
                width: parts[3],
            }
        }
        None => CropBox {
            top: 0,
            left: 0,
            height: raw[0].height,
            width: raw[0].width,
        },
    };
    let target = match &args.target {
        Some(text) => parse_pair(text, "target")?,
        None => (crop.height, crop.width),
    };
    let frames: Vec<Frame> = preprocess_frames(&raw, crop, target)?;
    let stream = frames_to_events(&frames, args.threshold, args.frame_interval_us)?;

    ensure_out_dir(cli)?;
    let mut manifest = ManifestBuilder::new("convert", cli.seed);
    let events_path = match args.format.as_str() {
        "csv" => {
            let p = cli.out.join("events.csv");
            write_events_csv(&p, &stream)?;
            p
        }
        "bin" => {
            let p = cli.out.join("events.bin");
            write_events_binary(&p, &stream)?;
            p
        }
        other => return Err(usage(format!("unknown event format `{other}` (csv, bin)"))),
    };
    manifest.add_artifact(&events_path);
    println!(
        "converted {} frames ({}x{}) -> {} events -> {}",
        frames.len(),
        frames[0].width,
        frames[0].height,
        stream.len(),
        events_path.display()
    );

    if args.dump_voxels {
        if stream.duration_us() == 0 && stream.len() > 1 {
            eprintln!("warning: zero-duration stream, all events land in bin 0");
        }
        let grid = voxelize(&stream, args.t_bins, target.0, target.1, policy)?;
        let p = cli.out.join("voxels.tnsr");
        grid.tensor.save(&p)?;
        manifest.add_artifact(&p);
        println!("voxel grid {:?} (sum {})", grid.tensor.shape(), grid.sum());
    }

    manifest.write(
        &cli.out,
        &ConvertSnapshot {
            input: args.input.display().to_string(),
            threshold: args.threshold,
            frame_interval_us: args.frame_interval_us,
            crop: args.crop.clone(),
            target: args.target.clone(),
            format: args.format.clone(),
            t_bins: args.t_bins,
            policy: args.policy.clone(),
        },
    )?;
    Ok(())
}

fn load_raw_frames(input: &Path) -> Result<Vec<RawFrame>, Failure> {
    if input.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(input)
            .with_context(|| format!("read dir {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png") | Some("jpg") | Some("jpeg") | Some("bmp")
                )
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(usage(format!("no image files in {}", input.display())));
        }
        paths
            .iter()
            .map(|p| {
                let img = image::open(p)
                    .with_context(|| format!("decode {}", p.display()))?
                    .to_luma8();
                Ok(RawFrame {
                    height: img.height() as usize,
                    width: img.width() as usize,
                    channels: 1,
                    data: img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
                })
            })
            .collect()
    } else {
        load_frames_csv(input)
    }
}

/// Frames CSV: header `h,w,count`, then one line of h*w comma-separated
/// intensities in [0, 1] per frame.
fn load_frames_csv(path: &Path) -> Result<Vec<RawFrame>, Failure> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| usage("empty frames CSV"))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| usage(format!("frames CSV header `{header}`: {e}")))?;
    if dims.len() != 3 {
        return Err(usage("frames CSV header must be `h,w,count`"));
    }
    let (h, w, count) = (dims[0], dims[1], dims[2]);
    let mut frames = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let data: Vec<f64> = line
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| usage(format!("frames CSV row {}: {e}", i + 2)))?;
        if data.len() != h * w {
            return Err(usage(format!(
                "frames CSV row {}: expected {} values, got {}",
                i + 2,
                h * w,
                data.len()
            )));
        }
        frames.push(RawFrame {
            height: h,
            width: w,
            channels: 1,
            data,
        });
    }
    if frames.len() != count {
        return Err(usage(format!(
            "frames CSV: header says {count} frames, found {}",
            frames.len()
        )));
    }
    Ok(frames)
}

// ── synth ───────────────────────────────────────────────────────────

pub fn synth(cli: &Cli, args: &SynthArgs) -> CmdResult {
    let kind: SynthKind = args.kind.parse().map_err(usage)?;
    let (w, h) = parse_pair(&args.geometry, "geometry")?;
    let mut cfg = SynthConfig::new(kind, args.n_per_class, w, h, cli.seed);
    cfg.time_bins = args.t_bins;
    cfg.frames = args.frames;
    cfg.threshold = args.threshold;
    cfg.jitter = !args.no_jitter;

    let streams = synth_event_streams(&cfg)?;
    ensure_out_dir(cli)?;
    let mut manifest = ManifestBuilder::new("synth", cli.seed);
    let mut entries = Vec::with_capacity(streams.len());
    for (i, stream) in streams.iter().enumerate() {
        let name = match args.format.as_str() {
            "csv" => format!("sample_{i:04}.csv"),
            "bin" => format!("sample_{i:04}.bin"),
            other => return Err(usage(format!("unknown event format `{other}` (csv, bin)"))),
        };
        let path = cli.out.join(&name);
        match args.format.as_str() {
            "csv" => write_events_csv(&path, stream)?,
            _ => write_events_binary(&path, stream)?,
        }
        entries.push((PathBuf::from(name), stream.label.unwrap_or(0)));
    }
    let manifest_path = cli.out.join("dataset_manifest.csv");
    write_manifest(&manifest_path, &entries)?;
    manifest.add_artifact(&manifest_path);
    println!(
        "wrote {} samples ({} classes) to {} ({} events total)",
        streams.len(),
        kind.class_count(),
        cli.out.display(),
        streams.iter().map(|s| s.len()).sum::<usize>()
    );
    manifest.write(&cli.out, &cfg)?;
    Ok(())
}

// ── train / eval ────────────────────────────────────────────────────

fn load_dataset(
    manifest_path: &Path,
    geometry: (usize, usize),
    t_bins: usize,
    policy: VoxelPolicy,
) -> Result<Dataset, Failure> {
    if !manifest_path.exists() {
        return Err(usage(format!(
            "dataset manifest {} does not exist",
            manifest_path.display()
        )));
    }
    let entries = cs3d_core::events::io::read_manifest(manifest_path)?;
    if entries.is_empty() {
        return Err(Failure::Runtime(anyhow!("dataset manifest is empty")));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let (w, h) = geometry;
    let mut samples = Vec::with_capacity(entries.len());
    for (rel, label) in entries {
        let path = base.join(rel);
        let report = parse_events(&path, w as u16, h as u16)?;
        if report.was_unsorted {
            eprintln!("warning: {} was not time-sorted; sorted on load", path.display());
        }
        let grid = voxelize(&report.stream, t_bins, h, w, policy)?;
        samples.push(cs3d_core::data::Sample {
            input: normalize_max(&grid.tensor),
            label,
        });
    }
    Ok(Dataset::new(samples))
}

#[derive(Serialize)]
struct TrainSnapshot {
    data: String,
    geometry: String,
    t_bins: usize,
    policy: String,
    holdout: f64,
    train: TrainConfig,
    model: ModelConfig,
}

pub fn train(cli: &Cli, args: &TrainArgs) -> CmdResult {
    let (w, h) = parse_pair(&args.geometry, "geometry")?;
    let policy = parse_policy(&args.policy)?;
    let dataset = load_dataset(&args.data, (w, h), args.t_bins, policy)?;
    let classes = match args.model.classes {
        Some(c) => c,
        None => dataset.samples.iter().map(|s| s.label).max().unwrap_or(0) + 1,
    };
    let input_shape = (2, args.t_bins, h, w);
    let cfg = resolve_model_config(cli, &args.model, input_shape, classes)?;
    let mut model = Model::build(&cfg)?;

    let (train_set, holdout) = dataset.split(args.holdout, cli.seed);
    let eval_set = if holdout.is_empty() { None } else { Some(&holdout) };
    let train_cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: cli.seed,
        target_accuracy: args.target_accuracy,
        ..Default::default()
    };
    println!(
        "training {} on {} samples ({} held out), {} parameters",
        args.model.variant.as_deref().unwrap_or(&args.model.arch),
        train_set.len(),
        holdout.len(),
        count_params(&model)
    );
    let history = train_model(&mut model, &train_set, eval_set, &train_cfg)?;

    ensure_out_dir(cli)?;
    let mut manifest = ManifestBuilder::new("train", cli.seed);
    let history_path = cli.out.join("history.csv");
    std::fs::write(&history_path, history.to_csv())
        .with_context(|| format!("write {}", history_path.display()))?;
    manifest.add_artifact(&history_path);

    let ckpt_path = cli.out.join("model.ckpt");
    model.save_checkpoint(&ckpt_path)?;
    manifest.add_artifact(&ckpt_path);
    if let Some(best) = &history.best_state {
        let best_path = cli.out.join("best.ckpt");
        write_checkpoint_entries(&best_path, best)?;
        manifest.add_artifact(&best_path);
    }

    let metrics_source = eval_set.unwrap_or(&train_set);
    let metrics = evaluate(&mut model, metrics_source)?;
    write_metrics(cli, &mut manifest, &metrics, &history)?;

    for epoch in &history.epochs {
        println!(
            "epoch {:3}  loss {:.6}  accuracy {}",
            epoch.epoch,
            epoch.train_loss,
            epoch
                .eval_accuracy
                .map_or("-".to_string(), |a| format!("{a:.4}"))
        );
    }
    println!(
        "final accuracy {:.4} (best {:?} at epoch {:?})",
        metrics.accuracy, history.best_accuracy, history.best_epoch
    );

    manifest.write(
        &cli.out,
        &TrainSnapshot {
            data: args.data.display().to_string(),
            geometry: args.geometry.clone(),
            t_bins: args.t_bins,
            policy: args.policy.clone(),
            holdout: args.holdout,
            train: train_cfg,
            model: cfg,
        },
    )?;
    Ok(())
}

fn write_metrics(
    cli: &Cli,
    manifest: &mut ManifestBuilder,
    metrics: &cs3d_core::trainer::Metrics,
    history: &cs3d_core::trainer::TrainingHistory,
) -> Result<(), Failure> {
    let metrics_path = cli.out.join("metrics.csv");
    let mut text = String::from("metric,value\n");
    text.push_str(&format!("accuracy,{:.17e}\n", metrics.accuracy));
    text.push_str(&format!("samples,{}\n", metrics.total));
    if let Some(best) = history.best_accuracy {
        text.push_str(&format!("best_accuracy,{best:.17e}\n"));
    }
    if let Some(epoch) = history.best_epoch {
        text.push_str(&format!("best_epoch,{epoch}\n"));
    }
    text.push_str(&format!("epochs_run,{}\n", history.epochs.len()));
    for (c, acc) in metrics.per_class.iter().enumerate() {
        text.push_str(&format!("class_{c}_accuracy,{acc:.17e}\n"));
    }
    std::fs::write(&metrics_path, text)
        .with_context(|| format!("write {}", metrics_path.display()))?;
    manifest.add_artifact(&metrics_path);

    let confusion_path = cli.out.join("confusion.csv");
    std::fs::write(&confusion_path, metrics.confusion_csv())
        .with_context(|| format!("write {}", confusion_path.display()))?;
    manifest.add_artifact(&confusion_path);
    Ok(())
}

#[derive(Serialize)]
struct EvalSnapshot {
    data: String,
    checkpoint: String,
    geometry: String,
    t_bins: usize,
    policy: String,
    model: ModelConfig,
}

pub fn eval(cli: &Cli, args: &EvalArgs) -> CmdResult {
    if !args.checkpoint.exists() {
        return Err(usage(format!(
            "checkpoint {} does not exist",
            args.checkpoint.display()
        )));
    }
    let (w, h) = parse_pair(&args.geometry, "geometry")?;
    let policy = parse_policy(&args.policy)?;
    let dataset = load_dataset(&args.data, (w, h), args.t_bins, policy)?;
    let classes = match args.model.classes {
        Some(c) => c,
        None => dataset.samples.iter().map(|s| s.label).max().unwrap_or(0) + 1,
    };
    let cfg = resolve_model_config(cli, &args.model, (2, args.t_bins, h, w), classes)?;
    let mut model = Model::build(&cfg)?;
    model.load_checkpoint(&args.checkpoint)?;
    let metrics = evaluate(&mut model, &dataset)?;

    ensure_out_dir(cli)?;
    let mut manifest = ManifestBuilder::new("eval", cli.seed);
    let history = cs3d_core::trainer::TrainingHistory::default();
    write_metrics(cli, &mut manifest, &metrics, &history)?;
    println!("accuracy {:.4} over {} samples", metrics.accuracy, metrics.total);
    manifest.write(
        &cli.out,
        &EvalSnapshot {
            data: args.data.display().to_string(),
            checkpoint: args.checkpoint.display().to_string(),
            geometry: args.geometry.clone(),
            t_bins: args.t_bins,
            policy: args.policy.clone(),
            model: cfg,
        },
    )?;
    Ok(())
}

// ── profile ─────────────────────────────────────────────────────────

#[derive(Serialize)]
struct ProfileSnapshot {
    input_shape: String,
    trace: Option<String>,
    compare: Option<String>,
    model: Option<ModelConfig>,
}

pub fn profile(cli: &Cli, args: &ProfileArgs) -> CmdResult {
    let shape = parse_shape4(&args.input_shape)?;
    let classes = args.model.classes.unwrap_or(4);
    let trace = match &args.trace {
        Some(path) => {
            if !path.exists() {
                return Err(usage(format!("trace {} does not exist", path.display())));
            }
            Some(PowerTrace::parse_csv(path)?)
        }
        None => None,
    };
    ensure_out_dir(cli)?;
    let mut manifest = ManifestBuilder::new("profile", cli.seed);

    if let Some(list) = &args.compare {
        // Comparison table across named variants; a single power trace
        // cannot describe several models, so energy stays per-run.
        let mut csv = String::from("method,params,flops,flops_g\n");
        let mut printed = Vec::new();
        for name in list.split(',') {
            let name = name.trim();
            let cfg = variant_config(name, shape, classes, cli.seed)?;
            let model = Model::build(&cfg)?;
            let report = profile_model(&model, shape, None)?;
            csv.push_str(&format!(
                "{name},{},{},{:.17e}\n",
                report.total_params, report.total_flops, report.flops_g
            ));
            printed.push(format!(
                "{name:<16} params {:>9}  FLOPs (G) {:.6}",
                report.total_params, report.flops_g
            ));
        }
        let path = cli.out.join("comparison.csv");
        std::fs::write(&path, &csv).with_context(|| format!("write {}", path.display()))?;
        manifest.add_artifact(&path);
        for line in printed {
            println!("{line}");
        }
        manifest.write(
            &cli.out,
            &ProfileSnapshot {
                input_shape: args.input_shape.clone(),
                trace: None,
                compare: args.compare.clone(),
                model: None,
            },
        )?;
        return Ok(());
    }

    let cfg = resolve_model_config(cli, &args.model, shape, classes)?;
    let model = Model::build(&cfg)?;
    let report = profile_model(&model, shape, trace.as_ref())?;
    match args.format.as_str() {
        "table" => println!("{}", report.to_table()),
        "csv" => print!("{}", report.to_csv()),
        other => return Err(usage(format!("unknown format `{other}` (table, csv)"))),
    }
    if let Some(mj) = report.energy_mj() {
        if args.format == "csv" {
            println!("energy_mj,{mj}");
        }
        println!("Energy: {} mJ", format_mj(mj));
    }
    let path = cli.out.join("report.csv");
    std::fs::write(&path, report.to_csv())
        .with_context(|| format!("write {}", path.display()))?;
    manifest.add_artifact(&path);
    manifest.write(
        &cli.out,
        &ProfileSnapshot {
            input_shape: args.input_shape.clone(),
            trace: args.trace.as_ref().map(|p| p.display().to_string()),
            compare: None,
            model: Some(cfg),
        },
    )?;
    Ok(())
}

// ── gradcheck ───────────────────────────────────────────────────────

#[derive(Serialize)]
struct GradcheckSnapshot {
    tol: f64,
    step: f64,
}

pub fn gradcheck(cli: &Cli, args: &GradcheckArgs) -> CmdResult {
    let entries = run_gradient_suite(args.tol, args.step)?;
    let mut failures = 0usize;
    let mut csv = String::from("check,max_rel_err,passed\n");
    println!("{:<36} {:>14}  result", "check", "max rel err");
    for e in &entries {
        let status = if e.passed { "PASS" } else { "FAIL" };
        println!("{:<36} {:>14.3e}  {status}", e.name, e.max_rel_err);
        csv.push_str(&format!("{},{:.17e},{}\n", e.name, e.max_rel_err, e.passed));
        if !e.passed {
            failures += 1;
        }
    }
    ensure_out_dir(cli)?;
    let mut manifest = ManifestBuilder::new("gradcheck", cli.seed);
    let path = cli.out.join("gradcheck.csv");
    std::fs::write(&path, csv).with_context(|| format!("write {}", path.display()))?;
    manifest.add_artifact(&path);
    manifest.write(
        &cli.out,
        &GradcheckSnapshot {
            tol: args.tol,
            step: args.step,
        },
    )?;
    println!(
        "{} checks, {} failed (tol {:.1e}, step {:.1e})",
        entries.len(),
        failures,
        args.tol,
        args.step
    );
    if failures > 0 {
        return Err(Failure::Runtime(anyhow!("{failures} gradient checks failed")));
    }
    Ok(())
}
