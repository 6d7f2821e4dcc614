//! Seeded synthetic motion datasets, rendered as frame sequences and pushed
//! through the event simulator, for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sim::{frames_to_events, Frame};
use super::{normalize_max, voxelize, EventStream, VoxelPolicy};
use crate::data::{Dataset, Sample};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Bar sweeping up / down / left / right: 4 classes.
    MovingBar4Dir,
    /// Disc growing vs shrinking: 2 classes.
    ExpandingVsContracting,
}

impl SynthKind {
    pub fn class_count(self) -> usize {
        match self {
            SynthKind::MovingBar4Dir => 4,
            SynthKind::ExpandingVsContracting => 2,
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "moving-bar-4dir" => Ok(SynthKind::MovingBar4Dir),
            "expanding-vs-contracting" => Ok(SynthKind::ExpandingVsContracting),
            other => Err(format!(
                "unknown synth kind `{other}` (moving-bar-4dir, expanding-vs-contracting)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub n_per_class: usize,
    pub width: usize,
    pub height: usize,
    pub time_bins: usize,
    pub frames: usize,
    /// Log-intensity contrast threshold of the simulator.
    pub threshold: f64,
    pub frame_interval_us: u64,
    /// Per-sample speed/position jitter; disable for symmetry tests.
    pub jitter: bool,
    pub policy: VoxelPolicy,
    pub normalize: bool,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(kind: SynthKind, n_per_class: usize, width: usize, height: usize, seed: u64) -> Self {
        SynthConfig {
            kind,
            n_per_class,
            width,
            height,
            time_bins: 16,
            frames: 24,
            threshold: 0.15,
            frame_interval_us: 1000,
            jitter: true,
            policy: VoxelPolicy::Count,
            normalize: true,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(CoreError::DegenerateGeometry {
                width: self.width,
                height: self.height,
            });
        }
        if self.n_per_class == 0 {
            return Err(CoreError::Config("n_per_class must be >= 1".into()));
        }
        Ok(())
    }
}

const BG: f64 = 0.1;
const FG: f64 = 0.9;

/// Renders every sample as a labeled event stream, class-major
/// (`label = global_index / n_per_class`). Per-sample randomness derives
/// from `seed ^ global_index`, so samples are order-independent.
pub fn synth_event_streams(cfg: &SynthConfig) -> Result<Vec<EventStream>> {
    cfg.validate()?;
    let classes = cfg.kind.class_count();
    let mut out = Vec::with_capacity(classes * cfg.n_per_class);
    for class in 0..classes {
        for i in 0..cfg.n_per_class {
            let index = class * cfg.n_per_class + i;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ index as u64);
            let frames = match cfg.kind {
                SynthKind::MovingBar4Dir => render_bar(cfg, class, &mut rng),
                SynthKind::ExpandingVsContracting => render_disc(cfg, class, &mut rng),
            };
            let mut stream = frames_to_events(&frames, cfg.threshold, cfg.frame_interval_us)?;
            stream.label = Some(class);
            out.push(stream);
        }
    }
    Ok(out)
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    let streams = synth_event_streams(cfg)?;
    dataset_from_streams(&streams, cfg.time_bins, cfg.height, cfg.width, cfg.policy, cfg.normalize)
}

pub fn dataset_from_streams(
    streams: &[EventStream],
    time_bins: usize,
    h: usize,
    w: usize,
    policy: VoxelPolicy,
    normalize: bool,
) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(streams.len());
    for s in streams {
        let grid = voxelize(s, time_bins, h, w, policy)?;
        let input = if normalize {
            normalize_max(&grid.tensor)
        } else {
            grid.tensor
        };
        samples.push(Sample {
            input,
            label: s.label.unwrap_or(0),
        });
    }
    Ok(Dataset::new(samples))
}

/// Classes: 0 = up, 1 = down, 2 = left, 3 = right. Up is the vertical
/// mirror of down and left the horizontal mirror of right, rendered by
/// flipping the canonical frame, so mirror symmetry is exact.
fn render_bar(cfg: &SynthConfig, class: usize, rng: &mut ChaCha8Rng) -> Vec<Frame> {
    let (h, w) = (cfg.height, cfg.width);
    let vertical_motion = class < 2; // up/down move along rows
    let extent = if vertical_motion { h } else { w };
    let thickness = (extent / 8).max(2) as f64;
    let travel = extent as f64 - thickness;
    let mut speed = travel / (cfg.frames - 1) as f64;
    let mut start = 0.0;
    if cfg.jitter {
        speed *= rng.gen_range(0.85..1.15);
        start += rng.gen_range(0.0..travel * 0.1);
    }

    (0..cfg.frames)
        .map(|f| {
            let pos = (start + speed * f as f64).min(travel);
            let profile: Vec<f64> = (0..extent)
                .map(|i| BG + (FG - BG) * span_coverage(i, pos, thickness))
                .collect();
            let mut frame = Frame::constant(h, w, BG);
            for r in 0..h {
                for c in 0..w {
                    frame.data[r * w + c] = if vertical_motion { profile[r] } else { profile[c] };
                }
            }
            match class {
                0 => flip_vertical(&frame),   // up = mirrored down
                2 => flip_horizontal(&frame), // left = mirrored right
                _ => frame,
            }
        })
        .collect()
}

/// Coverage of pixel [i, i+1) by the interval [pos, pos + thickness).
fn span_coverage(i: usize, pos: f64, thickness: f64) -> f64 {
    let lo = pos.max(i as f64);
    let hi = (pos + thickness).min(i as f64 + 1.0);
    (hi - lo).max(0.0)
}

fn flip_horizontal(f: &Frame) -> Frame {
    let mut data = f.data.clone();
    for r in 0..f.height {
        data[r * f.width..(r + 1) * f.width].reverse();
    }
    Frame::new(f.height, f.width, data)
}

fn flip_vertical(f: &Frame) -> Frame {
    let mut data = vec![0.0; f.data.len()];
    for r in 0..f.height {
        data[(f.height - 1 - r) * f.width..(f.height - r) * f.width]
            .copy_from_slice(&f.data[r * f.width..(r + 1) * f.width]);
    }
    Frame::new(f.height, f.width, data)
}

/// Classes: 0 = expanding, 1 = contracting.
fn render_disc(cfg: &SynthConfig, class: usize, rng: &mut ChaCha8Rng) -> Vec<Frame> {
    let (h, w) = (cfg.height, cfg.width);
    let m = h.min(w) as f64;
    let mut cy = h as f64 / 2.0;
    let mut cx = w as f64 / 2.0;
    let r_small = m / 6.0;
    let r_large = m / 2.5;
    let mut rate = (r_large - r_small) / (cfg.frames - 1) as f64;
    if cfg.jitter {
        cy += rng.gen_range(-0.08..0.08) * m;
        cx += rng.gen_range(-0.08..0.08) * m;
        rate *= rng.gen_range(0.85..1.15);
    }
    (0..cfg.frames)
        .map(|f| {
            let radius = if class == 0 {
                r_small + rate * f as f64
            } else {
                r_large - rate * f as f64
            };
            let mut frame = Frame::constant(h, w, BG);
            for r in 0..h {
                for c in 0..w {
                    let d = ((r as f64 + 0.5 - cy).powi(2) + (c as f64 + 0.5 - cx).powi(2)).sqrt();
                    // 1-pixel soft edge
                    let cov = (radius - d + 0.5).clamp(0.0, 1.0);
                    frame.data[r * w + c] = BG + (FG - BG) * cov;
                }
            }
            frame
        })
        .collect()
}
