//! Event-stream ingestion: file parsing, a simplified frame-to-event
//! simulator, voxelization into network input tensors, and synthetic
//! dataset generation.

pub mod io;
pub mod sim;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Tensor;

pub const ON: i8 = 1;
pub const OFF: i8 = -1;

/// One DVS event. Polarity is +1 (brighter) or -1 (darker).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: i8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
    pub label: Option<usize>,
}

impl EventStream {
    pub fn new(width: u16, height: u16) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
            label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration_us(&self) -> u64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.t_us - a.t_us,
            _ => 0,
        }
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].t_us <= w[1].t_us)
    }

    /// Stable sort by timestamp; returns true when reordering was needed.
    pub fn sort(&mut self) -> bool {
        if self.is_sorted() {
            return false;
        }
        self.events.sort_by_key(|e| e.t_us);
        true
    }
}

/// How events accumulate into voxel cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoxelPolicy {
    /// Sum of event counts per cell.
    Count,
    /// Cell clamps to {0, 1}.
    Binary,
    /// Each event splits across the two nearest bins by temporal proximity.
    BilinearTime,
}

impl std::str::FromStr for VoxelPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "count" => Ok(VoxelPolicy::Count),
            "binary" => Ok(VoxelPolicy::Binary),
            "bilinear-time" => Ok(VoxelPolicy::BilinearTime),
            other => Err(format!(
                "unknown voxel policy `{other}` (count, binary, bilinear-time)"
            )),
        }
    }
}

/// Dense (2, T, H, W) accumulation of a stream: channel 0 holds ON events,
/// channel 1 holds OFF events.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    pub tensor: Tensor,
    pub bin_duration_us: f64,
}

impl VoxelGrid {
    pub fn time_bins(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn sum(&self) -> f64 {
        self.tensor.data().iter().sum()
    }
}

/// Splits the stream's time window into `t_bins` equal bins (last bin
/// closed) and rescales sensor coordinates onto an `h x w` grid by
/// proportional index mapping. A zero-duration multi-event stream puts
/// everything into bin 0.
pub fn voxelize(
    stream: &EventStream,
    t_bins: usize,
    h: usize,
    w: usize,
    policy: VoxelPolicy,
) -> Result<VoxelGrid> {
    assert!(t_bins >= 1 && h >= 1 && w >= 1);
    let mut tensor = Tensor::zeros(&[2, t_bins, h, w]);
    if stream.is_empty() {
        return Ok(VoxelGrid {
            tensor,
            bin_duration_us: 0.0,
        });
    }
    let t0 = stream.events.first().unwrap().t_us;
    let t1 = stream.events.last().unwrap().t_us;
    let dur = t1 - t0;
    let data = tensor.data_mut();
    let cell = |c: usize, b: usize, yi: usize, xi: usize| ((c * t_bins + b) * h + yi) * w + xi;

    for e in &stream.events {
        let c = if e.polarity >= 0 { 0 } else { 1 };
        let xi = ((e.x as u64 * w as u64) / stream.width.max(1) as u64) as usize;
        let yi = ((e.y as u64 * h as u64) / stream.height.max(1) as u64) as usize;
        let xi = xi.min(w - 1);
        let yi = yi.min(h - 1);
        match policy {
            VoxelPolicy::Count | VoxelPolicy::Binary => {
                let b = if dur == 0 {
                    0
                } else {
                    ((((e.t_us - t0) as u128) * t_bins as u128 / dur as u128) as usize)
                        .min(t_bins - 1)
                };
                let slot = &mut data[cell(c, b, yi, xi)];
                if policy == VoxelPolicy::Binary {
                    *slot = 1.0;
                } else {
                    *slot += 1.0;
                }
            }
            VoxelPolicy::BilinearTime => {
                // continuous bin coordinate, split between the two nearest
                let pos = if dur == 0 {
                    0.0
                } else {
                    (e.t_us - t0) as f64 / dur as f64 * t_bins as f64 - 0.5
                };
                let left = pos.floor();
                let frac = pos - left;
                let li = (left as isize).clamp(0, t_bins as isize - 1) as usize;
                let ri = ((left as isize) + 1).clamp(0, t_bins as isize - 1) as usize;
                data[cell(c, li, yi, xi)] += 1.0 - frac;
                data[cell(c, ri, yi, xi)] += frac;
            }
        }
    }
    Ok(VoxelGrid {
        tensor,
        bin_duration_us: if t_bins == 0 { 0.0 } else { dur as f64 / t_bins as f64 },
    })
}

/// Per-sample max normalization to [0, 1]; the default input scaling in
/// front of the network.
pub fn normalize_max(tensor: &Tensor) -> Tensor {
    let max = tensor.max_abs();
    if max == 0.0 {
        return tensor.clone();
    }
    Tensor::new(
        tensor.shape(),
        tensor.data().iter().map(|&v| v / max).collect(),
    )
    .expect("shape")
}
