//! Frame preprocessing and the simplified frame-to-event simulator: a pixel
//! emits one event per threshold crossing of its log intensity, with
//! timestamps spread evenly inside the frame interval. Noise, leak currents
//! and refractory effects of real sensors are out of scope.

use super::{Event, EventStream};
use crate::error::{CoreError, Result};

/// Intensity floor added before taking logs.
pub const LOG_EPS: f64 = 1e-3;

/// Grayscale frame with intensities in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width);
        Frame { height, width, data }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Frame {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Interleaved-channel raw frame (1 = grayscale, 3 = RGB).
#[derive(Clone, Debug)]
pub struct RawFrame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Crop, grayscale (luma 0.299/0.587/0.114), and bilinear-resize frames to
/// `target` (height, width).
pub fn preprocess_frames(
    frames: &[RawFrame],
    crop: CropBox,
    target: (usize, usize),
) -> Result<Vec<Frame>> {
    frames
        .iter()
        .map(|f| {
            if crop.top + crop.height > f.height || crop.left + crop.width > f.width {
                return Err(CoreError::CropOutOfBounds {
                    crop: (crop.top, crop.left, crop.height, crop.width),
                    height: f.height,
                    width: f.width,
                });
            }
            let mut gray = Vec::with_capacity(crop.height * crop.width);
            for r in crop.top..crop.top + crop.height {
                for c in crop.left..crop.left + crop.width {
                    let base = (r * f.width + c) * f.channels;
                    let v = match f.channels {
                        1 => f.data[base],
                        3 => {
                            0.299 * f.data[base]
                                + 0.587 * f.data[base + 1]
                                + 0.114 * f.data[base + 2]
                        }
                        n => {
                            return Err(CoreError::Config(format!(
                                "unsupported channel count {n} (want 1 or 3)"
                            )))
                        }
                    };
                    gray.push(v);
                }
            }
            Ok(bilinear_resize(
                &Frame::new(crop.height, crop.width, gray),
                target.0,
                target.1,
            ))
        })
        .collect()
}

/// Standard bilinear resampling with half-pixel centers.
pub fn bilinear_resize(src: &Frame, out_h: usize, out_w: usize) -> Frame {
    if src.height == out_h && src.width == out_w {
        return src.clone();
    }
    let scale_r = src.height as f64 / out_h as f64;
    let scale_c = src.width as f64 / out_w as f64;
    let mut data = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let sr = ((r as f64 + 0.5) * scale_r - 0.5).clamp(0.0, (src.height - 1) as f64);
        let r0 = sr.floor() as usize;
        let r1 = (r0 + 1).min(src.height - 1);
        let fr = sr - r0 as f64;
        for c in 0..out_w {
            let sc = ((c as f64 + 0.5) * scale_c - 0.5).clamp(0.0, (src.width - 1) as f64);
            let c0 = sc.floor() as usize;
            let c1 = (c0 + 1).min(src.width - 1);
            let fc = sc - c0 as f64;
            let top = src.at(r0, c0) * (1.0 - fc) + src.at(r0, c1) * fc;
            let bottom = src.at(r1, c0) * (1.0 - fc) + src.at(r1, c1) * fc;
            data.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Frame::new(out_h, out_w, data)
}

/// Per pixel, emits `floor(|delta_log| / threshold)` events per frame
/// transition and advances the reference level by the emitted multiples
/// (the unspent remainder carries over). Timestamps interpolate linearly
/// inside the frame interval.
pub fn frames_to_events(
    frames: &[Frame],
    threshold: f64,
    frame_interval_us: u64,
) -> Result<EventStream> {
    if frames.len() < 2 {
        return Err(CoreError::Config(format!(
            "need at least 2 frames, got {}",
            frames.len()
        )));
    }
    if !(threshold > 0.0) {
        return Err(CoreError::Config(format!(
            "contrast threshold must be > 0, got {threshold}"
        )));
    }
    let (h, w) = (frames[0].height, frames[0].width);
    for (i, f) in frames.iter().enumerate() {
        if f.height != h || f.width != w {
            return Err(CoreError::FrameSizeMismatch {
                index: i,
                got: (f.height, f.width),
                expected: (h, w),
            });
        }
        for (p, &v) in f.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::NonFinitePixel {
                    frame: i,
                    row: p / w,
                    col: p % w,
                    value: v,
                });
            }
        }
    }

    let mut stream = EventStream::new(w as u16, h as u16);
    let mut l_ref: Vec<f64> = frames[0].data.iter().map(|&v| (v + LOG_EPS).ln()).collect();
    for k in 1..frames.len() {
        let t_prev = (k as u64 - 1) * frame_interval_us;
        for p in 0..h * w {
            let l_new = (frames[k].data[p] + LOG_EPS).ln();
            let delta = l_new - l_ref[p];
            let n = (delta.abs() / threshold).floor() as u64;
            if n == 0 {
                continue;
            }
            let polarity: i8 = if delta > 0.0 { 1 } else { -1 };
            let (x, y) = ((p % w) as u16, (p / w) as u16);
            for j in 0..n {
                let t_us = t_prev + frame_interval_us * (j + 1) / (n + 1);
                stream.events.push(Event { t_us, x, y, polarity });
            }
            l_ref[p] += polarity as f64 * n as f64 * threshold;
        }
    }
    stream.sort();
    Ok(stream)
}
