use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: left {left:?} vs right {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid axis {axis} for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("expected rank {expected}, got shape {shape:?} in {op}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("channel mismatch in {op}: input has {input} channels, parameters expect {expected}")]
    ChannelMismatch {
        op: &'static str,
        input: usize,
        expected: usize,
    },

    #[error("kernel {kernel:?} exceeds padded input {padded:?} in {op}")]
    KernelExceedsInput {
        op: &'static str,
        kernel: Vec<usize>,
        padded: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("label {label} out of range for {classes} classes (sample {sample})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        sample: usize,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("forward failed at layer `{layer}`: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<CoreError>,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training aborted: non-finite loss at epoch {epoch}, step {step} (loss={loss})")]
    NanLoss { epoch: usize, step: usize, loss: f64 },

    #[error("malformed record at {path}:{line}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("event ({x},{y}) outside sensor geometry {width}x{height} at {path}:{line}")]
    EventOutOfBounds {
        path: PathBuf,
        line: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },

    #[error("frame size mismatch: frame {index} is {got:?}, expected {expected:?}")]
    FrameSizeMismatch {
        index: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },

    #[error("non-finite pixel value {value} in frame {frame} at ({row},{col})")]
    NonFinitePixel {
        frame: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("crop box {crop:?} out of bounds for {height}x{width} frame")]
    CropOutOfBounds {
        crop: (usize, usize, usize, usize),
        height: usize,
        width: usize,
    },

    #[error("degenerate geometry {width}x{height}: need at least 8x8")]
    DegenerateGeometry { width: usize, height: usize },

    #[error("power trace needs at least 2 samples, got {0}")]
    TraceTooShort(usize),

    #[error("power trace timestamps not strictly increasing at sample {index} ({prev} -> {next})")]
    NonMonotoneTrace { index: usize, prev: f64, next: f64 },

    #[error("negative power {power} at trace sample {index}")]
    NegativePower { index: usize, power: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the name of the layer it occurred in.
    pub fn at_layer(self, layer: impl Into<String>) -> Self {
        CoreError::Layer {
            layer: layer.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
