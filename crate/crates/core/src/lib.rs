//! Event-stream spatio-temporal classification building blocks: a small f64
//! autodiff core, soft spiking neurons, factorized 3D convolutions, joint
//! spatial-temporal attention, an event-data pipeline, a training loop, and
//! an analytic FLOPs/energy profiler.

#![forbid(unsafe_code)]

pub mod attention;
pub mod check;
pub mod data;
pub mod conv;
pub mod error;
pub mod events;
pub mod graph;
mod kernels;
pub mod network;
pub mod profiler;
pub mod ssn;
pub mod tensor;
pub mod trainer;
pub mod threads;

pub use error::{CoreError, Result};
pub use graph::{Graph, ReduceOp, Var};
pub use tensor::Tensor;
