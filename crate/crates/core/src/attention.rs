//! Temporal attention, spatial attention, and their joint composition.
//!
//! Temporal attention pools the input over space (mean and max), runs both
//! pooled signals through one shared pair of temporal convolutions, fuses
//! the two sigmoid gates with an elementwise max, and rescales the input
//! with a residual: `X * S + X`. Spatial attention pools over channels,
//! convolves the concatenated mean/max maps to a single sigmoid gate, and
//! applies `attn * X + X`. The joint module is `SA(TA(X)) + X`.

use serde::{Deserialize, Serialize};

use crate::conv::{Activation, Triple};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, ReduceOp, Var};
use crate::tensor::Tensor;

/// Hyperparameters of the joint attention module.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Channel reduction ratio of the temporal bottleneck; must divide C.
    pub reduction: usize,
    /// Temporal kernel extent of the shared convolutions (odd, same-padded).
    pub temporal_kernel: usize,
    /// Kernel of the spatial-attention convolution (same-padded).
    pub spatial_kernel: Triple,
    /// Nonlinearity between the two shared temporal convolutions.
    pub phi: Activation,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            reduction: 2,
            temporal_kernel: 3,
            spatial_kernel: (1, 7, 7),
            phi: Activation::Relu,
        }
    }
}

/// Shared-parameter temporal attention weights. The average and max branch
/// run through the *same* two convolutions.
#[derive(Clone, Debug)]
pub struct TemporalAttentionParams {
    pub conv1_weight: Tensor, // [C/r, C, k, 1, 1]
    pub conv1_bias: Tensor,   // [C/r]
    pub conv2_weight: Tensor, // [C, C/r, k, 1, 1]
    pub conv2_bias: Tensor,   // [C]
    pub phi: Activation,
}

impl TemporalAttentionParams {
    pub fn zeros(channels: usize, cfg: &AttentionConfig) -> Result<Self> {
        let reduced = reduced_channels(channels, cfg.reduction)?;
        let k = cfg.temporal_kernel;
        Ok(TemporalAttentionParams {
            conv1_weight: Tensor::zeros(&[reduced, channels, k, 1, 1]),
            conv1_bias: Tensor::zeros(&[reduced]),
            conv2_weight: Tensor::zeros(&[channels, reduced, k, 1, 1]),
            conv2_bias: Tensor::zeros(&[channels]),
            phi: cfg.phi,
        })
    }
}

/// Spatial attention weights: one convolution mapping the two pooled maps
/// to a single gate channel.
#[derive(Clone, Debug)]
pub struct SpatialAttentionParams {
    pub conv_weight: Tensor, // [1, 2, kt, kh, kw]
    pub conv_bias: Tensor,   // [1]
}

impl SpatialAttentionParams {
    pub fn zeros(cfg: &AttentionConfig) -> Self {
        let (kt, kh, kw) = cfg.spatial_kernel;
        SpatialAttentionParams {
            conv_weight: Tensor::zeros(&[1, 2, kt, kh, kw]),
            conv_bias: Tensor::zeros(&[1]),
        }
    }
}

pub fn reduced_channels(channels: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || channels % reduction != 0 {
        return Err(CoreError::Config(format!(
            "attention reduction {reduction} must be >= 1 and divide C={channels}"
        )));
    }
    Ok(channels / reduction)
}

/// Graph handles to temporal attention parameters.
#[derive(Clone, Copy, Debug)]
pub struct TemporalAttentionVars {
    pub conv1_weight: Var,
    pub conv1_bias: Var,
    pub conv2_weight: Var,
    pub conv2_bias: Var,
    pub phi: Activation,
}

#[derive(Clone, Copy, Debug)]
pub struct SpatialAttentionVars {
    pub conv_weight: Var,
    pub conv_bias: Var,
}

/// Intermediate gates, exposed for the branch-sharing and gate-range tests.
#[derive(Clone, Copy, Debug)]
pub struct TemporalAttentionTrace {
    pub s_t: Var,
    pub s_s: Var,
    pub s: Var,
    pub out: Var,
}

impl Graph {
    /// Temporal attention: spatial mean/max pooling, the shared two-conv
    /// bottleneck per branch, elementwise max of the two gates, then
    /// `X * S + X` with S broadcast over (H, W).
    pub fn temporal_attention(&mut self, x: Var, p: &TemporalAttentionVars) -> Result<Var> {
        Ok(self.temporal_attention_traced(x, p)?.out)
    }

    pub fn temporal_attention_traced(
        &mut self,
        x: Var,
        p: &TemporalAttentionVars,
    ) -> Result<TemporalAttentionTrace> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 5 {
            return Err(CoreError::RankMismatch {
                op: "temporal_attention",
                expected: 5,
                shape: xs,
            });
        }
        let k = self.shape(p.conv1_weight)[2];
        let pad = ((k - 1) / 2, 0, 0);
        let z_avg = self.reduce(ReduceOp::Mean, x, &[3, 4], true)?;
        let z_max = self.reduce(ReduceOp::Max, x, &[3, 4], true)?;

        let branch = |g: &mut Graph, z: Var| -> Result<Var> {
            let y = g.dense_conv3d(z, p.conv1_weight, Some(p.conv1_bias), (1, 1, 1), pad)?;
            let y = g.activation(y, p.phi);
            let y = g.dense_conv3d(y, p.conv2_weight, Some(p.conv2_bias), (1, 1, 1), pad)?;
            Ok(g.sigmoid(y))
        };
        let s_t = branch(self, z_avg)?;
        let s_s = branch(self, z_max)?;
        let s = self.binary_max(s_t, s_s)?;
        let gated = self.mul(x, s)?;
        let out = self.add(gated, x)?;
        Ok(TemporalAttentionTrace { s_t, s_s, s, out })
    }

    /// Spatial attention: channel mean/max maps, concatenated and convolved
    /// to a single sigmoid gate, then `attn * X + X`.
    pub fn spatial_attention(&mut self, x: Var, p: &SpatialAttentionVars) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 5 {
            return Err(CoreError::RankMismatch {
                op: "spatial_attention",
                expected: 5,
                shape: xs,
            });
        }
        let ws = self.shape(p.conv_weight).to_vec();
        if ws[1] != 2 || ws[0] != 1 {
            return Err(CoreError::ChannelMismatch {
                op: "spatial_attention",
                input: ws[1],
                expected: 2,
            });
        }
        let pad = ((ws[2] - 1) / 2, (ws[3] - 1) / 2, (ws[4] - 1) / 2);
        let avg_out = self.reduce(ReduceOp::Mean, x, &[1], true)?;
        let max_out = self.reduce(ReduceOp::Max, x, &[1], true)?;
        let pooled = self.concat(avg_out, max_out, 1)?;
        let conv = self.dense_conv3d(pooled, p.conv_weight, Some(p.conv_bias), (1, 1, 1), pad)?;
        let attn = self.sigmoid(conv);
        let gated = self.mul(attn, x)?;
        self.add(gated, x)
    }

    /// Joint composition: `Y = SA(TA(X)) + X`.
    pub fn joint_attention(
        &mut self,
        x: Var,
        tp: &TemporalAttentionVars,
        sp: &SpatialAttentionVars,
    ) -> Result<Var> {
        let ta = self.temporal_attention(x, tp)?;
        let sa = self.spatial_attention(ta, sp)?;
        self.add(sa, x)
    }

    pub fn bind_temporal_attention(&mut self, p: &TemporalAttentionParams) -> TemporalAttentionVars {
        TemporalAttentionVars {
            conv1_weight: self.leaf(p.conv1_weight.clone(), true),
            conv1_bias: self.leaf(p.conv1_bias.clone(), true),
            conv2_weight: self.leaf(p.conv2_weight.clone(), true),
            conv2_bias: self.leaf(p.conv2_bias.clone(), true),
            phi: p.phi,
        }
    }

    pub fn bind_spatial_attention(&mut self, p: &SpatialAttentionParams) -> SpatialAttentionVars {
        SpatialAttentionVars {
            conv_weight: self.leaf(p.conv_weight.clone(), true),
            conv_bias: self.leaf(p.conv_bias.clone(), true),
        }
    }
}
