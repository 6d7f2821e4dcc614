//! Model assembly: declarative layer specs, parameter initialization, the
//! forward pass to logits, and checkpoint serialization.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    reduced_channels, AttentionConfig, SpatialAttentionVars, TemporalAttentionVars,
};
use crate::conv::{
    factorized_block_forward, Activation, BnStats, FactorizedBlockOptions, FactorizedBlockVars,
    Triple,
};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::ssn::SsnParams;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CS3DCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Which nonlinearity the convolutional stages use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Ssn,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    FactorizedBlock {
        out_channels: usize,
    },
    DenseConv {
        out_channels: usize,
        kernel: Triple,
    },
    MaxPool {
        window: Triple,
        stride: Triple,
    },
    /// Concatenated max+average pooling by default; `max_only` falls back
    /// to plain max pooling (no channel doubling) so the concatenation can
    /// be ablated in isolation.
    MultiPool {
        window: Triple,
        stride: Triple,
        #[serde(default)]
        max_only: bool,
    },
    Attention {
        temporal: bool,
        spatial: bool,
    },
    Flatten,
    Linear {
        out_features: usize,
        activation: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// (C, T, H, W) of one sample.
    pub input_shape: (usize, usize, usize, usize),
    pub class_count: usize,
    pub blocks: Vec<LayerSpec>,
    pub activation: ActivationKind,
    pub ssn: SsnParams,
    pub attention: AttentionConfig,
    pub seed: u64,
}

/// Runtime toggles for the ablation variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub no_ssn: bool,
    pub no_factorized: bool,
    pub no_temporal_attn: bool,
    pub no_spatial_attn: bool,
}

impl ModelConfig {
    /// Default classifier: four factorized residual blocks with interleaved
    /// pooling, one multi-pool stage, the joint attention module, and a
    /// linear head.
    pub fn cs3d(input_shape: (usize, usize, usize, usize), class_count: usize, seed: u64) -> Self {
        ModelConfig {
            input_shape,
            class_count,
            blocks: vec![
                LayerSpec::FactorizedBlock { out_channels: 16 },
                LayerSpec::MaxPool {
                    window: (1, 2, 2),
                    stride: (1, 2, 2),
                },
                LayerSpec::FactorizedBlock { out_channels: 32 },
                LayerSpec::MaxPool {
                    window: (1, 2, 2),
                    stride: (1, 2, 2),
                },
                LayerSpec::FactorizedBlock { out_channels: 64 },
                LayerSpec::MaxPool {
                    window: (2, 2, 2),
                    stride: (2, 2, 2),
                },
                LayerSpec::FactorizedBlock { out_channels: 64 },
                LayerSpec::MaxPool {
                    window: (2, 2, 2),
                    stride: (2, 2, 2),
                },
                LayerSpec::MultiPool {
                    window: (2, 2, 2),
                    stride: (2, 2, 2),
                    max_only: false,
                },
                LayerSpec::Attention {
                    temporal: true,
                    spatial: true,
                },
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    out_features: class_count,
                    activation: false,
                },
            ],
            activation: ActivationKind::Ssn,
            ssn: SsnParams::default(),
            attention: AttentionConfig::default(),
            seed,
        }
    }

    /// Baseline: five dense 3D convolution stages with pooling, then two
    /// fully connected layers.
    pub fn c3d(input_shape: (usize, usize, usize, usize), class_count: usize, seed: u64) -> Self {
        let conv = |out_channels| LayerSpec::DenseConv {
            out_channels,
            kernel: (3, 3, 3),
        };
        let pool = |w: Triple| LayerSpec::MaxPool { window: w, stride: w };
        ModelConfig {
            input_shape,
            class_count,
            blocks: vec![
                conv(16),
                pool((1, 2, 2)),
                conv(32),
                pool((2, 2, 2)),
                conv(64),
                pool((2, 2, 2)),
                conv(64),
                pool((2, 2, 2)),
                conv(64),
                pool((2, 2, 2)),
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    out_features: 256,
                    activation: true,
                },
                LayerSpec::Linear {
                    out_features: class_count,
                    activation: false,
                },
            ],
            activation: ActivationKind::Relu,
            ssn: SsnParams::default(),
            attention: AttentionConfig::default(),
            seed,
        }
    }

    /// Baseline plus the joint attention module before the classifier.
    pub fn c3d_with_attention(
        input_shape: (usize, usize, usize, usize),
        class_count: usize,
        seed: u64,
    ) -> Self {
        let mut cfg = Self::c3d(input_shape, class_count, seed);
        let flatten_at = cfg
            .blocks
            .iter()
            .position(|l| matches!(l, LayerSpec::Flatten))
            .expect("baseline config has a flatten stage");
        cfg.blocks.insert(
            flatten_at,
            LayerSpec::Attention {
                temporal: true,
                spatial: true,
            },
        );
        cfg
    }

    /// Rewrites the config per the runtime ablation flags: swap SSN for the
    /// plain rectifier, swap factorized blocks for dense 3x3x3 convolutions,
    /// and drop either attention half.
    pub fn apply_ablation(&mut self, flags: AblationFlags) {
        if flags.no_ssn {
            self.activation = ActivationKind::Relu;
        }
        if flags.no_factorized {
            for layer in &mut self.blocks {
                if let LayerSpec::FactorizedBlock { out_channels } = *layer {
                    *layer = LayerSpec::DenseConv {
                        out_channels,
                        kernel: (3, 3, 3),
                    };
                }
            }
        }
        if flags.no_temporal_attn || flags.no_spatial_attn {
            let mut keep = Vec::with_capacity(self.blocks.len());
            for layer in self.blocks.drain(..) {
                if let LayerSpec::Attention { temporal, spatial } = layer {
                    let temporal = temporal && !flags.no_temporal_attn;
                    let spatial = spatial && !flags.no_spatial_attn;
                    if temporal || spatial {
                        keep.push(LayerSpec::Attention { temporal, spatial });
                    }
                } else {
                    keep.push(layer);
                }
            }
            self.blocks = keep;
        }
    }

    fn stage_activation(&self) -> Activation {
        match self.activation {
            ActivationKind::Ssn => Activation::Ssn(self.ssn),
            ActivationKind::Relu => Activation::Relu,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Config(format!("serialize: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoreError::Config(format!("parse config: {e}")))
    }
}

/// Named architecture variants used by the ablation comparison. `c3d` is
/// the dense baseline; `c3d+X` adds exactly one component; `cs3d` is the
/// full model.
pub const VARIANT_NAMES: [&str; 5] = ["c3d", "c3d+ssn", "c3d+factorized", "c3d+attention", "cs3d"];

pub fn variant_config(
    name: &str,
    input_shape: (usize, usize, usize, usize),
    class_count: usize,
    seed: u64,
) -> Result<ModelConfig> {
    let cfg = match name {
        "c3d" => ModelConfig::c3d(input_shape, class_count, seed),
        "c3d+ssn" => {
            let mut cfg = ModelConfig::c3d(input_shape, class_count, seed);
            cfg.activation = ActivationKind::Ssn;
            cfg
        }
        "c3d+factorized" => {
            // the factorized backbone alone: no SSN, no attention
            let mut cfg = ModelConfig::cs3d(input_shape, class_count, seed);
            cfg.apply_ablation(AblationFlags {
                no_ssn: true,
                no_temporal_attn: true,
                no_spatial_attn: true,
                no_factorized: false,
            });
            cfg
        }
        "c3d+attention" => ModelConfig::c3d_with_attention(input_shape, class_count, seed),
        "cs3d" => ModelConfig::cs3d(input_shape, class_count, seed),
        other => {
            return Err(CoreError::Config(format!(
                "unknown variant `{other}` (expected one of {VARIANT_NAMES:?})"
            )))
        }
    };
    Ok(cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

struct ParamEntry {
    name: String,
    value: Tensor,
}

/// Named storage for every trainable tensor; each appears exactly once
/// under a unique path name, in deterministic build order.
#[derive(Default)]
pub struct ParamRegistry {
    entries: Vec<ParamEntry>,
}

impl ParamRegistry {
    fn register(&mut self, name: String, value: Tensor) -> ParamId {
        debug_assert!(
            !self.entries.iter().any(|e| e.name == name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total element count over every registered tensor.
    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }
}

pub(crate) struct AttentionTemporalIds {
    pub conv1_weight: ParamId,
    pub conv1_bias: ParamId,
    pub conv2_weight: ParamId,
    pub conv2_bias: ParamId,
}

pub(crate) struct AttentionSpatialIds {
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
}

pub(crate) enum Layer {
    Factorized {
        name: String,
        in_channels: usize,
        out_channels: usize,
        dw_temporal: ParamId,
        pw1: ParamId,
        bn1_gamma: ParamId,
        bn1_delta: ParamId,
        dw_spatial: ParamId,
        pw2: ParamId,
        bn2_gamma: ParamId,
        bn2_delta: ParamId,
        projection: Option<ParamId>,
        bn1: BnStats,
        bn2: BnStats,
        activation: Activation,
    },
    DenseConv {
        name: String,
        weight: ParamId,
        bias: ParamId,
        padding: Triple,
        activation: Activation,
    },
    MaxPool {
        name: String,
        window: Triple,
        stride: Triple,
    },
    MultiPool {
        name: String,
        window: Triple,
        stride: Triple,
        max_only: bool,
    },
    Attention {
        name: String,
        channels: usize,
        temporal: Option<AttentionTemporalIds>,
        spatial: Option<AttentionSpatialIds>,
        phi: Activation,
    },
    Flatten {
        name: String,
        features: usize,
    },
    Linear {
        name: String,
        weight: ParamId,
        bias: ParamId,
        activation: Option<Activation>,
    },
}

impl Layer {
    pub(crate) fn name(&self) -> &str {
        match self {
            Layer::Factorized { name, .. }
            | Layer::DenseConv { name, .. }
            | Layer::MaxPool { name, .. }
            | Layer::MultiPool { name, .. }
            | Layer::Attention { name, .. }
            | Layer::Flatten { name, .. }
            | Layer::Linear { name, .. } => name,
        }
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub(crate) layers: Vec<Layer>,
    pub params: ParamRegistry,
}

impl Model {
    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }
}

/// One recorded forward pass: the tape, the logits node, and the parameter
/// bindings needed to read gradients back out.
pub struct ForwardPass {
    pub graph: Graph,
    pub logits: Var,
    param_vars: Vec<Var>,
}

impl ForwardPass {
    pub fn logits_tensor(&self) -> &Tensor {
        self.graph.value(self.logits)
    }

    pub fn param_grad(&self, id: ParamId) -> Option<Tensor> {
        self.graph.grad(self.param_vars[id.0])
    }
}

struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Fan-in scaled uniform weights in (-1/sqrt(fan_in), 1/sqrt(fan_in)).
    fn conv_weight(&mut self, shape: &[usize]) -> Tensor {
        let fan_in: usize = shape[1..].iter().product();
        self.uniform(shape, 1.0 / (fan_in as f64).sqrt())
    }

    fn linear_weight(&mut self, in_features: usize, out_features: usize) -> Tensor {
        self.uniform(&[in_features, out_features], 1.0 / (in_features as f64).sqrt())
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape, data).expect("shape")
    }
}

pub fn build_cs3d(cfg: &ModelConfig) -> Result<Model> {
    Model::build(cfg)
}

pub fn build_c3d(cfg: &ModelConfig) -> Result<Model> {
    Model::build(cfg)
}

impl Model {
    pub fn build(cfg: &ModelConfig) -> Result<Model> {
        if cfg.class_count < 2 {
            return Err(CoreError::Config(format!(
                "class_count must be >= 2, got {}",
                cfg.class_count
            )));
        }
        let (c0, t0, h0, w0) = cfg.input_shape;
        if c0 == 0 || t0 == 0 || h0 == 0 || w0 == 0 {
            return Err(CoreError::Config(format!(
                "input_shape extents must be >= 1, got {:?}",
                cfg.input_shape
            )));
        }
        let mut params = ParamRegistry::default();
        let mut init = Initializer::new(cfg.seed);
        let mut layers = Vec::new();
        let mut shape = vec![c0, t0, h0, w0]; // (C, T, H, W) without batch
        let mut counts = std::collections::HashMap::<&'static str, usize>::new();
        let mut next = |kind: &'static str| {
            let n = counts.entry(kind).or_insert(0);
            *n += 1;
            format!("{kind}{n}")
        };
        let act = cfg.stage_activation();

        for (i, spec) in cfg.blocks.iter().enumerate() {
            match *spec {
                LayerSpec::FactorizedBlock { out_channels } => {
                    let name = next("block");
                    let c_in = shape[0];
                    let dw_temporal = params.register(
                        format!("{name}.dw_temporal"),
                        init.conv_weight(&[c_in, 1, 3, 1, 1]),
                    );
                    let pw1 = params.register(
                        format!("{name}.pw1"),
                        init.conv_weight(&[out_channels, c_in, 1, 1, 1]),
                    );
                    let bn1_gamma = params
                        .register(format!("{name}.bn1.gamma"), Tensor::full(&[out_channels], 1.0));
                    let bn1_delta =
                        params.register(format!("{name}.bn1.delta"), Tensor::zeros(&[out_channels]));
                    let dw_spatial = params.register(
                        format!("{name}.dw_spatial"),
                        init.conv_weight(&[out_channels, 1, 1, 3, 3]),
                    );
                    let pw2 = params.register(
                        format!("{name}.pw2"),
                        init.conv_weight(&[out_channels, out_channels, 1, 1, 1]),
                    );
                    let bn2_gamma = params
                        .register(format!("{name}.bn2.gamma"), Tensor::full(&[out_channels], 1.0));
                    let bn2_delta =
                        params.register(format!("{name}.bn2.delta"), Tensor::zeros(&[out_channels]));
                    let projection = (c_in != out_channels).then(|| {
                        params.register(
                            format!("{name}.projection"),
                            init.conv_weight(&[out_channels, c_in, 1, 1, 1]),
                        )
                    });
                    layers.push(Layer::Factorized {
                        name,
                        in_channels: c_in,
                        out_channels,
                        dw_temporal,
                        pw1,
                        bn1_gamma,
                        bn1_delta,
                        dw_spatial,
                        pw2,
                        bn2_gamma,
                        bn2_delta,
                        projection,
                        bn1: BnStats::new(out_channels),
                        bn2: BnStats::new(out_channels),
                        activation: act,
                    });
                    shape[0] = out_channels;
                }
                LayerSpec::DenseConv { out_channels, kernel } => {
                    let name = next("conv");
                    let c_in = shape[0];
                    let (kt, kh, kw) = kernel;
                    let weight = params.register(
                        format!("{name}.weight"),
                        init.conv_weight(&[out_channels, c_in, kt, kh, kw]),
                    );
                    let bias =
                        params.register(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
                    layers.push(Layer::DenseConv {
                        name,
                        weight,
                        bias,
                        padding: ((kt - 1) / 2, (kh - 1) / 2, (kw - 1) / 2),
                        activation: act,
                    });
                    shape[0] = out_channels;
                }
                LayerSpec::MaxPool { window, stride }
                | LayerSpec::MultiPool { window, stride, .. } => {
                    let multi = matches!(spec, LayerSpec::MultiPool { .. });
                    let max_only = matches!(spec, LayerSpec::MultiPool { max_only: true, .. });
                    let name = next(if multi { "multi_pool" } else { "pool" });
                    let out = pooled_extents(&shape[1..], window, stride).ok_or_else(|| {
                        CoreError::Config(format!(
                            "layer {i} ({name}): pool window {window:?} exceeds extents {:?}",
                            &shape[1..]
                        ))
                    })?;
                    let doubled = multi && !max_only;
                    shape = vec![if doubled { shape[0] * 2 } else { shape[0] }, out.0, out.1, out.2];
                    layers.push(if multi {
                        Layer::MultiPool { name, window, stride, max_only }
                    } else {
                        Layer::MaxPool { name, window, stride }
                    });
                }
                LayerSpec::Attention { temporal, spatial } => {
                    let name = next("attention");
                    let c = shape[0];
                    let temporal = temporal
                        .then(|| -> Result<AttentionTemporalIds> {
                            let reduced = reduced_channels(c, cfg.attention.reduction)?;
                            let k = cfg.attention.temporal_kernel;
                            Ok(AttentionTemporalIds {
                                conv1_weight: params.register(
                                    format!("{name}.temporal.conv1.weight"),
                                    init.conv_weight(&[reduced, c, k, 1, 1]),
                                ),
                                conv1_bias: params.register(
                                    format!("{name}.temporal.conv1.bias"),
                                    Tensor::zeros(&[reduced]),
                                ),
                                conv2_weight: params.register(
                                    format!("{name}.temporal.conv2.weight"),
                                    init.conv_weight(&[c, reduced, k, 1, 1]),
                                ),
                                conv2_bias: params.register(
                                    format!("{name}.temporal.conv2.bias"),
                                    Tensor::zeros(&[c]),
                                ),
                            })
                        })
                        .transpose()?;
                    let spatial = spatial.then(|| {
                        let (kt, kh, kw) = cfg.attention.spatial_kernel;
                        AttentionSpatialIds {
                            conv_weight: params.register(
                                format!("{name}.spatial.conv.weight"),
                                init.conv_weight(&[1, 2, kt, kh, kw]),
                            ),
                            conv_bias: params
                                .register(format!("{name}.spatial.conv.bias"), Tensor::zeros(&[1])),
                        }
                    });
                    layers.push(Layer::Attention {
                        name,
                        channels: c,
                        temporal,
                        spatial,
                        phi: cfg.attention.phi,
                    });
                }
                LayerSpec::Flatten => {
                    let name = next("flatten");
                    let features = shape.iter().product();
                    layers.push(Layer::Flatten { name, features });
                    shape = vec![features];
                }
                LayerSpec::Linear { out_features, activation } => {
                    let name = next("fc");
                    if shape.len() != 1 {
                        return Err(CoreError::Config(format!(
                            "layer {i} ({name}): linear requires flattened input, got {shape:?}"
                        )));
                    }
                    let weight = params.register(
                        format!("{name}.weight"),
                        init.linear_weight(shape[0], out_features),
                    );
                    let bias =
                        params.register(format!("{name}.bias"), Tensor::zeros(&[out_features]));
                    layers.push(Layer::Linear {
                        name,
                        weight,
                        bias,
                        activation: activation.then_some(act),
                    });
                    shape = vec![out_features];
                }
            }
        }

        if shape != vec![cfg.class_count] {
            return Err(CoreError::Config(format!(
                "final stage must emit class_count={} logits, got shape {shape:?}",
                cfg.class_count
            )));
        }
        Ok(Model {
            cfg: cfg.clone(),
            layers,
            params,
        })
    }

    /// Forward pass to logits `[B, class_count]`. Train mode records the
    /// gradient tape and updates batch-norm running statistics.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<ForwardPass> {
        let (c, t, h, w) = self.cfg.input_shape;
        if batch.rank() != 5 || batch.shape()[1..] != [c, t, h, w] {
            return Err(CoreError::ShapeMismatch {
                op: "model input",
                left: batch.shape().to_vec(),
                right: vec![batch.shape()[0], c, t, h, w],
            });
        }
        let train = mode == Mode::Train;
        let mut g = Graph::new(train);
        let param_vars: Vec<Var> = self
            .params
            .ids()
            .map(|id| g.leaf(self.params.get(id).clone(), true))
            .collect();
        let v = |id: ParamId| param_vars[id.0];

        let mut x = g.leaf(batch.clone(), false);
        for layer in &mut self.layers {
            let step = (|| -> Result<Var> {
                match layer {
                    Layer::Factorized {
                        dw_temporal,
                        pw1,
                        bn1_gamma,
                        bn1_delta,
                        dw_spatial,
                        pw2,
                        bn2_gamma,
                        bn2_delta,
                        projection,
                        bn1,
                        bn2,
                        activation,
                        ..
                    } => {
                        let vars = FactorizedBlockVars {
                            dw_temporal: v(*dw_temporal),
                            pw1: v(*pw1),
                            bn1_gamma: v(*bn1_gamma),
                            bn1_delta: v(*bn1_delta),
                            dw_spatial: v(*dw_spatial),
                            pw2: v(*pw2),
                            bn2_gamma: v(*bn2_gamma),
                            bn2_delta: v(*bn2_delta),
                            projection: projection.map(&v),
                        };
                        let opts = FactorizedBlockOptions {
                            activation1: *activation,
                            activation2: *activation,
                            residual: true,
                        };
                        factorized_block_forward(&mut g, x, &vars, bn1, bn2, opts, train)
                    }
                    Layer::DenseConv {
                        weight,
                        bias,
                        padding,
                        activation,
                        ..
                    } => {
                        let y =
                            g.dense_conv3d(x, v(*weight), Some(v(*bias)), (1, 1, 1), *padding)?;
                        Ok(g.activation(y, *activation))
                    }
                    Layer::MaxPool { window, stride, .. } => g.maxpool3d(x, *window, *stride),
                    Layer::MultiPool {
                        window,
                        stride,
                        max_only,
                        ..
                    } => {
                        if *max_only {
                            g.maxpool3d(x, *window, *stride)
                        } else {
                            g.multi_pool(x, *window, *stride)
                        }
                    }
                    Layer::Attention {
                        temporal, spatial, phi, ..
                    } => {
                        let tv = temporal.as_ref().map(|t| TemporalAttentionVars {
                            conv1_weight: v(t.conv1_weight),
                            conv1_bias: v(t.conv1_bias),
                            conv2_weight: v(t.conv2_weight),
                            conv2_bias: v(t.conv2_bias),
                            phi: *phi,
                        });
                        let sv = spatial.as_ref().map(|s| SpatialAttentionVars {
                            conv_weight: v(s.conv_weight),
                            conv_bias: v(s.conv_bias),
                        });
                        match (tv, sv) {
                            (Some(tv), Some(sv)) => g.joint_attention(x, &tv, &sv),
                            (Some(tv), None) => g.temporal_attention(x, &tv),
                            (None, Some(sv)) => g.spatial_attention(x, &sv),
                            (None, None) => Ok(x),
                        }
                    }
                    Layer::Flatten { features, .. } => {
                        let b = g.shape(x)[0];
                        g.reshape(x, &[b, *features])
                    }
                    Layer::Linear {
                        weight,
                        bias,
                        activation,
                        ..
                    } => {
                        let y = g.linear(x, v(*weight), v(*bias))?;
                        Ok(match activation {
                            Some(a) => g.activation(y, *a),
                            None => y,
                        })
                    }
                }
            })();
            x = step.map_err(|e| e.at_layer(layer.name()))?;
        }
        Ok(ForwardPass {
            graph: g,
            logits: x,
            param_vars,
        })
    }

    /// Per-layer running statistics (batch-norm buffers), named like
    /// parameters; serialized into checkpoints alongside them.
    pub fn named_buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::Factorized { name, bn1, bn2, .. } = layer {
                out.push((format!("{name}.bn1.running_mean"), bn1.mean.clone()));
                out.push((format!("{name}.bn1.running_var"), bn1.var.clone()));
                out.push((format!("{name}.bn2.running_mean"), bn2.mean.clone()));
                out.push((format!("{name}.bn2.running_var"), bn2.var.clone()));
            }
        }
        out
    }

    fn set_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        for layer in &mut self.layers {
            if let Layer::Factorized { name: lname, bn1, bn2, .. } = layer {
                let target = match name.strip_prefix(&format!("{lname}.")) {
                    Some("bn1.running_mean") => Some(&mut bn1.mean),
                    Some("bn1.running_var") => Some(&mut bn1.var),
                    Some("bn2.running_mean") => Some(&mut bn2.mean),
                    Some("bn2.running_var") => Some(&mut bn2.var),
                    _ => None,
                };
                if let Some(slot) = target {
                    if slot.shape() != value.shape() {
                        return Err(CoreError::InvalidTensor(format!(
                            "buffer {name}: shape {:?} != {:?}",
                            value.shape(),
                            slot.shape()
                        )));
                    }
                    *slot = value;
                    return Ok(());
                }
            }
        }
        Err(CoreError::InvalidTensor(format!("unknown buffer {name}")))
    }

    /// Writes the checkpoint: magic, version, entry count, then
    /// (name, tensor container) records for every parameter and buffer.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        entries.extend(self.named_buffers());
        write_checkpoint_entries(path, &entries)
    }

    /// Overwrites parameters and buffers from a raw state snapshot.
    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in entries {
            if let Some(id) = self.params.ids().find(|&id| self.params.name(id) == *name) {
                *self.params.get_mut(id) = tensor.clone();
            } else {
                self.set_buffer(name, tensor.clone())?;
            }
        }
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
        let entries = read_checkpoint_entries(&mut f)?;
        for (name, tensor) in entries {
            if let Some(id) = self.params.ids().find(|&id| self.params.name(id) == name) {
                if self.params.get(id).shape() != tensor.shape() {
                    return Err(CoreError::InvalidTensor(format!(
                        "checkpoint {name}: shape {:?} != {:?}",
                        tensor.shape(),
                        self.params.get(id).shape()
                    )));
                }
                *self.params.get_mut(id) = tensor;
            } else {
                self.set_buffer(&name, tensor)?;
            }
        }
        Ok(())
    }
}

/// Writes a raw named-tensor table in the checkpoint container format.
pub fn write_checkpoint_entries(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    f.write_all(CHECKPOINT_MAGIC)
        .and_then(|_| f.write_all(&CHECKPOINT_VERSION.to_le_bytes()))
        .and_then(|_| f.write_all(&(entries.len() as u32).to_le_bytes()))
        .map_err(|e| CoreError::io(path, e))?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        f.write_all(&(bytes.len() as u32).to_le_bytes())
            .and_then(|_| f.write_all(bytes))
            .map_err(|e| CoreError::io(path, e))?;
        tensor.write_to(&mut f).map_err(|e| CoreError::io(path, e))?;
    }
    Ok(())
}

/// Raw checkpoint walk, independent of any model: (name, tensor) records.
pub fn read_checkpoint_entries<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| CoreError::InvalidTensor(format!("checkpoint header: {e}")))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CoreError::InvalidTensor("bad checkpoint magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|e| CoreError::InvalidTensor(format!("checkpoint version: {e}")))?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(CoreError::InvalidTensor(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    r.read_exact(&mut u32buf)
        .map_err(|e| CoreError::InvalidTensor(format!("checkpoint count: {e}")))?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf)
            .map_err(|e| CoreError::InvalidTensor(format!("entry name length: {e}")))?;
        let len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| CoreError::InvalidTensor(format!("entry name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|e| CoreError::InvalidTensor(format!("entry name utf8: {e}")))?;
        let tensor = Tensor::read_from(r)?;
        out.push((name, tensor));
    }
    Ok(out)
}

fn pooled_extents(ext: &[usize], window: Triple, stride: Triple) -> Option<Triple> {
    let t = crate::conv::conv_out_extent(ext[0], 0, window.0, stride.0)?;
    let h = crate::conv::conv_out_extent(ext[1], 0, window.1, stride.1)?;
    let w = crate::conv::conv_out_extent(ext[2], 0, window.2, stride.2)?;
    Some((t, h, w))
}
