//! Analytic per-layer FLOPs/parameter accounting and energy estimation from
//! sampled power traces.
//!
//! Counting conventions: 1 MAC = 1 FLOP (the usual profiling-tool
//! convention, so G-scale numbers are comparable); bias additions and every
//! elementwise operation (batch norm, activations, attention gating,
//! pooling) count 1 op per output element. Counting the cheap elementwise
//! work keeps per-layer additivity exact.

use std::path::Path;

use crate::attention::reduced_channels;
use crate::conv::Triple;
use crate::error::{CoreError, Result};
use crate::network::{Layer, Model};

// ── MAC rules ───────────────────────────────────────────────────────

pub fn dense_conv_macs(out_elems: u64, c_in: u64, kernel_volume: u64) -> u64 {
    out_elems * c_in * kernel_volume
}

pub fn depthwise_conv_macs(out_elems: u64, kernel_volume: u64) -> u64 {
    out_elems * kernel_volume
}

pub fn pointwise_conv_macs(out_elems: u64, c_in: u64) -> u64 {
    out_elems * c_in
}

pub fn linear_macs(n: u64, in_features: u64, out_features: u64) -> u64 {
    n * in_features * out_features
}

#[derive(Clone, Debug)]
pub struct ProfileRow {
    pub name: String,
    pub kind: &'static str,
    /// Output shape of one sample: (C, T, H, W) or flattened features.
    pub out_shape: Vec<usize>,
    pub params: usize,
    pub macs: u64,
    pub flops: u64,
}

#[derive(Clone, Debug)]
pub struct ProfileReport {
    pub model: String,
    pub rows: Vec<ProfileRow>,
    pub total_params: usize,
    pub total_macs: u64,
    pub total_flops: u64,
    /// total_flops / 1e9, exactly.
    pub flops_g: f64,
    pub energy_joules: Option<f64>,
}

impl ProfileReport {
    pub fn energy_mj(&self) -> Option<f64> {
        self.energy_joules.map(|j| j * 1000.0)
    }

    /// CSV with one row per layer: `layer,kind,out_shape,params,flops`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,out_shape,params,flops\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.name,
                r.kind,
                shape_string(&r.out_shape),
                r.params,
                r.flops
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut lines = vec![format!(
            "{:<14} {:<12} {:<16} {:>10} {:>14} {:>14}",
            "layer", "kind", "out_shape", "params", "macs", "flops"
        )];
        for r in &self.rows {
            lines.push(format!(
                "{:<14} {:<12} {:<16} {:>10} {:>14} {:>14}",
                r.name,
                r.kind,
                shape_string(&r.out_shape),
                r.params,
                r.macs,
                r.flops
            ));
        }
        lines.push(format!(
            "{:<14} {:<12} {:<16} {:>10} {:>14} {:>14}",
            "total", "", "", self.total_params, self.total_macs, self.total_flops
        ));
        lines.push(format!("FLOPs (G): {:.6}", self.flops_g));
        if let Some(mj) = self.energy_mj() {
            lines.push(format!("Energy (mJ): {}", format_mj(mj)));
        }
        lines.join("\n")
    }
}

pub fn shape_string(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

/// Renders millijoules in engineering notation with three significant
/// digits, e.g. 18200 mJ -> "18.2 x 10^3".
pub fn format_mj(mj: f64) -> String {
    if mj >= 1000.0 {
        let exp = 3 * ((mj.log10() / 3.0).floor() as i32);
        let mantissa = mj / 10f64.powi(exp);
        format!("{} x 10^{exp}", round_sig(mantissa, 3))
    } else {
        format!("{}", round_sig(mj, 3))
    }
}

fn round_sig(v: f64, digits: i32) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let scale = 10f64.powi(digits - 1 - v.abs().log10().floor() as i32);
    (v * scale).round() / scale
}

/// Sum of tensor element counts over the parameter registry.
pub fn count_params(m: &Model) -> usize {
    m.params.element_count()
}

/// Symbolic shape propagation over every layer at batch size 1, applying
/// the per-layer counting rules.
pub fn count_flops(m: &Model, input_shape: (usize, usize, usize, usize)) -> Result<ProfileReport> {
    let (c0, t0, h0, w0) = input_shape;
    let mut shape = vec![c0, t0, h0, w0];
    let mut rows = Vec::new();

    for layer in m.layers() {
        let row = layer_row(m, layer, &shape)
            .map_err(|e| e.at_layer(layer.name()))?;
        shape = row.out_shape.clone();
        rows.push(row);
    }
    let total_params: usize = rows.iter().map(|r| r.params).sum();
    let total_macs: u64 = rows.iter().map(|r| r.macs).sum();
    let total_flops: u64 = rows.iter().map(|r| r.flops).sum();
    Ok(ProfileReport {
        model: String::new(),
        rows,
        total_params,
        total_macs,
        total_flops,
        flops_g: total_flops as f64 / 1e9,
        energy_joules: None,
    })
}

/// FLOPs plus optional trace-derived energy, merged into one report.
pub fn profile(
    m: &Model,
    input_shape: (usize, usize, usize, usize),
    trace: Option<&PowerTrace>,
) -> Result<ProfileReport> {
    let mut report = count_flops(m, input_shape)?;
    if let Some(trace) = trace {
        report.energy_joules = Some(integrate_energy(trace)?);
    }
    Ok(report)
}

fn conv_out(ext: usize, pad: usize, k: usize, stride: usize, layer: &str) -> Result<usize> {
    crate::conv::conv_out_extent(ext, pad, k, stride).ok_or_else(|| {
        CoreError::Config(format!("{layer}: kernel {k} exceeds padded extent {ext}+2*{pad}"))
    })
}

fn pooled(shape: &[usize], window: Triple, stride: Triple, layer: &str) -> Result<Vec<usize>> {
    Ok(vec![
        shape[0],
        conv_out(shape[1], 0, window.0, stride.0, layer)?,
        conv_out(shape[2], 0, window.1, stride.1, layer)?,
        conv_out(shape[3], 0, window.2, stride.2, layer)?,
    ])
}

fn layer_row(m: &Model, layer: &Layer, in_shape: &[usize]) -> Result<ProfileRow> {
    let params_of = |ids: &[crate::network::ParamId]| -> usize {
        ids.iter().map(|&id| m.params.get(id).numel()).sum()
    };
    match layer {
        Layer::Factorized {
            name,
            in_channels,
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
            ..
        } => {
            let (c_in, c_out) = (*in_channels as u64, *out_channels as u64);
            let spatial = (in_shape[1] * in_shape[2] * in_shape[3]) as u64;
            let elems_in = c_in * spatial; // dw_temporal output
            let elems_out = c_out * spatial;
            let mut macs = depthwise_conv_macs(elems_in, 3);
            macs += pointwise_conv_macs(elems_out, c_in); // pw1
            macs += depthwise_conv_macs(elems_out, 9); // dw_spatial
            macs += pointwise_conv_macs(elems_out, c_out); // pw2
            let mut ids = vec![
                *dw_temporal,
                *pw1,
                *bn1_gamma,
                *bn1_delta,
                *dw_spatial,
                *pw2,
                *bn2_gamma,
                *bn2_delta,
            ];
            if let Some(p) = projection {
                macs += pointwise_conv_macs(elems_out, c_in);
                ids.push(*p);
            }
            // elementwise: 2 BN, 2 activations, residual add
            let flops = macs + 5 * elems_out;
            let mut out = in_shape.to_vec();
            out[0] = *out_channels;
            Ok(ProfileRow {
                name: name.clone(),
                kind: "factorized",
                out_shape: out,
                params: params_of(&ids),
                macs,
                flops,
            })
        }
        Layer::DenseConv {
            name, weight, bias, padding, ..
        } => {
            let ws = m.params.get(*weight).shape().to_vec();
            let (c_out, c_in) = (ws[0], ws[1]);
            if c_in != in_shape[0] {
                return Err(CoreError::ChannelMismatch {
                    op: "profile dense conv",
                    input: in_shape[0],
                    expected: c_in,
                });
            }
            let to = conv_out(in_shape[1], padding.0, ws[2], 1, name)?;
            let ho = conv_out(in_shape[2], padding.1, ws[3], 1, name)?;
            let wo = conv_out(in_shape[3], padding.2, ws[4], 1, name)?;
            let out_elems = (c_out * to * ho * wo) as u64;
            let macs = dense_conv_macs(out_elems, c_in as u64, (ws[2] * ws[3] * ws[4]) as u64);
            // bias add + activation
            let flops = macs + 2 * out_elems;
            Ok(ProfileRow {
                name: name.clone(),
                kind: "dense_conv",
                out_shape: vec![c_out, to, ho, wo],
                params: params_of(&[*weight, *bias]),
                macs,
                flops,
            })
        }
        Layer::MaxPool { name, window, stride } => {
            let out = pooled(in_shape, *window, *stride, name)?;
            let out_elems: u64 = out.iter().product::<usize>() as u64;
            Ok(ProfileRow {
                name: name.clone(),
                kind: "maxpool",
                out_shape: out,
                params: 0,
                macs: 0,
                flops: out_elems,
            })
        }
        Layer::MultiPool {
            name,
            window,
            stride,
            max_only,
        } => {
            let mut out = pooled(in_shape, *window, *stride, name)?;
            if !max_only {
                out[0] *= 2;
            }
            let out_elems: u64 = out.iter().product::<usize>() as u64;
            Ok(ProfileRow {
                name: name.clone(),
                kind: "multi_pool",
                out_shape: out,
                params: 0,
                macs: 0,
                flops: out_elems,
            })
        }
        Layer::Attention {
            name,
            channels,
            temporal,
            spatial,
            ..
        } => {
            let c = *channels as u64;
            let (t, h, w) = (in_shape[1] as u64, in_shape[2] as u64, in_shape[3] as u64);
            let full = c * t * h * w;
            let mut macs = 0u64;
            let mut elementwise = 0u64;
            let mut ids = Vec::new();
            if let Some(ta) = temporal {
                let k = m.params.get(ta.conv1_weight).shape()[2] as u64;
                let reduced = reduced_channels(*channels, m.cfg.attention.reduction)? as u64;
                // two pooled maps, each through the shared bottleneck
                elementwise += 2 * c * t; // spatial mean + max
                macs += 2 * dense_conv_macs(reduced * t, c, k); // conv1 per branch
                elementwise += 2 * (reduced * t); // conv1 bias
                elementwise += 2 * (reduced * t); // phi
                macs += 2 * dense_conv_macs(c * t, reduced, k); // conv2 per branch
                elementwise += 2 * (c * t); // conv2 bias
                elementwise += 2 * (c * t); // sigmoid per branch
                elementwise += c * t; // branch max
                elementwise += 2 * full; // X * S + X
                ids.extend([ta.conv1_weight, ta.conv1_bias, ta.conv2_weight, ta.conv2_bias]);
            }
            if let Some(sa) = spatial {
                let ws = m.params.get(sa.conv_weight).shape().to_vec();
                let k = (ws[2] * ws[3] * ws[4]) as u64;
                let maps = t * h * w;
                elementwise += 2 * maps; // channel mean + max
                macs += dense_conv_macs(maps, 2, k);
                elementwise += maps; // bias
                elementwise += maps; // sigmoid
                elementwise += 2 * full; // attn * X + X
                ids.extend([sa.conv_weight, sa.conv_bias]);
            }
            if temporal.is_some() && spatial.is_some() {
                elementwise += full; // the joint residual add
            }
            Ok(ProfileRow {
                name: name.clone(),
                kind: "attention",
                out_shape: in_shape.to_vec(),
                params: params_of(&ids),
                macs,
                flops: macs + elementwise,
            })
        }
        Layer::Flatten { name, features } => {
            let in_elems: usize = in_shape.iter().product();
            if in_elems != *features {
                return Err(CoreError::Config(format!(
                    "{name}: flatten expects {features} features, input has {in_elems}"
                )));
            }
            Ok(ProfileRow {
                name: name.clone(),
                kind: "flatten",
                out_shape: vec![*features],
                params: 0,
                macs: 0,
                flops: 0,
            })
        }
        Layer::Linear {
            name,
            weight,
            bias,
            activation,
        } => {
            let ws = m.params.get(*weight).shape().to_vec();
            if in_shape != [ws[0]] {
                return Err(CoreError::ShapeMismatch {
                    op: "profile linear",
                    left: in_shape.to_vec(),
                    right: vec![ws[0]],
                });
            }
            let macs = linear_macs(1, ws[0] as u64, ws[1] as u64);
            let mut flops = macs + ws[1] as u64; // bias adds
            if activation.is_some() {
                flops += ws[1] as u64;
            }
            Ok(ProfileRow {
                name: name.clone(),
                kind: "linear",
                out_shape: vec![ws[1]],
                params: params_of(&[*weight, *bias]),
                macs,
                flops,
            })
        }
    }
}

// ── energy ──────────────────────────────────────────────────────────

/// Sampled instantaneous power: strictly increasing timestamps (seconds),
/// non-negative watts.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerTrace {
    pub samples: Vec<(f64, f64)>,
    pub source: String,
}

impl PowerTrace {
    pub fn new(samples: Vec<(f64, f64)>, source: impl Into<String>) -> Result<Self> {
        let trace = PowerTrace {
            samples,
            source: source.into(),
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(CoreError::TraceTooShort(self.samples.len()));
        }
        for (i, pair) in self.samples.windows(2).enumerate() {
            if pair[1].0 <= pair[0].0 {
                return Err(CoreError::NonMonotoneTrace {
                    index: i + 1,
                    prev: pair[0].0,
                    next: pair[1].0,
                });
            }
        }
        for (i, &(_, p)) in self.samples.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(CoreError::NegativePower { index: i, power: p });
            }
        }
        Ok(())
    }

    /// Parses the `t_s,watts` CSV.
    pub fn parse_csv(path: &Path) -> Result<PowerTrace> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line.trim() != "t_s,watts" {
                    return Err(CoreError::MalformedRecord {
                        path: path.to_path_buf(),
                        line: 1,
                        reason: format!("expected header `t_s,watts`, got `{line}`"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>, what: &str| -> Result<f64> {
                s.ok_or_else(|| CoreError::MalformedRecord {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("missing {what}"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| CoreError::MalformedRecord {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("{what}: {e}"),
                })
            };
            let t = parse(parts.next(), "t_s")?;
            let p = parse(parts.next(), "watts")?;
            samples.push((t, p));
        }
        PowerTrace::new(samples, path.display().to_string())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        writeln!(f, "t_s,watts").map_err(|e| CoreError::io(path, e))?;
        for (t, p) in &self.samples {
            writeln!(f, "{t},{p}").map_err(|e| CoreError::io(path, e))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntegrationMethod {
    /// Sum of P(t_i) * (t_{i+1} - t_i); on a uniform grid this is exactly
    /// the fixed-interval form.
    LeftRiemann,
    Trapezoid,
}

/// Left-Riemann energy in joules, with per-interval time steps.
pub fn integrate_energy(trace: &PowerTrace) -> Result<f64> {
    integrate_energy_with(trace, IntegrationMethod::LeftRiemann)
}

pub fn integrate_energy_with(trace: &PowerTrace, method: IntegrationMethod) -> Result<f64> {
    trace.validate()?;
    let mut acc = 0.0;
    for pair in trace.samples.windows(2) {
        let dt = pair[1].0 - pair[0].0;
        acc += match method {
            IntegrationMethod::LeftRiemann => pair[0].1 * dt,
            IntegrationMethod::Trapezoid => 0.5 * (pair[0].1 + pair[1].1) * dt,
        };
    }
    Ok(acc)
}
