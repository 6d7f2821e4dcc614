//! Shared test oracles: straight-line nested-loop reference implementations
//! kept deliberately independent of the library's compute paths.

#![allow(dead_code)]

use cs3d_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::new(shape, data).unwrap()
}

pub struct ConvOracleOut {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Number of scalar multiplications executed, counting padded positions.
    pub mults: u64,
}

/// Reference grouped 3D correlation: materializes the zero padding and runs
/// the full loop nest, multiplying every (kernel x input) pair once.
pub fn conv3d_oracle(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize, usize),
    padding: (usize, usize, usize),
    groups: usize,
) -> ConvOracleOut {
    let (b, c_in, t, h, wi) = dims5(x.shape());
    let (c_out, cin_pg, kt, kh, kw) = dims5(w.shape());
    assert_eq!(cin_pg * groups, c_in);
    let (st, sh, sw) = stride;
    let (pt, ph, pw) = padding;
    let (tp, hp, wp) = (t + 2 * pt, h + 2 * ph, wi + 2 * pw);

    // zero-padded copy
    let mut xp = vec![0.0; b * c_in * tp * hp * wp];
    for bi in 0..b {
        for ci in 0..c_in {
            for ti in 0..t {
                for hi in 0..h {
                    for wj in 0..wi {
                        xp[((((bi * c_in + ci) * tp + ti + pt) * hp) + hi + ph) * wp + wj + pw] =
                            x.data()[(((bi * c_in + ci) * t + ti) * h + hi) * wi + wj];
                    }
                }
            }
        }
    }

    let to = (tp - kt) / st + 1;
    let ho = (hp - kh) / sh + 1;
    let wo = (wp - kw) / sw + 1;
    let cout_pg = c_out / groups;
    let mut out = vec![0.0; b * c_out * to * ho * wo];
    let mut mults: u64 = 0;
    for bi in 0..b {
        for co in 0..c_out {
            let group = co / cout_pg;
            for toi in 0..to {
                for hoi in 0..ho {
                    for woi in 0..wo {
                        let mut acc = bias.map_or(0.0, |bb| bb.data()[co]);
                        for gci in 0..cin_pg {
                            let ci = group * cin_pg + gci;
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        let xv = xp[(((bi * c_in + ci) * tp + toi * st + dt)
                                            * hp
                                            + hoi * sh
                                            + dh)
                                            * wp
                                            + woi * sw
                                            + dw];
                                        let wv = w.data()
                                            [(((co * cin_pg + gci) * kt + dt) * kh + dh) * kw + dw];
                                        acc += xv * wv;
                                        mults += 1;
                                    }
                                }
                            }
                        }
                        out[(((bi * c_out + co) * to + toi) * ho + hoi) * wo + woi] = acc;
                    }
                }
            }
        }
    }
    ConvOracleOut {
        shape: vec![b, c_out, to, ho, wo],
        data: out,
        mults,
    }
}

pub fn maxpool_oracle(
    x: &Tensor,
    window: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> (Vec<usize>, Vec<f64>) {
    pool_oracle(x, window, stride, true)
}

pub fn avgpool_oracle(
    x: &Tensor,
    window: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> (Vec<usize>, Vec<f64>) {
    pool_oracle(x, window, stride, false)
}

fn pool_oracle(
    x: &Tensor,
    window: (usize, usize, usize),
    stride: (usize, usize, usize),
    take_max: bool,
) -> (Vec<usize>, Vec<f64>) {
    let (b, c, t, h, wi) = dims5(x.shape());
    let (wt, wh, ww) = window;
    let (st, sh, sw) = stride;
    let to = (t - wt) / st + 1;
    let ho = (h - wh) / sh + 1;
    let wo = (wi - ww) / sw + 1;
    let mut out = vec![0.0; b * c * to * ho * wo];
    for bi in 0..b {
        for ci in 0..c {
            for toi in 0..to {
                for hoi in 0..ho {
                    for woi in 0..wo {
                        let mut best = f64::NEG_INFINITY;
                        let mut acc = 0.0;
                        for dt in 0..wt {
                            for dh in 0..wh {
                                for dw in 0..ww {
                                    let v = x.data()[(((bi * c + ci) * t + toi * st + dt) * h
                                        + hoi * sh
                                        + dh)
                                        * wi
                                        + woi * sw
                                        + dw];
                                    if v > best {
                                        best = v;
                                    }
                                    acc += v;
                                }
                            }
                        }
                        out[(((bi * c + ci) * to + toi) * ho + hoi) * wo + woi] = if take_max {
                            best
                        } else {
                            acc / (wt * wh * ww) as f64
                        };
                    }
                }
            }
        }
    }
    (vec![b, c, to, ho, wo], out)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight-line transcription of the temporal attention pseudocode, with
/// its own 1-D temporal convolutions.
pub struct TemporalAttentionOracle<'a> {
    pub conv1_w: &'a Tensor, // [Cr, C, k, 1, 1]
    pub conv1_b: &'a Tensor,
    pub conv2_w: &'a Tensor, // [C, Cr, k, 1, 1]
    pub conv2_b: &'a Tensor,
}

impl TemporalAttentionOracle<'_> {
    pub fn run(&self, x: &Tensor) -> Vec<f64> {
        let (b, c, t, h, w) = dims5(x.shape());
        let xd = x.data();
        let idx = |bi: usize, ci: usize, ti: usize, hi: usize, wi: usize| {
            (((bi * c + ci) * t + ti) * h + hi) * w + wi
        };

        // line 3: z_avg <- (1/(H*W)) sum_h sum_w X
        // line 4: z_max <- max_{h,w} X
        let mut z_avg = vec![0.0; b * c * t];
        let mut z_max = vec![f64::NEG_INFINITY; b * c * t];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    let mut acc = 0.0;
                    let mut mx = f64::NEG_INFINITY;
                    for hi in 0..h {
                        for wi in 0..w {
                            let v = xd[idx(bi, ci, ti, hi, wi)];
                            acc += v;
                            if v > mx {
                                mx = v;
                            }
                        }
                    }
                    z_avg[(bi * c + ci) * t + ti] = acc / (h * w) as f64;
                    z_max[(bi * c + ci) * t + ti] = mx;
                }
            }
        }

        // lines 5-6: S_t <- sigma(Conv2(phi(Conv1(z_avg)))), same on z_max
        let s_t = self.branch(&z_avg, b, c, t);
        let s_s = self.branch(&z_max, b, c, t);

        // line 7: S <- max(S_t, S_s); line 8: Xhat <- X . S + X
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    let s = s_t[(bi * c + ci) * t + ti].max(s_s[(bi * c + ci) * t + ti]);
                    for hi in 0..h {
                        for wi in 0..w {
                            let i = idx(bi, ci, ti, hi, wi);
                            out[i] = xd[i] * s + xd[i];
                        }
                    }
                }
            }
        }
        out
    }

    fn branch(&self, z: &[f64], b: usize, c: usize, t: usize) -> Vec<f64> {
        let cr = self.conv1_w.shape()[0];
        let k = self.conv1_w.shape()[2];
        let pad = (k - 1) / 2;
        // conv1: C -> Cr over time, same padding, then phi = relu
        let mut mid = vec![0.0; b * cr * t];
        for bi in 0..b {
            for co in 0..cr {
                for ti in 0..t {
                    let mut acc = self.conv1_b.data()[co];
                    for ci in 0..c {
                        for dk in 0..k {
                            let tj = ti as isize + dk as isize - pad as isize;
                            if tj >= 0 && (tj as usize) < t {
                                acc += z[(bi * c + ci) * t + tj as usize]
                                    * self.conv1_w.data()[(co * c + ci) * k + dk];
                            }
                        }
                    }
                    mid[(bi * cr + co) * t + ti] = acc.max(0.0);
                }
            }
        }
        // conv2: Cr -> C, then sigmoid
        let mut s = vec![0.0; b * c * t];
        for bi in 0..b {
            for co in 0..c {
                for ti in 0..t {
                    let mut acc = self.conv2_b.data()[co];
                    for ci in 0..cr {
                        for dk in 0..k {
                            let tj = ti as isize + dk as isize - pad as isize;
                            if tj >= 0 && (tj as usize) < t {
                                acc += mid[(bi * cr + ci) * t + tj as usize]
                                    * self.conv2_w.data()[(co * cr + ci) * k + dk];
                            }
                        }
                    }
                    s[(bi * c + co) * t + ti] = sigmoid(acc);
                }
            }
        }
        s
    }
}

/// Straight-line transcription of the spatial attention pseudocode.
pub struct SpatialAttentionOracle<'a> {
    pub conv_w: &'a Tensor, // [1, 2, kt, kh, kw]
    pub conv_b: &'a Tensor,
}

impl SpatialAttentionOracle<'_> {
    pub fn run(&self, x: &Tensor) -> Vec<f64> {
        let (b, c, t, h, w) = dims5(x.shape());
        let xd = x.data();
        let idx = |bi: usize, ci: usize, ti: usize, hi: usize, wi: usize| {
            (((bi * c + ci) * t + ti) * h + hi) * w + wi
        };

        // lines 3-4: channel mean and channel max, keepdim
        let mut avg_out = vec![0.0; b * t * h * w];
        let mut max_out = vec![f64::NEG_INFINITY; b * t * h * w];
        for bi in 0..b {
            for ti in 0..t {
                for hi in 0..h {
                    for wi in 0..w {
                        let mut acc = 0.0;
                        let mut mx = f64::NEG_INFINITY;
                        for ci in 0..c {
                            let v = xd[idx(bi, ci, ti, hi, wi)];
                            acc += v;
                            if v > mx {
                                mx = v;
                            }
                        }
                        let o = ((bi * t + ti) * h + hi) * w + wi;
                        avg_out[o] = acc / c as f64;
                        max_out[o] = mx;
                    }
                }
            }
        }

        // lines 5-7: pooled <- Concat(avg, max); attn <- sigma(Conv(pooled))
        let (kt, kh, kw) = (
            self.conv_w.shape()[2],
            self.conv_w.shape()[3],
            self.conv_w.shape()[4],
        );
        let (pt, ph, pw) = ((kt - 1) / 2, (kh - 1) / 2, (kw - 1) / 2);
        let mut attn = vec![0.0; b * t * h * w];
        for bi in 0..b {
            for ti in 0..t {
                for hi in 0..h {
                    for wi in 0..w {
                        let mut acc = self.conv_b.data()[0];
                        for (ci, pooled) in [&avg_out, &max_out].iter().enumerate() {
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        let tj = ti as isize + dt as isize - pt as isize;
                                        let hj = hi as isize + dh as isize - ph as isize;
                                        let wj = wi as isize + dw as isize - pw as isize;
                                        if tj >= 0
                                            && (tj as usize) < t
                                            && hj >= 0
                                            && (hj as usize) < h
                                            && wj >= 0
                                            && (wj as usize) < w
                                        {
                                            acc += pooled[((bi * t + tj as usize) * h
                                                + hj as usize)
                                                * w
                                                + wj as usize]
                                                * self.conv_w.data()
                                                    [((ci * kt + dt) * kh + dh) * kw + dw];
                                        }
                                    }
                                }
                            }
                        }
                        attn[((bi * t + ti) * h + hi) * w + wi] = sigmoid(acc);
                    }
                }
            }
        }

        // lines 8-9: Z <- attn . X; Xhat <- Z + X
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    for hi in 0..h {
                        for wi in 0..w {
                            let i = idx(bi, ci, ti, hi, wi);
                            out[i] =
                                attn[((bi * t + ti) * h + hi) * w + wi] * xd[i] + xd[i];
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn dims5(shape: &[usize]) -> (usize, usize, usize, usize, usize) {
    assert_eq!(shape.len(), 5);
    (shape[0], shape[1], shape[2], shape[3], shape[4])
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
