//! Attention modules against straight-line pseudocode transcriptions.

mod common;

use common::{max_abs_diff, random_tensor, rng, SpatialAttentionOracle, TemporalAttentionOracle};
use cs3d_core::attention::{AttentionConfig, SpatialAttentionParams, TemporalAttentionParams};
use cs3d_core::Graph;
use rand::Rng;

const TOL: f64 = 1e-10;

#[test]
fn temporal_attention_matches_transcription_on_20_random_cases() {
    let mut r = rng(0xA7_01);
    for case in 0..20 {
        let b = r.gen_range(1..3);
        let c = 2 * r.gen_range(1..4); // divisible by reduction 2
        let t = r.gen_range(2..7);
        let h = r.gen_range(1..5);
        let w = r.gen_range(1..5);
        let cfg = AttentionConfig::default();
        let x = random_tensor(&mut r, &[b, c, t, h, w]);
        let mut p = TemporalAttentionParams::zeros(c, &cfg).unwrap();
        p.conv1_weight = random_tensor(&mut r, &[c / 2, c, 3, 1, 1]);
        p.conv1_bias = random_tensor(&mut r, &[c / 2]);
        p.conv2_weight = random_tensor(&mut r, &[c, c / 2, 3, 1, 1]);
        p.conv2_bias = random_tensor(&mut r, &[c]);

        let oracle = TemporalAttentionOracle {
            conv1_w: &p.conv1_weight,
            conv1_b: &p.conv1_bias,
            conv2_w: &p.conv2_weight,
            conv2_b: &p.conv2_bias,
        };
        let want = oracle.run(&x);

        let mut g = Graph::new(false);
        let xv = g.leaf(x, false);
        let vars = g.bind_temporal_attention(&p);
        let y = g.temporal_attention(xv, &vars).unwrap();
        assert!(
            max_abs_diff(g.value(y).data(), &want) < TOL,
            "case {case}: {}",
            max_abs_diff(g.value(y).data(), &want)
        );
    }
}

#[test]
fn temporal_attention_spec_case_2x4x6x3x3() {
    let mut r = rng(0xA7_02);
    let cfg = AttentionConfig::default();
    let x = random_tensor(&mut r, &[2, 4, 6, 3, 3]);
    let mut p = TemporalAttentionParams::zeros(4, &cfg).unwrap();
    p.conv1_weight = random_tensor(&mut r, &[2, 4, 3, 1, 1]);
    p.conv1_bias = random_tensor(&mut r, &[2]);
    p.conv2_weight = random_tensor(&mut r, &[4, 2, 3, 1, 1]);
    p.conv2_bias = random_tensor(&mut r, &[4]);

    let oracle = TemporalAttentionOracle {
        conv1_w: &p.conv1_weight,
        conv1_b: &p.conv1_bias,
        conv2_w: &p.conv2_weight,
        conv2_b: &p.conv2_bias,
    };
    let want = oracle.run(&x);
    let mut g = Graph::new(false);
    let xv = g.leaf(x, false);
    let vars = g.bind_temporal_attention(&p);
    let y = g.temporal_attention(xv, &vars).unwrap();
    assert!(max_abs_diff(g.value(y).data(), &want) < TOL);
}

#[test]
fn spatial_attention_matches_transcription_on_20_random_cases() {
    let mut r = rng(0xA7_03);
    for case in 0..20 {
        let b = r.gen_range(1..3);
        let c = r.gen_range(1..5);
        let t = r.gen_range(1..5);
        let h = r.gen_range(1..6);
        let w = r.gen_range(1..6);
        let cfg = AttentionConfig::default();
        let x = random_tensor(&mut r, &[b, c, t, h, w]);
        let mut p = SpatialAttentionParams::zeros(&cfg);
        p.conv_weight = random_tensor(&mut r, &[1, 2, 1, 7, 7]);
        p.conv_bias = random_tensor(&mut r, &[1]);

        let oracle = SpatialAttentionOracle {
            conv_w: &p.conv_weight,
            conv_b: &p.conv_bias,
        };
        let want = oracle.run(&x);

        let mut g = Graph::new(false);
        let xv = g.leaf(x, false);
        let vars = g.bind_spatial_attention(&p);
        let y = g.spatial_attention(xv, &vars).unwrap();
        assert!(
            max_abs_diff(g.value(y).data(), &want) < TOL,
            "case {case}: {}",
            max_abs_diff(g.value(y).data(), &want)
        );
    }
}

#[test]
fn spatial_attention_spec_case_2x3x4x5x5() {
    let mut r = rng(0xA7_04);
    let cfg = AttentionConfig::default();
    let x = random_tensor(&mut r, &[2, 3, 4, 5, 5]);
    let mut p = SpatialAttentionParams::zeros(&cfg);
    p.conv_weight = random_tensor(&mut r, &[1, 2, 1, 7, 7]);
    p.conv_bias = random_tensor(&mut r, &[1]);

    let oracle = SpatialAttentionOracle {
        conv_w: &p.conv_weight,
        conv_b: &p.conv_bias,
    };
    let want = oracle.run(&x);
    let mut g = Graph::new(false);
    let xv = g.leaf(x, false);
    let vars = g.bind_spatial_attention(&p);
    let y = g.spatial_attention(xv, &vars).unwrap();
    assert!(max_abs_diff(g.value(y).data(), &want) < TOL);
}

#[test]
fn joint_attention_composes_its_constituents() {
    let mut r = rng(0xA7_05);
    let cfg = AttentionConfig::default();
    let x = random_tensor(&mut r, &[2, 4, 5, 4, 4]);
    let mut tp = TemporalAttentionParams::zeros(4, &cfg).unwrap();
    tp.conv1_weight = random_tensor(&mut r, &[2, 4, 3, 1, 1]);
    tp.conv2_weight = random_tensor(&mut r, &[4, 2, 3, 1, 1]);
    let mut sp = SpatialAttentionParams::zeros(&cfg);
    sp.conv_weight = random_tensor(&mut r, &[1, 2, 1, 7, 7]);

    let mut g = Graph::new(false);
    let xv = g.leaf(x, false);
    let tv = g.bind_temporal_attention(&tp);
    let sv = g.bind_spatial_attention(&sp);
    let joint = g.joint_attention(xv, &tv, &sv).unwrap();
    let ta = g.temporal_attention(xv, &tv).unwrap();
    let sa = g.spatial_attention(ta, &sv).unwrap();
    let manual = g.add(sa, xv).unwrap();
    assert!(max_abs_diff(g.value(joint).data(), g.value(manual).data()) < 1e-12);
}
