//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of one finite-difference check.
#[derive(Clone, Debug)]
pub struct CheckReport {
    /// max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_err: f64,
    /// Flat coordinate where the worst error occurred.
    pub worst_index: usize,
    pub coords_checked: usize,
    pub tol: f64,
    pub passed: bool,
}

impl CheckReport {
    fn failed_nan(coords: usize, tol: f64) -> Self {
        CheckReport {
            max_rel_err: f64::INFINITY,
            worst_index: 0,
            coords_checked: coords,
            tol,
            passed: false,
        }
    }
}

/// Checks the reverse-mode gradient of a scalar-valued tensor function
/// against central differences `(f(x + h e_i) - f(x - h e_i)) / (2h)`.
///
/// `f` must build its computation on the supplied graph and return a scalar
/// variable; it is re-evaluated `2 * numel` times on perturbed copies of `x`.
/// Error is measured per coordinate as an absolute error below magnitude 1
/// and a relative error above it. NaN anywhere in the outputs fails the
/// check outright.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<CheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    assert!(h > 0.0, "step must be positive");
    let mut g = Graph::new(true);
    let xv = g.leaf(x.clone(), true);
    let loss = f(&mut g, xv)?;
    let loss_value = g.value(loss).clone();
    if !loss_value.all_finite() {
        return Ok(CheckReport::failed_nan(x.numel(), tol));
    }
    g.backward(loss)?;
    let analytic = g
        .grad(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut g = Graph::new(false);
        let v = g.leaf(probe.clone(), false);
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };

    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    let mut saw_nan = false;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        if !numeric.is_finite() || !a.is_finite() {
            saw_nan = true;
            continue;
        }
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if err > max_rel_err {
            max_rel_err = err;
            worst_index = i;
        }
    }
    if saw_nan {
        return Ok(CheckReport::failed_nan(x.numel(), tol));
    }
    Ok(CheckReport {
        max_rel_err,
        worst_index,
        coords_checked: x.numel(),
        tol,
        passed: max_rel_err < tol,
    })
}

/// One line of the module-level gradient verification suite.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Finite-difference checks over every differentiable operation, at the
/// given tolerance and step, on small seeded random tensors. The soft
/// spiking neuron is checked against its defined surrogate analytically
/// instead (its backward is a surrogate by construction, so finite
/// differences are the wrong oracle there).
pub fn run_gradient_suite(tol: f64, h: f64) -> Result<Vec<SuiteEntry>> {
    use crate::attention::{AttentionConfig, SpatialAttentionParams, TemporalAttentionParams};
    use crate::conv::BnStats;
    use crate::graph::ReduceOp;
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xC5_3D);
    let mut rand_t = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.2..1.2)).collect()).expect("shape")
    };

    let mut entries: Vec<SuiteEntry> = Vec::new();
    let mut run = |name: &str,
                   x: &Tensor,
                   f: &dyn Fn(&mut Graph, Var) -> Result<Var>|
     -> Result<()> {
        let report = finite_diff_check(f, x, h, tol)?;
        entries.push(SuiteEntry {
            name: name.to_string(),
            max_rel_err: report.max_rel_err,
            passed: report.passed,
        });
        Ok(())
    };

    // elementwise
    let x = rand_t(&[2, 3, 4]);
    let other = rand_t(&[2, 3, 4]);
    let narrow = rand_t(&[2, 1, 4]);
    {
        let o = other.clone();
        run("elementwise add", &x, &move |g, v| {
            let w = g.constant(o.clone());
            let y = g.add(v, w)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        let o = other.clone();
        run("elementwise sub/mul", &x, &move |g, v| {
            let w = g.constant(o.clone());
            let d = g.sub(v, w)?;
            let y = g.mul(d, v)?;
            Ok(g.sum_all(y))
        })?;
        let n = narrow.clone();
        run("broadcast mul", &x, &move |g, v| {
            let w = g.constant(n.clone());
            let y = g.mul(v, w)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        run("scalar mul/add", &x, &|g, v| {
            let y = g.scalar_mul(v, -0.7);
            let y = g.scalar_add(y, 0.3);
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        run("sigmoid", &x, &|g, v| {
            let y = g.sigmoid(v);
            Ok(g.sum_all(y))
        })?;
    }

    // reductions
    let x5 = rand_t(&[2, 3, 4, 2, 2]);
    run("reduce mean", &x5, &|g, v| {
        let y = g.reduce(ReduceOp::Mean, v, &[3, 4], true)?;
        let y = g.mul(y, y)?;
        Ok(g.sum_all(y))
    })?;
    run("reduce sum", &x5, &|g, v| {
        let y = g.reduce(ReduceOp::Sum, v, &[1, 2], false)?;
        let y = g.mul(y, y)?;
        Ok(g.sum_all(y))
    })?;
    run("reduce max", &x5, &|g, v| {
        let y = g.reduce(ReduceOp::Max, v, &[3, 4], true)?;
        let y = g.mul(y, y)?;
        Ok(g.sum_all(y))
    })?;

    // linear
    let lx = rand_t(&[3, 4]);
    let lw = rand_t(&[4, 2]);
    let lb = rand_t(&[2]);
    {
        let (w, b) = (lw.clone(), lb.clone());
        run("linear wrt input", &lx, &move |g, v| {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            let y = g.linear(v, wv, bv)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        let (xc, b) = (lx.clone(), lb.clone());
        run("linear wrt weight", &lw, &move |g, v| {
            let xv = g.constant(xc.clone());
            let bv = g.constant(b.clone());
            let y = g.linear(xv, v, bv)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        let (xc, w) = (lx.clone(), lw.clone());
        run("linear wrt bias", &lb, &move |g, v| {
            let xv = g.constant(xc.clone());
            let wv = g.constant(w.clone());
            let y = g.linear(xv, wv, v)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
    }

    // convolutions
    let cx = rand_t(&[1, 2, 3, 4, 4]);
    let cw = rand_t(&[2, 2, 3, 3, 3]);
    let cb = rand_t(&[2]);
    {
        let (w, b) = (cw.clone(), cb.clone());
        run("dense conv wrt input", &cx, &move |g, v| {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            let y = g.dense_conv3d(v, wv, Some(bv), (1, 1, 1), (1, 1, 1))?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        let (xc, b) = (cx.clone(), cb.clone());
        run("dense conv wrt weight", &cw, &move |g, v| {
            let xv = g.constant(xc.clone());
            let bv = g.constant(b.clone());
            let y = g.dense_conv3d(xv, v, Some(bv), (2, 1, 2), (1, 0, 1))?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        let (xc, w) = (cx.clone(), cw.clone());
        run("dense conv wrt bias", &cb, &move |g, v| {
            let xv = g.constant(xc.clone());
            let wv = g.constant(w.clone());
            let y = g.dense_conv3d(xv, wv, Some(v), (1, 1, 1), (1, 1, 1))?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
    }
    let dx = rand_t(&[1, 3, 4, 3, 3]);
    let dwt = rand_t(&[3, 1, 3, 1, 1]);
    let dws = rand_t(&[3, 1, 1, 3, 3]);
    {
        let (a, b) = (dwt.clone(), dws.clone());
        run("depthwise pair wrt input", &dx, &move |g, v| {
            let w1 = g.constant(a.clone());
            let w2 = g.constant(b.clone());
            let y = g.dwconv3d(v, w1, None, (1, 1, 1), (1, 0, 0))?;
            let y = g.dwconv3d(y, w2, None, (1, 1, 1), (0, 1, 1))?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        let xc = dx.clone();
        run("depthwise wrt weight", &dwt, &move |g, v| {
            let xv = g.constant(xc.clone());
            let y = g.dwconv3d(xv, v, None, (1, 1, 1), (1, 0, 0))?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
    }
    let px = rand_t(&[2, 3, 2, 3, 3]);
    let pw = rand_t(&[4, 3, 1, 1, 1]);
    {
        let w = pw.clone();
        run("pointwise wrt input", &px, &move |g, v| {
            let wv = g.constant(w.clone());
            let y = g.pwconv3d(v, wv, None)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        let xc = px.clone();
        run("pointwise wrt weight", &pw, &move |g, v| {
            let xv = g.constant(xc.clone());
            let y = g.pwconv3d(xv, v, None)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
    }

    // batch norm
    let bx = rand_t(&[2, 3, 2, 3, 3]);
    let bgamma = rand_t(&[3]);
    let bdelta = rand_t(&[3]);
    for train in [true, false] {
        let label = if train { "train" } else { "eval" };
        let (gc, dc) = (bgamma.clone(), bdelta.clone());
        run(&format!("batchnorm ({label}) wrt input"), &bx, &move |g, v| {
            let gv = g.constant(gc.clone());
            let dv = g.constant(dc.clone());
            let mut stats = BnStats::new(3);
            let y = g.batchnorm3d(v, gv, dv, &mut stats, train)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        let (xc, dc) = (bx.clone(), bdelta.clone());
        run(&format!("batchnorm ({label}) wrt gamma"), &bgamma, &move |g, v| {
            let xv = g.constant(xc.clone());
            let dv = g.constant(dc.clone());
            let mut stats = BnStats::new(3);
            let y = g.batchnorm3d(xv, v, dv, &mut stats, train)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
    }

    // pooling
    let poolx = rand_t(&[1, 2, 4, 4, 4]);
    run("maxpool", &poolx, &|g, v| {
        let y = g.maxpool3d(v, (2, 2, 2), (2, 2, 2))?;
        let y = g.mul(y, y)?;
        Ok(g.sum_all(y))
    })?;
    run("avgpool", &poolx, &|g, v| {
        let y = g.avgpool3d(v, (2, 2, 2), (1, 2, 2))?;
        let y = g.mul(y, y)?;
        Ok(g.sum_all(y))
    })?;
    run("multi_pool", &poolx, &|g, v| {
        let y = g.multi_pool(v, (2, 2, 2), (2, 2, 2))?;
        let y = g.mul(y, y)?;
        Ok(g.sum_all(y))
    })?;

    // attention
    let cfg = AttentionConfig::default();
    let ax = rand_t(&[1, 4, 4, 3, 3]);
    let mut tp = TemporalAttentionParams::zeros(4, &cfg)?;
    tp.conv1_weight = rand_t(&[2, 4, 3, 1, 1]);
    tp.conv1_bias = rand_t(&[2]);
    tp.conv2_weight = rand_t(&[4, 2, 3, 1, 1]);
    tp.conv2_bias = rand_t(&[4]);
    let mut sp = SpatialAttentionParams::zeros(&cfg);
    sp.conv_weight = rand_t(&[1, 2, 1, 7, 7]);
    sp.conv_bias = rand_t(&[1]);
    {
        let (tpc, spc) = (tp.clone(), sp.clone());
        run("temporal attention", &ax, &move |g, v| {
            let tv = g.bind_temporal_attention(&tpc);
            let _ = &spc;
            let y = g.temporal_attention(v, &tv)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        let spc = sp.clone();
        run("spatial attention", &ax, &move |g, v| {
            let sv = g.bind_spatial_attention(&spc);
            let y = g.spatial_attention(v, &sv)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        let (tpc, spc) = (tp.clone(), sp.clone());
        run("joint attention", &ax, &move |g, v| {
            let tv = g.bind_temporal_attention(&tpc);
            let sv = g.bind_spatial_attention(&spc);
            let y = g.joint_attention(v, &tv, &sv)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
        let (tpc, spc) = (tp.clone(), sp.clone());
        run("joint attention wrt conv1 weight", &tp.conv1_weight.clone(), &move |g, v| {
            let xv = g.constant(ax.clone());
            let mut tv = g.bind_temporal_attention(&tpc);
            tv.conv1_weight = v;
            let sv = g.bind_spatial_attention(&spc);
            let y = g.joint_attention(xv, &tv, &sv)?;
            let y = g.mul(y, y)?;
            Ok(g.sum_all(y))
        })?;
    }

    // cross-entropy
    let logits = rand_t(&[3, 4]);
    run("cross entropy", &logits, &|g, v| g.cross_entropy(v, &[1, 0, 3]))?;

    // SSN: analytic surrogate identity, exact by definition
    let sx = rand_t(&[64]);
    let p = crate::ssn::SsnParams::default();
    let mut g = Graph::new(true);
    let v = g.leaf(sx.clone(), true);
    let y = g.ssn(v, p);
    let loss = g.sum_all(y);
    g.backward(loss)?;
    let grad = g.grad(v).expect("ssn leaf gradient");
    let mut max_err = 0.0f64;
    for (xv, gv) in sx.data().iter().zip(grad.data()) {
        max_err = max_err.max((gv - crate::ssn::surrogate(*xv, p)).abs());
    }
    entries.push(SuiteEntry {
        name: "ssn surrogate (analytic)".to_string(),
        max_rel_err: max_err,
        passed: max_err < 1e-15,
    });

    Ok(entries)
}
