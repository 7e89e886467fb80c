//! Central finite-difference oracle for the analytic backward passes.
//!
//! `check_op` draws a seeded random instance of a registered operation,
//! projects its output onto a fixed random direction (a scalar map), and
//! compares every analytic parameter gradient against central differences.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::blocks::{
    build_d2_weights, build_d3_weights, d2_backward, d2_forward_tracked, d3_backward,
    d3_forward_traced, D2Config, D3Config, DilationMode, PsiKind, Reduction,
};
use crate::conv::{
    conv2d, conv2d_grads, multidilated_conv, multidilated_grads, ConvKernel, DilationGroup,
    KernelGroup, MultiDilatedKernel,
};
use crate::error::{Error, Result};
use crate::tensor::{
    avg_pool_2x2, avg_pool_2x2_grad, batch_norm, batch_norm_grads, composite_psi, relu_grad,
    NormParams, Tensor,
};

/// Default step for central differences on f64 inputs drawn from N(0,1).
pub const DEFAULT_FD_EPS: f64 = 1e-6;

/// Margin below which a pre-ReLU magnitude invalidates finite differences.
const KINK_MARGIN: f64 = 1e-3;

/// Finite-difference result for one parameter block.
#[derive(Debug, Clone, Serialize)]
pub struct BlockCheck {
    pub block: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Outcome of checking one operation's analytic gradients.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub op: String,
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
    pub pass: bool,
}

/// Central finite difference of a scalar-valued map, one element at a time:
/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn finite_diff_grad(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::argument(format!("eps must be > 0, got {eps}")));
    }
    let mut grad = x.clone();
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite objective at element {i}: {fp} / {fm}"
            )));
        }
        grad.data_mut()[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(grad)
}

/// Finite differences over a flat slice of parameters inside a closure-owned
/// structure; `f` receives the perturbed flat vector.
fn finite_diff_flat(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; x.len()];
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        buf[i] = x[i] + eps;
        let fp = f(&buf)?;
        buf[i] = x[i] - eps;
        let fm = f(&buf)?;
        buf[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite objective at parameter {i}"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(grad)
}

fn block_check(name: &str, analytic: &[f64], numeric: &[f64], tol: f64) -> BlockCheck {
    debug_assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let max_abs = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let max_rel = if scale < 1e-12 { 0.0 } else { max_abs / scale };
    BlockCheck {
        block: name.to_string(),
        max_abs_err: max_abs,
        max_rel_err: max_rel,
        pass: max_rel < tol,
    }
}

fn randn_tensor<R: Rng>(rng: &mut R, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let data = (0..n * c * h * w)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(n, c, h, w, data).expect("shape")
}

fn randn_kernel<R: Rng>(rng: &mut R, o: usize, i: usize, kh: usize, kw: usize) -> ConvKernel {
    let data = (0..o * i * kh * kw)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    ConvKernel::new(o, i, kh, kw, data).expect("kernel shape")
}

fn finish(op: &str, seed: u64, eps: f64, tol: f64, blocks: Vec<BlockCheck>) -> GradCheckReport {
    let pass = blocks.iter().all(|b| b.pass);
    GradCheckReport {
        op: op.to_string(),
        seed,
        eps,
        tolerance: tol,
        blocks,
        pass,
    }
}

/// Checks the analytic gradients of a registered op against central finite
/// differences. Registered names: `conv2d`, `multidilated_conv`,
/// `composite_psi`, `avg_pool`, `d2_forward`, `d3_forward`.
pub fn check_op(op: &str, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    match op {
        "conv2d" => check_conv2d(1 + (seed % 4) as usize, seed, tolerance),
        "multidilated_conv" => check_multidilated(seed, tolerance),
        "composite_psi" => check_composite_psi(seed, tolerance),
        "avg_pool" => check_avg_pool(seed, tolerance),
        "d2_forward" => check_d2_forward(seed, tolerance),
        "d3_forward" => check_d3_forward(seed, tolerance),
        _ => Err(Error::lookup("op", op)),
    }
}

/// conv2d gradient check at an explicit dilation factor.
pub fn check_conv2d(dilation: usize, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let eps = DEFAULT_FD_EPS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
    let input = randn_tensor(&mut rng, 2, 3, 6, 5);
    let kernel = randn_kernel(&mut rng, 2, 3, 3, 3);
    let proj = randn_tensor(&mut rng, 2, 2, 6, 5);

    let (grad_in, grad_w) = conv2d_grads(&input, &kernel, dilation, &proj)?;

    let mut f_in = |x: &Tensor| Ok(conv2d(x, &kernel, dilation)?.dot(&proj)?);
    let num_in = finite_diff_grad(&mut f_in, &input, eps)?;

    let (o, i) = (kernel.out_channels(), kernel.in_channels());
    let (kh, kw) = kernel.spatial();
    let mut f_w = |w: &[f64]| {
        let k = ConvKernel::new(o, i, kh, kw, w.to_vec())?;
        Ok(conv2d(&input, &k, dilation)?.dot(&proj)?)
    };
    let num_w = finite_diff_flat(&mut f_w, kernel.weights(), eps)?;

    let blocks = vec![
        block_check("input", grad_in.data(), num_in.data(), tol),
        block_check("weights", grad_w.weights(), &num_w, tol),
    ];
    Ok(finish("conv2d", seed, eps, tol, blocks))
}

fn test_multidilated_kernel<R: Rng>(rng: &mut R) -> MultiDilatedKernel {
    MultiDilatedKernel::new(vec![
        KernelGroup {
            channels: DilationGroup::new(0, 3, 1).unwrap(),
            kernel: randn_kernel(rng, 2, 3, 3, 3),
        },
        KernelGroup {
            channels: DilationGroup::new(3, 5, 2).unwrap(),
            kernel: randn_kernel(rng, 2, 2, 3, 3),
        },
        KernelGroup {
            channels: DilationGroup::new(5, 6, 4).unwrap(),
            kernel: randn_kernel(rng, 2, 1, 3, 3),
        },
    ])
    .expect("valid tiling")
}

fn check_multidilated(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let eps = DEFAULT_FD_EPS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(2));
    let input = randn_tensor(&mut rng, 2, 6, 6, 5);
    let kernel = test_multidilated_kernel(&mut rng);
    let proj = randn_tensor(&mut rng, 2, 2, 6, 5);

    let (grad_in, grad_ws) = multidilated_grads(&input, &kernel, &proj)?;

    let mut f_in = |x: &Tensor| Ok(multidilated_conv(x, &kernel)?.dot(&proj)?);
    let num_in = finite_diff_grad(&mut f_in, &input, eps)?;

    let mut blocks = vec![block_check("input", grad_in.data(), num_in.data(), tol)];
    for (gi, grad_w) in grad_ws.iter().enumerate() {
        let base = kernel.clone();
        let shape = base.groups()[gi].kernel.clone();
        let (o, i) = (shape.out_channels(), shape.in_channels());
        let (kh, kw) = shape.spatial();
        let mut f_w = |w: &[f64]| {
            let mut k = base.clone();
            k.groups_mut()[gi].kernel = ConvKernel::new(o, i, kh, kw, w.to_vec())?;
            Ok(multidilated_conv(&input, &k)?.dot(&proj)?)
        };
        let num_w = finite_diff_flat(&mut f_w, shape.weights(), eps)?;
        blocks.push(block_check(
            &format!("group{gi}.weights"),
            grad_w.weights(),
            &num_w,
            tol,
        ));
    }
    Ok(finish("multidilated_conv", seed, eps, tol, blocks))
}

/// Draws an input whose pre-ReLU values all clear the kink margin.
fn psi_safe_input<R: Rng>(
    rng: &mut R,
    params: &NormParams,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Result<Tensor> {
    for _ in 0..200 {
        let input = randn_tensor(rng, n, c, h, w);
        let (pre, _) = batch_norm(&input, params)?;
        if pre.data().iter().all(|v| v.abs() > KINK_MARGIN) {
            return Ok(input);
        }
    }
    Err(Error::numeric(
        "could not find a kink-free input for composite_psi".to_string(),
    ))
}

fn check_composite_psi(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let eps = DEFAULT_FD_EPS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(3));
    let (n, c, h, w) = (2, 3, 4, 4);
    let gamma: Vec<f64> = (0..c)
        .map(|_| 1.0 + 0.2 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let beta: Vec<f64> = (0..c)
        .map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let params = NormParams::new(gamma, beta, crate::tensor::DEFAULT_EPS)?;
    let input = psi_safe_input(&mut rng, &params, n, c, h, w)?;
    let proj = randn_tensor(&mut rng, n, c, h, w);

    // analytic: relu backward then batch-norm backward
    let (pre, stats) = batch_norm(&input, &params)?;
    let grad_pre = relu_grad(&pre, &proj)?;
    let (grad_in, grad_gamma, grad_beta) = batch_norm_grads(&input, &params, &stats, &grad_pre)?;

    let mut f_in = |x: &Tensor| Ok(composite_psi(x, &params)?.dot(&proj)?);
    let num_in = finite_diff_grad(&mut f_in, &input, eps)?;

    let mut f_gamma = |g: &[f64]| {
        let p = NormParams::new(g.to_vec(), params.beta.clone(), params.eps)?;
        Ok(composite_psi(&input, &p)?.dot(&proj)?)
    };
    let num_gamma = finite_diff_flat(&mut f_gamma, &params.gamma, eps)?;

    let mut f_beta = |b: &[f64]| {
        let p = NormParams::new(params.gamma.clone(), b.to_vec(), params.eps)?;
        Ok(composite_psi(&input, &p)?.dot(&proj)?)
    };
    let num_beta = finite_diff_flat(&mut f_beta, &params.beta, eps)?;

    let blocks = vec![
        block_check("input", grad_in.data(), num_in.data(), tol),
        block_check("gamma", &grad_gamma, &num_gamma, tol),
        block_check("beta", &grad_beta, &num_beta, tol),
    ];
    Ok(finish("composite_psi", seed, eps, tol, blocks))
}

fn check_avg_pool(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let eps = DEFAULT_FD_EPS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(4));
    let input = randn_tensor(&mut rng, 2, 3, 6, 4);
    let proj = randn_tensor(&mut rng, 2, 3, 3, 2);

    let grad_in = avg_pool_2x2_grad(input.shape(), &proj)?;
    let mut f = |x: &Tensor| Ok(avg_pool_2x2(x)?.dot(&proj)?);
    let num_in = finite_diff_grad(&mut f, &input, eps)?;

    let blocks = vec![block_check("input", grad_in.data(), num_in.data(), tol)];
    Ok(finish("avg_pool", seed, eps, tol, blocks))
}

/// Collects (label, analytic, numeric) triples for every weight array of a
/// D2 block by finite-differencing a rebuild-the-weights closure.
fn check_d2_forward(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let eps = DEFAULT_FD_EPS;
    let cfg = D2Config::new(3, 2, (3, 3), DilationMode::Multi);
    let c0 = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(5));

    // resample until no psi stage sits near a ReLU kink
    let mut attempt = 0;
    let (weights, input) = loop {
        let weights = build_d2_weights(&cfg, c0, PsiKind::BatchNorm, &mut rng)?;
        let input = randn_tensor(&mut rng, 1, c0, 6, 5);
        let (_, _, min_preact) = d2_forward_tracked(&cfg, &input, &weights)?;
        if min_preact > KINK_MARGIN {
            break (weights, input);
        }
        attempt += 1;
        if attempt > 200 {
            return Err(Error::numeric(
                "could not find a kink-free d2_forward instance".to_string(),
            ));
        }
    };
    let (out, state, _) = d2_forward_tracked(&cfg, &input, &weights)?;
    let (pn, pc, ph, pw) = out.shape();
    let proj = randn_tensor(&mut rng, pn, pc, ph, pw);
    let (grad_in, grads) = d2_backward(&cfg, &weights, &state, &proj)?;

    let mut f_in = |x: &Tensor| {
        let (o, _, _) = d2_forward_tracked(&cfg, x, &weights)?;
        o.dot(&proj)
    };
    let num_in = finite_diff_grad(&mut f_in, &input, eps)?;
    let mut blocks = vec![block_check("input", grad_in.data(), num_in.data(), tol)];

    for li in 0..cfg.layers {
        for gi in 0..weights.layers[li].kernel.groups().len() {
            let shape = weights.layers[li].kernel.groups()[gi].kernel.clone();
            let (o, i) = (shape.out_channels(), shape.in_channels());
            let (kh, kw) = shape.spatial();
            let mut f_w = |w: &[f64]| {
                let mut ws = weights.clone();
                ws.layers[li].kernel.groups_mut()[gi].kernel =
                    ConvKernel::new(o, i, kh, kw, w.to_vec())?;
                let (out, _, _) = d2_forward_tracked(&cfg, &input, &ws)?;
                out.dot(&proj)
            };
            let num_w = finite_diff_flat(&mut f_w, shape.weights(), eps)?;
            blocks.push(block_check(
                &format!("layer{}.group{gi}.weights", li + 1),
                grads.layers[li].kernels[gi].weights(),
                &num_w,
                tol,
            ));
        }
        // psi affine params
        let (gamma, beta) = match &weights.layers[li].psi {
            crate::blocks::Psi::BatchNorm(p) => (p.gamma.clone(), p.beta.clone()),
            _ => unreachable!("builder installs batch norm"),
        };
        let mut f_gamma = |g: &[f64]| {
            let mut ws = weights.clone();
            if let crate::blocks::Psi::BatchNorm(p) = &mut ws.layers[li].psi {
                p.gamma = g.to_vec();
            }
            let (out, _, _) = d2_forward_tracked(&cfg, &input, &ws)?;
            out.dot(&proj)
        };
        let num_gamma = finite_diff_flat(&mut f_gamma, &gamma, eps)?;
        blocks.push(block_check(
            &format!("layer{}.gamma", li + 1),
            &grads.layers[li].psi.gamma,
            &num_gamma,
            tol,
        ));
        let mut f_beta = |b: &[f64]| {
            let mut ws = weights.clone();
            if let crate::blocks::Psi::BatchNorm(p) = &mut ws.layers[li].psi {
                p.beta = b.to_vec();
            }
            let (out, _, _) = d2_forward_tracked(&cfg, &input, &ws)?;
            out.dot(&proj)
        };
        let num_beta = finite_diff_flat(&mut f_beta, &beta, eps)?;
        blocks.push(block_check(
            &format!("layer{}.beta", li + 1),
            &grads.layers[li].psi.beta,
            &num_beta,
            tol,
        ));
    }
    Ok(finish("d2_forward", seed, eps, tol, blocks))
}

fn check_d3_forward(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let eps = DEFAULT_FD_EPS;
    let cfg = D3Config {
        blocks: 2,
        inner: D2Config::new(2, 2, (3, 3), DilationMode::Multi),
        bottleneck: Some(8),
        reduction: Reduction::Compress(0.5),
    };
    let c0 = 10; // wide enough that both blocks hit the bottleneck
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(6));

    let mut attempt = 0;
    let (weights, input) = loop {
        let weights = build_d3_weights(&cfg, c0, PsiKind::BatchNorm, &mut rng)?;
        let input = randn_tensor(&mut rng, 1, c0, 6, 5);
        let (_, trace) = d3_forward_traced(&cfg, &input, &weights)?;
        if trace.min_abs_preact > KINK_MARGIN {
            break (weights, input);
        }
        attempt += 1;
        if attempt > 500 {
            return Err(Error::numeric(
                "could not find a kink-free d3_forward instance".to_string(),
            ));
        }
    };
    let (out, trace) = d3_forward_traced(&cfg, &input, &weights)?;
    let (pn, pc, ph, pw) = out.shape();
    let proj = randn_tensor(&mut rng, pn, pc, ph, pw);
    let (grad_in, grads) = d3_backward(&cfg, &weights, &input, &trace, &proj)?;

    let mut f_in = |x: &Tensor| Ok(crate::blocks::d3_forward(&cfg, x, &weights)?.dot(&proj)?);
    let num_in = finite_diff_grad(&mut f_in, &input, eps)?;
    let mut blocks = vec![block_check("input", grad_in.data(), num_in.data(), tol)];

    // check one representative conv bank per stage kind in each block
    for bi in 0..cfg.blocks {
        if let Some(unit) = &weights.blocks[bi].bottleneck {
            let shape = unit.kernel.clone();
            let (o, i) = (shape.out_channels(), shape.in_channels());
            let mut f_w = |w: &[f64]| {
                let mut ws = weights.clone();
                ws.blocks[bi].bottleneck.as_mut().unwrap().kernel =
                    ConvKernel::new(o, i, 1, 1, w.to_vec())?;
                Ok(crate::blocks::d3_forward(&cfg, &input, &ws)?.dot(&proj)?)
            };
            let num_w = finite_diff_flat(&mut f_w, shape.weights(), eps)?;
            blocks.push(block_check(
                &format!("block{}.bottleneck.weights", bi + 1),
                grads.blocks[bi].bottleneck.as_ref().unwrap().0.weights(),
                &num_w,
                tol,
            ));
        }
        for li in 0..cfg.inner.layers {
            for gi in 0..weights.blocks[bi].d2.layers[li].kernel.groups().len() {
                let shape = weights.blocks[bi].d2.layers[li].kernel.groups()[gi]
                    .kernel
                    .clone();
                let (o, i) = (shape.out_channels(), shape.in_channels());
                let (kh, kw) = shape.spatial();
                let mut f_w = |w: &[f64]| {
                    let mut ws = weights.clone();
                    ws.blocks[bi].d2.layers[li].kernel.groups_mut()[gi].kernel =
                        ConvKernel::new(o, i, kh, kw, w.to_vec())?;
                    Ok(crate::blocks::d3_forward(&cfg, &input, &ws)?.dot(&proj)?)
                };
                let num_w = finite_diff_flat(&mut f_w, shape.weights(), eps)?;
                blocks.push(block_check(
                    &format!("block{}.layer{}.group{gi}.weights", bi + 1, li + 1),
                    grads.blocks[bi].d2.layers[li].kernels[gi].weights(),
                    &num_w,
                    tol,
                ));
            }
        }
        if let crate::blocks::ReductionOp::Compress(unit) = &weights.blocks[bi].reduce {
            let shape = unit.kernel.clone();
            let (o, i) = (shape.out_channels(), shape.in_channels());
            let mut f_w = |w: &[f64]| {
                let mut ws = weights.clone();
                if let crate::blocks::ReductionOp::Compress(u) = &mut ws.blocks[bi].reduce {
                    u.kernel = ConvKernel::new(o, i, 1, 1, w.to_vec())?;
                }
                Ok(crate::blocks::d3_forward(&cfg, &input, &ws)?.dot(&proj)?)
            };
            let num_w = finite_diff_flat(&mut f_w, shape.weights(), eps)?;
            blocks.push(block_check(
                &format!("block{}.compress.weights", bi + 1),
                grads.blocks[bi].reduce.as_ref().unwrap().0.weights(),
                &num_w,
                tol,
            ));
        }
    }
    Ok(finish("d3_forward", seed, eps, tol, blocks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_square() {
        // f(x) = sum x^2 at x = [3] -> 6
        let x = Tensor::new(1, 1, 1, 1, vec![3.0]).unwrap();
        let mut f = |t: &Tensor| Ok(t.data().iter().map(|v| v * v).sum());
        let g = finite_diff_grad(&mut f, &x, 1e-6).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_linear_is_exact() {
        let x = Tensor::new(1, 1, 1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let mut f = |t: &Tensor| Ok(2.0 * t.data()[0] - 3.0 * t.data()[1] + t.data()[2]);
        for eps in [1e-2, 1e-4, 1e-6] {
            let g = finite_diff_grad(&mut f, &x, eps).unwrap();
            assert!((g.data()[0] - 2.0).abs() < 1e-9);
            assert!((g.data()[1] + 3.0).abs() < 1e-9);
            assert!((g.data()[2] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn finite_diff_cube() {
        // f(x) = sum x^3 at x = [2] -> 12
        let x = Tensor::new(1, 1, 1, 1, vec![2.0]).unwrap();
        let mut f = |t: &Tensor| Ok(t.data().iter().map(|v| v * v * v).sum());
        let g = finite_diff_grad(&mut f, &x, 1e-5).unwrap();
        assert!((g.data()[0] - 12.0).abs() < 1e-5);
    }

    #[test]
    fn conv2d_passes_all_dilations() {
        for dilation in 1..=8 {
            let report = check_conv2d(dilation, 7, 1e-6).unwrap();
            assert!(report.pass, "dilation {dilation}: {report:?}");
        }
    }

    #[test]
    fn registered_ops_pass_spot_checks() {
        for op in ["multidilated_conv", "composite_psi", "avg_pool"] {
            let report = check_op(op, 3, 1e-6).unwrap();
            assert!(report.pass, "{op}: {report:?}");
        }
    }

    #[test]
    fn d2_forward_passes_at_composite_tolerance() {
        let report = check_op("d2_forward", 0, 1e-5).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn d3_forward_passes_at_composite_tolerance() {
        let report = check_op("d3_forward", 0, 1e-5).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn unknown_op_is_a_lookup_error() {
        assert!(matches!(
            check_op("no_such_op", 0, 1e-6),
            Err(Error::Lookup { .. })
        ));
    }

    #[test]
    fn reports_are_deterministic() {
        let a = check_op("conv2d", 5, 1e-6).unwrap();
        let b = check_op("conv2d", 5, 1e-6).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
