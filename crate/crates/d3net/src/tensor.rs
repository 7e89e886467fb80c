//! Dense rank-4 tensor `[batch, channel, height, width]` and the
//! non-convolutional primitives: channel concatenation, batch
//! normalization + ReLU, and 2x2 average pooling.
//!
//! Everything is f64 and row-major in `n -> c -> h -> w` order. A width of 1
//! degenerates cleanly to 1-D sequences. All operations are pure functions of
//! their inputs; there is no internal mutation after construction.

use crate::error::{Error, Result};

/// Dense rank-4 real tensor. `data.len() == n*c*h*w`, all dims >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a row-major buffer, validating the invariants.
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::dimension(format!(
                "all dimensions must be >= 1, got [{n},{c},{h},{w}]"
            )));
        }
        let expect = n * c * h * w;
        if data.len() != expect {
            return Err(Error::dimension(format!(
                "data length {} does not match shape [{n},{c},{h},{w}] = {expect}",
                data.len()
            )));
        }
        Ok(Tensor { n, c, h, w, data })
    }

    /// All-zeros tensor. Panics on a zero dimension (internal invariant).
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        assert!(n >= 1 && c >= 1 && h >= 1 && w >= 1, "zero dimension");
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline(always)]
    fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }

    #[inline(always)]
    pub fn add_at(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] += v;
    }

    /// Copies the channel range `[start, end)` into a new tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        if start >= end || end > self.c {
            return Err(Error::dimension(format!(
                "channel slice [{start},{end}) out of range for {} channels",
                self.c
            )));
        }
        let cw = end - start;
        let mut out = Tensor::zeros(self.n, cw, self.h, self.w);
        let plane = self.h * self.w;
        for n in 0..self.n {
            for c in 0..cw {
                let src = (n * self.c + start + c) * plane;
                let dst = (n * cw + c) * plane;
                out.data[dst..dst + plane].copy_from_slice(&self.data[src..src + plane]);
            }
        }
        Ok(out)
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise a + s*b; shapes must agree.
    pub fn add_scaled(&self, other: &Tensor, s: f64) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(format!(
                "shape {:?} vs {:?} in add_scaled",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + s * b)
            .collect();
        Ok(Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Inner product of two same-shaped tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(format!(
                "shape {:?} vs {:?} in dot",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-channel affine parameters for the normalization stage.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

/// Default normalization epsilon.
pub const DEFAULT_EPS: f64 = 1e-5;

impl NormParams {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>, eps: f64) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(Error::dimension(format!(
                "gamma length {} != beta length {}",
                gamma.len(),
                beta.len()
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::argument(format!("eps must be > 0, got {eps}")));
        }
        Ok(NormParams { gamma, beta, eps })
    }

    /// gamma = 1, beta = 0, default eps.
    pub fn identity(channels: usize) -> Self {
        NormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Per-channel batch statistics captured by a normalization forward pass,
/// reused by the backward pass.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Concatenates tensors along the channel axis, preserving input order.
pub fn concat_channels(inputs: &[Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::argument("concat_channels needs at least one input"))?;
    let (n, _, h, w) = first.shape();
    let mut total_c = 0;
    for (i, t) in inputs.iter().enumerate() {
        let (tn, tc, th, tw) = t.shape();
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::dimension(format!(
                "input {i} has batch/spatial {:?}, expected ({n},{h},{w})",
                (tn, th, tw)
            )));
        }
        total_c += tc;
    }
    let mut out = Tensor::zeros(n, total_c, h, w);
    let plane = h * w;
    for b in 0..n {
        let mut c_off = 0;
        for t in inputs {
            let tc = t.channels();
            let src = b * tc * plane;
            let dst = (b * total_c + c_off) * plane;
            out.data[dst..dst + tc * plane].copy_from_slice(&t.data[src..src + tc * plane]);
            c_off += tc;
        }
    }
    Ok(out)
}

/// Splits a gradient tensor back into pieces with the given channel widths.
/// Adjoint of `concat_channels`.
pub fn split_channels(grad: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let total: usize = widths.iter().sum();
    if total != grad.channels() {
        return Err(Error::dimension(format!(
            "split widths sum to {total}, tensor has {} channels",
            grad.channels()
        )));
    }
    let mut out = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &w in widths {
        out.push(grad.slice_channels(start, start + w)?);
        start += w;
    }
    Ok(out)
}

/// Batch normalization over (batch, height, width) per channel, without the
/// ReLU. Returns the normalized tensor and the statistics used.
pub fn batch_norm(input: &Tensor, params: &NormParams) -> Result<(Tensor, BatchStats)> {
    let (n, c, h, w) = input.shape();
    if params.channels() != c {
        return Err(Error::dimension(format!(
            "norm params have {} channels, input has {c}",
            params.channels()
        )));
    }
    let m = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    mean[ch] += input.at(b, ch, y, x);
                }
            }
        }
    }
    for v in mean.iter_mut() {
        *v /= m;
    }
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let d = input.at(b, ch, y, x) - mean[ch];
                    var[ch] += d * d;
                }
            }
        }
    }
    for v in var.iter_mut() {
        *v /= m;
    }
    let mut out = Tensor::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            let inv_std = 1.0 / (var[ch] + params.eps).sqrt();
            for y in 0..h {
                for x in 0..w {
                    let xhat = (input.at(b, ch, y, x) - mean[ch]) * inv_std;
                    out.set(b, ch, y, x, params.gamma[ch] * xhat + params.beta[ch]);
                }
            }
        }
    }
    Ok((out, BatchStats { mean, var }))
}

/// Gradients of `batch_norm` with respect to input, gamma, and beta.
///
/// Uses the saved batch statistics; accounts for the dependence of the
/// per-channel mean/variance on every element of that channel.
pub fn batch_norm_grads(
    input: &Tensor,
    params: &NormParams,
    stats: &BatchStats,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = input.shape();
    if grad_out.shape() != input.shape() {
        return Err(Error::dimension(format!(
            "grad_out shape {:?} != input shape {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let m = (n * h * w) as f64;
    let mut grad_in = Tensor::zeros(n, c, h, w);
    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    for ch in 0..c {
        let inv_std = 1.0 / (stats.var[ch] + params.eps).sqrt();
        // accumulate the channel-wide reductions first
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let dy = grad_out.at(b, ch, y, x);
                    let xhat = (input.at(b, ch, y, x) - stats.mean[ch]) * inv_std;
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat;
                }
            }
        }
        grad_beta[ch] = sum_dy;
        grad_gamma[ch] = sum_dy_xhat;
        let g = params.gamma[ch];
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let dy = grad_out.at(b, ch, y, x);
                    let xhat = (input.at(b, ch, y, x) - stats.mean[ch]) * inv_std;
                    let dx = g * inv_std * (dy - sum_dy / m - xhat * sum_dy_xhat / m);
                    grad_in.set(b, ch, y, x, dx);
                }
            }
        }
    }
    Ok((grad_in, grad_gamma, grad_beta))
}

/// ReLU.
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// ReLU backward given the pre-activation values.
pub fn relu_grad(pre: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if pre.shape() != grad_out.shape() {
        return Err(Error::dimension("relu_grad shape mismatch".to_string()));
    }
    let data = pre
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    let (n, c, h, w) = pre.shape();
    Tensor::new(n, c, h, w, data)
}

/// Composite of batch normalization and ReLU.
pub fn composite_psi(input: &Tensor, params: &NormParams) -> Result<Tensor> {
    let (normed, _) = batch_norm(input, params)?;
    Ok(relu(&normed))
}

/// 2x2 average pooling; both spatial dims must be even.
pub fn avg_pool_2x2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dimension(format!(
            "avg_pool_2x2 requires even spatial dims, got {h}x{w}"
        )));
    }
    let mut out = Tensor::zeros(n, c, h / 2, w / 2);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h / 2 {
                for x in 0..w / 2 {
                    let s = input.at(b, ch, 2 * y, 2 * x)
                        + input.at(b, ch, 2 * y, 2 * x + 1)
                        + input.at(b, ch, 2 * y + 1, 2 * x)
                        + input.at(b, ch, 2 * y + 1, 2 * x + 1);
                    out.set(b, ch, y, x, s / 4.0);
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `avg_pool_2x2`: spreads grad/4 over each 2x2 block.
pub fn avg_pool_2x2_grad(input_shape: (usize, usize, usize, usize), grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input_shape;
    if grad_out.shape() != (n, c, h / 2, w / 2) || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dimension(format!(
            "avg_pool grad_out shape {:?} incompatible with input {:?}",
            grad_out.shape(),
            input_shape
        )));
    }
    let mut grad_in = Tensor::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h / 2 {
                for x in 0..w / 2 {
                    let g = grad_out.at(b, ch, y, x) / 4.0;
                    grad_in.set(b, ch, 2 * y, 2 * x, g);
                    grad_in.set(b, ch, 2 * y, 2 * x + 1, g);
                    grad_in.set(b, ch, 2 * y + 1, 2 * x, g);
                    grad_in.set(b, ch, 2 * y + 1, 2 * x + 1, g);
                }
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_tensor(n: usize, c: usize, h: usize, w: usize) -> Tensor {
        let data = (0..n * c * h * w).map(|i| i as f64).collect();
        Tensor::new(n, c, h, w, data).unwrap()
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Tensor::new(1, 0, 2, 2, vec![]).is_err());
        assert!(Tensor::new(1, 1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor::new(1, 1, 2, 2, vec![0.0; 4]).is_ok());
    }

    #[test]
    fn concat_channel_arithmetic() {
        let a = seq_tensor(1, 2, 4, 4);
        let b = seq_tensor(1, 3, 4, 4);
        let out = concat_channels(&[a, b]).unwrap();
        assert_eq!(out.shape(), (1, 5, 4, 4));
    }

    #[test]
    fn concat_single_input_is_identity() {
        let a = seq_tensor(2, 3, 4, 5);
        let out = concat_channels(std::slice::from_ref(&a)).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = seq_tensor(1, 2, 4, 4);
        let b = seq_tensor(1, 2, 5, 4);
        assert!(matches!(
            concat_channels(&[a, b]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn concat_preserves_channel_order() {
        let a = Tensor::new(1, 1, 1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(1, 2, 1, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = concat_channels(&[a, b]).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn split_is_concat_inverse() {
        let a = seq_tensor(2, 2, 3, 3);
        let b = seq_tensor(2, 3, 3, 3);
        let cat = concat_channels(&[a.clone(), b.clone()]).unwrap();
        let parts = split_channels(&cat, &[2, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn psi_constant_channel_goes_to_zero() {
        let input = Tensor::new(1, 1, 2, 2, vec![5.0; 4]).unwrap();
        let out = composite_psi(&input, &NormParams::identity(1)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psi_is_near_fixed_point_on_standardized_input() {
        // zero-mean unit-variance channel: pre-ReLU output ~ input within eps slack
        let vals = [-1.5, -0.5, 0.5, 1.5];
        let mean = 0.0;
        let var: f64 = vals.iter().map(|v| v * v).sum::<f64>() / 4.0;
        let scaled: Vec<f64> = vals.iter().map(|v| (v - mean) / var.sqrt()).collect();
        let input = Tensor::new(1, 1, 2, 2, scaled.clone()).unwrap();
        let (pre, _) = batch_norm(&input, &NormParams::identity(1)).unwrap();
        // normalization shrinks by 1/sqrt(1+eps), so the error is |x|*eps/2
        for (a, b) in pre.data().iter().zip(&scaled) {
            assert!((a - b).abs() <= b.abs() * DEFAULT_EPS + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn psi_large_negative_beta_clamps_to_zero() {
        let params = NormParams::new(vec![1.0; 2], vec![-10.0; 2], DEFAULT_EPS).unwrap();
        let input = seq_tensor(1, 2, 3, 3);
        let out = composite_psi(&input, &params).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psi_rejects_channel_mismatch() {
        let input = seq_tensor(1, 3, 2, 2);
        assert!(matches!(
            composite_psi(&input, &NormParams::identity(2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn batch_norm_standardizes() {
        // random-ish values, per-channel variance >= 1
        let data: Vec<f64> = (0..2 * 2 * 4 * 4)
            .map(|i| ((i * 2654435761_usize) % 97) as f64 / 7.0 - 6.0)
            .collect();
        let input = Tensor::new(2, 2, 4, 4, data).unwrap();
        let (normed, _) = batch_norm(&input, &NormParams::identity(2)).unwrap();
        let (n, c, h, w) = normed.shape();
        let m = (n * h * w) as f64;
        for ch in 0..c {
            let mut mean = 0.0;
            for b in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        mean += normed.at(b, ch, y, x);
                    }
                }
            }
            mean /= m;
            let mut var = 0.0;
            for b in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        let d = normed.at(b, ch, y, x) - mean;
                        var += d * d;
                    }
                }
            }
            var /= m;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn pool_averages_blocks() {
        let input = Tensor::new(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = avg_pool_2x2(&input).unwrap();
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn pool_halves_shape() {
        let input = seq_tensor(1, 3, 8, 8);
        let out = avg_pool_2x2(&input).unwrap();
        assert_eq!(out.shape(), (1, 3, 4, 4));
    }

    #[test]
    fn pool_rejects_odd_dims() {
        let input = seq_tensor(1, 3, 5, 4);
        assert!(matches!(avg_pool_2x2(&input), Err(Error::Dimension(_))));
    }

    #[test]
    fn pool_preserves_global_mean() {
        let input = seq_tensor(2, 3, 6, 4);
        let out = avg_pool_2x2(&input).unwrap();
        let rel = (out.sum() * 4.0 - input.sum()).abs() / input.sum().abs();
        assert!(rel < 1e-12);
    }

    #[test]
    fn pool_grad_matches_manual() {
        let input = seq_tensor(1, 1, 2, 2);
        let g = Tensor::new(1, 1, 1, 1, vec![8.0]).unwrap();
        let grad = avg_pool_2x2_grad(input.shape(), &g).unwrap();
        assert_eq!(grad.data(), &[2.0, 2.0, 2.0, 2.0]);
    }
}
