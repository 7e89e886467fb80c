//! Dilated 2-D convolution (forward and analytic backward) and the
//! multidilated convolution, where the dilation factor varies by input
//! channel group.
//!
//! Convention: cross-correlation (no kernel flip) with zero same-padding of
//! `dilation * (k - 1) / 2` per axis, so every dilation produces an output
//! with the input's spatial shape and group summands align. Convolutions are
//! bias-free. The implementation is the direct (naive loop) reference path.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bias-free convolution filter bank, laid out `[out_ch][in_ch][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    out_channels: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    weights: Vec<f64>,
}

impl ConvKernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!(
                "kernel dims must be odd for same-padding, got {kh}x{kw}"
            )));
        }
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::config("kernel needs at least 1 in/out channel".to_string()));
        }
        let expect = out_channels * in_channels * kh * kw;
        if weights.len() != expect {
            return Err(Error::config(format!(
                "weight length {} != {out_channels}x{in_channels}x{kh}x{kw} = {expect}",
                weights.len()
            )));
        }
        Ok(ConvKernel {
            out_channels,
            in_channels,
            kh,
            kw,
            weights,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kh: usize, kw: usize) -> Result<Self> {
        ConvKernel::new(
            out_channels,
            in_channels,
            kh,
            kw,
            vec![0.0; out_channels * in_channels * kh * kw],
        )
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    #[inline(always)]
    pub fn at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * self.kh + ky) * self.kw + kx]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }
}

/// A contiguous input-channel range `[channel_start, channel_end)` convolved
/// with one dilation factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DilationGroup {
    pub channel_start: usize,
    pub channel_end: usize,
    pub dilation: usize,
}

impl DilationGroup {
    pub fn new(channel_start: usize, channel_end: usize, dilation: usize) -> Result<Self> {
        if channel_start >= channel_end {
            return Err(Error::config(format!(
                "empty channel range [{channel_start},{channel_end})"
            )));
        }
        if dilation == 0 {
            return Err(Error::config("dilation must be >= 1".to_string()));
        }
        Ok(DilationGroup {
            channel_start,
            channel_end,
            dilation,
        })
    }

    pub fn width(&self) -> usize {
        self.channel_end - self.channel_start
    }
}

/// One channel group of a multidilated layer: the range/dilation plus its
/// filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGroup {
    pub channels: DilationGroup,
    pub kernel: ConvKernel,
}

/// A full multidilated convolution layer. Groups must tile the input channel
/// range exactly and share out-channels and kernel size; the layer output is
/// the sum of each group's dilated convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDilatedKernel {
    groups: Vec<KernelGroup>,
}

impl MultiDilatedKernel {
    pub fn new(groups: Vec<KernelGroup>) -> Result<Self> {
        let first = groups
            .first()
            .ok_or_else(|| Error::config("multidilated kernel needs >= 1 group".to_string()))?;
        let out_ch = first.kernel.out_channels();
        let (kh, kw) = first.kernel.spatial();
        let mut expect_start = 0;
        for (i, g) in groups.iter().enumerate() {
            if g.channels.channel_start != expect_start {
                return Err(Error::config(format!(
                    "group {i} starts at channel {}, expected {expect_start} (gap or overlap)",
                    g.channels.channel_start
                )));
            }
            if g.kernel.out_channels() != out_ch || g.kernel.spatial() != (kh, kw) {
                return Err(Error::config(format!(
                    "group {i} kernel shape disagrees with group 0"
                )));
            }
            if g.kernel.in_channels() != g.channels.width() {
                return Err(Error::config(format!(
                    "group {i} kernel has {} in-channels for a {}-wide range",
                    g.kernel.in_channels(),
                    g.channels.width()
                )));
            }
            expect_start = g.channels.channel_end;
        }
        Ok(MultiDilatedKernel { groups })
    }

    pub fn groups(&self) -> &[KernelGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [KernelGroup] {
        &mut self.groups
    }

    pub fn in_channels(&self) -> usize {
        self.groups.last().map(|g| g.channels.channel_end).unwrap_or(0)
    }

    pub fn out_channels(&self) -> usize {
        self.groups[0].kernel.out_channels()
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.groups[0].kernel.spatial()
    }

    pub fn param_count(&self) -> usize {
        self.groups.iter().map(|g| g.kernel.param_count()).sum()
    }
}

/// Dilated 2-D cross-correlation with zero same-padding.
///
/// Output position (y, x) sums `input[y + d*(ky - (kh-1)/2), x + d*(kx - (kw-1)/2)]
/// * kernel[ky, kx]` over taps, reading zeros outside the input.
pub fn conv2d(input: &Tensor, kernel: &ConvKernel, dilation: usize) -> Result<Tensor> {
    if dilation == 0 {
        return Err(Error::argument("dilation must be >= 1".to_string()));
    }
    let (n, c, h, w) = input.shape();
    if c != kernel.in_channels() {
        return Err(Error::dimension(format!(
            "input has {c} channels, kernel expects {}",
            kernel.in_channels()
        )));
    }
    let (kh, kw) = kernel.spatial();
    let cy = (kh as isize - 1) / 2;
    let cx = (kw as isize - 1) / 2;
    let d = dilation as isize;
    let mut out = Tensor::zeros(n, kernel.out_channels(), h, w);
    for b in 0..n {
        for o in 0..kernel.out_channels() {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..kh as isize {
                            let sy = y + d * (ky - cy);
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw as isize {
                                let sx = x + d * (kx - cx);
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                acc += input.at(b, ic, sy as usize, sx as usize)
                                    * kernel.at(o, ic, ky as usize, kx as usize);
                            }
                        }
                    }
                    out.set(b, o, y as usize, x as usize, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Analytic gradients of `conv2d` with respect to input and weights.
pub fn conv2d_grads(
    input: &Tensor,
    kernel: &ConvKernel,
    dilation: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, ConvKernel)> {
    if dilation == 0 {
        return Err(Error::argument("dilation must be >= 1".to_string()));
    }
    let (n, c, h, w) = input.shape();
    if c != kernel.in_channels() {
        return Err(Error::dimension(format!(
            "input has {c} channels, kernel expects {}",
            kernel.in_channels()
        )));
    }
    if grad_out.shape() != (n, kernel.out_channels(), h, w) {
        return Err(Error::dimension(format!(
            "grad_out shape {:?} != expected {:?}",
            grad_out.shape(),
            (n, kernel.out_channels(), h, w)
        )));
    }
    let (kh, kw) = kernel.spatial();
    let cy = (kh as isize - 1) / 2;
    let cx = (kw as isize - 1) / 2;
    let d = dilation as isize;
    let mut grad_in = Tensor::zeros(n, c, h, w);
    let mut grad_w = ConvKernel::zeros(kernel.out_channels(), c, kh, kw)?;
    for b in 0..n {
        for o in 0..kernel.out_channels() {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let g = grad_out.at(b, o, y as usize, x as usize);
                    if g == 0.0 {
                        continue;
                    }
                    for ic in 0..c {
                        for ky in 0..kh as isize {
                            let sy = y + d * (ky - cy);
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw as isize {
                                let sx = x + d * (kx - cx);
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let xin = input.at(b, ic, sy as usize, sx as usize);
                                grad_in.add_at(
                                    b,
                                    ic,
                                    sy as usize,
                                    sx as usize,
                                    g * kernel.at(o, ic, ky as usize, kx as usize),
                                );
                                let wi = ((o * c + ic) * kh + ky as usize) * kw + kx as usize;
                                grad_w.weights_mut()[wi] += g * xin;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((grad_in, grad_w))
}

/// Multidilated convolution: each channel group is convolved with its own
/// dilation and the per-group results are summed.
pub fn multidilated_conv(input: &Tensor, kernel: &MultiDilatedKernel) -> Result<Tensor> {
    let (n, _, h, w) = input.shape();
    check_tiling(input, kernel)?;
    let mut out = Tensor::zeros(n, kernel.out_channels(), h, w);
    for g in kernel.groups() {
        let slice = input.slice_channels(g.channels.channel_start, g.channels.channel_end)?;
        let part = conv2d(&slice, &g.kernel, g.channels.dilation)?;
        out = out.add_scaled(&part, 1.0)?;
    }
    Ok(out)
}

/// Analytic gradients of `multidilated_conv`; grad_input is reassembled from
/// the per-group input gradients, grad weights come back one bank per group.
pub fn multidilated_grads(
    input: &Tensor,
    kernel: &MultiDilatedKernel,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<ConvKernel>)> {
    let (n, c, h, w) = input.shape();
    check_tiling(input, kernel)?;
    if grad_out.shape() != (n, kernel.out_channels(), h, w) {
        return Err(Error::dimension(format!(
            "grad_out shape {:?} != expected {:?}",
            grad_out.shape(),
            (n, kernel.out_channels(), h, w)
        )));
    }
    let mut grad_in = Tensor::zeros(n, c, h, w);
    let mut grad_ws = Vec::with_capacity(kernel.groups().len());
    for g in kernel.groups() {
        let slice = input.slice_channels(g.channels.channel_start, g.channels.channel_end)?;
        let (gi, gw) = conv2d_grads(&slice, &g.kernel, g.channels.dilation, grad_out)?;
        for b in 0..n {
            for ic in 0..g.channels.width() {
                for y in 0..h {
                    for x in 0..w {
                        grad_in.set(
                            b,
                            g.channels.channel_start + ic,
                            y,
                            x,
                            gi.at(b, ic, y, x),
                        );
                    }
                }
            }
        }
        grad_ws.push(gw);
    }
    Ok((grad_in, grad_ws))
}

fn check_tiling(input: &Tensor, kernel: &MultiDilatedKernel) -> Result<()> {
    if kernel.in_channels() != input.channels() {
        return Err(Error::config(format!(
            "groups tile {} channels, input has {}",
            kernel.in_channels(),
            input.channels()
        )));
    }
    Ok(())
}
