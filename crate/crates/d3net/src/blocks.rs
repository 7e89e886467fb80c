//! Densely connected blocks built on the multidilated convolution.
//!
//! A D2 block is a dense block (every layer consumes the concatenation of the
//! block input and all preceding layer outputs) whose convolutions assign a
//! dilation factor per input-channel group: channels originating at layer `i`
//! get dilation `2^i` in `Multi` mode, the per-layer maximum `2^(l-1)` in
//! `StandardDilated` mode, and 1 in `None` mode.
//!
//! A D3 block densely connects `M` D2 blocks the same way, treating each D2
//! block as a composite layer. Dilation patterns restart at 1 inside every D2
//! block; block-level inputs (including skip concatenations from earlier D2
//! blocks) all enter as the group-0 slice of the receiving block. Channel
//! growth is kept in check by an optional 1x1 bottleneck at block entry and a
//! channel reduction (1x1 compression or last-N selection) at block exit.

use serde::{Deserialize, Serialize};

use crate::conv::{
    conv2d, conv2d_grads, multidilated_conv, multidilated_grads, ConvKernel, DilationGroup,
    KernelGroup, MultiDilatedKernel,
};
use crate::error::{Error, Result};
use crate::tensor::{
    avg_pool_2x2, batch_norm, batch_norm_grads, concat_channels, relu, relu_grad, split_channels,
    NormParams, Tensor,
};

/// How convolutions inside a D2 block pick their dilation factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DilationMode {
    /// Dilation per source group: channels from layer i get dilation 2^i.
    Multi,
    /// Every channel gets the layer's maximum dilation 2^(l-1).
    #[serde(rename = "standard")]
    StandardDilated,
    /// Plain convolution, dilation 1 everywhere.
    None,
}

/// D2 block shape: layer count, growth rate, kernel size, dilation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct D2Config {
    pub layers: usize,
    pub growth: usize,
    pub kernel: (usize, usize),
    pub mode: DilationMode,
}

impl D2Config {
    pub fn new(layers: usize, growth: usize, kernel: (usize, usize), mode: DilationMode) -> Self {
        D2Config {
            layers,
            growth,
            kernel,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.growth < 1 {
            return Err(Error::config(format!(
                "need layers >= 1 and growth >= 1, got L={} k={}",
                self.layers, self.growth
            )));
        }
        if self.kernel.0 % 2 == 0 || self.kernel.1 % 2 == 0 {
            return Err(Error::config(format!(
                "kernel dims must be odd, got {:?}",
                self.kernel
            )));
        }
        Ok(())
    }

    /// Channels of the block's concatenated output for a given input width.
    pub fn output_channels(&self, input_channels: usize) -> usize {
        input_channels + self.layers * self.growth
    }
}

/// Channel reduction applied at the end of a D2 block inside a D3 block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// 1x1 convolution down to floor(rate * channels).
    Compress(f64),
    /// Pass through the outputs of the last N layers unchanged.
    LastN(usize),
    /// Keep the full concatenation.
    None,
}

/// D3 block shape: number of D2 blocks, their shared config, bottleneck
/// width, and the exit reduction policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct D3Config {
    pub blocks: usize,
    pub inner: D2Config,
    /// Bottleneck channel count; when present it must equal 4 * growth.
    pub bottleneck: Option<usize>,
    pub reduction: Reduction,
}

impl D3Config {
    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        if self.blocks < 1 {
            return Err(Error::config("need at least one D2 block".to_string()));
        }
        if let Some(b) = self.bottleneck {
            if b != 4 * self.inner.growth {
                return Err(Error::config(format!(
                    "bottleneck width must be 4k = {}, got {b}",
                    4 * self.inner.growth
                )));
            }
        }
        match self.reduction {
            Reduction::Compress(c) => {
                if !(c > 0.0 && c < 1.0) {
                    return Err(Error::config(format!(
                        "compression rate must be in (0,1), got {c}"
                    )));
                }
            }
            Reduction::LastN(n) => {
                if n < 1 || n > self.inner.layers {
                    return Err(Error::config(format!(
                        "last-N must satisfy 1 <= N <= L, got N={n} L={}",
                        self.inner.layers
                    )));
                }
            }
            Reduction::None => {}
        }
        Ok(())
    }
}

/// Dilation factor for the given (1-based) layer and source group.
pub fn group_dilation(mode: DilationMode, layer: usize, source: usize) -> usize {
    match mode {
        DilationMode::Multi => 1 << source,
        DilationMode::StandardDilated => 1 << (layer - 1),
        DilationMode::None => 1,
    }
}

/// Channel groups consumed by layer `layer` (1-based): group 0 is the block
/// input, group i >= 1 the output of layer i.
pub fn layer_groups(
    cfg: &D2Config,
    input_channels: usize,
    layer: usize,
) -> Result<Vec<DilationGroup>> {
    let mut groups = Vec::with_capacity(layer);
    groups.push(DilationGroup::new(
        0,
        input_channels,
        group_dilation(cfg.mode, layer, 0),
    )?);
    for source in 1..layer {
        let start = input_channels + (source - 1) * cfg.growth;
        groups.push(DilationGroup::new(
            start,
            start + cfg.growth,
            group_dilation(cfg.mode, layer, source),
        )?);
    }
    Ok(groups)
}

/// Normalization stage preceding each convolution, always followed by ReLU
/// except in the pass-through `Identity` variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Psi {
    /// Batch statistics + affine + ReLU.
    BatchNorm(NormParams),
    /// Per-channel affine (no batch statistics) + ReLU. Used where spatial
    /// positions must stay exactly decoupled, e.g. the toy harness.
    Affine { gamma: Vec<f64>, beta: Vec<f64> },
    /// No-op, used by the receptive-field oracle.
    Identity,
}

impl Psi {
    pub fn channels(&self) -> Option<usize> {
        match self {
            Psi::BatchNorm(p) => Some(p.channels()),
            Psi::Affine { gamma, .. } => Some(gamma.len()),
            Psi::Identity => None,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Psi::BatchNorm(p) => 2 * p.channels(),
            Psi::Affine { gamma, .. } => 2 * gamma.len(),
            Psi::Identity => 0,
        }
    }
}

/// Which psi variant weight builders should install.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiKind {
    BatchNorm,
    Affine,
    Identity,
}

pub(crate) struct PsiOut {
    pub output: Tensor,
    pub min_abs_preact: f64,
}

fn min_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

pub(crate) fn psi_apply(psi: &Psi, input: &Tensor) -> Result<PsiOut> {
    match psi {
        Psi::BatchNorm(params) => {
            let (pre, _) = batch_norm(input, params)?;
            let min = min_abs(&pre);
            Ok(PsiOut {
                output: relu(&pre),
                min_abs_preact: min,
            })
        }
        Psi::Affine { gamma, beta } => {
            let (n, c, h, w) = input.shape();
            if gamma.len() != c {
                return Err(Error::dimension(format!(
                    "affine psi has {} channels, input has {c}",
                    gamma.len()
                )));
            }
            let mut pre = Tensor::zeros(n, c, h, w);
            for b in 0..n {
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            pre.set(b, ch, y, x, gamma[ch] * input.at(b, ch, y, x) + beta[ch]);
                        }
                    }
                }
            }
            let min = min_abs(&pre);
            Ok(PsiOut {
                output: relu(&pre),
                min_abs_preact: min,
            })
        }
        Psi::Identity => Ok(PsiOut {
            output: input.clone(),
            min_abs_preact: f64::INFINITY,
        }),
    }
}

/// Forward through a psi stage.
pub fn psi_forward(psi: &Psi, input: &Tensor) -> Result<Tensor> {
    Ok(psi_apply(psi, input)?.output)
}

/// Per-stage parameter gradients of a psi stage.
#[derive(Debug, Clone, Default)]
pub struct PsiGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Backward through a psi stage; recomputes forward intermediates.
pub fn psi_backward(psi: &Psi, input: &Tensor, grad_out: &Tensor) -> Result<(Tensor, PsiGrads)> {
    match psi {
        Psi::BatchNorm(params) => {
            let (pre, stats) = batch_norm(input, params)?;
            let grad_pre = relu_grad(&pre, grad_out)?;
            let (grad_in, gamma, beta) = batch_norm_grads(input, params, &stats, &grad_pre)?;
            Ok((grad_in, PsiGrads { gamma, beta }))
        }
        Psi::Affine { gamma, beta } => {
            let (n, c, h, w) = input.shape();
            let mut pre = Tensor::zeros(n, c, h, w);
            for b in 0..n {
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            pre.set(b, ch, y, x, gamma[ch] * input.at(b, ch, y, x) + beta[ch]);
                        }
                    }
                }
            }
            let grad_pre = relu_grad(&pre, grad_out)?;
            let mut grad_in = Tensor::zeros(n, c, h, w);
            let mut g_gamma = vec![0.0; c];
            let mut g_beta = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let gp = grad_pre.at(b, ch, y, x);
                            grad_in.set(b, ch, y, x, gamma[ch] * gp);
                            g_gamma[ch] += gp * input.at(b, ch, y, x);
                            g_beta[ch] += gp;
                        }
                    }
                }
            }
            Ok((
                grad_in,
                PsiGrads {
                    gamma: g_gamma,
                    beta: g_beta,
                },
            ))
        }
        Psi::Identity => Ok((grad_out.clone(), PsiGrads::default())),
    }
}

/// Weights of one dense layer: the psi stage plus the multidilated kernel.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub psi: Psi,
    pub kernel: MultiDilatedKernel,
}

/// All weights of a D2 block.
#[derive(Debug, Clone)]
pub struct D2Weights {
    pub layers: Vec<LayerWeights>,
}

impl D2Weights {
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.psi.param_count() + l.kernel.param_count())
            .sum()
    }
}

/// psi + 1x1 convolution, the shape of bottleneck / compression / transition
/// / feature-extraction units.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub psi: Psi,
    pub kernel: ConvKernel,
}

impl ConvUnit {
    pub fn param_count(&self) -> usize {
        self.psi.param_count() + self.kernel.param_count()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let y = psi_forward(&self.psi, input)?;
        conv2d(&y, &self.kernel, 1)
    }

    /// Backward; returns (grad_input, kernel grad, psi grads).
    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
    ) -> Result<(Tensor, ConvKernel, PsiGrads)> {
        let y = psi_forward(&self.psi, input)?;
        let (grad_y, grad_w) = conv2d_grads(&y, &self.kernel, 1, grad_out)?;
        let (grad_in, psi_grads) = psi_backward(&self.psi, input, &grad_y)?;
        Ok((grad_in, grad_w, psi_grads))
    }
}

/// Per-layer tensors produced by a D2 forward pass: the block input x_0 and
/// the layer outputs x_1..x_L (growth-rate channels each).
#[derive(Debug, Clone)]
pub struct BlockState {
    pub input: Tensor,
    pub layer_outputs: Vec<Tensor>,
}

impl BlockState {
    fn feature_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input.channels()];
        w.extend(self.layer_outputs.iter().map(|t| t.channels()));
        w
    }
}

fn validate_d2_weights(cfg: &D2Config, input_channels: usize, weights: &D2Weights) -> Result<()> {
    cfg.validate()?;
    if weights.layers.len() != cfg.layers {
        return Err(Error::config(format!(
            "weights carry {} layers, config wants {}",
            weights.layers.len(),
            cfg.layers
        )));
    }
    for (idx, lw) in weights.layers.iter().enumerate() {
        let layer = idx + 1;
        let cat_channels = input_channels + (layer - 1) * cfg.growth;
        if let Some(pc) = lw.psi.channels() {
            if pc != cat_channels {
                return Err(Error::config(format!(
                    "layer {layer} psi has {pc} channels, expected {cat_channels}"
                )));
            }
        }
        let expect = layer_groups(cfg, input_channels, layer)?;
        let found: Vec<DilationGroup> = lw.kernel.groups().iter().map(|g| g.channels).collect();
        if found != expect {
            return Err(Error::config(format!(
                "layer {layer} group layout {found:?} does not match config {expect:?}"
            )));
        }
        if lw.kernel.out_channels() != cfg.growth || lw.kernel.spatial() != cfg.kernel {
            return Err(Error::config(format!(
                "layer {layer} kernel is {}x{:?}, expected {}x{:?}",
                lw.kernel.out_channels(),
                lw.kernel.spatial(),
                cfg.growth,
                cfg.kernel
            )));
        }
    }
    Ok(())
}

/// Runs a D2 block: returns the concatenated output `[x_0, x_1, .., x_L]` and
/// the per-layer state.
pub fn d2_forward(
    cfg: &D2Config,
    input: &Tensor,
    weights: &D2Weights,
) -> Result<(Tensor, BlockState)> {
    let (out, state, _) = d2_forward_tracked(cfg, input, weights)?;
    Ok((out, state))
}

/// Like `d2_forward`, additionally reporting the smallest pre-ReLU magnitude
/// seen by any psi stage (infinite for identity psi). Gradient checks use it
/// to reject inputs that sit on a ReLU kink.
pub fn d2_forward_tracked(
    cfg: &D2Config,
    input: &Tensor,
    weights: &D2Weights,
) -> Result<(Tensor, BlockState, f64)> {
    validate_d2_weights(cfg, input.channels(), weights)?;
    let mut feats: Vec<Tensor> = vec![input.clone()];
    let mut min_preact = f64::INFINITY;
    for lw in &weights.layers {
        let cat = concat_channels(&feats)?;
        let psi_out = psi_apply(&lw.psi, &cat)?;
        min_preact = min_preact.min(psi_out.min_abs_preact);
        let x = multidilated_conv(&psi_out.output, &lw.kernel)?;
        feats.push(x);
    }
    let out = concat_channels(&feats)?;
    let input_t = feats.remove(0);
    Ok((
        out,
        BlockState {
            input: input_t,
            layer_outputs: feats,
        },
        min_preact,
    ))
}

/// Gradients of one D2 layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub kernels: Vec<ConvKernel>,
    pub psi: PsiGrads,
}

/// Gradients of a full D2 block.
#[derive(Debug, Clone)]
pub struct D2Grads {
    pub layers: Vec<LayerGrads>,
}

/// Backward through a D2 block given the forward state and the gradient of
/// the concatenated output. Returns the input gradient and weight gradients.
pub fn d2_backward(
    cfg: &D2Config,
    weights: &D2Weights,
    state: &BlockState,
    grad_output: &Tensor,
) -> Result<(Tensor, D2Grads)> {
    let input_channels = state.input.channels();
    validate_d2_weights(cfg, input_channels, weights)?;
    let widths = state.feature_widths();
    let expect_c: usize = widths.iter().sum();
    if grad_output.channels() != expect_c {
        return Err(Error::dimension(format!(
            "grad_output has {} channels, expected {expect_c}",
            grad_output.channels()
        )));
    }
    let mut feats: Vec<&Tensor> = Vec::with_capacity(widths.len());
    feats.push(&state.input);
    feats.extend(state.layer_outputs.iter());

    let mut grad_feats = split_channels(grad_output, &widths)?;
    let mut layer_grads: Vec<Option<LayerGrads>> = vec![None; cfg.layers];
    for layer in (1..=cfg.layers).rev() {
        let lw = &weights.layers[layer - 1];
        let owned: Vec<Tensor> = feats[..layer].iter().map(|t| (*t).clone()).collect();
        let cat = concat_channels(&owned)?;
        let y = psi_forward(&lw.psi, &cat)?;
        let (grad_y, grad_kernels) = multidilated_grads(&y, &lw.kernel, &grad_feats[layer])?;
        let (grad_cat, psi_grads) = psi_backward(&lw.psi, &cat, &grad_y)?;
        let pieces = split_channels(&grad_cat, &widths[..layer])?;
        for (i, piece) in pieces.into_iter().enumerate() {
            grad_feats[i] = grad_feats[i].add_scaled(&piece, 1.0)?;
        }
        layer_grads[layer - 1] = Some(LayerGrads {
            kernels: grad_kernels,
            psi: psi_grads,
        });
    }
    let grads = D2Grads {
        layers: layer_grads.into_iter().map(|g| g.unwrap()).collect(),
    };
    Ok((grad_feats.swap_remove(0), grads))
}

/// 1x1 bottleneck at D2-block entry: applies psi + conv down to `limit`
/// channels when the input is wider than `limit`, otherwise passes through.
pub fn bottleneck(input: &Tensor, limit: usize, weights: Option<&ConvUnit>) -> Result<Tensor> {
    if input.channels() > limit {
        let unit = weights.ok_or_else(|| {
            Error::config(format!(
                "bottleneck needed ({} > {limit}) but no weights supplied",
                input.channels()
            ))
        })?;
        if unit.kernel.in_channels() != input.channels() || unit.kernel.out_channels() != limit {
            return Err(Error::config(format!(
                "bottleneck kernel {}->{} does not map {} -> {limit}",
                unit.kernel.in_channels(),
                unit.kernel.out_channels(),
                input.channels()
            )));
        }
        unit.forward(input)
    } else {
        if weights.is_some() {
            return Err(Error::config(format!(
                "bottleneck weights supplied but input {} <= limit {limit}",
                input.channels()
            )));
        }
        Ok(input.clone())
    }
}

/// Channel count produced by `Compress(rate)` on `m` channels.
pub fn compressed_channels(rate: f64, m: usize) -> Result<usize> {
    let out = (rate * m as f64).floor() as usize;
    if out == 0 {
        return Err(Error::config(format!(
            "compression rate {rate} of {m} channels floors to zero"
        )));
    }
    Ok(out)
}

/// Concrete channel-reduction operation (policy plus weights where needed).
#[derive(Debug, Clone)]
pub enum ReductionOp {
    Compress(ConvUnit),
    LastN(usize),
    None,
}

impl ReductionOp {
    pub fn param_count(&self) -> usize {
        match self {
            ReductionOp::Compress(u) => u.param_count(),
            _ => 0,
        }
    }
}

/// Applies the channel reduction at a D2 block's exit.
pub fn reduce_channels(
    block_output: &Tensor,
    state: &BlockState,
    op: &ReductionOp,
) -> Result<Tensor> {
    match op {
        ReductionOp::Compress(unit) => {
            if unit.kernel.in_channels() != block_output.channels() {
                return Err(Error::config(format!(
                    "compress kernel expects {} channels, block output has {}",
                    unit.kernel.in_channels(),
                    block_output.channels()
                )));
            }
            unit.forward(block_output)
        }
        ReductionOp::LastN(n) => {
            let total = state.layer_outputs.len();
            if *n < 1 || *n > total {
                return Err(Error::config(format!(
                    "last-N with N={n} outside 1..={total}"
                )));
            }
            concat_channels(&state.layer_outputs[total - n..])
        }
        ReductionOp::None => Ok(block_output.clone()),
    }
}

/// Weights of one D2 block inside a D3 block.
#[derive(Debug, Clone)]
pub struct D3BlockWeights {
    pub bottleneck: Option<ConvUnit>,
    pub d2: D2Weights,
    pub reduce: ReductionOp,
}

/// All weights of a D3 block.
#[derive(Debug, Clone)]
pub struct D3Weights {
    pub blocks: Vec<D3BlockWeights>,
}

impl D3Weights {
    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| {
                b.bottleneck.as_ref().map_or(0, |u| u.param_count())
                    + b.d2.param_count()
                    + b.reduce.param_count()
            })
            .sum()
    }
}

/// Forward intermediates of a D3 block, sufficient to rerun backward.
#[derive(Debug, Clone)]
pub struct D3Trace {
    /// Per-block D2 state; its `input` is the post-bottleneck tensor.
    pub block_states: Vec<BlockState>,
    /// Per-block reduced outputs (the tensors carried to later blocks).
    pub reduced: Vec<Tensor>,
    /// Smallest pre-ReLU magnitude seen anywhere in the pass.
    pub min_abs_preact: f64,
}

/// Runs a D3 block and returns the final block's reduced output.
pub fn d3_forward(cfg: &D3Config, input: &Tensor, weights: &D3Weights) -> Result<Tensor> {
    Ok(d3_forward_traced(cfg, input, weights)?.0)
}

/// Runs a D3 block keeping intermediates for backward.
pub fn d3_forward_traced(
    cfg: &D3Config,
    input: &Tensor,
    weights: &D3Weights,
) -> Result<(Tensor, D3Trace)> {
    cfg.validate()?;
    if weights.blocks.len() != cfg.blocks {
        return Err(Error::config(format!(
            "weights carry {} blocks, config wants {}",
            weights.blocks.len(),
            cfg.blocks
        )));
    }
    let mut carried: Vec<Tensor> = vec![input.clone()];
    let mut block_states = Vec::with_capacity(cfg.blocks);
    let mut reduced_all = Vec::with_capacity(cfg.blocks);
    let mut min_preact = f64::INFINITY;
    for bw in &weights.blocks {
        let block_in = concat_channels(&carried)?;
        let x0 = match cfg.bottleneck {
            Some(limit) => {
                if let Some(unit) = &bw.bottleneck {
                    let psi_out = psi_apply(&unit.psi, &block_in)?;
                    min_preact = min_preact.min(psi_out.min_abs_preact);
                    bottleneck_checked(&block_in, limit, unit, &psi_out.output)?
                } else {
                    bottleneck(&block_in, limit, None)?
                }
            }
            None => block_in.clone(),
        };
        let (block_out, state, mp) = d2_forward_tracked(&cfg.inner, &x0, &bw.d2)?;
        min_preact = min_preact.min(mp);
        if let ReductionOp::Compress(unit) = &bw.reduce {
            let psi_out = psi_apply(&unit.psi, &block_out)?;
            min_preact = min_preact.min(psi_out.min_abs_preact);
        }
        let reduced = reduce_channels(&block_out, &state, &bw.reduce)?;
        block_states.push(state);
        reduced_all.push(reduced.clone());
        carried.push(reduced);
    }
    let out = carried.pop().unwrap();
    Ok((
        out,
        D3Trace {
            block_states,
            reduced: reduced_all,
            min_abs_preact: min_preact,
        },
    ))
}

fn bottleneck_checked(
    block_in: &Tensor,
    limit: usize,
    unit: &ConvUnit,
    psi_out: &Tensor,
) -> Result<Tensor> {
    if block_in.channels() <= limit {
        return Err(Error::config(format!(
            "bottleneck weights supplied but input {} <= limit {limit}",
            block_in.channels()
        )));
    }
    if unit.kernel.in_channels() != block_in.channels() || unit.kernel.out_channels() != limit {
        return Err(Error::config(format!(
            "bottleneck kernel {}->{} does not map {} -> {limit}",
            unit.kernel.in_channels(),
            unit.kernel.out_channels(),
            block_in.channels()
        )));
    }
    conv2d(psi_out, &unit.kernel, 1)
}

/// Gradients of one D2 block inside a D3 block.
#[derive(Debug, Clone)]
pub struct D3BlockGrads {
    pub bottleneck: Option<(ConvKernel, PsiGrads)>,
    pub d2: D2Grads,
    pub reduce: Option<(ConvKernel, PsiGrads)>,
}

/// Gradients of a full D3 block.
#[derive(Debug, Clone)]
pub struct D3Grads {
    pub blocks: Vec<D3BlockGrads>,
}

/// Backward through a D3 block. `input` and `trace` must come from the
/// matching `d3_forward_traced` call.
pub fn d3_backward(
    cfg: &D3Config,
    weights: &D3Weights,
    input: &Tensor,
    trace: &D3Trace,
    grad_output: &Tensor,
) -> Result<(Tensor, D3Grads)> {
    cfg.validate()?;
    let m = cfg.blocks;
    // carried[0] = input, carried[i+1] = reduced output of block i
    let mut carried: Vec<&Tensor> = vec![input];
    carried.extend(trace.reduced.iter());
    let mut grad_carried: Vec<Tensor> = carried
        .iter()
        .map(|t| {
            let (n, c, h, w) = t.shape();
            Tensor::zeros(n, c, h, w)
        })
        .collect();
    grad_carried[m] = grad_output.clone();

    let mut block_grads: Vec<Option<D3BlockGrads>> = (0..m).map(|_| None).collect();
    for bi in (0..m).rev() {
        let bw = &weights.blocks[bi];
        let state = &trace.block_states[bi];
        let grad_reduced = std::mem::replace(&mut grad_carried[bi + 1], Tensor::zeros(1, 1, 1, 1));

        // reduction backward -> gradient on the block's concatenated output
        let block_out_owned: Vec<Tensor> = {
            let mut v = vec![state.input.clone()];
            v.extend(state.layer_outputs.iter().cloned());
            v
        };
        let block_out = concat_channels(&block_out_owned)?;
        let (grad_block_out, reduce_grads) = match &bw.reduce {
            ReductionOp::Compress(unit) => {
                let (g_in, g_w, g_psi) = unit.backward(&block_out, &grad_reduced)?;
                (g_in, Some((g_w, g_psi)))
            }
            ReductionOp::LastN(n) => {
                let (bn, _, bh, bwid) = block_out.shape();
                let mut g = Tensor::zeros(bn, block_out.channels(), bh, bwid);
                let total = state.layer_outputs.len();
                let widths: Vec<usize> = (0..*n)
                    .map(|i| state.layer_outputs[total - n + i].channels())
                    .collect();
                let pieces = split_channels(&grad_reduced, &widths)?;
                let mut c_off = state.input.channels()
                    + state.layer_outputs[..total - n]
                        .iter()
                        .map(|t| t.channels())
                        .sum::<usize>();
                for piece in pieces {
                    for b in 0..bn {
                        for ch in 0..piece.channels() {
                            for y in 0..bh {
                                for x in 0..bwid {
                                    g.set(b, c_off + ch, y, x, piece.at(b, ch, y, x));
                                }
                            }
                        }
                    }
                    c_off += piece.channels();
                }
                (g, None)
            }
            ReductionOp::None => (grad_reduced, None),
        };

        // D2 backward -> gradient on the (post-bottleneck) block input
        let (grad_x0, d2_grads) = d2_backward(&cfg.inner, &bw.d2, state, &grad_block_out)?;

        // bottleneck backward -> gradient on the raw concatenated block input
        let carried_prefix: Vec<Tensor> = carried[..=bi].iter().map(|t| (*t).clone()).collect();
        let block_in = concat_channels(&carried_prefix)?;
        let (grad_block_in, bneck_grads) = match (&bw.bottleneck, cfg.bottleneck) {
            (Some(unit), Some(_)) => {
                let (g_in, g_w, g_psi) = unit.backward(&block_in, &grad_x0)?;
                (g_in, Some((g_w, g_psi)))
            }
            _ => (grad_x0, None),
        };

        // scatter onto the carried tensors feeding this block
        let widths: Vec<usize> = carried[..=bi].iter().map(|t| t.channels()).collect();
        let pieces = split_channels(&grad_block_in, &widths)?;
        for (i, piece) in pieces.into_iter().enumerate() {
            grad_carried[i] = grad_carried[i].add_scaled(&piece, 1.0)?;
        }

        block_grads[bi] = Some(D3BlockGrads {
            bottleneck: bneck_grads,
            d2: d2_grads,
            reduce: reduce_grads,
        });
    }
    let grads = D3Grads {
        blocks: block_grads.into_iter().map(|g| g.unwrap()).collect(),
    };
    Ok((grad_carried.swap_remove(0), grads))
}

/// Transition between scales: psi + 1x1 conv to floor(channels/2), then 2x2
/// average pooling.
pub fn transition(input: &Tensor, weights: &ConvUnit) -> Result<Tensor> {
    let out_c = input.channels() / 2;
    if out_c == 0 {
        return Err(Error::config(
            "transition on a single-channel input floors to zero channels".to_string(),
        ));
    }
    if weights.kernel.in_channels() != input.channels() || weights.kernel.out_channels() != out_c {
        return Err(Error::config(format!(
            "transition kernel {}->{} does not map {} -> {out_c}",
            weights.kernel.in_channels(),
            weights.kernel.out_channels(),
            input.channels()
        )));
    }
    let mixed = weights.forward(input)?;
    avg_pool_2x2(&mixed)
}

// ---------------------------------------------------------------------------
// Seeded weight construction
// ---------------------------------------------------------------------------

use rand::Rng;
use rand_distr::StandardNormal;

fn he_kernel<R: Rng>(
    rng: &mut R,
    out_ch: usize,
    in_ch: usize,
    kh: usize,
    kw: usize,
    fan_in: usize,
) -> Result<ConvKernel> {
    let std = (2.0 / fan_in as f64).sqrt();
    let weights = (0..out_ch * in_ch * kh * kw)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
        .collect();
    ConvKernel::new(out_ch, in_ch, kh, kw, weights)
}

fn make_psi(kind: PsiKind, channels: usize) -> Psi {
    match kind {
        PsiKind::BatchNorm => Psi::BatchNorm(NormParams::identity(channels)),
        PsiKind::Affine => Psi::Affine {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
        },
        PsiKind::Identity => Psi::Identity,
    }
}

fn ones_kernel(out_ch: usize, in_ch: usize, kh: usize, kw: usize) -> Result<ConvKernel> {
    ConvKernel::new(out_ch, in_ch, kh, kw, vec![1.0; out_ch * in_ch * kh * kw])
}

/// Builds seeded D2 weights: fan-in-scaled normal kernels (variance 2/fan_in
/// over the layer's full input), psi of the requested kind with gamma=1,
/// beta=0.
pub fn build_d2_weights<R: Rng>(
    cfg: &D2Config,
    input_channels: usize,
    psi_kind: PsiKind,
    rng: &mut R,
) -> Result<D2Weights> {
    cfg.validate()?;
    let (kh, kw) = cfg.kernel;
    let mut layers = Vec::with_capacity(cfg.layers);
    for layer in 1..=cfg.layers {
        let cat_channels = input_channels + (layer - 1) * cfg.growth;
        let fan_in = cat_channels * kh * kw;
        let groups = layer_groups(cfg, input_channels, layer)?;
        let mut kernel_groups = Vec::with_capacity(groups.len());
        for g in groups {
            let kernel = he_kernel(rng, cfg.growth, g.width(), kh, kw, fan_in)?;
            kernel_groups.push(KernelGroup {
                channels: g,
                kernel,
            });
        }
        layers.push(LayerWeights {
            psi: make_psi(psi_kind, cat_channels),
            kernel: MultiDilatedKernel::new(kernel_groups)?,
        });
    }
    Ok(D2Weights { layers })
}

/// All-ones D2 weights with identity psi: the receptive-field oracle
/// configuration (strictly positive taps, no normalization, no nonlinearity).
pub fn build_d2_weights_ones(cfg: &D2Config, input_channels: usize) -> Result<D2Weights> {
    cfg.validate()?;
    let (kh, kw) = cfg.kernel;
    let mut layers = Vec::with_capacity(cfg.layers);
    for layer in 1..=cfg.layers {
        let groups = layer_groups(cfg, input_channels, layer)?;
        let mut kernel_groups = Vec::with_capacity(groups.len());
        for g in groups {
            kernel_groups.push(KernelGroup {
                channels: g,
                kernel: ones_kernel(cfg.growth, g.width(), kh, kw)?,
            });
        }
        layers.push(LayerWeights {
            psi: Psi::Identity,
            kernel: MultiDilatedKernel::new(kernel_groups)?,
        });
    }
    Ok(D2Weights { layers })
}

/// Per-block channel bookkeeping of a D3 block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct D3BlockChannels {
    /// Channels entering the block (input + earlier reduced outputs).
    pub block_in: usize,
    /// Channels after the optional bottleneck.
    pub post_bottleneck: usize,
    /// Channels of the concatenated D2 output.
    pub d2_out: usize,
    /// Channels of the reduced output carried forward.
    pub reduced: usize,
}

/// Channel trace of a D3 block for a given input width.
pub fn d3_channel_trace(cfg: &D3Config, input_channels: usize) -> Result<Vec<D3BlockChannels>> {
    cfg.validate()?;
    let mut trace = Vec::with_capacity(cfg.blocks);
    let mut carried = vec![input_channels];
    for _ in 0..cfg.blocks {
        let block_in: usize = carried.iter().sum();
        let post = match cfg.bottleneck {
            Some(limit) if block_in > limit => limit,
            _ => block_in,
        };
        let d2_out = cfg.inner.output_channels(post);
        let reduced = match cfg.reduction {
            Reduction::Compress(c) => compressed_channels(c, d2_out)?,
            Reduction::LastN(n) => n * cfg.inner.growth,
            Reduction::None => d2_out,
        };
        trace.push(D3BlockChannels {
            block_in,
            post_bottleneck: post,
            d2_out,
            reduced,
        });
        carried.push(reduced);
    }
    Ok(trace)
}

/// Builds seeded D3 weights (see `build_d2_weights` for the kernel scheme).
pub fn build_d3_weights<R: Rng>(
    cfg: &D3Config,
    input_channels: usize,
    psi_kind: PsiKind,
    rng: &mut R,
) -> Result<D3Weights> {
    let trace = d3_channel_trace(cfg, input_channels)?;
    let mut blocks = Vec::with_capacity(cfg.blocks);
    for ch in &trace {
        let bneck = if ch.post_bottleneck < ch.block_in {
            Some(ConvUnit {
                psi: make_psi(psi_kind, ch.block_in),
                kernel: he_kernel(rng, ch.post_bottleneck, ch.block_in, 1, 1, ch.block_in)?,
            })
        } else {
            None
        };
        let d2 = build_d2_weights(&cfg.inner, ch.post_bottleneck, psi_kind, rng)?;
        let reduce = match cfg.reduction {
            Reduction::Compress(_) => ReductionOp::Compress(ConvUnit {
                psi: make_psi(psi_kind, ch.d2_out),
                kernel: he_kernel(rng, ch.reduced, ch.d2_out, 1, 1, ch.d2_out)?,
            }),
            Reduction::LastN(n) => ReductionOp::LastN(n),
            Reduction::None => ReductionOp::None,
        };
        blocks.push(D3BlockWeights {
            bottleneck: bneck,
            d2,
            reduce,
        });
    }
    Ok(D3Weights { blocks })
}

/// All-ones D3 weights with identity psi (receptive-field oracle).
pub fn build_d3_weights_ones(cfg: &D3Config, input_channels: usize) -> Result<D3Weights> {
    let trace = d3_channel_trace(cfg, input_channels)?;
    let mut blocks = Vec::with_capacity(cfg.blocks);
    for ch in &trace {
        let bneck = if ch.post_bottleneck < ch.block_in {
            Some(ConvUnit {
                psi: Psi::Identity,
                kernel: ones_kernel(ch.post_bottleneck, ch.block_in, 1, 1)?,
            })
        } else {
            None
        };
        let d2 = build_d2_weights_ones(&cfg.inner, ch.post_bottleneck)?;
        let reduce = match cfg.reduction {
            Reduction::Compress(_) => ReductionOp::Compress(ConvUnit {
                psi: Psi::Identity,
                kernel: ones_kernel(ch.reduced, ch.d2_out, 1, 1)?,
            }),
            Reduction::LastN(n) => ReductionOp::LastN(n),
            Reduction::None => ReductionOp::None,
        };
        blocks.push(D3BlockWeights {
            bottleneck: bneck,
            d2,
            reduce,
        });
    }
    Ok(D3Weights { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;

    fn randn(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
        let dist = StandardNormal;
        let data = (0..n * c * h * w).map(|_| dist.sample(rng)).collect();
        Tensor::new(n, c, h, w, data).unwrap()
    }

    fn max_rel_diff(a: &Tensor, b: &Tensor) -> f64 {
        let scale = a
            .data()
            .iter()
            .chain(b.data())
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-300);
        a.data()
            .iter()
            .zip(b.data())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
            / scale
    }

    #[test]
    fn d2_channel_bookkeeping() {
        let cfg = D2Config::new(3, 2, (3, 3), DilationMode::Multi);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let weights = build_d2_weights(&cfg, 3, PsiKind::BatchNorm, &mut rng).unwrap();
        let input = randn(&mut rng, 1, 3, 6, 6);
        let (out, state) = d2_forward(&cfg, &input, &weights).unwrap();
        assert_eq!(out.channels(), 3 + 3 * 2);
        assert_eq!(state.layer_outputs.len(), 3);
        assert!(state.layer_outputs.iter().all(|t| t.channels() == 2));
    }

    #[test]
    fn d2_layer3_multi_dilations() {
        let cfg = D2Config::new(3, 2, (3, 3), DilationMode::Multi);
        let groups = layer_groups(&cfg, 3, 3).unwrap();
        let dilations: Vec<usize> = groups.iter().map(|g| g.dilation).collect();
        assert_eq!(dilations, vec![1, 2, 4]);
    }

    #[test]
    fn d2_standard_mode_uses_layer_max() {
        let cfg = D2Config::new(3, 2, (3, 3), DilationMode::StandardDilated);
        for layer in 1..=3 {
            let groups = layer_groups(&cfg, 3, layer).unwrap();
            assert!(groups.iter().all(|g| g.dilation == 1 << (layer - 1)));
        }
    }

    #[test]
    fn depth_one_modes_agree_bit_exactly() {
        let cfg_multi = D2Config::new(1, 4, (3, 3), DilationMode::Multi);
        let cfg_std = D2Config::new(1, 4, (3, 3), DilationMode::StandardDilated);
        let cfg_none = D2Config::new(1, 4, (3, 3), DilationMode::None);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = randn(&mut rng, 1, 3, 6, 6);
        let mut outs = Vec::new();
        for cfg in [cfg_multi, cfg_std, cfg_none] {
            let mut wrng = ChaCha8Rng::seed_from_u64(42);
            let weights = build_d2_weights(&cfg, 3, PsiKind::BatchNorm, &mut wrng).unwrap();
            let (out, _) = d2_forward(&cfg, &input, &weights).unwrap();
            outs.push(out);
        }
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[0], outs[2]);
    }

    #[test]
    fn eq2_grouping_isolates_single_dilated_conv() {
        // zeroing all groups except i turns the layer into a plain dilated conv of y_i
        let cfg = D2Config::new(3, 2, (3, 3), DilationMode::Multi);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let weights = build_d2_weights(&cfg, 3, PsiKind::BatchNorm, &mut rng).unwrap();
        let input = randn(&mut rng, 1, 3, 8, 8);
        let (_, state) = d2_forward(&cfg, &input, &weights).unwrap();

        let layer = 3;
        for keep in 0..layer {
            let mut stripped = weights.clone();
            for (gi, g) in stripped.layers[layer - 1]
                .kernel
                .groups_mut()
                .iter_mut()
                .enumerate()
            {
                if gi != keep {
                    for w in g.kernel.weights_mut() {
                        *w = 0.0;
                    }
                }
            }
            let (_, s2) = d2_forward(&cfg, &input, &stripped).unwrap();
            // reference: psi of the full concat, slice group `keep`, dilated conv
            let mut feats = vec![state.input.clone()];
            feats.extend(state.layer_outputs[..layer - 1].iter().cloned());
            let cat = concat_channels(&feats).unwrap();
            let y = psi_forward(&weights.layers[layer - 1].psi, &cat).unwrap();
            let g = &weights.layers[layer - 1].kernel.groups()[keep];
            let slice = y
                .slice_channels(g.channels.channel_start, g.channels.channel_end)
                .unwrap();
            let reference = conv2d(&slice, &g.kernel, g.channels.dilation).unwrap();
            assert!(max_rel_diff(&s2.layer_outputs[layer - 1], &reference) < 1e-12);
        }
    }

    #[test]
    fn bottleneck_applies_only_above_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let wide = randn(&mut rng, 1, 200, 4, 4);
        let unit = ConvUnit {
            psi: Psi::BatchNorm(NormParams::identity(200)),
            kernel: he_kernel(&mut rng, 144, 200, 1, 1, 200).unwrap(),
        };
        let out = bottleneck(&wide, 144, Some(&unit)).unwrap();
        assert_eq!(out.channels(), 144);

        let narrow = randn(&mut rng, 1, 100, 4, 4);
        let out = bottleneck(&narrow, 144, None).unwrap();
        assert_eq!(out, narrow);
    }

    #[test]
    fn bottleneck_minimal_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let input = randn(&mut rng, 1, 2, 4, 4);
        let unit = ConvUnit {
            psi: Psi::BatchNorm(NormParams::identity(2)),
            kernel: he_kernel(&mut rng, 1, 2, 1, 1, 2).unwrap(),
        };
        let out = bottleneck(&input, 1, Some(&unit)).unwrap();
        assert_eq!(out.channels(), 1);
    }

    #[test]
    fn compress_channel_arithmetic() {
        assert_eq!(compressed_channels(0.2, 100).unwrap(), 20);
        assert_eq!(compressed_channels(0.2, 352).unwrap(), 70);
        assert!(compressed_channels(0.2, 4).is_err());
    }

    #[test]
    fn reduce_last_n_selects_final_layers() {
        let cfg = D2Config::new(3, 5, (3, 3), DilationMode::Multi);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let weights = build_d2_weights(&cfg, 2, PsiKind::BatchNorm, &mut rng).unwrap();
        let input = randn(&mut rng, 1, 2, 6, 6);
        let (out, state) = d2_forward(&cfg, &input, &weights).unwrap();
        let reduced = reduce_channels(&out, &state, &ReductionOp::LastN(2)).unwrap();
        assert_eq!(reduced.channels(), 10);
        let expect = concat_channels(&state.layer_outputs[1..]).unwrap();
        assert_eq!(reduced, expect);
    }

    #[test]
    fn reduce_none_is_identity() {
        let cfg = D2Config::new(2, 2, (3, 3), DilationMode::Multi);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let weights = build_d2_weights(&cfg, 2, PsiKind::BatchNorm, &mut rng).unwrap();
        let input = randn(&mut rng, 1, 2, 4, 4);
        let (out, state) = d2_forward(&cfg, &input, &weights).unwrap();
        let reduced = reduce_channels(&out, &state, &ReductionOp::None).unwrap();
        assert_eq!(reduced, out);
    }

    #[test]
    fn d3_degenerates_to_d2() {
        let inner = D2Config::new(2, 3, (3, 3), DilationMode::Multi);
        let cfg = D3Config {
            blocks: 1,
            inner,
            bottleneck: None,
            reduction: Reduction::None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let input = randn(&mut rng, 1, 4, 6, 6);
        let mut wrng = ChaCha8Rng::seed_from_u64(99);
        let w3 = build_d3_weights(&cfg, 4, PsiKind::BatchNorm, &mut wrng).unwrap();
        let mut wrng = ChaCha8Rng::seed_from_u64(99);
        let w2 = build_d2_weights(&inner, 4, PsiKind::BatchNorm, &mut wrng).unwrap();
        let out3 = d3_forward(&cfg, &input, &w3).unwrap();
        let (out2, _) = d2_forward(&inner, &input, &w2).unwrap();
        assert_eq!(out3, out2);
    }

    #[test]
    fn d3_last_n_channel_bookkeeping() {
        // M=2, L=2, k=4, c0=8, LastN(2): block1 8 -> 8, block2 16 -> 8
        let cfg = D3Config {
            blocks: 2,
            inner: D2Config::new(2, 4, (3, 3), DilationMode::Multi),
            bottleneck: None,
            reduction: Reduction::LastN(2),
        };
        let trace = d3_channel_trace(&cfg, 8).unwrap();
        assert_eq!(trace[0].block_in, 8);
        assert_eq!(trace[0].reduced, 8);
        assert_eq!(trace[1].block_in, 16);
        assert_eq!(trace[1].reduced, 8);

        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let weights = build_d3_weights(&cfg, 8, PsiKind::BatchNorm, &mut rng).unwrap();
        let input = randn(&mut rng, 1, 8, 6, 6);
        let out = d3_forward(&cfg, &input, &weights).unwrap();
        assert_eq!(out.channels(), 8);
    }

    #[test]
    fn d3_bottleneck_fires_on_wide_blocks() {
        let cfg = D3Config {
            blocks: 2,
            inner: D2Config::new(2, 2, (3, 3), DilationMode::Multi),
            bottleneck: Some(8),
            reduction: Reduction::Compress(0.5),
        };
        let trace = d3_channel_trace(&cfg, 10).unwrap();
        // block 1: 10 > 8 -> bottleneck to 8; d2 out 12; compress to 6
        assert_eq!(trace[0].post_bottleneck, 8);
        assert_eq!(trace[0].d2_out, 12);
        assert_eq!(trace[0].reduced, 6);
        // block 2: 16 > 8 -> bottleneck again
        assert_eq!(trace[1].block_in, 16);
        assert_eq!(trace[1].post_bottleneck, 8);

        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let weights = build_d3_weights(&cfg, 10, PsiKind::BatchNorm, &mut rng).unwrap();
        let input = randn(&mut rng, 1, 10, 6, 6);
        let out = d3_forward(&cfg, &input, &weights).unwrap();
        assert_eq!(out.channels(), 6);
    }

    #[test]
    fn transition_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let input = randn(&mut rng, 1, 64, 32, 32);
        let unit = ConvUnit {
            psi: Psi::BatchNorm(NormParams::identity(64)),
            kernel: he_kernel(&mut rng, 32, 64, 1, 1, 64).unwrap(),
        };
        let out = transition(&input, &unit).unwrap();
        assert_eq!(out.shape(), (1, 32, 16, 16));

        let input3 = randn(&mut rng, 1, 3, 8, 8);
        let unit3 = ConvUnit {
            psi: Psi::BatchNorm(NormParams::identity(3)),
            kernel: he_kernel(&mut rng, 1, 3, 1, 1, 3).unwrap(),
        };
        let out3 = transition(&input3, &unit3).unwrap();
        assert_eq!(out3.shape(), (1, 1, 4, 4));
    }

    #[test]
    fn transition_rejects_odd_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let input = randn(&mut rng, 1, 4, 7, 8);
        let unit = ConvUnit {
            psi: Psi::BatchNorm(NormParams::identity(4)),
            kernel: he_kernel(&mut rng, 2, 4, 1, 1, 4).unwrap(),
        };
        assert!(matches!(transition(&input, &unit), Err(Error::Dimension(_))));
    }

    #[test]
    fn d2_rejects_mismatched_weights() {
        let cfg = D2Config::new(2, 2, (3, 3), DilationMode::Multi);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let weights = build_d2_weights(&cfg, 3, PsiKind::BatchNorm, &mut rng).unwrap();
        let input = randn(&mut rng, 1, 4, 4, 4); // wrong input width
        assert!(matches!(
            d2_forward(&cfg, &input, &weights),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dilation_sequence_resets_per_block() {
        // group-0 chain dilations across M=2 blocks of L=3: (1,2,4,1,2,4)
        let cfg = D2Config::new(3, 2, (3, 3), DilationMode::Multi);
        let mut seq = Vec::new();
        for _block in 0..2 {
            for layer in 1..=3 {
                seq.push(group_dilation(cfg.mode, layer, layer - 1));
            }
        }
        assert_eq!(seq, vec![1, 2, 4, 1, 2, 4]);
    }
}
