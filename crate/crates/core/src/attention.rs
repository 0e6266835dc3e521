//! Windowed multi-head self-attention with relative position bias, the MLP,
//! and the full pre-norm Transformer block in both window layouts.
//!
//! Forward runs at either precision; the analytic backward is f64-only and
//! exists to be checked against central finite differences.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{
    batch_norm_infer, gelu, layer_norm, relu, trunc_normal_init, Rng, Scalar, Tensor,
    DEFAULT_INIT_STD,
};
use crate::trace::{timed, NullRecorder, OpClass, OpRecorder};
use crate::windowing::{
    build_shift_mask, cyclic_shift, relative_position_index, window_partition, window_reverse,
    FeatureGrid, RelPosIndex, ShiftMask, WindowSet,
};

/// MLP activation choice; ReLU is the BR-variant substitution for GELU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Relu => relu(x),
        }
    }
}

/// Which normalization family a model is built with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Layer,
    Batch,
}

/// Per-norm parameters. BatchNorm carries fixed running statistics and runs
/// in inference mode only.
#[derive(Debug, Clone, PartialEq)]
pub enum NormParams<T> {
    Layer {
        gamma: Tensor<T>,
        beta: Tensor<T>,
        eps: f64,
    },
    Batch {
        mean: Tensor<T>,
        var: Tensor<T>,
        gamma: Tensor<T>,
        beta: Tensor<T>,
        eps: f64,
    },
}

impl<T: Scalar> NormParams<T> {
    /// Unit-gain LayerNorm over `c` channels.
    pub fn layer(c: usize) -> Self {
        NormParams::Layer {
            gamma: Tensor::full(&[c], T::ONE),
            beta: Tensor::zeros(&[c]),
            eps: 1e-5,
        }
    }

    /// BatchNorm with identity running statistics and unit gain.
    pub fn batch(c: usize) -> Self {
        NormParams::Batch {
            mean: Tensor::zeros(&[c]),
            var: Tensor::full(&[c], T::ONE),
            gamma: Tensor::full(&[c], T::ONE),
            beta: Tensor::zeros(&[c]),
            eps: 1e-5,
        }
    }

    pub fn of_kind(kind: NormKind, c: usize) -> Self {
        match kind {
            NormKind::Layer => Self::layer(c),
            NormKind::Batch => Self::batch(c),
        }
    }

    pub fn kind(&self) -> NormKind {
        match self {
            NormParams::Layer { .. } => NormKind::Layer,
            NormParams::Batch { .. } => NormKind::Batch,
        }
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            NormParams::Layer { gamma, beta, eps } => layer_norm(x, gamma, beta, *eps),
            NormParams::Batch {
                mean,
                var,
                gamma,
                beta,
                eps,
            } => batch_norm_infer(x, mean, var, gamma, beta, *eps),
        }
    }
}

/// QKV/projection weights plus the relative-position-bias table for one
/// attention layer. Weight layout is `out = x W + b` with `qkv_weight`
/// columns ordered Q | K | V, head-major within each third.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub qkv_weight: Tensor<T>, // [C, 3C]
    pub qkv_bias: Tensor<T>,   // [3C]
    pub proj_weight: Tensor<T>, // [C, C]
    pub proj_bias: Tensor<T>,  // [C]
    pub bias_table: Tensor<T>, // [(2M-1)^2, num_heads]
    pub rel_index: RelPosIndex,
    pub num_heads: usize,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn init(c: usize, num_heads: usize, window: usize, rng: &mut Rng) -> Result<Self> {
        if c % num_heads != 0 {
            return Err(Error::config(format!(
                "channels {c} not divisible by heads {num_heads}"
            )));
        }
        let rel_index = relative_position_index(window);
        Ok(AttentionParams {
            qkv_weight: trunc_normal_init(&[c, 3 * c], DEFAULT_INIT_STD, rng),
            qkv_bias: Tensor::zeros(&[3 * c]),
            proj_weight: trunc_normal_init(&[c, c], DEFAULT_INIT_STD, rng),
            proj_bias: Tensor::zeros(&[c]),
            bias_table: trunc_normal_init(&[rel_index.table_len(), num_heads], DEFAULT_INIT_STD, rng),
            rel_index,
            num_heads,
        })
    }

    pub fn channels(&self) -> usize {
        self.qkv_weight.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.num_heads
    }

    pub fn window_size(&self) -> usize {
        self.rel_index.window_size()
    }

    fn check_geometry(&self, ws_tokens: usize, ws_channels: usize) -> Result<()> {
        if self.rel_index.tokens() != ws_tokens || self.channels() != ws_channels {
            return Err(Error::dim(
                "window_attention",
                &[ws_tokens, ws_channels],
                &[self.rel_index.tokens(), self.channels()],
            ));
        }
        if self.bias_table.shape() != [self.rel_index.table_len(), self.num_heads] {
            return Err(Error::dim(
                "bias_table",
                self.bias_table.shape(),
                &[self.rel_index.table_len(), self.num_heads],
            ));
        }
        Ok(())
    }
}

/// Attention logits for every window and head: `QK^T * scale + bias (+ mask)`
/// before softmax, laid out `[BN, heads, T, T]` flattened.
fn attention_scores<T: Scalar>(
    qkv: &Tensor<T>,
    p: &AttentionParams<T>,
    mask: Option<&ShiftMask>,
    rec: &mut dyn OpRecorder,
) -> Vec<T> {
    let bn = qkv.shape()[0];
    let t = qkv.shape()[1];
    let c = p.channels();
    let heads = p.num_heads;
    let d = p.head_dim();
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    let row = 3 * c;
    let data = qkv.data();

    let mut scores = vec![T::ZERO; bn * heads * t * t];
    timed(rec, OpClass::AttnMatmul, || {
        scores
            .par_chunks_mut(heads * t * t)
            .enumerate()
            .for_each(|(win, chunk)| {
                let base = win * t * row;
                for h in 0..heads {
                    let qo = h * d;
                    let ko = c + h * d;
                    for i in 0..t {
                        let qrow = &data[base + i * row + qo..base + i * row + qo + d];
                        for j in 0..t {
                            let krow = &data[base + j * row + ko..base + j * row + ko + d];
                            let mut acc = T::ZERO;
                            for (&qv, &kv) in qrow.iter().zip(krow) {
                                acc += qv * kv;
                            }
                            chunk[(h * t + i) * t + j] = acc * scale;
                        }
                    }
                }
            });
    });

    timed(rec, OpClass::Softmax, || {
        let n_mask = mask.map(|m| m.num_windows()).unwrap_or(1);
        scores
            .par_chunks_mut(heads * t * t)
            .enumerate()
            .for_each(|(win, chunk)| {
                for h in 0..heads {
                    for i in 0..t {
                        for j in 0..t {
                            let mut v = chunk[(h * t + i) * t + j];
                            v += p.bias_table.data()[p.rel_index.get(i, j) * heads + h];
                            if let Some(m) = mask {
                                v += T::from_f64(m.entry(win % n_mask, i, j));
                            }
                            chunk[(h * t + i) * t + j] = v;
                        }
                        // Row softmax with max subtraction.
                        let row = &mut chunk[(h * t + i) * t..(h * t + i) * t + t];
                        let mut max = row[0];
                        for &v in row.iter() {
                            max = max.maximum(v);
                        }
                        let mut sum = T::ZERO;
                        for v in row.iter_mut() {
                            *v = (*v - max).exp();
                            sum += *v;
                        }
                        for v in row.iter_mut() {
                            *v = *v / sum;
                        }
                    }
                }
            });
    });
    scores
}

fn window_attention_core<T: Scalar>(
    w: &WindowSet<T>,
    p: &AttentionParams<T>,
    mask: Option<&ShiftMask>,
    rec: &mut dyn OpRecorder,
) -> Result<WindowSet<T>> {
    let t = w.tokens_per_window();
    let c = w.channels();
    p.check_geometry(t, c)?;
    if let Some(m) = mask {
        if m.window_size() != w.window_size() || w.windows().shape()[0] % m.num_windows() != 0 {
            return Err(Error::dim(
                "shift_mask",
                &[m.num_windows(), m.window_size()],
                &[w.windows().shape()[0], w.window_size()],
            ));
        }
    }
    let bn = w.windows().shape()[0];
    let heads = p.num_heads;
    let d = p.head_dim();
    let row = 3 * c;
    rec.record_attention_windows(w.num_windows());

    let qkv = timed(rec, OpClass::QkvProj, || {
        w.windows().matmul(&p.qkv_weight)?.add_bias(&p.qkv_bias)
    })?;
    let attn = attention_scores(&qkv, p, mask, rec);

    // Context: per head, A . V, heads concatenated back to [BN, T, C].
    let mut ctx = vec![T::ZERO; bn * t * c];
    timed(rec, OpClass::AttnMatmul, || {
        ctx.par_chunks_mut(t * c).enumerate().for_each(|(win, out)| {
            let qkv_base = win * t * row;
            let attn_base = win * heads * t * t;
            for h in 0..heads {
                let vo = 2 * c + h * d;
                for i in 0..t {
                    for j in 0..t {
                        let a = attn[attn_base + (h * t + i) * t + j];
                        let vrow = &qkv.data()[qkv_base + j * row + vo..qkv_base + j * row + vo + d];
                        let orow = &mut out[i * c + h * d..i * c + h * d + d];
                        for (o, &vv) in orow.iter_mut().zip(vrow) {
                            *o += a * vv;
                        }
                    }
                }
            }
        });
    });

    let ctx = Tensor::new(&[bn, t, c], ctx)?;
    let projected = timed(rec, OpClass::OutProj, || {
        ctx.matmul(&p.proj_weight)?.add_bias(&p.proj_bias)
    })?;
    w.with_windows(projected)
}

/// Masked windowed attention: per window `softmax(QK^T/sqrt(d) + bias + mask) V`,
/// projected back to the input width.
pub fn window_attention_forward<T: Scalar>(
    w: &WindowSet<T>,
    p: &AttentionParams<T>,
    mask: Option<&ShiftMask>,
) -> Result<WindowSet<T>> {
    window_attention_core(w, p, mask, &mut NullRecorder)
}

pub fn window_attention_forward_recorded<T: Scalar>(
    w: &WindowSet<T>,
    p: &AttentionParams<T>,
    mask: Option<&ShiftMask>,
    rec: &mut dyn OpRecorder,
) -> Result<WindowSet<T>> {
    window_attention_core(w, p, mask, rec)
}

/// Post-softmax attention probabilities, `[B*N, heads, T, T]` flattened.
/// Verification helper: lets the property suite check row normalization
/// without duplicating the score pipeline.
pub fn attention_scores_for_verification<T: Scalar>(
    w: &WindowSet<T>,
    p: &AttentionParams<T>,
    mask: Option<&ShiftMask>,
) -> Result<Vec<T>> {
    p.check_geometry(w.tokens_per_window(), w.channels())?;
    let qkv = w.windows().matmul(&p.qkv_weight)?.add_bias(&p.qkv_bias)?;
    Ok(attention_scores(&qkv, p, mask, &mut NullRecorder))
}

/// Gradients of `<upstream, window_attention_forward(w)>` with respect to the
/// window inputs and every parameter tensor.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub input: Tensor<f64>,
    pub qkv_weight: Tensor<f64>,
    pub qkv_bias: Tensor<f64>,
    pub proj_weight: Tensor<f64>,
    pub proj_bias: Tensor<f64>,
    pub bias_table: Tensor<f64>,
}

/// Analytic backward of the windowed attention, f64 verification path.
pub fn window_attention_backward(
    w: &WindowSet<f64>,
    p: &AttentionParams<f64>,
    mask: Option<&ShiftMask>,
    upstream: &Tensor<f64>,
) -> Result<AttentionGrads> {
    let t = w.tokens_per_window();
    let c = w.channels();
    p.check_geometry(t, c)?;
    if upstream.shape() != w.windows().shape() {
        return Err(Error::dim(
            "attention_backward",
            upstream.shape(),
            w.windows().shape(),
        ));
    }
    let bn = w.windows().shape()[0];
    let heads = p.num_heads;
    let d = p.head_dim();
    let row = 3 * c;
    let scale = 1.0 / (d as f64).sqrt();

    // Recompute forward intermediates.
    let qkv = w.windows().matmul(&p.qkv_weight)?.add_bias(&p.qkv_bias)?;
    let attn = attention_scores(&qkv, p, mask, &mut NullRecorder);
    let mut ctx = vec![0.0f64; bn * t * c];
    for win in 0..bn {
        for h in 0..heads {
            let vo = 2 * c + h * d;
            for i in 0..t {
                for j in 0..t {
                    let a = attn[win * heads * t * t + (h * t + i) * t + j];
                    for pdim in 0..d {
                        ctx[win * t * c + i * c + h * d + pdim] +=
                            a * qkv.data()[win * t * row + j * row + vo + pdim];
                    }
                }
            }
        }
    }
    let ctx = Tensor::new(&[bn, t, c], ctx)?;

    // Projection backward.
    let mut proj_weight_grad = Tensor::zeros(&[c, c]);
    let mut proj_bias_grad = Tensor::zeros(&[c]);
    let mut dctx = vec![0.0f64; bn * t * c];
    for win in 0..bn {
        for i in 0..t {
            let g = &upstream.data()[win * t * c + i * c..win * t * c + (i + 1) * c];
            let x = &ctx.data()[win * t * c + i * c..win * t * c + (i + 1) * c];
            for a in 0..c {
                for b in 0..c {
                    proj_weight_grad.data_mut()[a * c + b] += x[a] * g[b];
                }
            }
            for b in 0..c {
                proj_bias_grad.data_mut()[b] += g[b];
            }
            let drow = &mut dctx[win * t * c + i * c..win * t * c + (i + 1) * c];
            for a in 0..c {
                let mut acc = 0.0;
                for b in 0..c {
                    acc += g[b] * p.proj_weight.data()[a * c + b];
                }
                drow[a] = acc;
            }
        }
    }

    // Attention backward per window and head.
    let mut dqkv = vec![0.0f64; bn * t * row];
    let mut bias_table_grad = Tensor::zeros(p.bias_table.shape());
    for win in 0..bn {
        let qkv_base = win * t * row;
        for h in 0..heads {
            let qo = h * d;
            let ko = c + h * d;
            let vo = 2 * c + h * d;
            let a_base = win * heads * t * t + h * t * t;
            // dA = dctx_h V^T ; dV = A^T dctx_h.
            let mut da = vec![0.0f64; t * t];
            for i in 0..t {
                let dout = &dctx[win * t * c + i * c + h * d..win * t * c + i * c + h * d + d];
                for j in 0..t {
                    let vrow = &qkv.data()[qkv_base + j * row + vo..qkv_base + j * row + vo + d];
                    let mut acc = 0.0;
                    for (dv, &vv) in dout.iter().zip(vrow) {
                        acc += dv * vv;
                    }
                    da[i * t + j] = acc;
                    let a = attn[a_base + i * t + j];
                    for pdim in 0..d {
                        dqkv[qkv_base + j * row + vo + pdim] += a * dout[pdim];
                    }
                }
            }
            // Softmax backward: dS = A (dA - rowsum(dA A)).
            let mut ds = vec![0.0f64; t * t];
            for i in 0..t {
                let mut dot = 0.0;
                for j in 0..t {
                    dot += da[i * t + j] * attn[a_base + i * t + j];
                }
                for j in 0..t {
                    ds[i * t + j] = attn[a_base + i * t + j] * (da[i * t + j] - dot);
                }
            }
            // Bias-table scatter and Q/K gradients.
            for i in 0..t {
                for j in 0..t {
                    let g = ds[i * t + j];
                    bias_table_grad.data_mut()[p.rel_index.get(i, j) * heads + h] += g;
                    let gs = g * scale;
                    for pdim in 0..d {
                        dqkv[qkv_base + i * row + qo + pdim] +=
                            gs * qkv.data()[qkv_base + j * row + ko + pdim];
                        dqkv[qkv_base + j * row + ko + pdim] +=
                            gs * qkv.data()[qkv_base + i * row + qo + pdim];
                    }
                }
            }
        }
    }

    // QKV projection backward.
    let mut qkv_weight_grad = Tensor::zeros(&[c, 3 * c]);
    let mut qkv_bias_grad = Tensor::zeros(&[3 * c]);
    let mut input_grad = Tensor::zeros(w.windows().shape());
    for win in 0..bn {
        for i in 0..t {
            let x = &w.windows().data()[win * t * c + i * c..win * t * c + (i + 1) * c];
            let g = &dqkv[win * t * row + i * row..win * t * row + (i + 1) * row];
            for a in 0..c {
                for b in 0..row {
                    qkv_weight_grad.data_mut()[a * row + b] += x[a] * g[b];
                }
            }
            for b in 0..row {
                qkv_bias_grad.data_mut()[b] += g[b];
            }
            let drow =
                &mut input_grad.data_mut()[win * t * c + i * c..win * t * c + (i + 1) * c];
            for a in 0..c {
                let mut acc = 0.0;
                for b in 0..row {
                    acc += g[b] * p.qkv_weight.data()[a * row + b];
                }
                drow[a] = acc;
            }
        }
    }

    Ok(AttentionGrads {
        input: input_grad,
        qkv_weight: qkv_weight_grad,
        qkv_bias: qkv_bias_grad,
        proj_weight: proj_weight_grad,
        proj_bias: proj_bias_grad,
        bias_table: bias_table_grad,
    })
}

/// Two-layer MLP: `fc2(act(fc1(x)))`, extents C -> rC -> C.
pub fn mlp_forward<T: Scalar>(
    x: &Tensor<T>,
    fc1_weight: &Tensor<T>,
    fc1_bias: &Tensor<T>,
    fc2_weight: &Tensor<T>,
    fc2_bias: &Tensor<T>,
    act: Activation,
) -> Result<Tensor<T>> {
    let hidden = x.matmul(fc1_weight)?.add_bias(fc1_bias)?;
    act.apply(&hidden).matmul(fc2_weight)?.add_bias(fc2_bias)
}

/// Window layout of a model: the shifted baseline alternates masked shifted
/// blocks; the size-varying layout never shifts and varies M per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    Shifted,
    SizeVarying,
}

/// MLP widening factor (hidden width = `MLP_RATIO * C`).
pub const MLP_RATIO: usize = 4;

/// Everything one Transformer block owns.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub norm1: NormParams<T>,
    pub norm2: NormParams<T>,
    pub attn: AttentionParams<T>,
    pub fc1_weight: Tensor<T>, // [C, 4C]
    pub fc1_bias: Tensor<T>,   // [4C]
    pub fc2_weight: Tensor<T>, // [4C, C]
    pub fc2_bias: Tensor<T>,   // [C]
    pub act: Activation,
    pub window: usize,
    pub shift: bool,
}

impl<T: Scalar> BlockParams<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        c: usize,
        num_heads: usize,
        window: usize,
        shift: bool,
        norm: NormKind,
        act: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let hidden = MLP_RATIO * c;
        Ok(BlockParams {
            norm1: NormParams::of_kind(norm, c),
            norm2: NormParams::of_kind(norm, c),
            attn: AttentionParams::init(c, num_heads, window, rng)?,
            fc1_weight: trunc_normal_init(&[c, hidden], DEFAULT_INIT_STD, rng),
            fc1_bias: Tensor::zeros(&[hidden]),
            fc2_weight: trunc_normal_init(&[hidden, c], DEFAULT_INIT_STD, rng),
            fc2_bias: Tensor::zeros(&[c]),
            act,
            window,
            shift,
        })
    }
}

/// Pre-norm residual block: `x + Attn(Norm(x))`, then `+ MLP(Norm(.))`.
///
/// With the shift flag on (shifted mode only) the grid is rolled so wrapped
/// windows become contiguous, attention runs under the region mask, and the
/// roll is undone afterwards. The roll moves content up-left, matching the
/// mask's seam placement at the bottom/right of the rolled grid. Shifting is
/// suppressed when the window covers the whole grid.
pub fn block_forward<T: Scalar>(
    g: &FeatureGrid<T>,
    bp: &BlockParams<T>,
    mode: WindowMode,
) -> Result<FeatureGrid<T>> {
    block_forward_recorded(g, bp, mode, &mut NullRecorder)
}

pub fn block_forward_recorded<T: Scalar>(
    g: &FeatureGrid<T>,
    bp: &BlockParams<T>,
    mode: WindowMode,
    rec: &mut dyn OpRecorder,
) -> Result<FeatureGrid<T>> {
    if mode == WindowMode::SizeVarying && bp.shift {
        return Err(Error::config(
            "shift flag set on a block in size-varying mode",
        ));
    }
    let (b, h, w, c) = (g.batch(), g.height(), g.width(), g.channels());
    let m = bp.window;
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::config(format!(
            "block window {m} does not divide grid {h}x{w}"
        )));
    }
    let full_grid = m == h && m == w;
    let shift = if bp.shift && !full_grid { m / 2 } else { 0 };

    let normed = timed(rec, OpClass::Norm, || bp.norm1.apply(g.values()))?;
    let normed = FeatureGrid::new(normed)?;
    let rolled = if shift > 0 {
        timed(rec, OpClass::Shift, || {
            cyclic_shift(&normed, shift as i64, shift as i64)
        })
    } else {
        normed
    };
    let mask = if shift > 0 {
        Some(build_shift_mask(h, w, m, shift)?)
    } else {
        None
    };
    let windows = timed(rec, OpClass::WindowReshape, || window_partition(&rolled, m))?;
    let attended = window_attention_forward_recorded(&windows, &bp.attn, mask.as_ref(), rec)?;
    let grid = timed(rec, OpClass::WindowReshape, || {
        window_reverse(&attended, h, w)
    })?;
    let unrolled = if shift > 0 {
        timed(rec, OpClass::Shift, || {
            cyclic_shift(&grid, -(shift as i64), -(shift as i64))
        })
    } else {
        grid
    };
    let x = g.values().add(unrolled.values())?;

    let normed2 = timed(rec, OpClass::Norm, || bp.norm2.apply(&x))?;
    let flat = normed2.reshape(&[b * h * w, c])?;
    let hidden = timed(rec, OpClass::Mlp, || {
        flat.matmul(&bp.fc1_weight)?.add_bias(&bp.fc1_bias)
    })?;
    let activated = timed(rec, OpClass::Activation, || bp.act.apply(&hidden));
    let mlp_out = timed(rec, OpClass::Mlp, || {
        activated.matmul(&bp.fc2_weight)?.add_bias(&bp.fc2_bias)
    })?;
    let out = x.add(&mlp_out.reshape(&[b, h, w, c])?)?;
    FeatureGrid::new(out)
}
