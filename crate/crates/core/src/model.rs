//! Model assembly: patch embedding, four block stages with patch merging
//! between them, and the classifier head.
//!
//! Channel width doubles and the token grid halves at every merge, so stage
//! `s` runs at `C_s = embed_dim * 2^s` over a `(img/patch)/2^s` grid. All
//! configurations of the shifted and size-varying families share this
//! skeleton; they differ only in per-stage window sizes and shift flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{
    block_forward_recorded, Activation, BlockParams, NormKind, NormParams, WindowMode,
};
use crate::error::{Error, Result};
use crate::numerics::{trunc_normal_init, Rng, Scalar, Tensor, DEFAULT_INIT_STD};
use crate::trace::{timed, NullRecorder, OpClass, OpRecorder};
use crate::windowing::FeatureGrid;

pub const NUM_STAGES: usize = 4;

/// Model capacity presets: Tiny/Small share embed_dim 96, Base uses 128.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Tiny,
    Small,
    Base,
}

impl Variant {
    pub fn embed_dim(self) -> usize {
        match self {
            Variant::Tiny | Variant::Small => 96,
            Variant::Base => 128,
        }
    }

    pub fn depths(self) -> [usize; NUM_STAGES] {
        match self {
            Variant::Tiny => [2, 2, 6, 2],
            Variant::Small | Variant::Base => [2, 2, 18, 2],
        }
    }

    pub fn heads(self) -> [usize; NUM_STAGES] {
        match self {
            Variant::Tiny | Variant::Small => [3, 6, 12, 24],
            Variant::Base => [4, 8, 16, 32],
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Variant::Tiny => "T",
            Variant::Small => "S",
            Variant::Base => "B",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "T" | "t" | "tiny" => Some(Variant::Tiny),
            "S" | "s" | "small" => Some(Variant::Small),
            "B" | "b" | "base" => Some(Variant::Base),
            _ => None,
        }
    }
}

/// Parsed pieces of a preset name like `swin-B` or `swin-free-B-BR-DR14`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PresetSpec {
    pub variant: Variant,
    pub mode: WindowMode,
    pub batch_relu: bool,
    pub stage3_depth: Option<usize>,
}

/// Parses `swin-<V>` / `swin-free-<V>` with optional `-BR` and `-DR<x>`
/// suffixes in any order.
pub fn parse_preset(name: &str) -> Result<PresetSpec> {
    let (mode, rest) = if let Some(rest) = name.strip_prefix("swin-free-") {
        (WindowMode::SizeVarying, rest)
    } else if let Some(rest) = name.strip_prefix("swin-") {
        (WindowMode::Shifted, rest)
    } else {
        return Err(Error::config(format!(
            "unknown preset {name:?}: expected swin-<V> or swin-free-<V> with optional -BR / -DR<x>"
        )));
    };
    let mut parts = rest.split('-');
    let variant = parts
        .next()
        .and_then(Variant::parse)
        .ok_or_else(|| Error::config(format!("unknown variant in preset {name:?}")))?;
    let mut spec = PresetSpec {
        variant,
        mode,
        batch_relu: false,
        stage3_depth: None,
    };
    for part in parts {
        if part == "BR" {
            spec.batch_relu = true;
        } else if let Some(x) = part.strip_prefix("DR") {
            spec.stage3_depth = Some(x.parse().map_err(|_| {
                Error::config(format!("bad depth in preset {name:?}"))
            })?);
        } else {
            return Err(Error::config(format!(
                "unknown preset suffix {part:?} in {name:?}"
            )));
        }
    }
    Ok(spec)
}

/// Whole-model description; spans every row of the variant tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub img_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depths: [usize; NUM_STAGES],
    pub heads: [usize; NUM_STAGES],
    pub window_sizes: [usize; NUM_STAGES],
    /// Per-stage master switch for the alternating shift pattern. Ignored
    /// (must be all false) in size-varying mode.
    pub stage_shift: [bool; NUM_STAGES],
    pub mode: WindowMode,
    pub norm: NormKind,
    pub act: Activation,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Shifted-window baseline at 224: constant M=7, alternating shifts on
    /// in every stage.
    pub fn swin(variant: Variant) -> Self {
        ModelConfig {
            name: format!("swin-{}", variant.letter()),
            img_size: 224,
            patch_size: 4,
            embed_dim: variant.embed_dim(),
            depths: variant.depths(),
            heads: variant.heads(),
            window_sizes: [7; NUM_STAGES],
            stage_shift: [true; NUM_STAGES],
            mode: WindowMode::Shifted,
            norm: NormKind::Layer,
            act: Activation::Gelu,
            num_classes: 1000,
        }
    }

    /// Size-varying family at 224: M = 7,14,14,7 and no shifting anywhere.
    pub fn swin_free(variant: Variant) -> Self {
        ModelConfig {
            name: format!("swin-free-{}", variant.letter()),
            img_size: 224,
            patch_size: 4,
            embed_dim: variant.embed_dim(),
            depths: variant.depths(),
            heads: variant.heads(),
            window_sizes: [7, 14, 14, 7],
            stage_shift: [false; NUM_STAGES],
            mode: WindowMode::SizeVarying,
            norm: NormKind::Layer,
            act: Activation::Gelu,
            num_classes: 1000,
        }
    }

    /// Resolves a preset name to a full configuration.
    pub fn from_preset(name: &str) -> Result<Self> {
        let spec = parse_preset(name)?;
        let mut cfg = match spec.mode {
            WindowMode::Shifted => ModelConfig::swin(spec.variant),
            WindowMode::SizeVarying => ModelConfig::swin_free(spec.variant),
        };
        if spec.batch_relu {
            cfg = cfg.with_batch_relu();
        }
        if let Some(x) = spec.stage3_depth {
            cfg = cfg.with_stage3_depth(x);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// BR variant: BatchNorm everywhere LayerNorm was, ReLU for GELU.
    pub fn with_batch_relu(mut self) -> Self {
        self.norm = NormKind::Batch;
        self.act = Activation::Relu;
        self.name.push_str("-BR");
        self
    }

    /// DRx variant: stage-3 depth reduced to `x` blocks.
    pub fn with_stage3_depth(mut self, x: usize) -> Self {
        self.depths[2] = x;
        self.name.push_str(&format!("-DR{x}"));
        self
    }

    /// Token-grid side at the start of stage `s` (0-based).
    pub fn grid_side(&self, stage: usize) -> usize {
        (self.img_size / self.patch_size) >> stage
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.img_size % self.patch_size != 0 {
            return Err(Error::config(format!(
                "patch size {} does not divide image size {}",
                self.patch_size, self.img_size
            )));
        }
        let base = self.img_size / self.patch_size;
        if base % (1 << (NUM_STAGES - 1)) != 0 {
            return Err(Error::config(format!(
                "token grid {base} not divisible by {} for {} merges",
                1 << (NUM_STAGES - 1),
                NUM_STAGES - 1
            )));
        }
        for s in 0..NUM_STAGES {
            if self.depths[s] == 0 {
                return Err(Error::config(format!("stage {} has zero depth", s + 1)));
            }
            let grid = self.grid_side(s);
            let m = self.window_sizes[s];
            if m == 0 || grid % m != 0 {
                return Err(Error::config(format!(
                    "stage {}: window {m} does not divide grid {grid}",
                    s + 1
                )));
            }
            let c = self.stage_channels(s);
            if self.heads[s] == 0 || c % self.heads[s] != 0 {
                return Err(Error::config(format!(
                    "stage {}: channels {c} not divisible by {} heads",
                    s + 1,
                    self.heads[s]
                )));
            }
            if self.mode == WindowMode::SizeVarying && self.stage_shift[s] {
                return Err(Error::config(format!(
                    "stage {}: shift flag set in size-varying mode",
                    s + 1
                )));
            }
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        Ok(())
    }

    /// Per-block shift pattern of a stage: alternating off/on when the stage
    /// flag is set, suppressed entirely when the window covers the grid.
    pub fn shift_pattern(&self, stage: usize) -> Vec<bool> {
        let grid = self.grid_side(stage);
        let m = self.window_sizes[stage];
        let enabled = self.mode == WindowMode::Shifted && self.stage_shift[stage] && m < grid;
        (0..self.depths[stage])
            .map(|i| enabled && i % 2 == 1)
            .collect()
    }

    pub fn stage_configs(&self) -> Vec<StageConfig> {
        (0..NUM_STAGES)
            .map(|s| StageConfig {
                depth: self.depths[s],
                window: self.window_sizes[s],
                heads: self.heads[s],
                shift_pattern: self.shift_pattern(s),
            })
            .collect()
    }

    /// The per-stage (P, M, N) geometry triple.
    pub fn stage_trace(&self) -> Vec<StageTrace> {
        (0..NUM_STAGES)
            .map(|s| {
                let side = self.grid_side(s);
                let m = self.window_sizes[s];
                StageTrace {
                    patch_side: side,
                    window: m,
                    num_windows: (side / m) * (side / m),
                }
            })
            .collect()
    }
}

/// One stage's block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub depth: usize,
    pub window: usize,
    pub heads: usize,
    pub shift_pattern: Vec<bool>,
}

/// Geometry triple for one stage: P = patch_side^2 tokens, window side M,
/// and N non-overlapping windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTrace {
    pub patch_side: usize,
    pub window: usize,
    pub num_windows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedParams<T> {
    /// `[patch^2 * 3, embed_dim]`; input features ordered channel-major,
    /// then row-major over the patch.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub norm: NormParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeParams<T> {
    /// Norm over the 4C concatenation, applied before the reduction.
    pub norm: NormParams<T>,
    /// `[4C, 2C]`, bias-free.
    pub reduction: Tensor<T>,
}

/// Fully materialized parameter set for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub cfg: ModelConfig,
    pub patch_embed: PatchEmbedParams<T>,
    pub stages: Vec<Vec<BlockParams<T>>>,
    pub merges: Vec<MergeParams<T>>,
    pub final_norm: NormParams<T>,
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

/// Initializes every learnable tensor from the seed: truncated normal
/// (std 0.02, clipped at ±2 std) for weights and bias tables, zeros for
/// biases, unit gain for norms.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let e = cfg.embed_dim;
    let p = cfg.patch_size;

    let patch_embed = PatchEmbedParams {
        weight: trunc_normal_init(&[p * p * 3, e], DEFAULT_INIT_STD, &mut rng),
        bias: Tensor::zeros(&[e]),
        norm: NormParams::of_kind(cfg.norm, e),
    };

    let mut stages = Vec::with_capacity(NUM_STAGES);
    let mut merges = Vec::with_capacity(NUM_STAGES - 1);
    for (s, sc) in cfg.stage_configs().iter().enumerate() {
        let c = cfg.stage_channels(s);
        let blocks = sc
            .shift_pattern
            .iter()
            .map(|&shift| {
                BlockParams::init(c, sc.heads, sc.window, shift, cfg.norm, cfg.act, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        stages.push(blocks);
        if s + 1 < NUM_STAGES {
            merges.push(MergeParams {
                norm: NormParams::of_kind(cfg.norm, 4 * c),
                reduction: trunc_normal_init(&[4 * c, 2 * c], DEFAULT_INIT_STD, &mut rng),
            });
        }
    }

    let c_last = cfg.stage_channels(NUM_STAGES - 1);
    Ok(ModelParams {
        cfg: cfg.clone(),
        patch_embed,
        stages,
        merges,
        final_norm: NormParams::of_kind(cfg.norm, c_last),
        head_weight: trunc_normal_init(&[c_last, cfg.num_classes], DEFAULT_INIT_STD, &mut rng),
        head_bias: Tensor::zeros(&[cfg.num_classes]),
    })
}

/// Cuts `[B, 3, H, W]` into non-overlapping `patch x patch` squares, projects
/// each to `embed_dim` and norms the tokens. Output grid is `H/patch` square.
pub fn patch_embed<T: Scalar>(
    img: &Tensor<T>,
    params: &PatchEmbedParams<T>,
    patch: usize,
) -> Result<FeatureGrid<T>> {
    if img.rank() != 4 || img.shape()[1] != 3 {
        return Err(Error::dim("patch_embed", img.shape(), &[0, 3, 0, 0]));
    }
    let (b, h, w) = (img.shape()[0], img.shape()[2], img.shape()[3]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::config(format!(
            "patch size {patch} does not divide image {h}x{w}"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let feat = patch * patch * 3;

    // Gather patches into [B*gh*gw, 3*patch^2], channel-major features.
    let mut gathered = vec![T::ZERO; b * gh * gw * feat];
    let src = img.data();
    for bi in 0..b {
        for py in 0..gh {
            for px in 0..gw {
                let token = (bi * gh + py) * gw + px;
                for c in 0..3 {
                    for dy in 0..patch {
                        let y = py * patch + dy;
                        let src_row = ((bi * 3 + c) * h + y) * w + px * patch;
                        let dst = token * feat + c * patch * patch + dy * patch;
                        gathered[dst..dst + patch]
                            .copy_from_slice(&src[src_row..src_row + patch]);
                    }
                }
            }
        }
    }
    let tokens = Tensor::new(&[b * gh * gw, feat], gathered)?
        .matmul(&params.weight)?
        .add_bias(&params.bias)?;
    let tokens = params.norm.apply(&tokens)?;
    let e = params.weight.shape()[1];
    FeatureGrid::new(tokens.reshape(&[b, gh, gw, e])?)
}

/// 2x2 neighbor concatenation (4C), norm, then linear reduction to 2C;
/// halves both spatial extents.
pub fn patch_merge<T: Scalar>(g: &FeatureGrid<T>, params: &MergeParams<T>) -> Result<FeatureGrid<T>> {
    let (b, h, w, c) = (g.batch(), g.height(), g.width(), g.channels());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::config(format!(
            "patch_merge requires even extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = g.values().data();
    let mut cat = vec![T::ZERO; b * oh * ow * 4 * c];
    // Quadrant order (dy,dx) = (0,0), (1,0), (0,1), (1,1).
    let offsets = [(0usize, 0usize), (1, 0), (0, 1), (1, 1)];
    for bi in 0..b {
        for y in 0..oh {
            for x in 0..ow {
                let dst = ((bi * oh + y) * ow + x) * 4 * c;
                for (q, &(dy, dx)) in offsets.iter().enumerate() {
                    let s = ((bi * h + 2 * y + dy) * w + 2 * x + dx) * c;
                    cat[dst + q * c..dst + (q + 1) * c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    let cat = Tensor::new(&[b * oh * ow, 4 * c], cat)?;
    let reduced = params.norm.apply(&cat)?.matmul(&params.reduction)?;
    let out_c = params.reduction.shape()[1];
    FeatureGrid::new(reduced.reshape(&[b, oh, ow, out_c])?)
}

/// Runs the blocks of one stage (no merge) on a grid; exposed for
/// activation-trace comparisons between configurations.
pub fn stage_forward<T: Scalar>(
    params: &ModelParams<T>,
    stage: usize,
    g: &FeatureGrid<T>,
) -> Result<FeatureGrid<T>> {
    let mut g = g.clone();
    for bp in &params.stages[stage] {
        g = block_forward_recorded(&g, bp, params.cfg.mode, &mut NullRecorder)?;
    }
    Ok(g)
}

pub fn model_forward<T: Scalar>(params: &ModelParams<T>, img: &Tensor<T>) -> Result<Tensor<T>> {
    model_forward_recorded(params, img, &mut NullRecorder)
}

/// Full forward: embed, stages with merges, final norm, mean pool over all
/// tokens, linear head.
pub fn model_forward_recorded<T: Scalar>(
    params: &ModelParams<T>,
    img: &Tensor<T>,
    rec: &mut dyn OpRecorder,
) -> Result<Tensor<T>> {
    let cfg = &params.cfg;
    let want = [img.shape()[0], 3, cfg.img_size, cfg.img_size];
    if img.rank() != 4 || img.shape()[1..] != want[1..] {
        return Err(Error::dim("model_forward", img.shape(), &want));
    }

    let mut grid = timed(rec, OpClass::Embed, || {
        patch_embed(img, &params.patch_embed, cfg.patch_size)
    })?;
    for s in 0..NUM_STAGES {
        for bp in &params.stages[s] {
            grid = block_forward_recorded(&grid, bp, cfg.mode, rec)?;
        }
        if s + 1 < NUM_STAGES {
            grid = timed(rec, OpClass::Merge, || patch_merge(&grid, &params.merges[s]))?;
        }
    }

    let (b, h, w, c) = (grid.batch(), grid.height(), grid.width(), grid.channels());
    let tokens = grid.into_values().reshape(&[b * h * w, c])?;
    let normed = timed(rec, OpClass::Norm, || params.final_norm.apply(&tokens))?;

    let pooled = timed(rec, OpClass::Pool, || {
        let inv = T::from_f64(1.0 / (h * w) as f64);
        let mut pooled = Tensor::zeros(&[b, c]);
        for bi in 0..b {
            for t in 0..h * w {
                let row = &normed.data()[(bi * h * w + t) * c..(bi * h * w + t + 1) * c];
                for (o, &v) in pooled.data_mut()[bi * c..(bi + 1) * c].iter_mut().zip(row) {
                    *o += v * inv;
                }
            }
        }
        pooled
    });

    timed(rec, OpClass::Head, || {
        pooled.matmul(&params.head_weight)?.add_bias(&params.head_bias)
    })
}

impl<T: Scalar> ModelParams<T> {
    /// Visits every tensor in a stable order. `learnable` is false for
    /// BatchNorm running statistics, which are buffers, not parameters.
    pub fn visit_tensors(&self, f: &mut dyn FnMut(String, &Tensor<T>, bool)) {
        fn norm_tensors<T: Scalar>(
            prefix: &str,
            n: &NormParams<T>,
            f: &mut dyn FnMut(String, &Tensor<T>, bool),
        ) {
            match n {
                NormParams::Layer { gamma, beta, .. } => {
                    f(format!("{prefix}.gamma"), gamma, true);
                    f(format!("{prefix}.beta"), beta, true);
                }
                NormParams::Batch {
                    mean,
                    var,
                    gamma,
                    beta,
                    ..
                } => {
                    f(format!("{prefix}.gamma"), gamma, true);
                    f(format!("{prefix}.beta"), beta, true);
                    f(format!("{prefix}.running_mean"), mean, false);
                    f(format!("{prefix}.running_var"), var, false);
                }
            }
        }

        f("patch_embed.weight".into(), &self.patch_embed.weight, true);
        f("patch_embed.bias".into(), &self.patch_embed.bias, true);
        norm_tensors("patch_embed.norm", &self.patch_embed.norm, f);
        for (s, blocks) in self.stages.iter().enumerate() {
            for (i, bp) in blocks.iter().enumerate() {
                let p = format!("stages.{s}.blocks.{i}");
                norm_tensors(&format!("{p}.norm1"), &bp.norm1, f);
                f(format!("{p}.attn.qkv_weight"), &bp.attn.qkv_weight, true);
                f(format!("{p}.attn.qkv_bias"), &bp.attn.qkv_bias, true);
                f(format!("{p}.attn.proj_weight"), &bp.attn.proj_weight, true);
                f(format!("{p}.attn.proj_bias"), &bp.attn.proj_bias, true);
                f(format!("{p}.attn.bias_table"), &bp.attn.bias_table, true);
                norm_tensors(&format!("{p}.norm2"), &bp.norm2, f);
                f(format!("{p}.mlp.fc1_weight"), &bp.fc1_weight, true);
                f(format!("{p}.mlp.fc1_bias"), &bp.fc1_bias, true);
                f(format!("{p}.mlp.fc2_weight"), &bp.fc2_weight, true);
                f(format!("{p}.mlp.fc2_bias"), &bp.fc2_bias, true);
            }
            if s < self.merges.len() {
                norm_tensors(&format!("merges.{s}.norm"), &self.merges[s].norm, f);
                f(format!("merges.{s}.reduction"), &self.merges[s].reduction, true);
            }
        }
        norm_tensors("final_norm", &self.final_norm, f);
        f("head.weight".into(), &self.head_weight, true);
        f("head.bias".into(), &self.head_bias, true);
    }

    /// Mutable variant of [`visit_tensors`], same order.
    pub fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>, bool)) {
        fn norm_tensors<T: Scalar>(
            prefix: &str,
            n: &mut NormParams<T>,
            f: &mut dyn FnMut(String, &mut Tensor<T>, bool),
        ) {
            match n {
                NormParams::Layer { gamma, beta, .. } => {
                    f(format!("{prefix}.gamma"), gamma, true);
                    f(format!("{prefix}.beta"), beta, true);
                }
                NormParams::Batch {
                    mean,
                    var,
                    gamma,
                    beta,
                    ..
                } => {
                    f(format!("{prefix}.gamma"), gamma, true);
                    f(format!("{prefix}.beta"), beta, true);
                    f(format!("{prefix}.running_mean"), mean, false);
                    f(format!("{prefix}.running_var"), var, false);
                }
            }
        }

        f("patch_embed.weight".into(), &mut self.patch_embed.weight, true);
        f("patch_embed.bias".into(), &mut self.patch_embed.bias, true);
        norm_tensors("patch_embed.norm", &mut self.patch_embed.norm, f);
        let merge_count = self.merges.len();
        for (s, blocks) in self.stages.iter_mut().enumerate() {
            for (i, bp) in blocks.iter_mut().enumerate() {
                let p = format!("stages.{s}.blocks.{i}");
                norm_tensors(&format!("{p}.norm1"), &mut bp.norm1, f);
                f(format!("{p}.attn.qkv_weight"), &mut bp.attn.qkv_weight, true);
                f(format!("{p}.attn.qkv_bias"), &mut bp.attn.qkv_bias, true);
                f(format!("{p}.attn.proj_weight"), &mut bp.attn.proj_weight, true);
                f(format!("{p}.attn.proj_bias"), &mut bp.attn.proj_bias, true);
                f(format!("{p}.attn.bias_table"), &mut bp.attn.bias_table, true);
                norm_tensors(&format!("{p}.norm2"), &mut bp.norm2, f);
                f(format!("{p}.mlp.fc1_weight"), &mut bp.fc1_weight, true);
                f(format!("{p}.mlp.fc1_bias"), &mut bp.fc1_bias, true);
                f(format!("{p}.mlp.fc2_weight"), &mut bp.fc2_weight, true);
                f(format!("{p}.mlp.fc2_bias"), &mut bp.fc2_bias, true);
            }
            if s < merge_count {
                norm_tensors(&format!("merges.{s}.norm"), &mut self.merges[s].norm, f);
                f(
                    format!("merges.{s}.reduction"),
                    &mut self.merges[s].reduction,
                    true,
                );
            }
        }
        norm_tensors("final_norm", &mut self.final_norm, f);
        f("head.weight".into(), &mut self.head_weight, true);
        f("head.bias".into(), &mut self.head_bias, true);
    }
}

/// Exact count of learnable scalars: weights, biases, norm affines, and
/// relative-position bias tables. BatchNorm running statistics are buffers
/// and do not count.
pub fn count_params<T: Scalar>(params: &ModelParams<T>) -> u64 {
    let mut total = 0u64;
    params.visit_tensors(&mut |_, t, learnable| {
        if learnable {
            total += t.len() as u64;
        }
    });
    total
}

/// Raw little-endian f32 weight archive with a JSON sidecar manifest.
///
/// The weights file holds every tensor's data concatenated in visit order;
/// the manifest at `<path>.json` lists name, shape, byte offset and byte
/// length per tensor, in file order.
pub mod archive {
    use super::*;
    use std::fs;
    use std::io::Write;

    #[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
    pub struct ManifestEntry {
        pub name: String,
        pub shape: Vec<usize>,
        pub byte_offset: u64,
        pub byte_len: u64,
    }

    #[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
    pub struct Manifest {
        pub total_bytes: u64,
        pub tensors: Vec<ManifestEntry>,
    }

    pub fn manifest_path(weights: &Path) -> std::path::PathBuf {
        let mut os = weights.as_os_str().to_os_string();
        os.push(".json");
        os.into()
    }

    pub fn save(params: &ModelParams<f32>, path: &Path) -> Result<()> {
        let mut entries = Vec::new();
        let mut blob: Vec<u8> = Vec::new();
        params.visit_tensors(&mut |name, t, _| {
            let byte_offset = blob.len() as u64;
            for &v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(ManifestEntry {
                name,
                shape: t.shape().to_vec(),
                byte_offset,
                byte_len: (t.len() * 4) as u64,
            });
        });
        let manifest = Manifest {
            total_bytes: blob.len() as u64,
            tensors: entries,
        };
        let mut f = fs::File::create(path)?;
        f.write_all(&blob)?;
        let json = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        fs::write(manifest_path(path), json)?;
        Ok(())
    }

    /// Loads an archive, validating the manifest and every shape against the
    /// configuration before any data lands in the model.
    pub fn load(cfg: &ModelConfig, path: &Path) -> Result<ModelParams<f32>> {
        let blob = fs::read(path)?;
        let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path(path))?)
            .map_err(|e| Error::Format(format!("manifest parse: {e}")))?;
        if manifest.total_bytes != blob.len() as u64 {
            return Err(Error::Format(format!(
                "weights file is {} bytes, manifest says {}",
                blob.len(),
                manifest.total_bytes
            )));
        }

        let mut params = build_model::<f32>(cfg, 0)?;
        let mut idx = 0usize;
        let mut offset = 0u64;
        let mut failure: Option<Error> = None;
        params.visit_tensors_mut(&mut |name, t, _| {
            if failure.is_some() {
                return;
            }
            let Some(entry) = manifest.tensors.get(idx) else {
                failure = Some(Error::Format(format!(
                    "manifest ends early: missing tensor {name}"
                )));
                return;
            };
            if entry.name != name {
                failure = Some(Error::Format(format!(
                    "manifest tensor {idx} is {}, expected {name}",
                    entry.name
                )));
            } else if entry.shape != t.shape() {
                failure = Some(Error::Format(format!(
                    "{name}: manifest shape {:?} does not match config shape {:?}",
                    entry.shape,
                    t.shape()
                )));
            } else if entry.byte_offset != offset || entry.byte_len != (t.len() * 4) as u64 {
                failure = Some(Error::Format(format!(
                    "{name}: bad extent (offset {} len {}, expected offset {} len {})",
                    entry.byte_offset,
                    entry.byte_len,
                    offset,
                    t.len() * 4
                )));
            } else {
                let start = entry.byte_offset as usize;
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    let b = start + 4 * i;
                    *v = f32::from_le_bytes([blob[b], blob[b + 1], blob[b + 2], blob[b + 3]]);
                }
                offset += entry.byte_len;
            }
            idx += 1;
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if idx != manifest.tensors.len() {
            return Err(Error::Format(format!(
                "manifest lists {} tensors, config defines {idx}",
                manifest.tensors.len()
            )));
        }
        if offset != manifest.total_bytes {
            return Err(Error::Format(format!(
                "tensors cover {offset} bytes, manifest total is {}",
                manifest.total_bytes
            )));
        }
        Ok(params)
    }
}
