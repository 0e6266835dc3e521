//! Brute-force oracles and the structural property suite.
//!
//! Oracles here are written fresh — naive loops, no code shared with the
//! fast path they check — and run exclusively in f64. The property suite
//! executes every cross-module invariant on seeded randomized and fixed
//! cases, never aborting early, and reports one line per property.

use serde::Serialize;

use crate::attention::{
    attention_scores_for_verification, block_forward, window_attention_backward,
    window_attention_forward, Activation, AttentionParams, BlockParams, NormKind, WindowMode,
};
use crate::error::{Error, Result};
use crate::model::{build_model, count_params, model_forward, ModelConfig, Variant};
use crate::numerics::{
    batch_norm_infer, finite_diff_grad, layer_norm, softmax_lastdim, Rng, Tensor,
};
use crate::profiler::{count_flops, count_shift_traffic, param_count};
use crate::windowing::{
    build_shift_mask, cyclic_shift, window_partition, window_reverse, FeatureGrid,
};

/// Dense attention over all `T` tokens, naive O(T^2) loops, no windowing.
/// The relative-position bias is recomputed from coordinate deltas rather
/// than the fast path's index table.
pub fn global_attention_oracle(
    tokens: &Tensor<f64>,
    p: &AttentionParams<f64>,
) -> Result<Tensor<f64>> {
    if tokens.rank() != 2 {
        return Err(Error::dim("global_oracle", tokens.shape(), &[0, 0]));
    }
    let t = tokens.shape()[0];
    let c = tokens.shape()[1];
    let m = p.window_size();
    if t != m * m || c != p.channels() {
        return Err(Error::dim("global_oracle", tokens.shape(), &[m * m, p.channels()]));
    }
    let heads = p.num_heads;
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let side = 2 * m - 1;

    // QKV, one token at a time.
    let w3 = 3 * c;
    let mut qkv = vec![0.0f64; t * w3];
    for i in 0..t {
        for o in 0..w3 {
            let mut acc = p.qkv_bias.data()[o];
            for k in 0..c {
                acc += tokens.data()[i * c + k] * p.qkv_weight.data()[k * w3 + o];
            }
            qkv[i * w3 + o] = acc;
        }
    }

    let mut ctx = vec![0.0f64; t * c];
    let mut scores = vec![0.0f64; t];
    for h in 0..heads {
        let (qo, ko, vo) = (h * d, c + h * d, 2 * c + h * d);
        for i in 0..t {
            let (yi, xi) = (i / m, i % m);
            for (j, s) in scores.iter_mut().enumerate() {
                let (yj, xj) = (j / m, j % m);
                let mut acc = 0.0;
                for pdim in 0..d {
                    acc += qkv[i * w3 + qo + pdim] * qkv[j * w3 + ko + pdim];
                }
                let dy = (yi + m - 1 - yj) * side;
                let dx = xi + m - 1 - xj;
                *s = acc * scale + p.bias_table.data()[(dy + dx) * heads + h];
            }
            naive_softmax_row(&mut scores);
            for j in 0..t {
                let a = scores[j];
                for pdim in 0..d {
                    ctx[i * c + h * d + pdim] += a * qkv[j * w3 + vo + pdim];
                }
            }
        }
    }

    let mut out = vec![0.0f64; t * c];
    for i in 0..t {
        for o in 0..c {
            let mut acc = p.proj_bias.data()[o];
            for k in 0..c {
                acc += ctx[i * c + k] * p.proj_weight.data()[k * c + o];
            }
            out[i * c + o] = acc;
        }
    }
    Tensor::new(&[t, c], out)
}

fn naive_softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Shifted-window attention computed without any additive mask: within each
/// rolled window, dense attention runs independently per region-id group and
/// the pieces are reassembled.
pub fn masked_group_oracle(
    g: &FeatureGrid<f64>,
    m: usize,
    shift: usize,
    p: &AttentionParams<f64>,
) -> Result<FeatureGrid<f64>> {
    let (b, h, w, c) = (g.batch(), g.height(), g.width(), g.channels());
    if shift >= m {
        return Err(Error::config(format!("shift {shift} must be < window {m}")));
    }
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::config(format!(
            "window size {m} does not divide grid {h}x{w}"
        )));
    }
    if c != p.channels() || m != p.window_size() {
        return Err(Error::dim("group_oracle", &[m, c], &[p.window_size(), p.channels()]));
    }
    let heads = p.num_heads;
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let side = 2 * m - 1;

    // Own roll, matching the forward path's convention.
    let mut rolled = vec![0.0f64; b * h * w * c];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = ((y + shift) % h, (x + shift) % w);
                for ch in 0..c {
                    rolled[((bi * h + y) * w + x) * c + ch] = g.at(bi, sy, sx, ch);
                }
            }
        }
    }

    // Own region labels: 3x3 slicing per axis.
    let seg = |pos: usize, extent: usize| -> usize {
        if shift == 0 || pos < extent - m {
            0
        } else if pos < extent - shift {
            1
        } else {
            2
        }
    };

    // QKV for every rolled token.
    let w3 = 3 * c;
    let tokens = b * h * w;
    let mut qkv = vec![0.0f64; tokens * w3];
    for i in 0..tokens {
        for o in 0..w3 {
            let mut acc = p.qkv_bias.data()[o];
            for k in 0..c {
                acc += rolled[i * c + k] * p.qkv_weight.data()[k * w3 + o];
            }
            qkv[i * w3 + o] = acc;
        }
    }

    let mut ctx = vec![0.0f64; tokens * c];
    for bi in 0..b {
        for wy in 0..h / m {
            for wx in 0..w / m {
                // Group window tokens by region id.
                let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
                for ty in 0..m {
                    for tx in 0..m {
                        let (y, x) = (wy * m + ty, wx * m + tx);
                        let region = seg(y, h) * 3 + seg(x, w);
                        let flat = (bi * h + y) * w + x;
                        match groups.iter_mut().find(|(r, _)| *r == region) {
                            Some((_, list)) => list.push(flat),
                            None => groups.push((region, vec![flat])),
                        }
                    }
                }
                for (_, members) in &groups {
                    for hd in 0..heads {
                        let (qo, ko, vo) = (hd * d, c + hd * d, 2 * c + hd * d);
                        for &i in members {
                            // Window-relative coordinates for the bias.
                            let (ri, ci) = (((i / w) % h) % m, (i % w) % m);
                            let mut scores: Vec<f64> = members
                                .iter()
                                .map(|&j| {
                                    let (rj, cj) = (((j / w) % h) % m, (j % w) % m);
                                    let mut acc = 0.0;
                                    for pdim in 0..d {
                                        acc += qkv[i * w3 + qo + pdim] * qkv[j * w3 + ko + pdim];
                                    }
                                    let dy = (ri + m - 1 - rj) * side;
                                    let dx = ci + m - 1 - cj;
                                    acc * scale + p.bias_table.data()[(dy + dx) * heads + hd]
                                })
                                .collect();
                            naive_softmax_row(&mut scores);
                            for (a, &j) in scores.iter().zip(members) {
                                for pdim in 0..d {
                                    ctx[i * c + hd * d + pdim] += a * qkv[j * w3 + vo + pdim];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    // Projection, then undo the roll.
    let mut out = vec![0.0f64; tokens * c];
    for i in 0..tokens {
        for o in 0..c {
            let mut acc = p.proj_bias.data()[o];
            for k in 0..c {
                acc += ctx[i * c + k] * p.proj_weight.data()[k * c + o];
            }
            out[i * c + o] = acc;
        }
    }
    let mut unrolled = vec![0.0f64; tokens * c];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = ((y + h - shift) % h, (x + w - shift) % w);
                let dst = ((bi * h + y) * w + x) * c;
                let src = ((bi * h + sy) * w + sx) * c;
                unrolled[dst..dst + c].copy_from_slice(&out[src..src + c]);
            }
        }
    }
    FeatureGrid::new(Tensor::new(&[b, h, w, c], unrolled)?)
}

/// Token co-occurrence structure of a block sequence: two tokens are
/// adjacent when at least one block puts them in the same attention window
/// (shifted blocks use rolled window membership).
#[derive(Debug, Clone)]
pub struct ConnectivityGraph {
    h: usize,
    w: usize,
    /// Per block, window id of every token.
    block_windows: Vec<Vec<u32>>,
    component: Vec<u32>,
    component_count: usize,
}

impl ConnectivityGraph {
    pub fn num_tokens(&self) -> usize {
        self.h * self.w
    }

    /// Direct co-window adjacency; reflexive and symmetric.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.block_windows.iter().any(|wins| wins[a] == wins[b])
    }

    /// Transitive connectivity over the union of all blocks.
    pub fn connected(&self, a: usize, b: usize) -> bool {
        self.component[a] == self.component[b]
    }

    pub fn component_count(&self) -> usize {
        self.component_count
    }
}

pub fn connectivity_graph(
    stage_blocks: &[(usize, bool)],
    h: usize,
    w: usize,
) -> Result<ConnectivityGraph> {
    let n = h * w;
    let mut block_windows = Vec::with_capacity(stage_blocks.len());
    for &(m, shift_flag) in stage_blocks {
        if m == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::config(format!(
                "window size {m} does not divide grid {h}x{w}"
            )));
        }
        let s = if shift_flag { m / 2 } else { 0 };
        let grid_w = w / m;
        let wins: Vec<u32> = (0..n)
            .map(|tok| {
                let (y, x) = (tok / w, tok % w);
                // Rolled position of this token, then its window.
                let (ry, rx) = ((y + h - s) % h, (x + w - s) % w);
                ((ry / m) * grid_w + rx / m) as u32
            })
            .collect();
        block_windows.push(wins);
    }

    // Union-find over per-block window groups.
    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn find(parent: &mut [u32], x: u32) -> u32 {
        let mut root = x;
        while parent[root as usize] != root {
            root = parent[root as usize];
        }
        let mut cur = x;
        while parent[cur as usize] != root {
            let next = parent[cur as usize];
            parent[cur as usize] = root;
            cur = next;
        }
        root
    }
    for wins in &block_windows {
        let mut first_of_window: Vec<Option<u32>> = vec![None; n];
        for (tok, &win) in wins.iter().enumerate() {
            match first_of_window[win as usize] {
                Some(first) => {
                    let (a, b) = (find(&mut parent, first), find(&mut parent, tok as u32));
                    if a != b {
                        parent[b as usize] = a;
                    }
                }
                None => first_of_window[win as usize] = Some(tok as u32),
            }
        }
    }
    let mut component = vec![0u32; n];
    let mut roots: Vec<u32> = Vec::new();
    for tok in 0..n as u32 {
        let root = find(&mut parent, tok);
        let id = match roots.iter().position(|&r| r == root) {
            Some(i) => i,
            None => {
                roots.push(root);
                roots.len() - 1
            }
        };
        component[tok as usize] = id as u32;
    }
    Ok(ConnectivityGraph {
        h,
        w,
        block_windows,
        component,
        component_count: roots.len(),
    })
}

/// How much of the grid range the suite exercises. Quick caps grids at
/// 28x28; full adds the 56x56 cases and the 224-input stage-trace checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Quick,
    Full,
}

impl Scope {
    pub fn parse(s: &str) -> Option<Scope> {
        match s {
            "quick" => Some(Scope::Quick),
            "full" => Some(Scope::Full),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scope::Quick => "quick",
            Scope::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyOutcome {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub seed: u64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub scope: String,
    pub seed: u64,
    pub outcomes: Vec<PropertyOutcome>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyOutcome> {
        self.outcomes.iter().filter(|o| !o.passed)
    }

    /// Line-oriented text form: one `PASS`/`FAIL` line per property.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            let status = if o.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!(
                "{status} {} (max_error={:.3e}, seed={}){}\n",
                o.name,
                o.max_error,
                o.seed,
                if o.detail.is_empty() {
                    String::new()
                } else {
                    format!(" — {}", o.detail)
                }
            ));
        }
        let failed = self.outcomes.iter().filter(|o| !o.passed).count();
        out.push_str(&format!(
            "{} properties, {} failed (scope={}, seed={})\n",
            self.outcomes.len(),
            failed,
            self.scope,
            self.seed
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

fn outcome(name: &str, seed: u64, max_error: f64, tol: f64, detail: String) -> PropertyOutcome {
    PropertyOutcome {
        name: name.into(),
        passed: max_error.is_finite() && max_error <= tol,
        max_error,
        seed,
        detail,
    }
}

/// Row-normalization and shift-invariance checks against an injectable
/// softmax; the suite passes the production kernel, mutation tests pass a
/// corrupted one.
pub fn softmax_normalization_property(
    seed: u64,
    softmax: &dyn Fn(&Tensor<f64>) -> Tensor<f64>,
) -> PropertyOutcome {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let rows = 1 + rng.next_usize(5);
        let cols = 1 + rng.next_usize(12);
        let x = rng.uniform_tensor::<f64>(&[rows, cols]).map(|v| v * 5.0);
        let s = softmax(&x);
        for row in s.data().chunks(cols) {
            let sum: f64 = row.iter().sum();
            worst = worst.max((sum - 1.0).abs());
        }
        let shifted = softmax(&x.map(|v| v + 37.25));
        worst = worst.max(s.max_abs_diff(&shifted));
    }
    outcome("softmax_normalization", seed, worst, 1e-6, String::new())
}

const ORACLE_SEED_ROUNDS: usize = 20;

/// Executes every cross-module invariant; failures are collected, never
/// fatal. Deterministic for a fixed seed: running twice yields an identical
/// report.
pub fn run_property_suite(scope: Scope, seed: u64) -> SuiteReport {
    let mut outcomes = Vec::new();
    let max_grid: usize = match scope {
        Scope::Quick => 28,
        Scope::Full => 56,
    };

    // matmul vs a fresh triple loop.
    {
        let mut rng = Rng::new(seed ^ 0x01);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let (m, k, n) = (
                1 + rng.next_usize(6),
                1 + rng.next_usize(6),
                1 + rng.next_usize(6),
            );
            let a = rng.uniform_tensor::<f64>(&[m, k]);
            let b = rng.uniform_tensor::<f64>(&[k, n]);
            let fast = a.matmul(&b).expect("shapes agree");
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a.data()[i * k + p] * b.data()[p * n + j];
                    }
                    worst = worst.max((fast.data()[i * n + j] - acc).abs());
                }
            }
        }
        outcomes.push(outcome("matmul_triple_loop_oracle", seed ^ 0x01, worst, 1e-12, String::new()));
    }

    // Identity and associativity.
    {
        let mut rng = Rng::new(seed ^ 0x02);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let (m, k, n) = (
                1 + rng.next_usize(5),
                1 + rng.next_usize(5),
                1 + rng.next_usize(5),
            );
            let a = rng.uniform_tensor::<f64>(&[m, k]);
            let b = rng.uniform_tensor::<f64>(&[k, n]);
            let id = Tensor::<f64>::eye(m);
            worst = worst.max(id.matmul(&a).expect("eye").max_abs_diff(&a));
            let c = rng.uniform_tensor::<f64>(&[n, 3]);
            let left = a.matmul(&b).expect("ab").matmul(&c).expect("abc");
            let right = a.matmul(&b.matmul(&c).expect("bc")).expect("abc");
            worst = worst.max(left.max_abs_diff(&right));
        }
        outcomes.push(outcome("matmul_identity_associativity", seed ^ 0x02, worst, 1e-12, String::new()));
    }

    outcomes.push(softmax_normalization_property(seed ^ 0x03, &|x| {
        softmax_lastdim(x)
    }));

    // LayerNorm statistics.
    {
        let mut rng = Rng::new(seed ^ 0x04);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let c = 2 + rng.next_usize(14);
            let x = rng.uniform_tensor::<f64>(&[4, c]).map(|v| v * 3.0 + 0.5);
            let y = layer_norm(&x, &Tensor::full(&[c], 1.0), &Tensor::zeros(&[c]), 1e-12)
                .expect("layer_norm");
            for row in y.data().chunks(c) {
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                worst = worst.max(mean.abs()).max((var - 1.0).abs());
            }
        }
        outcomes.push(outcome("layer_norm_statistics", seed ^ 0x04, worst, 1e-5, String::new()));
    }

    // BatchNorm is affine in x for fixed statistics.
    {
        let mut rng = Rng::new(seed ^ 0x05);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let c = 1 + rng.next_usize(8);
            let a = rng.uniform_tensor::<f64>(&[3, c]);
            let b = rng.uniform_tensor::<f64>(&[3, c]);
            let mean = rng.uniform_tensor::<f64>(&[c]);
            let var = rng.uniform_tensor::<f64>(&[c]).map(|v| v.abs() + 0.05);
            let gamma = rng.uniform_tensor::<f64>(&[c]);
            let beta = rng.uniform_tensor::<f64>(&[c]);
            let bn = |x: &Tensor<f64>| {
                batch_norm_infer(x, &mean, &var, &gamma, &beta, 1e-5).expect("batch_norm")
            };
            let lambda = rng.next_f64();
            let mix = a.scale(lambda).add(&b.scale(1.0 - lambda)).expect("same shape");
            let want = bn(&a)
                .scale(lambda)
                .add(&bn(&b).scale(1.0 - lambda))
                .expect("same shape");
            worst = worst.max(bn(&mix).max_abs_diff(&want));
        }
        outcomes.push(outcome("batch_norm_affine", seed ^ 0x05, worst, 1e-10, String::new()));
    }

    // Partition/reverse and shift/unshift are bit-exact inverses.
    {
        let mut rng = Rng::new(seed ^ 0x06);
        let mut mismatches = 0usize;
        let cases = 200;
        for _ in 0..cases {
            let m = 1 + rng.next_usize(7);
            let gh = 1 + rng.next_usize(max_grid / m);
            let gw = 1 + rng.next_usize(max_grid / m);
            let (h, w) = (gh * m, gw * m);
            let b = 1 + rng.next_usize(2);
            let c = 1 + rng.next_usize(4);
            let g = FeatureGrid::new(rng.uniform_tensor::<f64>(&[b, h, w, c])).expect("rank 4");
            let ws = window_partition(&g, m).expect("divisible");
            if window_reverse(&ws, h, w).expect("consistent") != g {
                mismatches += 1;
            }
            let dy = rng.next_usize(h) as i64;
            let dx = rng.next_usize(w) as i64;
            if cyclic_shift(&cyclic_shift(&g, dy, dx), -dy, -dx) != g {
                mismatches += 1;
            }
        }
        outcomes.push(outcome(
            "partition_shift_roundtrips",
            seed ^ 0x06,
            mismatches as f64,
            0.0,
            format!("{cases} randomized cases"),
        ));
    }

    // Shift-mask structure.
    {
        let mut bad = 0usize;
        let mut detail = String::new();
        for (h, m, s) in [(14usize, 7usize, 3usize), (28, 7, 3), (8, 4, 2), (28, 14, 7)] {
            if h > max_grid {
                continue;
            }
            match build_shift_mask(h, h, m, s) {
                Ok(mask) => {
                    let mut ids = std::collections::BTreeSet::new();
                    for y in 0..h {
                        for x in 0..h {
                            ids.insert(mask.region_id(y, x));
                        }
                    }
                    // At H = 2M the 3x3 slicing is fully populated; larger
                    // grids keep at most 9 regions.
                    if ids.len() > 9 || (h == 2 * m && ids.len() < 4) {
                        bad += 1;
                        detail = format!("grid {h} m {m} shift {s}: {} regions", ids.len());
                    }
                    let t = m * m;
                    for win in 0..mask.num_windows() {
                        for i in 0..t {
                            if mask.entry(win, i, i) != 0.0 {
                                bad += 1;
                            }
                            for j in 0..i {
                                if mask.entry(win, i, j) != mask.entry(win, j, i) {
                                    bad += 1;
                                }
                            }
                        }
                    }
                }
                Err(_) => bad += 1,
            }
        }
        outcomes.push(outcome("shift_mask_structure", seed, bad as f64, 0.0, detail));
    }

    // Relative-position index translation invariance, exhaustive for M <= 7.
    {
        let mut bad = 0usize;
        for m in 1..=7usize {
            let idx = crate::windowing::relative_position_index(m);
            let t = m * m;
            let side = 2 * m - 1;
            for i in 0..t {
                for j in 0..t {
                    let dy = i / m + m - 1 - j / m;
                    let dx = i % m + m - 1 - j % m;
                    if idx.get(i, j) != dy * side + dx {
                        bad += 1;
                    }
                }
            }
            if idx.get(0, 0) != idx.get(t - 1, t - 1) {
                bad += 1;
            }
        }
        outcomes.push(outcome("relpos_translation_invariance", seed, bad as f64, 0.0, String::new()));
    }

    // Attention rows sum to one, masked or not.
    {
        let mut rng = Rng::new(seed ^ 0x08);
        let mut worst = 0.0f64;
        for round in 0..10 {
            let (h, m, c, heads) = (8usize, 4usize, 8usize, 2usize);
            let p = AttentionParams::<f64>::init(c, heads, m, &mut rng).expect("valid");
            let g = FeatureGrid::new(rng.uniform_tensor::<f64>(&[1, h, h, c])).expect("rank 4");
            let ws = window_partition(&g, m).expect("divisible");
            let mask = if round % 2 == 0 {
                None
            } else {
                Some(build_shift_mask(h, h, m, 2).expect("valid"))
            };
            let rows = attention_scores_for_verification(&ws, &p, mask.as_ref())
                .expect("geometry agrees");
            let t = m * m;
            for row in rows.chunks(t) {
                let sum: f64 = row.iter().sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
        outcomes.push(outcome("attention_rows_sum_to_one", seed ^ 0x08, worst, 1e-6, String::new()));
    }

    // Permuting windows permutes outputs.
    {
        let mut rng = Rng::new(seed ^ 0x09);
        let mut mismatches = 0usize;
        for _ in 0..5 {
            let (h, m, c, heads) = (8usize, 4usize, 6usize, 2usize);
            let p = AttentionParams::<f64>::init(c, heads, m, &mut rng).expect("valid");
            let g = FeatureGrid::new(rng.uniform_tensor::<f64>(&[1, h, h, c])).expect("rank 4");
            let ws = window_partition(&g, m).expect("divisible");
            let out = window_attention_forward(&ws, &p, None).expect("forward");
            let stride = ws.tokens_per_window() * c;
            let mut swapped = ws.windows().clone();
            for k in 0..stride {
                swapped.data_mut().swap(k, stride + k);
            }
            let out2 = window_attention_forward(&ws.with_windows(swapped).expect("same shape"), &p, None)
                .expect("forward");
            for k in 0..stride {
                if out.windows().data()[k] != out2.windows().data()[stride + k]
                    || out.windows().data()[stride + k] != out2.windows().data()[k]
                {
                    mismatches += 1;
                }
            }
        }
        outcomes.push(outcome("window_permutation_equivariance", seed ^ 0x09, mismatches as f64, 0.0, String::new()));
    }

    // Shifted block with shift=0 equals size-varying block bitwise.
    {
        let mut rng = Rng::new(seed ^ 0x0a);
        let mut mismatches = 0usize;
        for _ in 0..5 {
            let g = FeatureGrid::new(rng.uniform_tensor::<f64>(&[1, 8, 8, 6])).expect("rank 4");
            let bp = BlockParams::<f64>::init(
                6,
                2,
                4,
                false,
                NormKind::Layer,
                Activation::Gelu,
                &mut rng,
            )
            .expect("valid");
            let a = block_forward(&g, &bp, WindowMode::Shifted).expect("forward");
            let b = block_forward(&g, &bp, WindowMode::SizeVarying).expect("forward");
            if a != b {
                mismatches += 1;
            }
        }
        outcomes.push(outcome("shift_zero_mode_equivalence", seed ^ 0x0a, mismatches as f64, 0.0, String::new()));
    }

    // Windowed attention with N=1 equals dense global attention.
    {
        let mut worst = 0.0f64;
        for round in 0..ORACLE_SEED_ROUNDS as u64 {
            let mut rng = Rng::new((seed ^ 0x0b).wrapping_add(round));
            let (m, c, heads) = (7usize, 8usize, 2usize);
            let p = AttentionParams::<f64>::init(c, heads, m, &mut rng).expect("valid");
            let g = FeatureGrid::new(rng.uniform_tensor::<f64>(&[1, m, m, c])).expect("rank 4");
            let ws = window_partition(&g, m).expect("single window");
            let fast = window_attention_forward(&ws, &p, None).expect("forward");
            let tokens = ws.windows().clone().reshape(&[m * m, c]).expect("reshape");
            let oracle = global_attention_oracle(&tokens, &p).expect("oracle");
            let fast_flat = fast.windows().clone().reshape(&[m * m, c]).expect("reshape");
            worst = worst.max(fast_flat.max_abs_diff(&oracle));
        }
        outcomes.push(outcome(
            "global_oracle_single_window",
            seed ^ 0x0b,
            worst,
            1e-10,
            format!("{ORACLE_SEED_ROUNDS} seeds, M=7, N=1"),
        ));
    }

    // Mask-based shifted path equals the group-wise oracle; f64 at 1e-10,
    // f32 fast path against the f64 oracle at 1e-5.
    {
        let mut worst64 = 0.0f64;
        let mut worst32 = 0.0f64;
        for round in 0..ORACLE_SEED_ROUNDS as u64 {
            let mut rng = Rng::new((seed ^ 0x0c).wrapping_add(round));
            let (h, m, s, c, heads) = (14usize, 7usize, 3usize, 8usize, 2usize);
            let p = AttentionParams::<f64>::init(c, heads, m, &mut rng).expect("valid");
            let g = FeatureGrid::new(rng.uniform_tensor::<f64>(&[1, h, h, c])).expect("rank 4");

            // Fast path: roll, partition, masked attention, reverse, unroll.
            let fast = {
                let rolled = cyclic_shift(&g, s as i64, s as i64);
                let ws = window_partition(&rolled, m).expect("divisible");
                let mask = build_shift_mask(h, h, m, s).expect("valid");
                let attended = window_attention_forward(&ws, &p, Some(&mask)).expect("forward");
                cyclic_shift(
                    &window_reverse(&attended, h, h).expect("consistent"),
                    -(s as i64),
                    -(s as i64),
                )
            };
            let oracle = masked_group_oracle(&g, m, s, &p).expect("oracle");
            worst64 = worst64.max(fast.values().max_abs_diff(oracle.values()));

            // f32 fast path against the same f64 oracle.
            let fast32 = {
                let g32 = FeatureGrid::new(g.values().narrow()).expect("rank 4");
                let p32 = AttentionParams::<f32> {
                    qkv_weight: p.qkv_weight.narrow(),
                    qkv_bias: p.qkv_bias.narrow(),
                    proj_weight: p.proj_weight.narrow(),
                    proj_bias: p.proj_bias.narrow(),
                    bias_table: p.bias_table.narrow(),
                    rel_index: p.rel_index.clone(),
                    num_heads: p.num_heads,
                };
                let rolled = cyclic_shift(&g32, s as i64, s as i64);
                let ws = window_partition(&rolled, m).expect("divisible");
                let mask = build_shift_mask(h, h, m, s).expect("valid");
                let attended = window_attention_forward(&ws, &p32, Some(&mask)).expect("forward");
                cyclic_shift(
                    &window_reverse(&attended, h, h).expect("consistent"),
                    -(s as i64),
                    -(s as i64),
                )
            };
            worst32 = worst32.max(fast32.values().widen().max_abs_diff(oracle.values()));
        }
        outcomes.push(outcome(
            "masked_group_oracle_f64",
            seed ^ 0x0c,
            worst64,
            1e-10,
            format!("{ORACLE_SEED_ROUNDS} seeds, 14x14 M=7 shift=3"),
        ));
        outcomes.push(outcome(
            "masked_group_oracle_f32",
            seed ^ 0x0c,
            worst32,
            1e-5,
            "f32 fast path vs f64 oracle".into(),
        ));
    }

    // Analytic attention backward vs central finite differences.
    {
        let mut worst = 0.0f64;
        for round in 0..ORACLE_SEED_ROUNDS as u64 {
            let mut rng = Rng::new((seed ^ 0x0d).wrapping_add(round));
            let (m, c, heads) = (2usize, 4usize, 2usize);
            let p = AttentionParams::<f64>::init(c, heads, m, &mut rng).expect("valid");
            let g = FeatureGrid::new(rng.uniform_tensor::<f64>(&[1, m, m, c])).expect("rank 4");
            let ws = window_partition(&g, m).expect("single window");
            let upstream = rng.uniform_tensor::<f64>(&[1, m * m, c]);
            let grads = window_attention_backward(&ws, &p, None, &upstream).expect("backward");
            let loss = |w: &crate::windowing::WindowSet<f64>, p: &AttentionParams<f64>| -> f64 {
                window_attention_forward(w, p, None)
                    .expect("forward")
                    .windows()
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let h = 1e-5;
            let mut check = |analytic: &Tensor<f64>, numeric: &Tensor<f64>| {
                for (a, n) in analytic.data().iter().zip(numeric.data()) {
                    worst = worst.max((a - n).abs() / n.abs().max(1e-6));
                }
            };
            check(
                &grads.input,
                &finite_diff_grad(|x| loss(&ws.with_windows(x.clone()).expect("same shape"), &p), ws.windows(), h),
            );
            check(
                &grads.qkv_weight,
                &finite_diff_grad(
                    |x| {
                        let mut p2 = p.clone();
                        p2.qkv_weight = x.clone();
                        loss(&ws, &p2)
                    },
                    &p.qkv_weight,
                    h,
                ),
            );
            check(
                &grads.bias_table,
                &finite_diff_grad(
                    |x| {
                        let mut p2 = p.clone();
                        p2.bias_table = x.clone();
                        loss(&ws, &p2)
                    },
                    &p.bias_table,
                    h,
                ),
            );
            check(
                &grads.proj_weight,
                &finite_diff_grad(
                    |x| {
                        let mut p2 = p.clone();
                        p2.proj_weight = x.clone();
                        loss(&ws, &p2)
                    },
                    &p.proj_weight,
                    h,
                ),
            );
        }
        outcomes.push(outcome(
            "attention_gradient_check",
            seed ^ 0x0d,
            worst,
            1e-4,
            format!("{ORACLE_SEED_ROUNDS} seeds, M=2 C=4 heads=2"),
        ));
    }

    // Connectivity component counts.
    {
        let mut bad = 0usize;
        let mut detail = String::new();
        let mut expect = |blocks: &[(usize, bool)], h: usize, w: usize, want: usize| {
            match connectivity_graph(blocks, h, w) {
                Ok(g) => {
                    if g.component_count() != want {
                        bad += 1;
                        detail = format!(
                            "blocks {blocks:?} on {h}x{w}: {} components, expected {want}",
                            g.component_count()
                        );
                    }
                }
                Err(_) => bad += 1,
            }
        };
        expect(&[(7, false)], 14, 14, 4);
        expect(&[(7, false), (14, false)], 14, 14, 1);
        expect(&[(7, false), (7, true)], 14, 14, 1);
        // Size-varying preset: per-stage component count equals N.
        let free = ModelConfig::swin_free(Variant::Base);
        for (s, trace) in free.stage_trace().iter().enumerate() {
            let side = trace.patch_side;
            if side > max_grid && s == 0 {
                continue; // 56x56 stage runs in full scope only
            }
            let blocks: Vec<(usize, bool)> = vec![(trace.window, false); free.depths[s]];
            expect(&blocks, side, side, trace.num_windows);
        }
        // No-shift constant-M ablation: stage 3 stays split in 4 pieces.
        expect(&[(7, false); 18], 14, 14, 4);
        outcomes.push(outcome("connectivity_components", seed, bad as f64, 0.0, detail));
    }

    // 224-input stage trace (full scope): every (P, M, N) cell for both
    // families.
    if scope == Scope::Full {
        let mut bad = 0usize;
        let swin = ModelConfig::swin(Variant::Base).stage_trace();
        let free = ModelConfig::swin_free(Variant::Base).stage_trace();
        let want: [(usize, usize, usize, usize, usize); 4] = [
            (56, 7, 64, 7, 64),
            (28, 7, 16, 14, 4),
            (14, 7, 4, 14, 1),
            (7, 7, 1, 7, 1),
        ];
        for (s, &(p, m_s, n_s, m_f, n_f)) in want.iter().enumerate() {
            if swin[s].patch_side != p
                || swin[s].window != m_s
                || swin[s].num_windows != n_s
                || free[s].patch_side != p
                || free[s].window != m_f
                || free[s].num_windows != n_f
            {
                bad += 1;
            }
        }
        outcomes.push(outcome("stage_trace_224", seed, bad as f64, 0.0, String::new()));
    }

    // Shift-traffic closed form.
    {
        let mut bad = 0usize;
        let mut detail = String::new();
        let swin_b = count_shift_traffic(&ModelConfig::swin(Variant::Base));
        if swin_b != 3_010_560 {
            bad += 1;
            detail = format!("swin-B traffic {swin_b}, expected 3010560");
        }
        for v in [Variant::Tiny, Variant::Small, Variant::Base] {
            if count_shift_traffic(&ModelConfig::swin_free(v)) != 0 {
                bad += 1;
            }
        }
        outcomes.push(outcome("shift_traffic_closed_form", seed, bad as f64, 0.0, detail));
    }

    // FLOP ordering: DRx monotone, BR does not increase the MAC count.
    {
        let mut bad = 0usize;
        let base = ModelConfig::swin_free(Variant::Base);
        let mut prev = 0u64;
        for x in [10, 12, 14, 16] {
            let f = count_flops(&base.clone().with_stage3_depth(x));
            if f <= prev {
                bad += 1;
            }
            prev = f;
        }
        if count_flops(&base) <= prev {
            bad += 1;
        }
        if count_flops(&base.clone().with_batch_relu()) > count_flops(&base) {
            bad += 1;
        }
        outcomes.push(outcome("flops_ordering", seed, bad as f64, 0.0, String::new()));
    }

    // Closed-form parameter count matches a built model; BR parity; DRx order.
    {
        let mut bad = 0usize;
        let mut detail = String::new();
        let cfg = small_suite_config();
        let built = count_params(&build_model::<f32>(&cfg, seed).expect("valid config"));
        let closed = param_count(&cfg);
        if built != closed {
            bad += 1;
            detail = format!("built {built} vs closed-form {closed}");
        }
        let base = ModelConfig::swin_free(Variant::Base);
        if param_count(&base.clone().with_batch_relu()) != param_count(&base) {
            bad += 1;
        }
        let mut prev = 0u64;
        for x in [10, 12, 14, 16] {
            let p = param_count(&base.clone().with_stage3_depth(x));
            if p <= prev {
                bad += 1;
            }
            prev = p;
        }
        if param_count(&base) <= prev {
            bad += 1;
        }
        outcomes.push(outcome("param_count_consistency", seed, bad as f64, 0.0, detail));
    }

    // Model forward determinism.
    {
        let cfg = small_suite_config();
        let mut bad = 0usize;
        let params = build_model::<f32>(&cfg, seed).expect("valid config");
        let params2 = build_model::<f32>(&cfg, seed).expect("valid config");
        let mut rng = Rng::new(seed ^ 0x10);
        let img = rng.uniform_tensor::<f32>(&[1, 3, cfg.img_size, cfg.img_size]);
        let a = model_forward(&params, &img).expect("forward");
        let b = model_forward(&params2, &img).expect("forward");
        if a != b {
            bad += 1;
        }
        if !a.all_finite() {
            bad += 1;
        }
        outcomes.push(outcome("model_forward_determinism", seed ^ 0x10, bad as f64, 0.0, String::new()));
    }

    SuiteReport {
        scope: scope.name().into(),
        seed,
        outcomes,
    }
}

/// Small all-stage configuration used by suite-internal model checks.
fn small_suite_config() -> ModelConfig {
    ModelConfig {
        name: "suite-small".into(),
        img_size: 32,
        patch_size: 4,
        embed_dim: 8,
        depths: [1, 1, 2, 1],
        heads: [2, 2, 2, 2],
        window_sizes: [2, 2, 2, 1],
        stage_shift: [true, true, true, true],
        mode: WindowMode::Shifted,
        norm: NormKind::Layer,
        act: Activation::Gelu,
        num_classes: 10,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_oracle_single_token() {
        // T=1: attention weight is 1; output is proj(V) of the single token.
        let mut rng = Rng::new(1);
        let p = AttentionParams::<f64>::init(4, 2, 1, &mut rng).unwrap();
        let tokens = rng.uniform_tensor::<f64>(&[1, 4]);
        let out = global_attention_oracle(&tokens, &p).unwrap();

        // Hand-compute proj(V).
        let mut v = [0.0f64; 4];
        for (o, vo) in v.iter_mut().enumerate() {
            let mut acc = p.qkv_bias.data()[8 + o];
            for k in 0..4 {
                acc += tokens.data()[k] * p.qkv_weight.data()[k * 12 + 8 + o];
            }
            *vo = acc;
        }
        for o in 0..4 {
            let mut acc = p.proj_bias.data()[o];
            for k in 0..4 {
                acc += v[k] * p.proj_weight.data()[k * 4 + o];
            }
            assert!((out.data()[o] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn global_oracle_uniform_qk_gives_uniform_weights() {
        // Zero qkv weights -> all logits equal the bias at each delta; with a
        // zero table every attention weight is 1/T, so the context is the
        // token-mean of V = bias = 0, output = proj_bias.
        let m = 2;
        let p = AttentionParams::<f64> {
            qkv_weight: Tensor::zeros(&[4, 12]),
            qkv_bias: Tensor::zeros(&[12]),
            proj_weight: Tensor::zeros(&[4, 4]),
            proj_bias: Tensor::new(&[4], vec![1.0, -1.0, 0.5, 2.0]).unwrap(),
            bias_table: Tensor::zeros(&[9, 2]),
            rel_index: crate::windowing::relative_position_index(m),
            num_heads: 2,
        };
        let mut rng = Rng::new(2);
        let tokens = rng.uniform_tensor::<f64>(&[4, 4]);
        let out = global_attention_oracle(&tokens, &p).unwrap();
        for tok in out.data().chunks(4) {
            assert_eq!(tok, p.proj_bias.data());
        }
    }

    #[test]
    fn fast_path_matches_global_oracle_at_n1() {
        let mut rng = Rng::new(3);
        let (m, c) = (7, 8);
        let p = AttentionParams::<f64>::init(c, 2, m, &mut rng).unwrap();
        let g = FeatureGrid::new(rng.uniform_tensor::<f64>(&[1, m, m, c])).unwrap();
        let ws = window_partition(&g, m).unwrap();
        let fast = window_attention_forward(&ws, &p, None).unwrap();
        let tokens = ws.windows().clone().reshape(&[m * m, c]).unwrap();
        let oracle = global_attention_oracle(&tokens, &p).unwrap();
        let fast_flat = fast.windows().clone().reshape(&[m * m, c]).unwrap();
        assert!(fast_flat.max_abs_diff(&oracle) < 1e-10);
    }

    #[test]
    fn group_oracle_matches_masked_path() {
        let mut rng = Rng::new(4);
        let (h, m, s, c) = (14, 7, 3, 8);
        let p = AttentionParams::<f64>::init(c, 2, m, &mut rng).unwrap();
        let g = FeatureGrid::new(rng.uniform_tensor::<f64>(&[1, h, h, c])).unwrap();
        let rolled = cyclic_shift(&g, s as i64, s as i64);
        let ws = window_partition(&rolled, m).unwrap();
        let mask = build_shift_mask(h, h, m, s).unwrap();
        let attended = window_attention_forward(&ws, &p, Some(&mask)).unwrap();
        let fast = cyclic_shift(
            &window_reverse(&attended, h, h).unwrap(),
            -(s as i64),
            -(s as i64),
        );
        let oracle = masked_group_oracle(&g, m, s, &p).unwrap();
        assert!(fast.values().max_abs_diff(oracle.values()) < 1e-10);
    }

    #[test]
    fn group_oracle_shift_zero_is_per_window_dense() {
        let mut rng = Rng::new(5);
        let (h, m, c) = (8, 4, 4);
        let p = AttentionParams::<f64>::init(c, 2, m, &mut rng).unwrap();
        let g = FeatureGrid::new(rng.uniform_tensor::<f64>(&[1, h, h, c])).unwrap();
        let oracle = masked_group_oracle(&g, m, 0, &p).unwrap();
        let ws = window_partition(&g, m).unwrap();
        let fast = window_reverse(&window_attention_forward(&ws, &p, None).unwrap(), h, h).unwrap();
        assert!(oracle.values().max_abs_diff(fast.values()) < 1e-10);
    }

    #[test]
    fn connectivity_examples() {
        // One unshifted block of M=7 on 14x14 leaves 4 islands.
        let g = connectivity_graph(&[(7, false)], 14, 14).unwrap();
        assert_eq!(g.component_count(), 4);
        // Adding the size-varying bridge or the shifted pair merges them.
        let g = connectivity_graph(&[(7, false), (14, false)], 14, 14).unwrap();
        assert_eq!(g.component_count(), 1);
        let g = connectivity_graph(&[(7, false), (7, true)], 14, 14).unwrap();
        assert_eq!(g.component_count(), 1);
    }

    #[test]
    fn connectivity_adjacency_is_reflexive_symmetric() {
        let g = connectivity_graph(&[(7, false), (7, true)], 14, 14).unwrap();
        for tok in [0usize, 7, 95, 195] {
            assert!(g.adjacent(tok, tok));
        }
        for (a, b) in [(0usize, 3usize), (0, 12), (40, 160)] {
            assert_eq!(g.adjacent(a, b), g.adjacent(b, a));
        }
    }

    #[test]
    fn connectivity_shifted_uses_rolled_windows() {
        // Single shifted block: token (0,0) sits in the same rolled window as
        // (10,10) for M=7, shift=3 (rolled coords both in the bottom-right
        // window), but not the same unshifted window.
        let shifted = connectivity_graph(&[(7, true)], 14, 14).unwrap();
        let unshifted = connectivity_graph(&[(7, false)], 14, 14).unwrap();
        let t = |y: usize, x: usize| y * 14 + x;
        assert!(shifted.adjacent(t(0, 0), t(12, 12)));
        assert!(!unshifted.adjacent(t(0, 0), t(12, 12)));
    }

    #[test]
    fn suite_passes_and_is_deterministic() {
        let a = run_property_suite(Scope::Quick, 2024);
        assert!(a.all_passed(), "failures:\n{}", a.to_text());
        let b = run_property_suite(Scope::Quick, 2024);
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn mutated_softmax_is_flagged() {
        // A sign-flipped softmax must fail the normalization property.
        let bad = softmax_normalization_property(7, &|x| softmax_lastdim(x).scale(-1.0));
        assert!(!bad.passed);
        let good = softmax_normalization_property(7, &|x| softmax_lastdim(x));
        assert!(good.passed);
    }

    #[test]
    fn report_serializes_with_failures_listed() {
        let report = run_property_suite(Scope::Quick, 7);
        let json = report.to_json();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(
            parsed["outcomes"].as_array().unwrap().len(),
            report.outcomes.len()
        );
        assert!(report.to_text().contains("PASS"));
    }
}
