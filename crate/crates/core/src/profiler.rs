//! Analytic and measured cost accounting: parameters, FLOPs, shift-induced
//! memory traffic, and wall-clock benchmarks with a per-operation breakdown.
//!
//! The headline FLOP figure counts one multiply-accumulate as one FLOP and
//! covers matmuls only (patch embed, QKV, attention matmuls, projection,
//! MLP, merges, head); norms, softmax and activations are elementwise and
//! reported through the wall-clock breakdown instead. Wall-clock assertions
//! are structural only — never absolute milliseconds.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{model_forward_recorded, ModelConfig, ModelParams, NUM_STAGES};
use crate::numerics::Tensor;
use crate::trace::{OpClass, OpRecorder};

/// Headline MAC-count sources, per operation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopBreakdown {
    pub embed: u64,
    pub qkv: u64,
    pub attn_matmul: u64,
    pub proj: u64,
    pub mlp: u64,
    pub merge: u64,
    pub head: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.embed + self.qkv + self.attn_matmul + self.proj + self.mlp + self.merge + self.head
    }
}

/// Closed-form per-family MAC counts for a configuration.
pub fn flop_breakdown(cfg: &ModelConfig) -> FlopBreakdown {
    let g0 = (cfg.img_size / cfg.patch_size) as u64;
    let e = cfg.embed_dim as u64;
    let patch = cfg.patch_size as u64;
    let mut b = FlopBreakdown {
        embed: g0 * g0 * (patch * patch * 3) * e,
        qkv: 0,
        attn_matmul: 0,
        proj: 0,
        mlp: 0,
        merge: 0,
        head: 0,
    };
    for s in 0..NUM_STAGES {
        let side = cfg.grid_side(s) as u64;
        let hw = side * side;
        let c = cfg.stage_channels(s) as u64;
        let m = cfg.window_sizes[s] as u64;
        let depth = cfg.depths[s] as u64;
        b.qkv += depth * hw * 3 * c * c;
        // QK^T and A.V together: 2 * HW * M^2 * C per block.
        b.attn_matmul += depth * 2 * hw * m * m * c;
        b.proj += depth * hw * c * c;
        b.mlp += depth * 8 * hw * c * c;
        if s + 1 < NUM_STAGES {
            let half = side / 2;
            b.merge += half * half * (4 * c) * (2 * c);
        }
    }
    let c_last = cfg.stage_channels(NUM_STAGES - 1) as u64;
    b.head = c_last * cfg.num_classes as u64;
    b
}

/// Headline FLOP count (MAC = 1), matmuls only.
pub fn count_flops(cfg: &ModelConfig) -> u64 {
    flop_breakdown(cfg).total()
}

/// Closed-form learnable-parameter count; equals
/// [`crate::model::count_params`] on the built model.
pub fn param_count(cfg: &ModelConfig) -> u64 {
    let e = cfg.embed_dim as u64;
    let patch = cfg.patch_size as u64;
    let mut total = patch * patch * 3 * e + e + 2 * e;
    for s in 0..NUM_STAGES {
        let c = cfg.stage_channels(s) as u64;
        let m = cfg.window_sizes[s] as u64;
        let heads = cfg.heads[s] as u64;
        let table = (2 * m - 1) * (2 * m - 1) * heads;
        let block = 12 * c * c + 13 * c + table;
        total += cfg.depths[s] as u64 * block;
        if s + 1 < NUM_STAGES {
            total += 8 * c * c + 8 * c;
        }
    }
    let c_last = cfg.stage_channels(NUM_STAGES - 1) as u64;
    total + 2 * c_last + c_last * cfg.num_classes as u64 + cfg.num_classes as u64
}

/// Grid elements moved by cyclic shifts over one forward pass, roll and
/// inverse roll both counted: `sum over shifted blocks of 2 * H * W * C`.
/// Zero for any size-varying configuration.
pub fn count_shift_traffic(cfg: &ModelConfig) -> u64 {
    let mut total = 0u64;
    for s in 0..NUM_STAGES {
        let side = cfg.grid_side(s) as u64;
        let c = cfg.stage_channels(s) as u64;
        let shifted_blocks = cfg.shift_pattern(s).iter().filter(|&&b| b).count() as u64;
        total += shifted_blocks * 2 * side * side * c;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub runs: usize,
}

/// Cost report for one configuration. Analytic fields are exact; wall-clock
/// fields are present only after a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub name: String,
    pub params: u64,
    pub flops: u64,
    pub shift_elements: u64,
    /// Window count N per stage, one entry per attention call in forward
    /// order (measured when benched, analytic otherwise).
    pub attention_window_counts: Vec<usize>,
    pub wall_clock: Option<WallClock>,
    /// Mean milliseconds per forward attributed to each operation class.
    pub op_ms: BTreeMap<String, f64>,
    /// Same, as fractions of the mean forward time; sums to <= 1.
    pub op_fraction: BTreeMap<String, f64>,
}

impl ProfileReport {
    /// Closed-form report: no wall clock, window counts from the geometry.
    pub fn analytic(cfg: &ModelConfig) -> Self {
        let trace = cfg.stage_trace();
        let mut windows = Vec::new();
        for (s, t) in trace.iter().enumerate() {
            windows.extend(std::iter::repeat_n(t.num_windows, cfg.depths[s]));
        }
        ProfileReport {
            name: cfg.name.clone(),
            params: param_count(cfg),
            flops: count_flops(cfg),
            shift_elements: count_shift_traffic(cfg),
            attention_window_counts: windows,
            wall_clock: None,
            op_ms: BTreeMap::new(),
            op_fraction: BTreeMap::new(),
        }
    }

    /// Bytes moved by shifts for an element width (4 for f32).
    pub fn shift_bytes(&self, dtype_bytes: u64) -> u64 {
        self.shift_elements * dtype_bytes
    }

    /// Window counts grouped per stage (each stage contributes `depth`
    /// attention calls).
    pub fn stage_window_counts(&self, cfg: &ModelConfig) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(NUM_STAGES);
        let mut i = 0;
        for s in 0..NUM_STAGES {
            let d = cfg.depths[s];
            out.push(self.attention_window_counts[i..i + d].to_vec());
            i += d;
        }
        out
    }
}

/// Accumulating recorder behind [`bench_forward`].
#[derive(Default)]
pub struct BenchRecorder {
    totals: BTreeMap<OpClass, Duration>,
    window_counts: Vec<usize>,
}

impl BenchRecorder {
    fn reset_windows(&mut self) {
        self.window_counts.clear();
    }
}

impl OpRecorder for BenchRecorder {
    fn record(&mut self, op: OpClass, elapsed: Duration) {
        *self.totals.entry(op).or_default() += elapsed;
    }

    fn record_attention_windows(&mut self, num_windows: usize) {
        self.window_counts.push(num_windows);
    }
}

/// Runs `warmup` unmeasured and `runs` measured forward passes and fills the
/// report's wall-clock statistics and per-op attribution.
pub fn bench_forward(
    params: &ModelParams<f32>,
    input: &Tensor<f32>,
    runs: usize,
    warmup: usize,
) -> Result<ProfileReport> {
    if runs < 3 {
        return Err(Error::config(format!("bench needs >= 3 runs, got {runs}")));
    }
    if warmup < 1 {
        return Err(Error::config("bench needs >= 1 warmup run"));
    }

    for _ in 0..warmup {
        model_forward_recorded(params, input, &mut crate::trace::NullRecorder)?;
    }

    let mut rec = BenchRecorder::default();
    let mut run_ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        rec.reset_windows();
        let start = Instant::now();
        model_forward_recorded(params, input, &mut rec)?;
        run_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }

    let mean = run_ms.iter().sum::<f64>() / runs as f64;
    let var = run_ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / runs as f64;
    let mut report = ProfileReport::analytic(&params.cfg);
    report.wall_clock = Some(WallClock {
        mean_ms: mean,
        std_ms: var.sqrt(),
        runs,
    });
    report.attention_window_counts = rec.window_counts.clone();
    for op in OpClass::all() {
        let total = rec.totals.get(op).copied().unwrap_or_default();
        let per_run_ms = total.as_secs_f64() * 1e3 / runs as f64;
        report.op_ms.insert(op.name().into(), per_run_ms);
        report
            .op_fraction
            .insert(op.name().into(), if mean > 0.0 { per_run_ms / mean } else { 0.0 });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            "table" => Some(ReportFormat::Table),
            _ => None,
        }
    }
}

pub const CSV_HEADER: &str = "name,params,flops,shift_elements,wall_mean_ms,wall_std_ms";

/// Serializes reports with stable field ordering. The JSON form round-trips
/// losslessly through [`parse_json_reports`]; CSV uses the fixed header; the
/// table form renders a model-comparison table, with a delta row when
/// exactly two reports are given.
pub fn emit_report(reports: &[ProfileReport], format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => serde_json::to_vec_pretty(reports)
            .map_err(|e| Error::Format(format!("report encode: {e}"))),
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in reports {
                let (mean, std) = match &r.wall_clock {
                    Some(w) => (format!("{:.3}", w.mean_ms), format!("{:.3}", w.std_ms)),
                    None => (String::new(), String::new()),
                };
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.name, r.params, r.flops, r.shift_elements, mean, std
                ));
            }
            if let [a, b] = reports {
                out.push_str(&format!(
                    "delta({}-{}),{},{},{},,\n",
                    b.name,
                    a.name,
                    b.params as i64 - a.params as i64,
                    b.flops as i64 - a.flops as i64,
                    b.shift_elements as i64 - a.shift_elements as i64
                ));
            }
            Ok(out.into_bytes())
        }
        ReportFormat::Table => {
            let mut out = String::new();
            out.push_str(&format!(
                "{:<24} {:>10} {:>10} {:>14} {:>13} {:>12}\n",
                "model", "params(M)", "flops(G)", "shift_elems", "wall_mean_ms", "wall_std_ms"
            ));
            for r in reports {
                let (mean, std) = match &r.wall_clock {
                    Some(w) => (format!("{:.2}", w.mean_ms), format!("{:.2}", w.std_ms)),
                    None => ("-".into(), "-".into()),
                };
                out.push_str(&format!(
                    "{:<24} {:>10.1} {:>10.1} {:>14} {:>13} {:>12}\n",
                    r.name,
                    r.params as f64 / 1e6,
                    r.flops as f64 / 1e9,
                    r.shift_elements,
                    mean,
                    std
                ));
            }
            if let [a, b] = reports {
                out.push_str(&format!(
                    "{:<24} {:>10.1} {:>10.1} {:>14}\n",
                    format!("delta({}-{})", b.name, a.name),
                    (b.params as f64 - a.params as f64) / 1e6,
                    (b.flops as f64 - a.flops as f64) / 1e9,
                    b.shift_elements as i64 - a.shift_elements as i64
                ));
            }
            Ok(out.into_bytes())
        }
    }
}

pub fn parse_json_reports(bytes: &[u8]) -> Result<Vec<ProfileReport>> {
    serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("report parse: {e}")))
}
