//! Per-operation timing hooks for the profiler.
//!
//! Forward paths accept a `&mut dyn OpRecorder`; the plain entry points pass
//! [`NullRecorder`], which compiles down to nothing. The profiler installs a
//! real recorder to attribute wall-clock time to operation classes.

use std::time::{Duration, Instant};

/// Operation classes the benchmark breakdown attributes time to.
///
/// Cyclic-shift rolls and window partition/reverse reshapes are kept in
/// separate buckets so the cost of shifting proper can be read off directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpClass {
    Embed,
    Norm,
    Shift,
    WindowReshape,
    QkvProj,
    AttnMatmul,
    Softmax,
    OutProj,
    Mlp,
    Activation,
    Merge,
    Pool,
    Head,
}

impl OpClass {
    pub fn name(self) -> &'static str {
        match self {
            OpClass::Embed => "embed",
            OpClass::Norm => "norm",
            OpClass::Shift => "shift",
            OpClass::WindowReshape => "window_reshape",
            OpClass::QkvProj => "qkv_proj",
            OpClass::AttnMatmul => "attn_matmul",
            OpClass::Softmax => "softmax",
            OpClass::OutProj => "out_proj",
            OpClass::Mlp => "mlp",
            OpClass::Activation => "activation",
            OpClass::Merge => "merge",
            OpClass::Pool => "pool",
            OpClass::Head => "head",
        }
    }

    pub fn all() -> &'static [OpClass] {
        &[
            OpClass::Embed,
            OpClass::Norm,
            OpClass::Shift,
            OpClass::WindowReshape,
            OpClass::QkvProj,
            OpClass::AttnMatmul,
            OpClass::Softmax,
            OpClass::OutProj,
            OpClass::Mlp,
            OpClass::Activation,
            OpClass::Merge,
            OpClass::Pool,
            OpClass::Head,
        ]
    }
}

pub trait OpRecorder {
    fn record(&mut self, op: OpClass, elapsed: Duration);

    /// Called once per attention invocation with the window count N of that
    /// call (per image, batch-independent). Lets the profiler read off the
    /// per-stage window-batch geometry from a real forward pass.
    fn record_attention_windows(&mut self, _num_windows: usize) {}
}

/// Recorder that discards everything.
pub struct NullRecorder;

impl OpRecorder for NullRecorder {
    fn record(&mut self, _op: OpClass, _elapsed: Duration) {}
}

/// Times a closure and books it under `op`.
pub fn timed<T>(rec: &mut dyn OpRecorder, op: OpClass, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    rec.record(op, start.elapsed());
    out
}
