use super::tensor::{Scalar, Tensor};

/// Deterministic 64-bit generator (splitmix64).
///
/// The algorithm is fixed on purpose: the same seed yields the same draw
/// sequence on every platform and in every build, which is what weight
/// initialization and the seeded verification suite rely on.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        // splitmix64 (Steele, Lea, Flood); full 2^64 period, equidistributed.
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform draw in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn next_usize(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }

    /// One standard-normal pair via Box–Muller.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        // u1 in (0,1] so the log stays finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Tensor with entries uniform in [-1, 1).
    pub fn uniform_tensor<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(self.uniform(-1.0, 1.0)))
            .collect();
        Tensor::new(shape, data).expect("consistent shape")
    }
}
