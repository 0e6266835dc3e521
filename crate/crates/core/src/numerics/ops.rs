use super::rng::Rng;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Softmax over the last axis, with max subtraction for stability.
pub fn softmax_lastdim<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.last_dim();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
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
    out
}

/// LayerNorm over the last axis: normalize to mean 0 / variance 1 (biased
/// variance), then apply the affine `gamma * xhat + beta`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let c = x.last_dim();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dim("layer_norm", x.shape(), gamma.shape()));
    }
    let inv_c = T::from_f64(1.0 / c as f64);
    let eps = T::from_f64(eps);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let mut mean = T::ZERO;
        for &v in row.iter() {
            mean += v;
        }
        mean = mean * inv_c;
        let mut var = T::ZERO;
        for &v in row.iter() {
            let d = v - mean;
            var += d * d;
        }
        var = var * inv_c;
        let inv_std = T::ONE / (var + eps).sqrt();
        for (v, (&g, &b)) in row.iter_mut().zip(gamma.data().iter().zip(beta.data())) {
            *v = (*v - mean) * inv_std * g + b;
        }
    }
    Ok(out)
}

/// Inference-mode BatchNorm over the channel (last) axis with fixed running
/// statistics: `gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn batch_norm_infer<T: Scalar>(
    x: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let c = x.last_dim();
    for t in [mean, var, gamma, beta] {
        if t.shape() != [c] {
            return Err(Error::dim("batch_norm_infer", x.shape(), t.shape()));
        }
    }
    if var.data().iter().any(|&v| v.to_f64() < 0.0) {
        return Err(Error::config("batch_norm_infer: negative variance"));
    }
    let eps = T::from_f64(eps);
    // Fold the statistics into one affine per channel.
    let scale: Vec<T> = var
        .data()
        .iter()
        .zip(gamma.data())
        .map(|(&v, &g)| g / (v + eps).sqrt())
        .collect();
    let shift: Vec<T> = mean
        .data()
        .iter()
        .zip(scale.iter().zip(beta.data()))
        .map(|(&m, (&s, &b))| b - m * s)
        .collect();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        for ((v, &s), &sh) in row.iter_mut().zip(&scale).zip(&shift) {
            *v = *v * s + sh;
        }
    }
    Ok(out)
}

/// Exact-Φ GELU: `x * Φ(x)` with the Gaussian CDF, not the tanh approximation.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    x.map(|v| v * half * (T::ONE + (v * inv_sqrt2).erf()))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.maximum(T::ZERO))
}

/// Default weight-init standard deviation.
pub const DEFAULT_INIT_STD: f64 = 0.02;

/// Samples N(0, std^2) truncated at ±2·std, by rejection. Draws happen in
/// f64 and are narrowed at the end, so f32 and f64 builds of the same seed
/// hold the same values up to rounding.
pub fn trunc_normal_init<T: Scalar>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
    assert!(std > 0.0, "trunc_normal_init requires std > 0");
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut pending: Option<f64> = None;
    for _ in 0..numel {
        let z = loop {
            let z = match pending.take() {
                Some(z) => z,
                None => {
                    let (a, b) = rng.normal_pair();
                    pending = Some(b);
                    a
                }
            };
            if z.abs() <= 2.0 {
                break z;
            }
        };
        data.push(T::from_f64(z * std));
    }
    Tensor::new(shape, data).expect("consistent shape")
}
