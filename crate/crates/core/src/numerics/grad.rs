use super::tensor::Tensor;

/// Central-difference gradient of a scalar function: per coordinate,
/// `(f(x + h e_i) - f(x - h e_i)) / 2h`. Verification paths only; f64.
pub fn finite_diff_grad(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64) -> Tensor<f64> {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}
