use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function: `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h`.
pub fn finite_difference_gradient<T: Real>(
    mut f: impl FnMut(&Tensor<T>) -> f64,
    x: &Tensor<T>,
    h: f64,
) -> Result<Tensor<T>> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::of(orig.f64() + h);
        let plus = f(&probe);
        probe.data_mut()[i] = T::of(orig.f64() - h);
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure { coordinate: i });
        }
        grad.data_mut()[i] = T::of((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}
