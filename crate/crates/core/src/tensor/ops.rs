use super::{Real, RngState, Tensor};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

const NORM_TOLERANCE: f64 = 1e-12;

/// Exact GELU: `x·Φ(x)` with Φ evaluated through erf.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

/// Elementwise derivative `Φ(x) + x·φ(x)`.
pub fn gelu_grad<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_grad_scalar)
}

pub(crate) fn gelu_scalar<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt()) * (-(x * x) * half).exp();
    cdf + x * pdf
}

/// What `layer_norm_backward` needs from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormCache<T: Real> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Per-row normalization (biased variance) followed by `gain ⊙ x̂ + bias`.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.cols();
    if d < 2 {
        return Err(Error::DegenerateInput(format!(
            "layer_norm needs at least 2 features, got {d}"
        )));
    }
    if gain.len() != d || bias.len() != d {
        return Err(Error::dim("layer_norm", x.shape(), gain.shape()));
    }
    let rows = x.len() / d;
    let inv_d = T::of(1.0 / d as f64);
    let eps = T::of(eps);
    let mut normalized = x.clone();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
        let istd = T::one() / (var + eps).sqrt();
        inv_std.push(istd);
        let n_row = normalized.row_mut(r);
        for (n, &v) in n_row.iter_mut().zip(row) {
            *n = (v - mean) * istd;
        }
        let n_row = normalized.row(r);
        let o_row = out.row_mut(r);
        for j in 0..d {
            o_row[j] = gain.data()[j] * n_row[j] + bias.data()[j];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<T: Real>(
    dy: &Tensor<T>,
    cache: &LayerNormCache<T>,
    gain: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if dy.shape() != cache.normalized.shape() {
        return Err(Error::dim("layer_norm_backward", dy.shape(), cache.normalized.shape()));
    }
    let d = dy.cols();
    let rows = dy.len() / d;
    let inv_d = T::of(1.0 / d as f64);
    let mut dx = dy.clone();
    let mut dgain = vec![T::zero(); d];
    let mut dbias = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let g = dy.row(r);
        let xh = cache.normalized.row(r);
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..d {
            dgain[j] = dgain[j] + g[j] * xh[j];
            dbias[j] = dbias[j] + g[j];
            dxhat[j] = g[j] * gain.data()[j];
            sum_dxhat = sum_dxhat + dxhat[j];
            sum_dxhat_xhat = sum_dxhat_xhat + dxhat[j] * xh[j];
        }
        let istd = cache.inv_std[r];
        let out = dx.row_mut(r);
        for j in 0..d {
            out[j] = istd * (dxhat[j] - inv_d * sum_dxhat - xh[j] * inv_d * sum_dxhat_xhat);
        }
    }
    Ok((dx, Tensor::vector(dgain), Tensor::vector(dbias)))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.cols();
    let mut out = x.clone();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

pub fn l2_normalize<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let norm = x.sum_sq().sqrt();
    if !(norm > NORM_TOLERANCE) {
        return Err(Error::ZeroNorm { id: None });
    }
    let inv = 1.0 / norm;
    Ok(x.map(|v| T::of(v.f64() * inv)))
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1/(1-p)`.
pub fn dropout_mask<T: Real>(shape: &[usize], p: f64, rng: &mut RngState) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    let keep = T::of(1.0 / (1.0 - p));
    let n: usize = shape.iter().product();
    if p == 0.0 {
        return Ok(Tensor::full(shape, T::one()));
    }
    let draws = rng.uniform(n);
    let data = draws
        .into_iter()
        .map(|u| if u < p { T::zero() } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn dropout_apply<T: Real>(
    x: &Tensor<T>,
    p: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.shape(), p, rng)?;
    x.mul(&mask)
}
