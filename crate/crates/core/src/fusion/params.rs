use serde::Serialize;

use super::config::{AblationFlags, FusionConfig};
use crate::error::Result;
use crate::params::{ParamKind, ParamSet};
use crate::tensor::{Real, RngState, Tensor};

type Named<'a, T> = Vec<(String, ParamKind, &'a Tensor<T>)>;
type RefsMut<'a, T> = Vec<(ParamKind, &'a mut Tensor<T>)>;

/// Affine map `y = x·Wᵀ + b` with `W: out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul_nt(&self.weight)?.add_row(&self.bias)
    }

    /// Accumulates weight/bias gradients into `grad` and returns `dx`.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut Self) -> Result<Tensor<T>> {
        grad.weight.add_assign(&dy.matmul_tn(x)?)?;
        grad.bias.add_assign(&dy.sum_rows())?;
        dy.matmul(&self.weight)
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Named<'a, T>) {
        out.push((format!("{name}.weight"), ParamKind::Weight, &self.weight));
        out.push((format!("{name}.bias"), ParamKind::Bias, &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, out: &mut RefsMut<'a, T>) {
        out.push((ParamKind::Weight, &mut self.weight));
        out.push((ParamKind::Bias, &mut self.bias));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm<T: Real> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Norm<T> {
    pub fn identity(d: usize) -> Self {
        Self {
            gain: Tensor::full(&[d], T::one()),
            bias: Tensor::zeros(&[d]),
        }
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Named<'a, T>) {
        out.push((format!("{name}.gain"), ParamKind::NormGain, &self.gain));
        out.push((format!("{name}.bias"), ParamKind::NormBias, &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, out: &mut RefsMut<'a, T>) {
        out.push((ParamKind::NormGain, &mut self.gain));
        out.push((ParamKind::NormBias, &mut self.bias));
    }
}

/// `LN(GELU(W·x + b))`
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T: Real> {
    pub linear: Linear<T>,
    pub norm: Norm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T: Real> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T: Real> {
    pub up: Linear<T>,
    pub down: Linear<T>,
}

/// One modality's half of a cross-attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBlock<T: Real> {
    /// Absent when the ablation removes this stream's attention.
    pub attention: Option<Attention<T>>,
    pub norm1: Norm<T>,
    pub ffn: FeedForward<T>,
    pub norm2: Norm<T>,
}

impl<T: Real> StreamBlock<T> {
    fn blank(width: usize, ffn_dim: usize, attends: bool) -> Self {
        Self {
            attention: attends.then(|| Attention {
                query: Linear::zeros(width, width),
                key: Linear::zeros(width, width),
                value: Linear::zeros(width, width),
                output: Linear::zeros(width, width),
            }),
            norm1: Norm::identity(width),
            ffn: FeedForward {
                up: Linear::zeros(ffn_dim, width),
                down: Linear::zeros(width, ffn_dim),
            },
            norm2: Norm::identity(width),
        }
    }

    fn collect<'a>(&'a self, name: &str, out: &mut Named<'a, T>) {
        if let Some(a) = &self.attention {
            a.query.collect(&format!("{name}.attn.query"), out);
            a.key.collect(&format!("{name}.attn.key"), out);
            a.value.collect(&format!("{name}.attn.value"), out);
            a.output.collect(&format!("{name}.attn.output"), out);
        }
        self.norm1.collect(&format!("{name}.norm1"), out);
        self.ffn.up.collect(&format!("{name}.ffn.up"), out);
        self.ffn.down.collect(&format!("{name}.ffn.down"), out);
        self.norm2.collect(&format!("{name}.norm2"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut RefsMut<'a, T>) {
        if let Some(a) = &mut self.attention {
            a.query.collect_mut(out);
            a.key.collect_mut(out);
            a.value.collect_mut(out);
            a.output.collect_mut(out);
        }
        self.norm1.collect_mut(out);
        self.ffn.up.collect_mut(out);
        self.ffn.down.collect_mut(out);
        self.norm2.collect_mut(out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossLayer<T: Real> {
    /// Vision queries text.
    pub vision: StreamBlock<T>,
    /// Text queries vision.
    pub text: StreamBlock<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head<T: Real> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

/// Every learnable tensor of the fusion network, together with the
/// architecture it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T: Real = f32> {
    pub config: FusionConfig,
    pub flags: AblationFlags,
    pub proj_v: Projection<T>,
    pub proj_t: Projection<T>,
    pub layers: Vec<CrossLayer<T>>,
    pub head: Head<T>,
}

impl<T: Real> FusionParams<T> {
    /// Correctly shaped parameters: all weights and biases zero, norm gains one.
    pub fn blank(config: &FusionConfig, flags: &AblationFlags) -> Result<Self> {
        config.validate(flags)?;
        let w = config.token_width();
        let proj = |d_in| Projection {
            linear: Linear::zeros(config.d_h, d_in),
            norm: Norm::identity(config.d_h),
        };
        let layers = (0..flags.effective_layers(config))
            .map(|_| CrossLayer {
                vision: StreamBlock::blank(w, config.ffn_dim, flags.vision_attends()),
                text: StreamBlock::blank(w, config.ffn_dim, flags.text_attends()),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            flags: *flags,
            proj_v: proj(config.d_v),
            proj_t: proj(config.d_t),
            layers,
            head: Head {
                hidden: Linear::zeros(config.head_hidden, flags.fusion_width(config.d_h)),
                output: Linear::zeros(config.out_dim, config.head_hidden),
            },
        })
    }

    /// Same structure with every entry zero; the shape of a gradient.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    pub fn cast<U: Real>(&self) -> FusionParams<U> {
        let mut out = FusionParams::<U>::blank(&self.config, &self.flags)
            .expect("config already validated");
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// Canonical tensor order with dotted names; this is the checkpoint order.
    pub fn named_tensors(&self) -> Named<'_, T> {
        let mut out = Vec::new();
        self.proj_v.linear.collect("proj_v.linear", &mut out);
        self.proj_v.norm.collect("proj_v.norm", &mut out);
        self.proj_t.linear.collect("proj_t.linear", &mut out);
        self.proj_t.norm.collect("proj_t.norm", &mut out);
        for (l, layer) in self.layers.iter().enumerate() {
            layer.vision.collect(&format!("layers.{l}.vision"), &mut out);
            layer.text.collect(&format!("layers.{l}.text"), &mut out);
        }
        self.head.hidden.collect("head.hidden", &mut out);
        self.head.output.collect("head.output", &mut out);
        out
    }

    /// Adds `other` into `self` tensor by tensor.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }
}

impl<T: Real> ParamSet<T> for FusionParams<T> {
    fn tensors(&self) -> Vec<(ParamKind, &Tensor<T>)> {
        self.named_tensors().into_iter().map(|(_, k, t)| (k, t)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.proj_v.linear.collect_mut(&mut out);
        self.proj_v.norm.collect_mut(&mut out);
        self.proj_t.linear.collect_mut(&mut out);
        self.proj_t.norm.collect_mut(&mut out);
        for layer in &mut self.layers {
            layer.vision.collect_mut(&mut out);
            layer.text.collect_mut(&mut out);
        }
        self.head.hidden.collect_mut(&mut out);
        self.head.output.collect_mut(&mut out);
        out
    }
}

/// Glorot-uniform weights, zero biases, unit norm gains.
pub fn init_params<T: Real>(
    config: &FusionConfig,
    flags: &AblationFlags,
    rng: &mut RngState,
) -> Result<FusionParams<T>> {
    let mut params = FusionParams::blank(config, flags)?;
    for (kind, t) in params.tensors_mut() {
        if kind != ParamKind::Weight {
            continue;
        }
        let (fan_out, fan_in) = (t.rows(), t.cols());
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let draws = rng.uniform(t.len());
        for (x, u) in t.data_mut().iter_mut().zip(draws) {
            *x = T::of((2.0 * u - 1.0) * bound);
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub projection: u64,
    pub attention: u64,
    pub head: u64,
    pub total: u64,
}

/// Closed-form parameter count, grouped as projection / attention / head.
pub fn count_params(config: &FusionConfig, flags: &AblationFlags) -> ParamCount {
    let (d_v, d_t, d_h) = (config.d_v as u64, config.d_t as u64, config.d_h as u64);
    let projection = (d_v * d_h + d_h) + (d_t * d_h + d_h) + 2 * (2 * d_h);

    let w = config.token_width() as u64;
    let f = config.ffn_dim as u64;
    let attn = 4 * (w * w + w);
    let block = 2 * w + (f * w + f) + (w * f + w) + 2 * w;
    let per_layer = 2 * block
        + attn * u64::from(flags.vision_attends())
        + attn * u64::from(flags.text_attends());
    let attention = flags.effective_layers(config) as u64 * per_layer;

    let fw = flags.fusion_width(config.d_h) as u64;
    let hh = config.head_hidden as u64;
    let o = config.out_dim as u64;
    let head = (fw * hh + hh) + (hh * o + o);

    ParamCount {
        projection,
        attention,
        head,
        total: projection + attention + head,
    }
}
