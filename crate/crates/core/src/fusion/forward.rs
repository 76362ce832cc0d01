use std::hash::Hasher;

use super::config::{AblationFlags, FusionConfig, FusionSegment, NormPlacement};
use super::params::{Attention, CrossLayer, FeedForward, FusionParams, Head, Projection, StreamBlock};
use crate::error::{Error, Result};
use crate::tensor::{
    dropout_mask, gelu, layer_norm, LayerNormCache, Real, RngState, Tensor, LN_EPS,
};

const UNIT_NORM_TOLERANCE: f64 = 1e-3;

/// Whether a pass samples dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut RngState),
}

impl<'a> Mode<'a> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub(crate) enum MaskSource<'a, T: Real> {
    Off,
    Sample { p: f64, rng: &'a mut RngState },
    Replay { masks: Vec<Option<&'a Tensor<T>>>, next: usize },
}

impl<'a, T: Real> MaskSource<'a, T> {
    fn draw(&mut self, shape: &[usize]) -> Result<Option<Tensor<T>>> {
        match self {
            MaskSource::Off => Ok(None),
            MaskSource::Sample { p, rng } => {
                if *p == 0.0 {
                    Ok(None)
                } else {
                    dropout_mask(shape, *p, rng).map(Some)
                }
            }
            MaskSource::Replay { masks, next } => {
                let m = masks
                    .get(*next)
                    .ok_or_else(|| Error::StaleTrace("trace has fewer dropout sites".into()))?;
                *next += 1;
                Ok(m.cloned())
            }
        }
    }
}

fn apply_mask<T: Real>(x: Tensor<T>, mask: &Option<Tensor<T>>) -> Result<Tensor<T>> {
    match mask {
        Some(m) => x.mul(m),
        None => Ok(x),
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionCache<T: Real> {
    pub input: Tensor<T>,
    pub pre: Tensor<T>,
    pub norm: LayerNormCache<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T: Real> {
    pub q_in: Tensor<T>,
    pub kv_in: Tensor<T>,
    /// Query/key projections; skipped with one token, where the single
    /// attention weight is exactly 1 and they cannot influence the output.
    pub q: Option<Tensor<T>>,
    pub k: Option<Tensor<T>>,
    pub v: Tensor<T>,
    /// Attention probabilities laid out `[pair][head][query][key]`.
    pub probs: Option<Vec<T>>,
    pub ctx: Tensor<T>,
    pub mask: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T: Real> {
    pub attention: Option<AttentionCache<T>>,
    /// Post-LN: norm of `x + MHA`. Pre-LN: norm of the block input.
    pub norm1: LayerNormCache<T>,
    pub ffn_in: Tensor<T>,
    pub ffn_pre: Tensor<T>,
    pub ffn_act: Tensor<T>,
    pub ffn_mask: Option<Tensor<T>>,
    /// Post-LN: norm of `x̃ + FFN`. Pre-LN: norm feeding the FFN.
    pub norm2: LayerNormCache<T>,
}

#[derive(Debug, Clone)]
pub struct LayerCache<T: Real> {
    pub vision: BlockCache<T>,
    pub text: BlockCache<T>,
}

#[derive(Debug, Clone)]
pub struct HeadCache<T: Real> {
    pub fused: Tensor<T>,
    pub pre: Tensor<T>,
    pub act: Tensor<T>,
    pub mask: Option<Tensor<T>>,
    pub hidden: Tensor<T>,
}

/// Activations and dropout masks recorded by [`forward`] for [`super::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Real> {
    pub signature: u64,
    pub rows: usize,
    pub proj_v: ProjectionCache<T>,
    pub proj_t: ProjectionCache<T>,
    pub layers: Vec<LayerCache<T>>,
    /// `h_v⁽ᴸ⁾`, `h_t⁽ᴸ⁾` as `rows × d_h`.
    pub final_v: Tensor<T>,
    pub final_t: Tensor<T>,
    pub head: HeadCache<T>,
    pub output: Tensor<T>,
}

impl<T: Real> ForwardTrace<T> {
    /// Dropout masks in the order the forward pass drew them.
    pub fn masks(&self) -> Vec<Option<&Tensor<T>>> {
        let mut out = Vec::new();
        for l in &self.layers {
            for b in [&l.vision, &l.text] {
                if let Some(a) = &b.attention {
                    out.push(a.mask.as_ref());
                }
                out.push(b.ffn_mask.as_ref());
            }
        }
        out.push(self.head.mask.as_ref());
        out
    }
}

/// Hash of the architecture a trace or parameter set belongs to.
pub fn structure_signature(config: &FusionConfig, flags: &AblationFlags) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(format!("{config:?}|{flags:?}").as_bytes());
    h.finish()
}

fn as_matrix<T: Real>(x: &Tensor<T>, width: usize, what: &'static str) -> Result<Tensor<T>> {
    if x.cols() != width || x.shape().len() > 2 || x.is_empty() {
        return Err(Error::dim(what, x.shape(), &[width]));
    }
    x.clone().reshape(&[x.len() / width, width])
}

fn check_unit_rows<T: Real>(x: &Tensor<T>) -> Result<()> {
    for r in 0..x.rows() {
        let norm = x.row(r).iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotUnitNorm { row: r, norm });
        }
    }
    Ok(())
}

fn ensure_finite<T: Real>(
    stage: &'static str,
    layer: Option<usize>,
    xs: &[&Tensor<T>],
) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFault { stage, layer })
    }
}

fn project_one<T: Real>(p: &Projection<T>, x: &Tensor<T>) -> Result<(Tensor<T>, ProjectionCache<T>)> {
    let pre = p.linear.forward(x)?;
    let (out, norm) = layer_norm(&gelu(&pre), &p.norm.gain, &p.norm.bias, LN_EPS)?;
    Ok((
        out,
        ProjectionCache {
            input: x.clone(),
            pre,
            norm,
        },
    ))
}

/// `LN(GELU(W·x + b))` for both modalities. Inputs are `rows × d` (or a
/// single vector) of unit-norm embeddings.
pub fn project<T: Real>(
    v: &Tensor<T>,
    t: &Tensor<T>,
    params: &FusionParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let v = as_matrix(v, params.config.d_v, "project(v)")?;
    let t = as_matrix(t, params.config.d_t, "project(t)")?;
    check_unit_rows(&v)?;
    check_unit_rows(&t)?;
    let (hv, _) = project_one(&params.proj_v, &v)?;
    let (ht, _) = project_one(&params.proj_t, &t)?;
    Ok((hv, ht))
}

fn attention_forward<T: Real>(
    a: &Attention<T>,
    q_in: &Tensor<T>,
    kv_in: &Tensor<T>,
    tokens: usize,
    heads: usize,
    masks: &mut MaskSource<'_, T>,
) -> Result<(Tensor<T>, AttentionCache<T>)> {
    let v = a.value.forward(kv_in)?;
    let (q, k, probs, ctx) = if tokens == 1 {
        (None, None, None, v.clone())
    } else {
        let q = a.query.forward(q_in)?;
        let k = a.key.forward(kv_in)?;
        let w = q.cols();
        let dk = w / heads;
        let scale = T::of(1.0 / (dk as f64).sqrt());
        let pairs = q.rows() / tokens;
        let mut probs = vec![T::zero(); pairs * heads * tokens * tokens];
        let mut ctx = Tensor::zeros(q.shape());
        let mut scores = vec![T::zero(); tokens];
        for n in 0..pairs {
            for h in 0..heads {
                let cols = h * dk..(h + 1) * dk;
                for i in 0..tokens {
                    let qi = &q.row(n * tokens + i)[cols.clone()];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &k.row(n * tokens + j)[cols.clone()];
                        let dot = qi.iter().zip(kj).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                        *s = dot * scale;
                    }
                    let max = scores.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
                    let mut sum = T::zero();
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        sum = sum + *s;
                    }
                    let base = ((n * heads + h) * tokens + i) * tokens;
                    for (j, s) in scores.iter().enumerate() {
                        probs[base + j] = *s / sum;
                    }
                    let out = &mut ctx.row_mut(n * tokens + i)[cols.clone()];
                    for j in 0..tokens {
                        let p = probs[base + j];
                        let vj = &v.row(n * tokens + j)[cols.clone()];
                        for (o, &x) in out.iter_mut().zip(vj) {
                            *o = *o + p * x;
                        }
                    }
                }
            }
        }
        (Some(q), Some(k), Some(probs), ctx)
    };
    let out = a.output.forward(&ctx)?;
    let mask = masks.draw(out.shape())?;
    let out = apply_mask(out, &mask)?;
    Ok((
        out,
        AttentionCache {
            q_in: q_in.clone(),
            kv_in: kv_in.clone(),
            q,
            k,
            v,
            probs,
            ctx,
            mask,
        },
    ))
}

struct FfnOut<T: Real> {
    out: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
    mask: Option<Tensor<T>>,
}

fn ffn_forward<T: Real>(
    f: &FeedForward<T>,
    x: &Tensor<T>,
    masks: &mut MaskSource<'_, T>,
) -> Result<FfnOut<T>> {
    let pre = f.up.forward(x)?;
    let act = gelu(&pre);
    let out = f.down.forward(&act)?;
    let mask = masks.draw(out.shape())?;
    Ok(FfnOut {
        out: apply_mask(out, &mask)?,
        pre,
        act,
        mask,
    })
}

fn block_post_ln<T: Real>(
    b: &StreamBlock<T>,
    x: &Tensor<T>,
    other: &Tensor<T>,
    config: &FusionConfig,
    masks: &mut MaskSource<'_, T>,
) -> Result<(Tensor<T>, BlockCache<T>)> {
    let (s1, attention) = match &b.attention {
        Some(a) => {
            let (out, c) = attention_forward(a, x, other, config.tokens(), config.heads, masks)?;
            (x.add(&out)?, Some(c))
        }
        None => (x.clone(), None),
    };
    let (x_tilde, norm1) = layer_norm(&s1, &b.norm1.gain, &b.norm1.bias, LN_EPS)?;
    let ffn = ffn_forward(&b.ffn, &x_tilde, masks)?;
    let s2 = x_tilde.add(&ffn.out)?;
    let (out, norm2) = layer_norm(&s2, &b.norm2.gain, &b.norm2.bias, LN_EPS)?;
    Ok((
        out,
        BlockCache {
            attention,
            norm1,
            ffn_in: x_tilde,
            ffn_pre: ffn.pre,
            ffn_act: ffn.act,
            ffn_mask: ffn.mask,
            norm2,
        },
    ))
}

fn block_pre_ln<T: Real>(
    b: &StreamBlock<T>,
    x: &Tensor<T>,
    normed_self: &Tensor<T>,
    normed_other: &Tensor<T>,
    norm1: LayerNormCache<T>,
    config: &FusionConfig,
    masks: &mut MaskSource<'_, T>,
) -> Result<(Tensor<T>, BlockCache<T>)> {
    let (s, attention) = match &b.attention {
        Some(a) => {
            let (out, c) =
                attention_forward(a, normed_self, normed_other, config.tokens(), config.heads, masks)?;
            (x.add(&out)?, Some(c))
        }
        None => (x.clone(), None),
    };
    let (n2, norm2) = layer_norm(&s, &b.norm2.gain, &b.norm2.bias, LN_EPS)?;
    let ffn = ffn_forward(&b.ffn, &n2, masks)?;
    let out = s.add(&ffn.out)?;
    Ok((
        out,
        BlockCache {
            attention,
            norm1,
            ffn_in: n2,
            ffn_pre: ffn.pre,
            ffn_act: ffn.act,
            ffn_mask: ffn.mask,
            norm2,
        },
    ))
}

pub(crate) fn layer_forward<T: Real>(
    layer: &CrossLayer<T>,
    h_v: &Tensor<T>,
    h_t: &Tensor<T>,
    config: &FusionConfig,
    masks: &mut MaskSource<'_, T>,
) -> Result<(Tensor<T>, Tensor<T>, LayerCache<T>)> {
    // Both streams read the previous layer's state.
    match config.norm_placement {
        NormPlacement::PostLn => {
            let (v, vision) = block_post_ln(&layer.vision, h_v, h_t, config, masks)?;
            let (t, text) = block_post_ln(&layer.text, h_t, h_v, config, masks)?;
            Ok((v, t, LayerCache { vision, text }))
        }
        NormPlacement::PreLn => {
            let (n_v, c_v) = layer_norm(h_v, &layer.vision.norm1.gain, &layer.vision.norm1.bias, LN_EPS)?;
            let (n_t, c_t) = layer_norm(h_t, &layer.text.norm1.gain, &layer.text.norm1.bias, LN_EPS)?;
            let (v, vision) = block_pre_ln(&layer.vision, h_v, &n_v, &n_t, c_v, config, masks)?;
            let (t, text) = block_pre_ln(&layer.text, h_t, &n_t, &n_v, c_t, config, masks)?;
            Ok((v, t, LayerCache { vision, text }))
        }
    }
}

/// One bidirectional cross-attention layer over `tokens × width` inputs
/// (rows = pairs · tokens). Dropout is sampled when `mode` is training.
pub fn cross_attention_layer<T: Real>(
    h_v: &Tensor<T>,
    h_t: &Tensor<T>,
    layer: &CrossLayer<T>,
    config: &FusionConfig,
    mode: Mode<'_>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut masks = match mode {
        Mode::Eval => MaskSource::Off,
        Mode::Train(rng) => MaskSource::Sample { p: config.dropout, rng },
    };
    let (v, t, _) = layer_forward(layer, h_v, h_t, config, &mut masks)?;
    ensure_finite("cross_attention", None, &[&v, &t])?;
    Ok((v, t))
}

/// `[h_v; h_t; h_v ⊙ h_t; |h_v − h_t|]`, minus whatever segments `flags` drop.
pub fn fuse_features<T: Real>(
    h_v: &Tensor<T>,
    h_t: &Tensor<T>,
    flags: &AblationFlags,
) -> Result<Tensor<T>> {
    if h_v.shape() != h_t.shape() {
        return Err(Error::dim("fuse_features", h_v.shape(), h_t.shape()));
    }
    let d = h_v.cols();
    let hv = h_v.clone().reshape(&[h_v.len() / d, d])?;
    let ht = h_t.clone().reshape(&[h_t.len() / d, d])?;
    let parts: Vec<Tensor<T>> = flags
        .segments()
        .into_iter()
        .map(|s| match s {
            FusionSegment::Vision => Ok(hv.clone()),
            FusionSegment::Text => Ok(ht.clone()),
            FusionSegment::Product => hv.mul(&ht),
            FusionSegment::AbsDifference => hv.zip_map(&ht, "fuse", |a, b| (a - b).abs()),
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    let out = Tensor::hcat(&refs)?;
    if h_v.shape().len() == 1 {
        let n = out.len();
        out.reshape(&[n])
    } else {
        Ok(out)
    }
}

fn head_forward<T: Real>(
    head: &Head<T>,
    fused: &Tensor<T>,
    masks: &mut MaskSource<'_, T>,
) -> Result<(Tensor<T>, HeadCache<T>)> {
    let pre = head.hidden.forward(fused)?;
    let act = gelu(&pre);
    let mask = masks.draw(act.shape())?;
    let hidden = apply_mask(act.clone(), &mask)?;
    let out = head.output.forward(&hidden)?;
    Ok((
        out,
        HeadCache {
            fused: fused.clone(),
            pre,
            act,
            mask,
            hidden,
        },
    ))
}

/// `W₂·Dropout(GELU(W₁·f + b₁)) + b₂`.
pub fn predict_head<T: Real>(f: &Tensor<T>, params: &FusionParams<T>, mode: Mode<'_>) -> Result<Tensor<T>> {
    let width = params.head.hidden.in_dim();
    let f = as_matrix(f, width, "predict_head")?;
    let mut masks = match mode {
        Mode::Eval => MaskSource::Off,
        Mode::Train(rng) => MaskSource::Sample { p: params.config.dropout, rng },
    };
    Ok(head_forward(&params.head, &f, &mut masks)?.0)
}

/// Full pipeline: project → cross-attention layers → fuse → head.
///
/// `v` is `rows × d_v` and `t` is `rows × d_t` (a single vector counts as one
/// row); each row must be unit-norm. Returns `rows × out_dim` scores.
pub fn forward<T: Real>(
    v: &Tensor<T>,
    t: &Tensor<T>,
    params: &FusionParams<T>,
    mode: Mode<'_>,
) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    let mut masks = match mode {
        Mode::Eval => MaskSource::Off,
        Mode::Train(rng) => MaskSource::Sample { p: params.config.dropout, rng },
    };
    forward_with(v, t, params, &mut masks)
}

/// Re-run a forward pass with the dropout masks stored in `trace`.
pub fn replay_forward<T: Real>(
    v: &Tensor<T>,
    t: &Tensor<T>,
    params: &FusionParams<T>,
    trace: &ForwardTrace<T>,
) -> Result<Tensor<T>> {
    let mut masks = MaskSource::Replay {
        masks: trace.masks(),
        next: 0,
    };
    Ok(forward_with(v, t, params, &mut masks)?.0)
}

pub(crate) fn forward_with<T: Real>(
    v: &Tensor<T>,
    t: &Tensor<T>,
    params: &FusionParams<T>,
    masks: &mut MaskSource<'_, T>,
) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    let config = &params.config;
    let v = as_matrix(v, config.d_v, "forward(v)")?;
    let t = as_matrix(t, config.d_t, "forward(t)")?;
    if v.rows() != t.rows() {
        return Err(Error::LengthMismatch(v.rows(), t.rows()));
    }
    check_unit_rows(&v)?;
    check_unit_rows(&t)?;
    let rows = v.rows();

    let (h_v, proj_v) = project_one(&params.proj_v, &v)?;
    let (h_t, proj_t) = project_one(&params.proj_t, &t)?;
    ensure_finite("projection", None, &[&h_v, &h_t])?;

    let (s, w) = (config.tokens(), config.token_width());
    let mut h_v = h_v.reshape(&[rows * s, w])?;
    let mut h_t = h_t.reshape(&[rows * s, w])?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let (nv, nt, cache) = layer_forward(layer, &h_v, &h_t, config, masks)?;
        ensure_finite("cross_attention", Some(l), &[&nv, &nt])?;
        h_v = nv;
        h_t = nt;
        layers.push(cache);
    }
    let final_v = h_v.reshape(&[rows, config.d_h])?;
    let final_t = h_t.reshape(&[rows, config.d_h])?;

    let fused = fuse_features(&final_v, &final_t, &params.flags)?;
    let (output, head) = head_forward(&params.head, &fused, masks)?;
    ensure_finite("head", None, &[&output])?;

    Ok((
        output.clone(),
        ForwardTrace {
            signature: structure_signature(config, &params.flags),
            rows,
            proj_v,
            proj_t,
            layers,
            final_v,
            final_t,
            head,
            output,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::params::init_params;

    fn vec64(x: &[f64]) -> Tensor<f64> {
        Tensor::vector(x.to_vec())
    }

    fn zero_params(config: &FusionConfig) -> FusionParams<f64> {
        FusionParams::blank(config, &AblationFlags::default()).unwrap()
    }

    #[test]
    fn projection_of_zero_weights_is_zero() {
        let c = FusionConfig { d_v: 2, d_t: 2, d_h: 2, layers: 0, ..FusionConfig::default() };
        let p = zero_params(&c);
        let (hv, ht) = project(&vec64(&[1.0, 0.0]), &vec64(&[0.0, 1.0]), &p).unwrap();
        assert_eq!(hv.data(), &[0.0, 0.0]);
        assert_eq!(ht.data(), &[0.0, 0.0]);
    }

    #[test]
    fn projection_constant_row_collapses() {
        let c = FusionConfig { d_v: 2, d_t: 2, d_h: 2, layers: 0, ..FusionConfig::default() };
        let mut p = zero_params(&c);
        p.proj_v.linear.bias = vec64(&[1.0, 1.0]);
        let (hv, _) = project(&vec64(&[1.0, 0.0]), &vec64(&[1.0, 0.0]), &p).unwrap();
        assert_eq!(hv.data(), &[0.0, 0.0]);
    }

    #[test]
    fn projection_gelu_then_two_point_norm() {
        let c = FusionConfig { d_v: 2, d_t: 2, d_h: 2, layers: 0, ..FusionConfig::default() };
        let mut p = zero_params(&c);
        // W·[1,0] + b = [0, 1]
        p.proj_v.linear.bias = vec64(&[0.0, 1.0]);
        let (hv, _) = project(&vec64(&[1.0, 0.0]), &vec64(&[1.0, 0.0]), &p).unwrap();
        // LN([0, g]) = [-1, 1]·g/sqrt(g² + 4·eps) with g = gelu(1) ≈ 0.841345
        assert!((hv.data()[0] + 1.0).abs() < 1e-4 && (hv.data()[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn projection_requires_unit_inputs() {
        let c = FusionConfig { d_v: 2, d_t: 2, d_h: 2, layers: 0, ..FusionConfig::default() };
        let p = zero_params(&c);
        let r = project(&vec64(&[2.0, 0.0]), &vec64(&[1.0, 0.0]), &p);
        assert!(matches!(r, Err(Error::NotUnitNorm { .. })));
        let r = project(&vec64(&[1.0, 0.0, 0.0]), &vec64(&[1.0, 0.0]), &p);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_key_attention_collapses_to_value_path() {
        let c = FusionConfig { d_v: 2, d_t: 2, d_h: 3, layers: 1, heads: 1, ffn_dim: 4, ..FusionConfig::default() };
        let mut p = zero_params(&c);
        let a = p.layers[0].vision.attention.as_mut().unwrap();
        for lin in [&mut a.query, &mut a.key, &mut a.value, &mut a.output] {
            lin.weight = Tensor::eye(3);
        }
        let hv = Tensor::from_f64(&[1, 3], &[0.2, -0.5, 1.1]).unwrap();
        let ht = Tensor::from_f64(&[1, 3], &[0.9, 0.3, -0.4]).unwrap();
        let (v_out, _) = cross_attention_layer(&hv, &ht, &p.layers[0], &c, Mode::Eval).unwrap();
        let one = vec64(&[1.0; 3]);
        let zero = vec64(&[0.0; 3]);
        let (inner, _) = layer_norm(&hv.add(&ht).unwrap(), &one, &zero, LN_EPS).unwrap();
        let (expected, _) = layer_norm(&inner, &one, &zero, LN_EPS).unwrap();
        assert!(v_out.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn no_cross_attention_is_identity_on_layer_stack() {
        let c = FusionConfig::tiny(4, 4, 1);
        let flags = AblationFlags { use_cross_attention: false, ..Default::default() };
        let p: FusionParams<f64> = init_params(&c, &flags, &mut RngState::new(1)).unwrap();
        assert!(p.layers.is_empty());
        let v = vec64(&[0.5, 0.5, 0.5, 0.5]);
        let (_, trace) = forward(&v, &v, &p, Mode::Eval).unwrap();
        let (hv, ht) = project(&v, &v, &p).unwrap();
        assert_eq!(trace.final_v.data(), hv.data());
        assert_eq!(trace.final_t.data(), ht.data());
    }

    #[test]
    fn fuse_examples() {
        let u = vec64(&[0.3, -2.0]);
        let f = fuse_features(&u, &u, &AblationFlags::default()).unwrap();
        assert_eq!(f.data(), &[0.3, -2.0, 0.3, -2.0, 0.09, 4.0, 0.0, 0.0]);

        let f = fuse_features(&vec64(&[1.0, -1.0]), &vec64(&[2.0, 3.0]), &AblationFlags::default()).unwrap();
        assert_eq!(f.data(), &[1.0, -1.0, 2.0, 3.0, 2.0, -3.0, 1.0, 4.0]);

        let f = fuse_features(&vec64(&[1.0, -1.0]), &vec64(&[2.0, 3.0]), &AblationFlags::direct_concat()).unwrap();
        assert_eq!(f.data(), &[1.0, -1.0, 2.0, 3.0]);

        assert!(fuse_features(&vec64(&[1.0]), &vec64(&[1.0, 2.0]), &AblationFlags::default()).is_err());
    }

    #[test]
    fn head_bias_pass_through() {
        let c = FusionConfig { d_v: 2, d_t: 2, d_h: 2, layers: 0, head_hidden: 3, ..FusionConfig::default() };
        let mut p = zero_params(&c);
        p.head.output.bias = vec64(&[0.7]);
        let f = vec64(&[1.0; 8]);
        let out = predict_head(&f, &p, Mode::Eval).unwrap();
        assert_eq!(out.data(), &[0.7]);
        let (score, _) = forward(&vec64(&[0.6, 0.8]), &vec64(&[0.0, 1.0]), &p, Mode::Eval).unwrap();
        assert_eq!(score.data(), &[0.7]);
    }

    #[test]
    fn head_hand_composition() {
        // 2 → 2 → 1 head on f = [1, 0]
        let c = FusionConfig { d_v: 2, d_t: 2, d_h: 2, layers: 0, head_hidden: 2, ..FusionConfig::default() };
        let flags = AblationFlags { fusion_use_product: false, fusion_use_difference: false, ..Default::default() };
        let mut p = FusionParams::<f64>::blank(&c, &flags).unwrap();
        p.head.hidden = crate::fusion::params::Linear {
            weight: Tensor::from_f64(&[2, 4], &[0.5, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap(),
            bias: vec64(&[0.1, 0.2]),
        };
        p.head.output.weight = Tensor::from_f64(&[1, 2], &[2.0, 3.0]).unwrap();
        p.head.output.bias = vec64(&[-0.5]);
        let out = predict_head(&vec64(&[1.0, 0.0, 0.0, 0.0]), &p, Mode::Eval).unwrap();
        let phi = |x: f64| 0.5 * (1.0 + libm::erf(x / 2f64.sqrt()));
        let expected = 2.0 * 0.6 * phi(0.6) + 3.0 * (-0.8) * phi(-0.8) - 0.5;
        assert!((out.data()[0] - expected).abs() < 1e-12);
        let again = predict_head(&vec64(&[1.0, 0.0, 0.0, 0.0]), &p, Mode::Eval).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn train_mode_replay_is_bit_exact() {
        let c = FusionConfig { heads: 2, token_mode: crate::fusion::config::TokenMode::Chunked(2), ..FusionConfig::tiny(6, 5, 2) };
        let flags = AblationFlags::default();
        let p: FusionParams<f32> = init_params(&c, &flags, &mut RngState::new(4)).unwrap();
        let mut rng = RngState::new(17);
        let v = crate::tensor::l2_normalize(&Tensor::<f32>::vector(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let t = crate::tensor::l2_normalize(&Tensor::<f32>::vector(vec![-1.0, 0.5, 2.0, 0.0, 1.0])).unwrap();
        let (out, trace) = forward(&v, &t, &p, Mode::Train(&mut rng)).unwrap();
        let replayed = replay_forward(&v, &t, &p, &trace).unwrap();
        assert_eq!(out.data(), replayed.data());

        let mut rng2 = RngState::new(17);
        let (out2, _) = forward(&v, &t, &p, Mode::Train(&mut rng2)).unwrap();
        assert_eq!(out.data(), out2.data());
        assert_eq!(rng, rng2);
    }
}
