use super::config::{AblationFlags, FusionSegment, NormPlacement};
use super::forward::{structure_signature, AttentionCache, BlockCache, ForwardTrace, LayerCache, ProjectionCache};
use super::params::{Attention, CrossLayer, FeedForward, FusionParams, Projection, StreamBlock};
use crate::error::{Error, Result};
use crate::tensor::{gelu_grad, layer_norm_backward, Real, Tensor};

/// Parameter gradients plus gradients w.r.t. the input embeddings. The input
/// gradients are diagnostic only: encoders are frozen.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    pub params: FusionParams<T>,
    pub d_v: Tensor<T>,
    pub d_t: Tensor<T>,
}

fn masked<T: Real>(d: &Tensor<T>, mask: &Option<Tensor<T>>) -> Result<Tensor<T>> {
    match mask {
        Some(m) => d.mul(m),
        None => Ok(d.clone()),
    }
}

fn norm_back<T: Real>(
    dy: &Tensor<T>,
    cache: &crate::tensor::LayerNormCache<T>,
    norm: &super::params::Norm<T>,
    grad: &mut super::params::Norm<T>,
) -> Result<Tensor<T>> {
    let (dx, dg, db) = layer_norm_backward(dy, cache, &norm.gain)?;
    grad.gain.add_assign(&dg)?;
    grad.bias.add_assign(&db)?;
    Ok(dx)
}

fn attention_backward<T: Real>(
    a: &Attention<T>,
    c: &AttentionCache<T>,
    dout: &Tensor<T>,
    tokens: usize,
    heads: usize,
    g: &mut Attention<T>,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let d = masked(dout, &c.mask)?;
    let dctx = a.output.backward(&c.ctx, &d, &mut g.output)?;
    let (dq, dk, dv) = match (&c.q, &c.k, &c.probs) {
        (Some(q), Some(k), Some(probs)) => {
            let w = q.cols();
            let dk_w = w / heads;
            let scale = T::of(1.0 / (dk_w as f64).sqrt());
            let pairs = q.rows() / tokens;
            let mut dq = Tensor::zeros(q.shape());
            let mut dk = Tensor::zeros(k.shape());
            let mut dv = Tensor::zeros(c.v.shape());
            let mut dp = vec![T::zero(); tokens];
            for n in 0..pairs {
                for h in 0..heads {
                    let cols = h * dk_w..(h + 1) * dk_w;
                    for i in 0..tokens {
                        let base = ((n * heads + h) * tokens + i) * tokens;
                        let p = &probs[base..base + tokens];
                        let dci = dctx.row(n * tokens + i)[cols.clone()].to_vec();
                        for j in 0..tokens {
                            let vj = &c.v.row(n * tokens + j)[cols.clone()];
                            dp[j] = dci.iter().zip(vj).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                            let dvj = &mut dv.row_mut(n * tokens + j)[cols.clone()];
                            for (o, &x) in dvj.iter_mut().zip(&dci) {
                                *o = *o + p[j] * x;
                            }
                        }
                        let dot = p.iter().zip(&dp).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        let qi = q.row(n * tokens + i)[cols.clone()].to_vec();
                        for j in 0..tokens {
                            let ds = p[j] * (dp[j] - dot) * scale;
                            let kj = k.row(n * tokens + j)[cols.clone()].to_vec();
                            let dqi = &mut dq.row_mut(n * tokens + i)[cols.clone()];
                            for (o, &x) in dqi.iter_mut().zip(&kj) {
                                *o = *o + ds * x;
                            }
                            let dkj = &mut dk.row_mut(n * tokens + j)[cols.clone()];
                            for (o, &x) in dkj.iter_mut().zip(&qi) {
                                *o = *o + ds * x;
                            }
                        }
                    }
                }
            }
            (Some(dq), Some(dk), dv)
        }
        _ => (None, None, dctx),
    };
    let mut dkv = a.value.backward(&c.kv_in, &dv, &mut g.value)?;
    let dq_in = match (dq, dk) {
        (Some(dq), Some(dk)) => {
            dkv.add_assign(&a.key.backward(&c.kv_in, &dk, &mut g.key)?)?;
            Some(a.query.backward(&c.q_in, &dq, &mut g.query)?)
        }
        _ => None,
    };
    Ok((dq_in, dkv))
}

fn ffn_backward<T: Real>(
    f: &FeedForward<T>,
    c: &BlockCache<T>,
    dout: &Tensor<T>,
    g: &mut FeedForward<T>,
) -> Result<Tensor<T>> {
    let d = masked(dout, &c.ffn_mask)?;
    let dact = f.down.backward(&c.ffn_act, &d, &mut g.down)?;
    let dpre = dact.mul(&gelu_grad(&c.ffn_pre))?;
    f.up.backward(&c.ffn_in, &dpre, &mut g.up)
}

/// Post-LN block: returns `(d self input, d other input)`.
fn block_post_backward<T: Real>(
    b: &StreamBlock<T>,
    c: &BlockCache<T>,
    dout: &Tensor<T>,
    tokens: usize,
    heads: usize,
    g: &mut StreamBlock<T>,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let ds2 = norm_back(dout, &c.norm2, &b.norm2, &mut g.norm2)?;
    let mut dxt = ffn_backward(&b.ffn, c, &ds2, &mut g.ffn)?;
    dxt.add_assign(&ds2)?;
    let ds1 = norm_back(&dxt, &c.norm1, &b.norm1, &mut g.norm1)?;
    match (&b.attention, &c.attention, g.attention.as_mut()) {
        (Some(a), Some(ac), Some(ga)) => {
            let (dq, dkv) = attention_backward(a, ac, &ds1, tokens, heads, ga)?;
            let mut dx = ds1;
            if let Some(dq) = dq {
                dx.add_assign(&dq)?;
            }
            Ok((dx, Some(dkv)))
        }
        (None, None, None) => Ok((ds1, None)),
        _ => Err(Error::StaleTrace("attention presence differs between trace and params".into())),
    }
}

struct PreGrads<T: Real> {
    residual: Tensor<T>,
    d_normed_self: Option<Tensor<T>>,
    d_normed_other: Option<Tensor<T>>,
}

fn block_pre_backward<T: Real>(
    b: &StreamBlock<T>,
    c: &BlockCache<T>,
    dout: &Tensor<T>,
    tokens: usize,
    heads: usize,
    g: &mut StreamBlock<T>,
) -> Result<PreGrads<T>> {
    let dn2 = ffn_backward(&b.ffn, c, dout, &mut g.ffn)?;
    let mut ds = norm_back(&dn2, &c.norm2, &b.norm2, &mut g.norm2)?;
    ds.add_assign(dout)?;
    match (&b.attention, &c.attention, g.attention.as_mut()) {
        (Some(a), Some(ac), Some(ga)) => {
            let (dq, dkv) = attention_backward(a, ac, &ds, tokens, heads, ga)?;
            Ok(PreGrads {
                residual: ds,
                d_normed_self: dq,
                d_normed_other: Some(dkv),
            })
        }
        (None, None, None) => Ok(PreGrads {
            residual: ds,
            d_normed_self: None,
            d_normed_other: None,
        }),
        _ => Err(Error::StaleTrace("attention presence differs between trace and params".into())),
    }
}

fn sum_opt<T: Real>(a: Option<Tensor<T>>, b: Option<Tensor<T>>) -> Result<Option<Tensor<T>>> {
    Ok(match (a, b) {
        (Some(mut a), Some(b)) => {
            a.add_assign(&b)?;
            Some(a)
        }
        (a, b) => a.or(b),
    })
}

fn layer_backward<T: Real>(
    layer: &CrossLayer<T>,
    cache: &LayerCache<T>,
    d_v: &Tensor<T>,
    d_t: &Tensor<T>,
    placement: NormPlacement,
    tokens: usize,
    heads: usize,
    g: &mut CrossLayer<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    match placement {
        NormPlacement::PostLn => {
            let (mut dv, dt_from_v) =
                block_post_backward(&layer.vision, &cache.vision, d_v, tokens, heads, &mut g.vision)?;
            let (mut dt, dv_from_t) =
                block_post_backward(&layer.text, &cache.text, d_t, tokens, heads, &mut g.text)?;
            if let Some(x) = dt_from_v {
                dt.add_assign(&x)?;
            }
            if let Some(x) = dv_from_t {
                dv.add_assign(&x)?;
            }
            Ok((dv, dt))
        }
        NormPlacement::PreLn => {
            let gv = block_pre_backward(&layer.vision, &cache.vision, d_v, tokens, heads, &mut g.vision)?;
            let gt = block_pre_backward(&layer.text, &cache.text, d_t, tokens, heads, &mut g.text)?;
            let mut dv = gv.residual;
            let mut dt = gt.residual;
            if let Some(dn) = sum_opt(gv.d_normed_self, gt.d_normed_other)? {
                dv.add_assign(&norm_back(&dn, &cache.vision.norm1, &layer.vision.norm1, &mut g.vision.norm1)?)?;
            }
            if let Some(dn) = sum_opt(gt.d_normed_self, gv.d_normed_other)? {
                dt.add_assign(&norm_back(&dn, &cache.text.norm1, &layer.text.norm1, &mut g.text.norm1)?)?;
            }
            Ok((dv, dt))
        }
    }
}

/// Gradients of the fusion vector w.r.t. `h_v⁽ᴸ⁾` and `h_t⁽ᴸ⁾`.
pub fn fuse_features_backward<T: Real>(
    h_v: &Tensor<T>,
    h_t: &Tensor<T>,
    flags: &AblationFlags,
    d_fused: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = h_v.cols();
    if d_fused.cols() != flags.fusion_width(d) || d_fused.rows() != h_v.rows() {
        return Err(Error::dim("fuse_features_backward", d_fused.shape(), h_v.shape()));
    }
    let mut dv = Tensor::zeros(h_v.shape());
    let mut dt = Tensor::zeros(h_t.shape());
    for (k, seg) in flags.segments().into_iter().enumerate() {
        let df = d_fused.slice_cols(k * d, (k + 1) * d);
        match seg {
            FusionSegment::Vision => dv.add_assign(&df)?,
            FusionSegment::Text => dt.add_assign(&df)?,
            FusionSegment::Product => {
                dv.add_assign(&df.mul(h_t)?)?;
                dt.add_assign(&df.mul(h_v)?)?;
            }
            FusionSegment::AbsDifference => {
                let sign = h_v.zip_map(h_t, "abs_diff", |a, b| {
                    let s = a - b;
                    if s > T::zero() {
                        T::one()
                    } else if s < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                })?;
                let g = df.mul(&sign)?;
                dv.add_assign(&g)?;
                dt = dt.sub(&g)?;
            }
        }
    }
    Ok((dv, dt))
}

fn projection_backward<T: Real>(
    p: &Projection<T>,
    c: &ProjectionCache<T>,
    dout: &Tensor<T>,
    g: &mut Projection<T>,
) -> Result<Tensor<T>> {
    let dact = norm_back(dout, &c.norm, &p.norm, &mut g.norm)?;
    let dpre = dact.mul(&gelu_grad(&c.pre))?;
    p.linear.backward(&c.input, &dpre, &mut g.linear)
}

/// Analytic gradients of `Σ upstream ⊙ score` for the pass recorded in
/// `trace`, using the trace's dropout masks.
pub fn backward<T: Real>(
    trace: &ForwardTrace<T>,
    upstream: &Tensor<T>,
    params: &FusionParams<T>,
) -> Result<Gradients<T>> {
    let config = &params.config;
    if trace.signature != structure_signature(config, &params.flags)
        || trace.layers.len() != params.layers.len()
    {
        return Err(Error::StaleTrace("trace was recorded for a different architecture".into()));
    }
    if trace.head.fused.cols() != params.head.hidden.in_dim() {
        return Err(Error::StaleTrace("head input width differs".into()));
    }
    let upstream = upstream.clone();
    if upstream.len() != trace.rows * config.out_dim {
        return Err(Error::dim("backward(upstream)", upstream.shape(), trace.output.shape()));
    }
    let upstream = upstream.reshape(&[trace.rows, config.out_dim])?;

    let mut g = params.zeros_like();

    let head = &trace.head;
    let dz = params.head.output.backward(&head.hidden, &upstream, &mut g.head.output)?;
    let dact = masked(&dz, &head.mask)?;
    let dpre = dact.mul(&gelu_grad(&head.pre))?;
    let dfused = params.head.hidden.backward(&head.fused, &dpre, &mut g.head.hidden)?;

    let (dv, dt) = fuse_features_backward(&trace.final_v, &trace.final_t, &params.flags, &dfused)?;
    let (s, w) = (config.tokens(), config.token_width());
    let mut dv = dv.reshape(&[trace.rows * s, w])?;
    let mut dt = dt.reshape(&[trace.rows * s, w])?;
    for l in (0..params.layers.len()).rev() {
        let (nv, nt) = layer_backward(
            &params.layers[l],
            &trace.layers[l],
            &dv,
            &dt,
            config.norm_placement,
            s,
            config.heads,
            &mut g.layers[l],
        )?;
        dv = nv;
        dt = nt;
    }
    let dv = dv.reshape(&[trace.rows, config.d_h])?;
    let dt = dt.reshape(&[trace.rows, config.d_h])?;
    let d_v = projection_backward(&params.proj_v, &trace.proj_v, &dv, &mut g.proj_v)?;
    let d_t = projection_backward(&params.proj_t, &trace.proj_t, &dt, &mut g.proj_t)?;

    Ok(Gradients { params: g, d_v, d_t })
}
