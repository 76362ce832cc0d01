//! Test-only oracles. Nothing here calls into the crate's forward/backward
//! code paths; parameters are read field by field and evaluated with plain
//! loops over `f64`.
#![allow(dead_code)]

use frevl::fusion::{
    AblationFlags, FusionConfig, FusionParams, Linear, Norm, NormPlacement, StreamBlock,
};
use frevl::tensor::{RngState, Tensor};

pub fn unit_vector(rng: &mut RngState, d: usize) -> Vec<f64> {
    let g = rng.normal(d);
    let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    g.into_iter().map(|x| x / n).collect()
}

pub fn unit_rows(rng: &mut RngState, rows: usize, d: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        data.extend(unit_vector(rng, d));
    }
    Tensor::new(vec![rows, d], data).unwrap()
}

fn erf_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn affine(l: &Linear<f64>, x: &[f64]) -> Vec<f64> {
    let (out, inp) = (l.weight.rows(), l.weight.cols());
    assert_eq!(inp, x.len());
    (0..out)
        .map(|o| {
            let mut s = l.bias.data()[o];
            for i in 0..inp {
                s += l.weight.data()[o * inp + i] * x[i];
            }
            s
        })
        .collect()
}

fn norm(n: &Norm<f64>, x: &[f64]) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let s = (var + 1e-5).sqrt();
    x.iter()
        .enumerate()
        .map(|(j, v)| n.gain.data()[j] * (v - mean) / s + n.bias.data()[j])
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Attention of `queries` (tokens × w) over `keys_values` (tokens × w).
fn mha(block: &StreamBlock<f64>, queries: &[Vec<f64>], kv: &[Vec<f64>], heads: usize) -> Vec<Vec<f64>> {
    let a = block.attention.as_ref().unwrap();
    let q: Vec<_> = queries.iter().map(|x| affine(&a.query, x)).collect();
    let k: Vec<_> = kv.iter().map(|x| affine(&a.key, x)).collect();
    let v: Vec<_> = kv.iter().map(|x| affine(&a.value, x)).collect();
    let w = q[0].len();
    let dk = w / heads;
    let mut ctx = vec![vec![0.0; w]; q.len()];
    for h in 0..heads {
        for i in 0..q.len() {
            let logits: Vec<f64> = (0..k.len())
                .map(|j| (0..dk).map(|c| q[i][h * dk + c] * k[j][h * dk + c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..k.len() {
                for c in 0..dk {
                    ctx[i][h * dk + c] += e[j] / z * v[j][h * dk + c];
                }
            }
        }
    }
    ctx.iter().map(|c| affine(&a.output, c)).collect()
}

fn ffn(block: &StreamBlock<f64>, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = affine(&block.ffn.up, x).into_iter().map(erf_gelu).collect();
    affine(&block.ffn.down, &h)
}

/// Eval-mode score for one `(v, t)` pair.
pub fn reference_forward(p: &FusionParams<f64>, v: &[f64], t: &[f64]) -> Vec<f64> {
    let c: &FusionConfig = &p.config;
    let flags: &AblationFlags = &p.flags;
    let proj = |pr: &frevl::fusion::Projection<f64>, x: &[f64]| {
        let a: Vec<f64> = affine(&pr.linear, x).into_iter().map(erf_gelu).collect();
        norm(&pr.norm, &a)
    };
    let hv0 = proj(&p.proj_v, v);
    let ht0 = proj(&p.proj_t, t);
    let s = c.tokens();
    let w = c.d_h / s;
    let split = |x: &[f64]| -> Vec<Vec<f64>> { x.chunks(w).map(|c| c.to_vec()).collect() };
    let mut hv = split(&hv0);
    let mut ht = split(&ht0);

    for layer in &p.layers {
        let (nv, nt) = match c.norm_placement {
            NormPlacement::PostLn => {
                let step = |blk: &StreamBlock<f64>, x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<Vec<f64>> {
                    let att = blk.attention.as_ref().map(|_| mha(blk, x, y, c.heads));
                    (0..x.len())
                        .map(|i| {
                            let s1 = match &att {
                                Some(a) => add(&x[i], &a[i]),
                                None => x[i].clone(),
                            };
                            let xt = norm(&blk.norm1, &s1);
                            norm(&blk.norm2, &add(&xt, &ffn(blk, &xt)))
                        })
                        .collect()
                };
                (step(&layer.vision, &hv, &ht), step(&layer.text, &ht, &hv))
            }
            NormPlacement::PreLn => {
                let n_v: Vec<_> = hv.iter().map(|x| norm(&layer.vision.norm1, x)).collect();
                let n_t: Vec<_> = ht.iter().map(|x| norm(&layer.text.norm1, x)).collect();
                let step = |blk: &StreamBlock<f64>, x: &[Vec<f64>], nx: &[Vec<f64>], ny: &[Vec<f64>]| {
                    let att = blk.attention.as_ref().map(|_| mha(blk, nx, ny, c.heads));
                    (0..x.len())
                        .map(|i| {
                            let s1 = match &att {
                                Some(a) => add(&x[i], &a[i]),
                                None => x[i].clone(),
                            };
                            add(&s1, &ffn(blk, &norm(&blk.norm2, &s1)))
                        })
                        .collect::<Vec<_>>()
                };
                (step(&layer.vision, &hv, &n_v, &n_t), step(&layer.text, &ht, &n_t, &n_v))
            }
        };
        hv = nv;
        ht = nt;
    }
    let hv: Vec<f64> = hv.concat();
    let ht: Vec<f64> = ht.concat();

    let mut f = Vec::new();
    f.extend(&hv);
    f.extend(&ht);
    if !flags.fusion_direct_concat_only {
        if flags.fusion_use_product {
            f.extend(hv.iter().zip(&ht).map(|(a, b)| a * b));
        }
        if flags.fusion_use_difference {
            f.extend(hv.iter().zip(&ht).map(|(a, b)| (a - b).abs()));
        }
    }
    let z: Vec<f64> = affine(&p.head.hidden, &f).into_iter().map(erf_gelu).collect();
    affine(&p.head.output, &z)
}

/// Replace every parameter with a random draw so that biases and norm
/// affine terms are exercised too.
pub fn randomize(params: &mut FusionParams<f64>, rng: &mut RngState, scale: f64) {
    use frevl::params::{ParamKind, ParamSet};
    for (kind, t) in params.tensors_mut() {
        let g = rng.normal(t.len());
        let fan_in = (t.cols() as f64).sqrt();
        for (x, z) in t.data_mut().iter_mut().zip(g) {
            *x = match kind {
                ParamKind::NormGain => 1.0 + 0.2 * z,
                ParamKind::Weight => z * scale / fan_in,
                _ => 0.1 * z,
            };
        }
    }
}

/// Random architecture in the range used for gradient checking.
pub fn random_tiny_config(rng: &mut RngState) -> FusionConfig {
    let r = rng.uniform(6);
    let pick = |u: f64, lo: usize, hi: usize| lo + ((u * (hi - lo + 1) as f64) as usize).min(hi - lo);
    let heads = pick(r[3], 1, 2);
    let d_h = 2 * heads * pick(r[2], 1, 8 / heads).max(1);
    let d_h = d_h.clamp(4, 16);
    FusionConfig {
        d_v: pick(r[0], 4, 16),
        d_t: pick(r[1], 4, 16),
        d_h,
        layers: pick(r[4], 0, 2),
        heads,
        ffn_dim: 4 * d_h,
        head_hidden: 8,
        dropout: 0.1,
        out_dim: pick(r[5], 1, 3),
        ..FusionConfig::default()
    }
}

/// Relative error with a floor on the denominator so that gradients that
/// are zero up to truncation error do not dominate.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compare analytic backward against central differences for every
/// parameter and input coordinate of a 64-bit network.
pub fn gradient_check(params: &FusionParams<f64>, v: &Tensor<f64>, t: &Tensor<f64>, seed: u64, h: f64) -> GradCheck {
    use frevl::fusion::{backward, forward, Mode};
    use frevl::params::ParamSet;

    let out_dim = params.config.out_dim;
    let mut rng = RngState::new(seed);
    let upstream = Tensor::new(vec![v.rows(), out_dim], rng.normal(v.rows() * out_dim)).unwrap();
    let dropout_state = RngState::new(seed ^ 0xD0);

    let objective = |p: &FusionParams<f64>| -> f64 {
        let mut r = dropout_state;
        let (out, _) = forward(v, t, p, Mode::Train(&mut r)).unwrap();
        out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
    };

    let mut r = dropout_state;
    let (_, trace) = forward(v, t, params, Mode::Train(&mut r)).unwrap();
    let grads = backward(&trace, &upstream, params).unwrap();

    let mut worst = (0.0, String::new());
    let mut checked = 0;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _, _)| n).collect();
    let analytic: Vec<Tensor<f64>> = grads.params.tensors().into_iter().map(|(_, t)| t.clone()).collect();
    let mut probe = params.clone();
    for (ti, name) in names.iter().enumerate() {
        let len = analytic[ti].len();
        for i in 0..len {
            let orig = probe.tensors()[ti].1.data()[i];
            probe.tensors_mut()[ti].1.data_mut()[i] = orig + h;
            let plus = objective(&probe);
            probe.tensors_mut()[ti].1.data_mut()[i] = orig - h;
            let minus = objective(&probe);
            probe.tensors_mut()[ti].1.data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let e = rel_err(analytic[ti].data()[i], fd);
            checked += 1;
            if e > worst.0 {
                worst = (e, format!("{name}[{i}]: analytic {} fd {fd}", analytic[ti].data()[i]));
            }
        }
    }
    for (which, x) in [("v", v), ("t", t)] {
        let analytic = if which == "v" { &grads.d_v } else { &grads.d_t };
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            let eval = |vv: &Tensor<f64>, tt: &Tensor<f64>| -> f64 {
                let mut r = dropout_state;
                let (out, _) = forward(vv, tt, params, Mode::Train(&mut r)).unwrap();
                out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
            };
            let fd = if which == "v" {
                (eval(&plus, t) - eval(&minus, t)) / (2.0 * h)
            } else {
                (eval(v, &plus) - eval(v, &minus)) / (2.0 * h)
            };
            let e = rel_err(analytic.data()[i], fd);
            checked += 1;
            if e > worst.0 {
                worst = (e, format!("d_{which}[{i}]: analytic {} fd {fd}", analytic.data()[i]));
            }
        }
    }
    GradCheck {
        max_rel_err: worst.0,
        worst: worst.1,
        checked,
    }
}
