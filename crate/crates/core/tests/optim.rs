use frevl::optim::{clip_global_norm, lr_at_step, AdamWConfig, AdamWState, ScheduleConfig};
use frevl::params::{ParamKind, TensorList};
use frevl::tensor::{RngState, Tensor};
use frevl::Error;
use proptest::prelude::*;

fn one(kind: ParamKind, x: f64) -> TensorList<f64> {
    TensorList::new(vec![(kind, Tensor::vector(vec![x]))])
}

#[test]
fn adamw_single_step_oracles() {
    let no_decay = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
    let mut p = one(ParamKind::Weight, 1.0);
    let mut s = AdamWState::new(&p, no_decay);
    s.apply(&mut p, &one(ParamKind::Weight, 1.0), 0.1).unwrap();
    assert!((p.items[0].1.data()[0] - 0.9).abs() < 1e-6);
    assert_eq!(s.step, 1);

    let mut p = one(ParamKind::Weight, 1.0);
    let mut s = AdamWState::new(&p, AdamWConfig::default());
    s.apply(&mut p, &one(ParamKind::Weight, 1.0), 0.1).unwrap();
    assert!((p.items[0].1.data()[0] - 0.899).abs() < 1e-6);

    let mut p = one(ParamKind::Bias, 1.0);
    let mut s = AdamWState::new(&p, AdamWConfig::default());
    s.apply(&mut p, &one(ParamKind::Bias, 1.0), 0.1).unwrap();
    assert!((p.items[0].1.data()[0] - 0.9).abs() < 1e-6, "biases are not decayed");
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut p = one(ParamKind::Weight, 0.7);
    let mut s = AdamWState::new(&p, AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() });
    s.apply(&mut p, &one(ParamKind::Weight, 0.0), 0.1).unwrap();
    assert_eq!(p.items[0].1.data()[0], 0.7);
    assert_eq!(s.step, 1);
}

#[test]
fn shape_mismatch_is_rejected() {
    let mut p = one(ParamKind::Weight, 1.0);
    let mut s = AdamWState::new(&p, AdamWConfig::default());
    let g = TensorList::new(vec![(ParamKind::Weight, Tensor::vector(vec![1.0, 2.0]))]);
    assert!(matches!(s.apply(&mut p, &g, 0.1), Err(Error::Dimension { .. })));
}

#[test]
fn adamw_converges_on_quadratic() {
    let target = [0.7, -1.3];
    let mut p = TensorList::new(vec![(ParamKind::Bias, Tensor::vector(vec![0.0f64, 0.0]))]);
    let mut s = AdamWState::new(&p, AdamWConfig::default());
    let sched = ScheduleConfig { peak_lr: 0.05, warmup_steps: 50, total_steps: 2000, min_lr: 0.0 };
    for step in 1..=2000 {
        let theta = p.items[0].1.data().to_vec();
        let g: Vec<f64> = theta.iter().zip(target).map(|(t, s)| 2.0 * (t - s)).collect();
        let grads = TensorList::new(vec![(ParamKind::Bias, Tensor::vector(g))]);
        s.apply(&mut p, &grads, lr_at_step(step, &sched).unwrap()).unwrap();
    }
    for (t, s) in p.items[0].1.data().iter().zip(target) {
        assert!((t - s).abs() < 1e-3, "{t} vs {s}");
    }
}

#[test]
fn schedule_endpoints() {
    let cfg = ScheduleConfig { peak_lr: 3e-4, warmup_steps: 100, total_steps: 1000, min_lr: 0.0 };
    assert!((lr_at_step(50, &cfg).unwrap() - 1.5e-4).abs() < 1e-12);
    assert!((lr_at_step(100, &cfg).unwrap() - 3e-4).abs() < 1e-12);
    assert!(lr_at_step(1000, &cfg).unwrap().abs() < 1e-12);
    let floor = ScheduleConfig { min_lr: 1e-5, ..cfg };
    assert!((lr_at_step(1000, &floor).unwrap() - 1e-5).abs() < 1e-12);
    assert!(matches!(lr_at_step(1001, &cfg), Err(Error::ScheduleExhausted { step: 1001, total: 1000 })));
    assert!(ScheduleConfig { warmup_steps: 0, ..cfg }.validate().is_err());
}

#[test]
fn clipping_examples() {
    let mut g = TensorList::new(vec![(ParamKind::Weight, Tensor::vector(vec![0.3f64, 0.4]))]);
    assert_eq!(clip_global_norm(&mut g, 1.0).unwrap(), 0.5);
    assert_eq!(g.items[0].1.data(), &[0.3, 0.4]);

    let mut g = TensorList::new(vec![(ParamKind::Weight, Tensor::vector(vec![2.0f64, 0.0]))]);
    assert_eq!(clip_global_norm(&mut g, 1.0).unwrap(), 2.0);
    assert_eq!(g.items[0].1.data(), &[1.0, 0.0]);

    let mut g = TensorList::new(vec![
        (ParamKind::Weight, Tensor::vector(vec![3.0f32])),
        (ParamKind::Bias, Tensor::vector(vec![4.0f32])),
    ]);
    assert_eq!(clip_global_norm(&mut g, 1.0).unwrap(), 5.0);
    assert_eq!(g.items[0].1.data(), &[0.6f32]);
    assert_eq!(g.items[1].1.data(), &[0.8f32]);

    let mut g = TensorList::new(vec![(ParamKind::Weight, Tensor::vector(vec![f64::NAN]))]);
    assert!(matches!(clip_global_norm(&mut g, 1.0), Err(Error::NumericFault { .. })));
}

proptest! {
    #[test]
    fn first_step_moves_by_lr_regardless_of_scale(g in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3]) {
        let mut p = one(ParamKind::Weight, 0.0);
        let mut s = AdamWState::new(&p, AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() });
        s.apply(&mut p, &one(ParamKind::Weight, g), 0.01).unwrap();
        prop_assert!((p.items[0].1.data()[0] + g.signum() * 0.01).abs() < 1e-6);
    }

    #[test]
    fn clipped_norm_never_exceeds_max(seed in 0u64..500, scale in 0.0f64..100.0, max in 0.01f64..10.0) {
        let mut rng = RngState::new(seed);
        let mut g = TensorList::new(vec![
            (ParamKind::Weight, Tensor::vector(rng.normal(7).into_iter().map(|x| x * scale).collect())),
            (ParamKind::Bias, Tensor::vector(rng.normal(3))),
        ]);
        clip_global_norm(&mut g, max).unwrap();
        let after: f64 = g.items.iter().map(|(_, t)| t.sum_sq()).sum::<f64>().sqrt();
        prop_assert!(after <= max + 1e-6);
    }

    #[test]
    fn adamw_is_deterministic(seed in 0u64..500) {
        let mut rng = RngState::new(seed);
        let p0 = TensorList::new(vec![(ParamKind::Weight, Tensor::vector(rng.normal(5)))]);
        let g = TensorList::new(vec![(ParamKind::Weight, Tensor::vector(rng.normal(5)))]);
        let run = || {
            let mut p = p0.clone();
            let mut s = AdamWState::new(&p, AdamWConfig::default());
            s.apply(&mut p, &g, 0.01).unwrap();
            s.apply(&mut p, &g, 0.01).unwrap();
            (p, s)
        };
        prop_assert_eq!(run(), run());
    }
}
