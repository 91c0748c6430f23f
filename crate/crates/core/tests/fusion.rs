mod common;

use proptest::prelude::*;
use routedk::backbone::{forward, serialize_session, InputVariant, NoHook};
use routedk::fusion::{
    fused_forward, fusion_eval_loss, merge_average, merge_ties, route_trace, ties_merge, train_router, train_static,
    Fusion, FusionTrainConfig, RouterParams, StaticCoeffs, TiesConfig,
};
use routedk::lora::{adapter_forward, ExpertKind, ExpertSet, LoraAdapter, LoraConfig};
use routedk::numerics::Tensor;
use routedk::training::TrainConfig;

fn max_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn prompts(fx: &common::Fixture, n: usize) -> Vec<(Vec<usize>, usize)> {
    fx.splits
        .test
        .iter()
        .take(n)
        .map(|s| {
            let i = serialize_session(s, InputVariant::Raw, None, &fx.vocab).unwrap();
            (i.tokens, i.prompt_len)
        })
        .collect()
}

#[test]
fn zero_router_and_uniform_static_equal_average() {
    let fx = common::fixture(2);
    let cfg = &fx.backbone.config;
    let experts = common::noisy_experts(cfg, 10);
    let dynamic = Fusion::Dynamic(RouterParams::zeros(cfg.layers, cfg.width, 3));
    let stat = Fusion::Static(StaticCoeffs::uniform(cfg.layers, 3));
    for (tokens, p) in prompts(&fx, 6) {
        let (avg, _) = fused_forward(&fx.backbone, &experts, &Fusion::Average, &tokens, p, false).unwrap();
        let (dy, _) = fused_forward(&fx.backbone, &experts, &dynamic, &tokens, p, false).unwrap();
        let (st, _) = fused_forward(&fx.backbone, &experts, &stat, &tokens, p, false).unwrap();
        let plain = forward(&fx.backbone, &tokens, p, &mut NoHook).unwrap();
        assert!(max_diff(&avg, &dy) <= 1e-6);
        assert!(max_diff(&avg, &st) <= 1e-6);
        assert!(max_diff(&avg, &plain) > 1e-3, "experts should move the logits");
    }
}

#[test]
fn one_hot_router_equals_single_expert() {
    let fx = common::fixture(2);
    let cfg = &fx.backbone.config;
    let experts = common::noisy_experts(cfg, 20);
    let mut router = RouterParams::zeros(cfg.layers, cfg.width, 3);
    for b in router.b.iter_mut() {
        *b = Tensor::new(&[1, 3], vec![-1e4, -1e4, 0.0]).unwrap();
    }
    let fine = experts.adapter(ExpertKind::FineGrained).unwrap();
    for (tokens, p) in prompts(&fx, 6) {
        let (dy, trace) = fused_forward(&fx.backbone, &experts, &Fusion::Dynamic(router.clone()), &tokens, p, true).unwrap();
        let single = adapter_forward(&fx.backbone, fine, &tokens, p).unwrap();
        let (via_single, _) =
            fused_forward(&fx.backbone, &experts, &Fusion::Single(ExpertKind::FineGrained), &tokens, p, false).unwrap();
        assert!(max_diff(&dy, &single) <= 1e-6);
        assert_eq!(via_single.data(), single.data());
        assert!(trace.unwrap().iter().all(|l| l.alpha == vec![0.0, 0.0, 1.0]));
    }
}

#[test]
fn zero_updates_leave_backbone_unchanged_under_every_strategy() {
    let fx = common::fixture(4);
    let cfg = &fx.backbone.config;
    let lc = LoraConfig { rank: 4, scale: 4.0, init_std: 0.02 };
    let experts = ExpertSet::new(
        ExpertKind::FUSED.iter().map(|&k| (k, LoraAdapter::init(cfg, &lc, k as u64).unwrap())).collect(),
    )
    .unwrap();
    let strategies = vec![
        Fusion::Single(ExpertKind::Base),
        Fusion::Average,
        Fusion::Merged(merge_ties(&experts, &TiesConfig::default()).unwrap()),
        Fusion::Static(StaticCoeffs::uniform(cfg.layers, 3)),
        Fusion::Dynamic(RouterParams::random(cfg.layers, cfg.width, 3, 0.5, 1)),
    ];
    for (tokens, p) in prompts(&fx, 3) {
        let plain = forward(&fx.backbone, &tokens, p, &mut NoHook).unwrap();
        for s in &strategies {
            let (out, _) = fused_forward(&fx.backbone, &experts, s, &tokens, p, false).unwrap();
            assert_eq!(out.data(), plain.data(), "{}", s.name());
        }
    }
}

#[test]
fn parameter_average_matches_output_average() {
    let fx = common::fixture(2);
    let experts = common::noisy_experts(&fx.backbone.config, 30);
    let merged = Fusion::Merged(merge_average(&experts).unwrap());
    for (tokens, p) in prompts(&fx, 3) {
        let (a, _) = fused_forward(&fx.backbone, &experts, &Fusion::Average, &tokens, p, false).unwrap();
        let (m, _) = fused_forward(&fx.backbone, &experts, &merged, &tokens, p, false).unwrap();
        assert!(max_diff(&a, &m) <= 1e-4);
    }
}

#[test]
fn strategy_mismatch_is_an_error() {
    let fx = common::fixture(2);
    let cfg = &fx.backbone.config;
    let experts = common::noisy_experts(cfg, 1);
    let (tokens, p) = prompts(&fx, 1).remove(0);
    let wrong_k = Fusion::Dynamic(RouterParams::zeros(cfg.layers, cfg.width, 2));
    assert!(fused_forward(&fx.backbone, &experts, &wrong_k, &tokens, p, false).is_err());
    let wrong_l = Fusion::Static(StaticCoeffs::uniform(cfg.layers + 1, 3));
    assert!(fused_forward(&fx.backbone, &experts, &wrong_l, &tokens, p, false).is_err());
    let merged_only = ExpertSet::single(ExpertKind::MergedBaseline, common::noisy_adapter(cfg, 4, 3));
    assert!(fused_forward(&fx.backbone, &merged_only, &Fusion::Single(ExpertKind::Base), &tokens, p, false).is_err());
    let two = ExpertSet::new(experts.experts[..2].to_vec()).unwrap();
    assert!(merge_ties(&two, &TiesConfig::default()).is_err());
    assert!(route_trace(&fx.splits.test[0], &fx.backbone, &experts, &Fusion::Average, &fx.vocab).is_err());
}

#[test]
fn traces_are_probability_vectors_and_prompt_stable() {
    let fx = common::fixture(6);
    let cfg = &fx.backbone.config;
    let experts = common::noisy_experts(cfg, 40);
    for seed in 0..5 {
        let router = Fusion::Dynamic(RouterParams::random(cfg.layers, cfg.width, 3, 1.0, seed));
        for (tokens, p) in prompts(&fx, 4) {
            let (_, t1) = fused_forward(&fx.backbone, &experts, &router, &tokens, p, true).unwrap();
            let mut longer = tokens.clone();
            longer.extend([4, 10, 11, 5]);
            let (_, t2) = fused_forward(&fx.backbone, &experts, &router, &longer, p, true).unwrap();
            let (t1, t2) = (t1.unwrap(), t2.unwrap());
            assert_eq!(t1.len(), cfg.layers);
            for (a, b) in t1.iter().zip(&t2) {
                let sum: f64 = a.alpha.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-6 && a.alpha.iter().all(|&x| x >= 0.0));
                for (x, y) in a.alpha.iter().zip(&b.alpha) {
                    assert!((x - y).abs() <= 1e-6);
                }
            }
        }
        let s = &fx.splits.test[0];
        let a = route_trace(s, &fx.backbone, &experts, &router, &fx.vocab).unwrap();
        let b = route_trace(&s.clone(), &fx.backbone, &experts, &router, &fx.vocab).unwrap();
        assert_eq!(a, b);
    }
    let zero = Fusion::Dynamic(RouterParams::zeros(cfg.layers, cfg.width, 3));
    let t = route_trace(&fx.splits.test[1], &fx.backbone, &experts, &zero, &fx.vocab).unwrap();
    assert!(t.layers.iter().all(|l| l.alpha.iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-6)));
}

#[test]
fn fusion_training_respects_frozen_contract_and_improves() {
    let fx = common::fixture(8);
    let cfg = &fx.backbone.config;
    let experts = common::noisy_experts(cfg, 50);
    let train_cfg = FusionTrainConfig {
        train: TrainConfig { epochs: 2, lr: 0.0, batch_size: 8 },
        ..FusionTrainConfig::default()
    };
    let theta = fx.backbone.content_hash();
    let phis = experts.hashes();
    let avg_val = fusion_eval_loss(&Fusion::Average, &fx.splits.val, &fx.backbone, &experts, &fx.vocab).unwrap();

    let (router, _) = train_router(&fx.splits.train, &fx.backbone, &experts, &fx.vocab, &train_cfg, 1e-2, 3).unwrap();
    let dyn_val = fusion_eval_loss(&Fusion::Dynamic(router), &fx.splits.val, &fx.backbone, &experts, &fx.vocab).unwrap();
    assert!(dyn_val <= avg_val, "{dyn_val} > {avg_val}");

    let (coeffs, _) = train_static(&fx.splits.train, &fx.backbone, &experts, &fx.vocab, &train_cfg, 1e-2, 3).unwrap();
    let st_val = fusion_eval_loss(&Fusion::Static(coeffs), &fx.splits.val, &fx.backbone, &experts, &fx.vocab).unwrap();
    assert!(st_val <= avg_val, "{st_val} > {avg_val}");

    assert_eq!(fx.backbone.content_hash(), theta);
    assert_eq!(experts.hashes(), phis);
}

proptest! {
    #[test]
    fn ties_with_agreeing_signs_is_the_mean(vals in proptest::collection::vec(0.01f64..5.0, 6), negative in any::<bool>()) {
        let sign = if negative { -1.0 } else { 1.0 };
        let a = Tensor::new(&[2, 3], vals.iter().map(|v| sign * v).collect()).unwrap();
        let b = Tensor::new(&[2, 3], vals.iter().rev().map(|v| sign * v * 0.5).collect()).unwrap();
        let m = ties_merge(&[&a, &b], &TiesConfig { density: 1.0 }).unwrap();
        for i in 0..6 {
            let mean = (a.data()[i] + b.data()[i]) / 2.0;
            prop_assert!((m.data()[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_single_full_density_is_identity(vals in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
        let a = Tensor::new(&[1, vals.len()], vals).unwrap();
        prop_assert_eq!(ties_merge(&[&a], &TiesConfig { density: 1.0 }).unwrap(), a);
    }

    #[test]
    fn ties_against_reference(vals in proptest::collection::vec(-3i32..=3, 12), density in 0.1f64..=1.0) {
        // Reference: per-entry reconstruction with integer arithmetic.
        let rows: Vec<Vec<f64>> = vals.chunks(4).map(|c| c.iter().map(|&v| v as f64).collect()).collect();
        let tensors: Vec<Tensor<f64>> = rows.iter().map(|r| Tensor::new(&[1, 4], r.clone()).unwrap()).collect();
        let refs: Vec<&Tensor<f64>> = tensors.iter().collect();
        let merged = ties_merge(&refs, &TiesConfig { density }).unwrap();
        let keep = (density * 4.0).ceil() as usize;
        let trimmed: Vec<Vec<f64>> = rows.iter().map(|r| {
            let mut idx: Vec<usize> = (0..4).collect();
            idx.sort_by_key(|&i| (-(r[i].abs() as i64), i));
            (0..4).map(|i| if idx[..keep].contains(&i) { r[i] } else { 0.0 }).collect()
        }).collect();
        for i in 0..4 {
            let s: f64 = trimmed.iter().map(|t| t[i]).sum();
            let agree: Vec<f64> = trimmed.iter().map(|t| t[i]).filter(|&v| if s >= 0.0 { v > 0.0 } else { v < 0.0 }).collect();
            let expect = if agree.is_empty() { 0.0 } else { agree.iter().sum::<f64>() / agree.len() as f64 };
            prop_assert!((merged.data()[i] - expect).abs() < 1e-12);
        }
    }
}
