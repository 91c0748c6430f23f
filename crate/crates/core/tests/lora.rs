mod common;

use routedk::backbone::{forward, serialize_session, InputVariant, NoHook, KF, KH};
use routedk::lora::{
    adapter_forward, expert_eval_loss, expert_examples, train_expert, ExpertKind, ExpertTrainConfig, LoraAdapter, LoraConfig,
};
use routedk::training::TrainConfig;

fn quick_config() -> ExpertTrainConfig {
    ExpertTrainConfig {
        lora: LoraConfig { rank: 4, scale: 4.0, init_std: 0.02 },
        train: TrainConfig { epochs: 2, lr: 1e-2, batch_size: 8 },
        p_max: 6,
    }
}

#[test]
fn fresh_adapter_forward_equals_backbone() {
    let fx = common::fixture(3);
    let adapter = LoraAdapter::<f32>::init(&fx.backbone.config, &quick_config().lora, 11).unwrap();
    for s in fx.splits.test.iter().take(5) {
        let input = serialize_session(s, InputVariant::Raw, None, &fx.vocab).unwrap();
        let plain = forward(&fx.backbone, &input.tokens, input.prompt_len, &mut NoHook).unwrap();
        let adapted = adapter_forward(&fx.backbone, &adapter, &input.tokens, input.prompt_len).unwrap();
        assert_eq!(plain.data(), adapted.data());
    }
}

#[test]
fn permutation_stream_has_expected_targets() {
    let fx = common::fixture(3);
    let examples = expert_examples(ExpertKind::Base, &fx.splits.train, None, &fx.vocab, 6).unwrap();
    for s in &fx.splits.train {
        let m = s.bundles.len();
        let expected = (1..=m).product::<usize>().min(6);
        let mut targets: Vec<&[usize]> = examples
            .iter()
            .filter(|e| e.session_id == s.session_id)
            .map(|e| &e.tokens[e.prompt_len..])
            .collect();
        targets.sort();
        targets.dedup();
        assert_eq!(targets.len(), expected, "session {}", s.session_id);
    }
    assert!(examples.iter().all(|e| !e.tokens[..e.prompt_len].contains(&KH) && !e.tokens.contains(&KF)));
}

#[test]
fn knowledge_contract_is_enforced() {
    let fx = common::fixture(3);
    let cfg = quick_config();
    let train = &fx.splits.train[..4];
    assert!(train_expert(ExpertKind::HighLevel, train, None, &fx.backbone, &fx.vocab, &cfg, 0).is_err());
    assert!(train_expert(ExpertKind::Base, train, Some(&fx.knowledge), &fx.backbone, &fx.vocab, &cfg, 0).is_err());
    let mut unfrozen = routedk::backbone::BackboneWeights::<f32>::init(&fx.backbone.config, 0).unwrap();
    assert!(train_expert(ExpertKind::Base, train, None, &unfrozen, &fx.vocab, &cfg, 0).is_err());
    unfrozen.freeze();
    assert!(train_expert(ExpertKind::Base, train, None, &unfrozen, &fx.vocab, &cfg, 0).is_ok());
    assert!(expert_eval_loss(
        &LoraAdapter::init(&fx.backbone.config, &cfg.lora, 0).unwrap(),
        ExpertKind::Base,
        &[],
        None,
        &fx.backbone,
        &fx.vocab
    )
    .is_err());
}

#[test]
fn training_is_isolated_and_reduces_loss() {
    let fx = common::fixture(5);
    let cfg = quick_config();
    let backbone_hash = fx.backbone.content_hash();
    let (base, _) = train_expert(ExpertKind::Base, &fx.splits.train, None, &fx.backbone, &fx.vocab, &cfg, 1).unwrap();
    let base_hash = base.content_hash();
    let (fine, report) =
        train_expert(ExpertKind::FineGrained, &fx.splits.train, Some(&fx.knowledge), &fx.backbone, &fx.vocab, &cfg, 1)
            .unwrap();
    assert_eq!(fx.backbone.content_hash(), backbone_hash);
    assert_eq!(base.content_hash(), base_hash);
    assert!(report.epoch_losses.last().unwrap() <= &report.initial_loss);

    let untrained = LoraAdapter::init(&fx.backbone.config, &cfg.lora, 0).unwrap();
    let k = Some(&fx.knowledge);
    let before = expert_eval_loss(&untrained, ExpertKind::FineGrained, &fx.splits.val, k, &fx.backbone, &fx.vocab).unwrap();
    let again = expert_eval_loss(&untrained, ExpertKind::FineGrained, &fx.splits.val, k, &fx.backbone, &fx.vocab).unwrap();
    let after = expert_eval_loss(&fine, ExpertKind::FineGrained, &fx.splits.val, k, &fx.backbone, &fx.vocab).unwrap();
    assert_eq!(before, again);
    assert!(after < before, "{after} !< {before}");

    // Same seed reproduces the adapter bit for bit.
    let (fine2, _) =
        train_expert(ExpertKind::FineGrained, &fx.splits.train, Some(&fx.knowledge), &fx.backbone, &fx.vocab, &cfg, 1)
            .unwrap();
    assert_eq!(fine.content_hash(), fine2.content_hash());
}
